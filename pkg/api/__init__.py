"""
API package for the TabR prediction service.
"""
