"""
General API endpoints (health, root, etc.).
"""

from fastapi import APIRouter, Depends

from api.serving import ServingState, optional_serving_state

router = APIRouter(tags=["general"])


@router.get("/")
def read_root(state: ServingState | None = Depends(optional_serving_state)):
    """Which model is served and how many candidates it retrieves over."""
    if state is None:
        return {"message": "TabR prediction service", "model_loaded": False}
    return {"message": "TabR prediction service", "model_loaded": True, **state.metadata()}


@router.get("/health")
def health_check():
    """Health check endpoint."""
    return {"status": "healthy"}
