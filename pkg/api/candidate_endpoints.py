"""
Candidate-store API endpoints.
"""

import logging

from fastapi import APIRouter, Depends, HTTPException

from api.schemas import CandidateAddRequest, CandidateMetadata
from api.serving import ServingState, get_serving_state
from services.errors import TabRError

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/candidates", tags=["candidates"])


@router.get("/metadata", response_model=CandidateMetadata)
def get_candidate_metadata(state: ServingState = Depends(get_serving_state)):
    """Size of the candidate store and the parameter version it was encoded with."""
    return state.metadata()


@router.post("", response_model=CandidateMetadata)
def add_candidates(request: CandidateAddRequest, state: ServingState = Depends(get_serving_state)):
    """
    Add labeled rows to the candidate store without retraining.

    Args:
        request: Raw rows and their labels in the original label space

    Returns:
        Updated store metadata
    """
    try:
        return state.add_candidates(request.rows, request.labels)
    except TabRError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception(f"Unexpected error in add_candidates: {e}")
        raise HTTPException(status_code=500, detail=f"Error adding candidates: {str(e)}")
