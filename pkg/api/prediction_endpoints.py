"""
Prediction API endpoints.
"""

import logging

from fastapi import APIRouter, Depends, HTTPException

from api.schemas import PredictRequest, PredictResponse
from api.serving import ServingState, get_serving_state
from services.errors import TabRError

logger = logging.getLogger(__name__)

router = APIRouter(tags=["prediction"])


@router.post("/predict", response_model=PredictResponse)
def predict(request: PredictRequest, state: ServingState = Depends(get_serving_state)):
    """
    Predict raw rows, retrieving over the current candidate store.

    Args:
        request: Rows with numeric, binary and categorical values

    Returns:
        Predictions in the original label space (class indices for
        classification, with probabilities)
    """
    try:
        return state.predict(request.rows)
    except TabRError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.exception(f"Unexpected error in predict: {e}")
        raise HTTPException(status_code=500, detail=f"Error predicting: {str(e)}")
