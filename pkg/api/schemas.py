"""
Pydantic models for request/response validation.
"""

from typing import Optional

from pydantic import BaseModel, Field


class RowInput(BaseModel):
    """One raw row. Categorical values are the dataset's integer category codes."""
    num: list[float] = Field(default_factory=list)
    bin: list[float] = Field(default_factory=list)
    cat: list[int] = Field(default_factory=list)


class PredictRequest(BaseModel):
    rows: list[RowInput] = Field(min_length=1)


class PredictResponse(BaseModel):
    predictions: list[float]
    probabilities: Optional[list[list[float]]] = None
    candidates: int
    version: str


class CandidateAddRequest(BaseModel):
    rows: list[RowInput] = Field(min_length=1)
    labels: list[float] = Field(min_length=1)


class CandidateMetadata(BaseModel):
    algorithm: str
    task: str
    n_classes: Optional[int] = None
    size: int
    version: str
