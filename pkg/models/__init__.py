from .candidate_store import CandidateStore, EncodedCandidates
from .context import ContextCache, ContextRecord
from .dataset import Dataset, FeatureLayout, PreparedData
from .enums import Direction, EmbeddingScheme, ModelKind, NumPolicy, SimilarityKind, Task, ValueKind
from .run_result import RunResult
from .tabr import TabRModel
from .train_log import EpochRecord, TrainLog

__all__ = [
    "CandidateStore",
    "EncodedCandidates",
    "ContextCache",
    "ContextRecord",
    "Dataset",
    "FeatureLayout",
    "PreparedData",
    "Direction",
    "EmbeddingScheme",
    "ModelKind",
    "NumPolicy",
    "SimilarityKind",
    "Task",
    "ValueKind",
    "RunResult",
    "TabRModel",
    "EpochRecord",
    "TrainLog",
]
