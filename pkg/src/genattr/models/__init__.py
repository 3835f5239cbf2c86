from .base import (
    EOS,
    Backend,
    BackendDescriptor,
    CallStats,
    EncodingSession,
    GenerationResult,
    Step,
    StepScore,
    detokenize,
    require,
    score_answer,
)
from .remote import ENDPOINT_ENV, RemoteBackend
from .toys import (
    PAD_WORD,
    SEPARATOR,
    ConstantBackend,
    NgramBackend,
    ScalarGameBackend,
    ToyKeywordReader,
    Vocabulary,
    VotingKeywordReader,
)

__all__ = [
    "EOS",
    "Backend",
    "BackendDescriptor",
    "CallStats",
    "EncodingSession",
    "GenerationResult",
    "Step",
    "StepScore",
    "detokenize",
    "require",
    "score_answer",
    "ENDPOINT_ENV",
    "RemoteBackend",
    "PAD_WORD",
    "SEPARATOR",
    "ConstantBackend",
    "NgramBackend",
    "ScalarGameBackend",
    "ToyKeywordReader",
    "Vocabulary",
    "VotingKeywordReader",
]
