"""Backend contract: masked text-in/text-out generation with call accounting.

A backend turns (sequence, visibility mask) into an answer. Everything the
samplers bill against a compute budget flows through the three counters in
CallStats, so cost claims elsewhere in the package are checkable arithmetic,
not estimates.
"""

from __future__ import annotations

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

from ..core import HierarchySpec, Mask, TokenSeq, mask_of_node
from ..exceptions import CapabilityError, StaleSessionError

# Distinguished end-of-sequence token used by step scoring.
EOS = "</s>"

# Answers are sequences of whitespace-separated word tokens throughout.
def detokenize(tokens: list[str] | tuple[str, ...]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class Step:
    """One generated token and, when the backend scores, its log-probability."""

    token: str
    logprob: float | None = None

    def __post_init__(self):
        if self.logprob is not None and self.logprob > 0:
            raise ValueError("log-probability must be <= 0")


@dataclass(frozen=True)
class GenerationResult:
    """A finished generation: the answer, optional per-step scores, and the
    number of autoregressive decoder invocations it consumed."""

    answer: str
    steps: tuple[Step, ...] | None = None
    decoder_calls: int = 0

    def __post_init__(self):
        if self.steps is not None:
            joined = detokenize([s.token for s in self.steps])
            if joined != self.answer:
                raise ValueError(
                    f"steps detokenize to {joined!r}, answer is {self.answer!r}"
                )
        if self.decoder_calls < 0:
            raise ValueError("decoder_calls must be non-negative")


@dataclass
class CallStats:
    """Monotone call counters owned by one backend instance."""

    encoder_calls: int = 0
    decoder_calls: int = 0
    verification_calls: int = 0

    def snapshot(self) -> "CallStats":
        return replace(self)

    def since(self, before: "CallStats") -> "CallStats":
        return CallStats(
            self.encoder_calls - before.encoder_calls,
            self.decoder_calls - before.decoder_calls,
            self.verification_calls - before.verification_calls,
        )

    def add(self, other: "CallStats") -> None:
        self.encoder_calls += other.encoder_calls
        self.decoder_calls += other.decoder_calls
        self.verification_calls += other.verification_calls


@dataclass(frozen=True)
class BackendDescriptor:
    """What a backend can honestly do; gates are checked before use."""

    supports_logprobs: bool = False
    supports_doc_cache: bool = False
    supports_step_scoring: bool = False
    reentrant: bool = True


@dataclass(frozen=True)
class StepScore:
    """Next-token scoring at one decode position.

    argmax is always present; the full log-probability map only when the
    backend advertises supports_logprobs.
    """

    argmax: str
    logprobs: dict[str, float] | None = None


class Backend(ABC):
    """Deterministic masked generator. `max_output_tokens` bounds answers."""

    max_output_tokens: int = 64

    def __init__(self):
        self.stats = CallStats()
        # results are immutable, so one object per distinct answer suffices
        self._result_cache: dict[str, GenerationResult] = {}

    @abstractmethod
    def describe(self) -> BackendDescriptor:
        ...

    @abstractmethod
    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        """The generation rule proper, with no accounting."""

    def generate(self, x: TokenSeq, s: Mask, mode: str = "pad") -> GenerationResult:
        """Generate under a visibility mask.

        decoder_calls grows by the answer's token count: one invocation per
        autoregressive step.
        """
        if len(s) != len(x):
            raise ValueError(f"mask length {len(s)} != sequence length {len(x)}")
        if mode not in ("pad", "drop"):
            raise ValueError(f"unknown mask mode {mode!r}")
        answer = self._answer(x, s, mode)
        result = self._result_cache.get(answer)
        if result is None:
            words = answer.split()
            result = GenerationResult(
                answer, tuple(Step(w) for w in words), decoder_calls=len(words)
            )
            self._result_cache[answer] = result
        self.stats.decoder_calls += result.decoder_calls
        return result

    def score_step(self, x: TokenSeq, s: Mask, prefix: tuple[str, ...]) -> StepScore:
        """Score the next token after `prefix`. Bills one verification call."""
        raise CapabilityError(f"{type(self).__name__} does not score steps")

    def precompute_encodings(self, x: TokenSeq, h: HierarchySpec) -> "EncodingSession":
        """Open a document-encoding session for repeated subset queries."""
        raise CapabilityError(f"{type(self).__name__} has no document cache")

    def fork(self) -> "Backend":
        """A worker-private instance. Reentrant backends return themselves."""
        if self.describe().reentrant:
            return self
        clone = copy.deepcopy(self)
        clone.stats = CallStats()
        return clone


class EncodingSession:
    """Documents encoded once, then reusable across any number of subsets.

    Creation bills one encoder call per document. Subset generations bill
    decoder calls only and answer exactly as a drop-mode masked generate
    over the same documents would.
    """

    def __init__(self, backend: Backend, x: TokenSeq, h: HierarchySpec):
        desc = backend.describe()
        if not desc.supports_doc_cache:
            raise CapabilityError(f"{type(backend).__name__} has no document cache")
        self.backend = backend
        self.x = x
        self.h = h
        self.doc_ids = tuple(h.level_nodes(1))
        self.closed = False
        backend.stats.encoder_calls += len(self.doc_ids)

    def generate_with_doc_subset(self, active_docs) -> GenerationResult:
        if self.closed:
            raise StaleSessionError("session is closed")
        active = tuple(active_docs)
        known = set(self.doc_ids)
        for d in active:
            if d not in known:
                raise KeyError(f"unknown document id {d!r}")
        s = mask_of_node(self.h, active)
        answer = self.backend._answer(self.x, s, "drop")
        words = answer.split()
        self.backend.stats.decoder_calls += len(words)
        return GenerationResult(
            answer, tuple(Step(w) for w in words), decoder_calls=len(words)
        )

    def close(self) -> None:
        self.closed = True


def require(backend: Backend, capability: str) -> None:
    """Raise CapabilityError unless the descriptor advertises `capability`."""
    if not getattr(backend.describe(), capability):
        raise CapabilityError(
            f"{type(backend).__name__} does not advertise {capability}"
        )


def score_answer(backend: Backend, x: TokenSeq, s: Mask, answer: str, mode: str = "pad") -> float:
    """Log-probability of a fixed answer under a mask, by step-scoring each
    of its tokens in turn. Requires logprobs and step scoring."""
    require(backend, "supports_step_scoring")
    require(backend, "supports_logprobs")
    tokens = tuple(answer.split())
    total = 0.0
    for i, tok in enumerate(tokens):
        score = backend.score_step(x, s, tokens[:i])
        if score.logprobs is None or tok not in score.logprobs:
            raise ValueError(f"backend assigns no probability to token {tok!r}")
        total += score.logprobs[tok]
    return total
