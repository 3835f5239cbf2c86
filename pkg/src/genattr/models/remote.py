"""HTTP backend speaking the /generate wire protocol.

Request:  POST {endpoint}/generate
          {"text": str, "mask": [0|1, ...], "mode": "pad"|"drop",
           "want_logprobs": bool}
Response: {"answer": str, "steps": [{"token": str, "logprob": float}, ...]?}

steps is optional; when present its tokens are the whitespace words of the
answer. Failures retry up to the configured budget, then surface as
TransportError; nothing is retried silently beyond that.
"""

from __future__ import annotations

import os

import requests

from ..core import Mask, TokenSeq
from ..exceptions import TransportError
from .base import Backend, BackendDescriptor, GenerationResult, Step
from .toys import Vocabulary

ENDPOINT_ENV = "GENATTR_ENDPOINT"
DEFAULT_TIMEOUT = 30.0
DEFAULT_RETRIES = 2


class RemoteBackend(Backend):
    """Masked generation served over HTTP.

    The sequence is detokenized through `vocab` before sending; the mask is
    sent alongside as a dense bit list, so the server applies its own pad or
    drop semantics. Endpoint resolution order: explicit argument, then the
    GENATTR_ENDPOINT environment variable.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        endpoint: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = DEFAULT_RETRIES,
        want_logprobs: bool = False,
    ):
        super().__init__()
        endpoint = endpoint or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(
                f"no endpoint given and {ENDPOINT_ENV} is not set"
            )
        self.vocab = vocab
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.want_logprobs = want_logprobs
        self._session = requests.Session()

    def describe(self) -> BackendDescriptor:
        return BackendDescriptor(
            supports_logprobs=self.want_logprobs, reentrant=True
        )

    def _post(self, payload: dict) -> dict:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(
                    f"{self.endpoint}/generate", json=payload, timeout=self.timeout
                )
                if resp.status_code >= 500:
                    last = TransportError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                body = resp.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                continue
            if not isinstance(body, dict) or "answer" not in body:
                last = TransportError(f"malformed response: {body!r}")
                continue
            return body
        raise TransportError(
            f"/generate failed after {self.retries + 1} attempts: {last}"
        ) from last

    def _answer(self, x: TokenSeq, s: Mask, mode: str) -> str:
        raise NotImplementedError("remote generation goes through generate()")

    def generate(self, x: TokenSeq, s: Mask, mode: str = "pad") -> GenerationResult:
        if len(s) != len(x):
            raise ValueError(f"mask length {len(s)} != sequence length {len(x)}")
        if mode not in ("pad", "drop"):
            raise ValueError(f"unknown mask mode {mode!r}")
        body = self._post(
            {
                "text": " ".join(self.vocab.decode(x)),
                "mask": list(s.bits),
                "mode": mode,
                "want_logprobs": self.want_logprobs,
            }
        )
        answer = str(body["answer"])
        raw_steps = body.get("steps")
        if raw_steps is not None:
            steps = tuple(
                Step(str(st["token"]), st.get("logprob")) for st in raw_steps
            )
        else:
            steps = None
        n_tokens = len(steps) if steps is not None else len(answer.split())
        self.stats.decoder_calls += n_tokens
        return GenerationResult(answer, steps, decoder_calls=n_tokens)
