"""Uniform access to autoregressive language models.

A backend answers two questions: the full-vocabulary next-token
log-probability vector for a context, and the total log-probability of a
continuation given a context.  Token sequences are tuples of ints; each
backend owns its tokenizer, so the rest of the toolkit never sees raw text.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dist import LogProbs
from .errors import ContractError

Tokens = tuple[int, ...]

DEFAULT_CACHE_CAPACITY = 2**20


@dataclass(frozen=True)
class BackendInfo:
    vocab_size: int
    max_context: int
    name: str

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ContractError("vocab_size must be >= 2")
        if self.max_context < 2:
            raise ContractError("max_context must be >= 2")


def as_tokens(seq: Sequence[int]) -> Tokens:
    return tuple(int(t) for t in seq)


def truncated_context(context: Sequence[int], k: int) -> Tokens:
    """The last min(k, len) tokens, order preserved.  This is the short
    expert's context: the model on a k-truncated context."""
    if k < 1:
        raise ContractError(f"context truncation length must be >= 1, got {k}")
    return as_tokens(context)[-k:]


class Backend:
    """Base class.  Subclasses implement info() and next_logprobs();
    score_continuation has a generic chain-rule implementation."""

    def info(self) -> BackendInfo:
        raise NotImplementedError

    def next_logprobs(self, context: Sequence[int]) -> LogProbs:
        """Normalized log-probabilities of the next token given context.

        Requires 0 < len(context) <= max_context; callers truncate first.
        """
        raise NotImplementedError

    def score_continuation(self, context: Sequence[int], continuation: Sequence[int]) -> float:
        """Sum over continuation tokens of log p(token | context so far)."""
        context = as_tokens(context)
        continuation = as_tokens(continuation)
        self._check_score_args(context, continuation)
        total = 0.0
        ctx = context
        for tok in continuation:
            total += float(self.next_logprobs(ctx)[tok])
            ctx = ctx + (tok,)
        return total

    def _check_context(self, context: Tokens) -> None:
        if len(context) == 0:
            raise ContractError("context must be non-empty")
        if len(context) > self.info().max_context:
            raise ContractError(
                f"context of length {len(context)} exceeds max_context "
                f"{self.info().max_context}; truncate first"
            )

    def _check_score_args(self, context: Tokens, continuation: Tokens) -> None:
        if len(context) < 1 or len(continuation) < 1:
            raise ContractError("context and continuation must be non-empty")
        if len(context) + len(continuation) > self.info().max_context:
            raise ContractError("context + continuation exceeds max_context")

    # Tokenization: ids <-> text.  Backends for raw token streams may leave
    # these unimplemented.
    def encode(self, text: str) -> Tokens:
        raise NotImplementedError

    def decode(self, tokens: Sequence[int]) -> str:
        raise NotImplementedError

    @property
    def eot_token_id(self) -> int:
        """End-of-text token, used as a stand-in context when a harness
        needs a non-empty conditioning sequence."""
        raise NotImplementedError


class CachingBackend(Backend):
    """Bounded LRU memoization of next_logprobs and score_continuation.

    Keys are exact token-id tuples.  The cache is internally synchronized
    so parallel evaluation workers can share one instance.  Cached vectors
    are returned read-only, and must be identical to uncached results to
    the last bit.
    """

    def __init__(self, inner: Backend, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ContractError("cache capacity must be positive")
        self.inner = inner
        self.capacity = capacity
        self._logprobs: OrderedDict[Tokens, np.ndarray] = OrderedDict()
        self._scores: OrderedDict[tuple[Tokens, Tokens], float] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def info(self) -> BackendInfo:
        return self.inner.info()

    def next_logprobs(self, context: Sequence[int]) -> LogProbs:
        key = as_tokens(context)
        with self._lock:
            if key in self._logprobs:
                self.hits += 1
                self._logprobs.move_to_end(key)
                return self._logprobs[key]
        value = np.asarray(self.inner.next_logprobs(key), dtype=np.float64)
        value.setflags(write=False)
        with self._lock:
            self.misses += 1
            self._logprobs[key] = value
            if len(self._logprobs) > self.capacity:
                self._logprobs.popitem(last=False)
        return value

    def score_continuation(self, context: Sequence[int], continuation: Sequence[int]) -> float:
        key = (as_tokens(context), as_tokens(continuation))
        with self._lock:
            if key in self._scores:
                self.hits += 1
                self._scores.move_to_end(key)
                return self._scores[key]
        value = self.inner.score_continuation(*key)
        with self._lock:
            self.misses += 1
            self._scores[key] = value
            if len(self._scores) > self.capacity:
                self._scores.popitem(last=False)
        return value

    def encode(self, text: str) -> Tokens:
        return self.inner.encode(text)

    def decode(self, tokens: Sequence[int]) -> str:
        return self.inner.decode(tokens)

    @property
    def eot_token_id(self) -> int:
        return self.inner.eot_token_id
