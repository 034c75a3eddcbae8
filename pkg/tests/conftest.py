"""Shared fixtures: trained toy models, synthetic tasks, and a table-driven
fake backend for hand-computed cases."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import pytest

from cboost.backend import Backend, BackendInfo, Tokens, as_tokens
from cboost.errors import ContractError
from cboost.tasks import make_copy_source_task
from cboost.toy_lm import (
    ToyBackend,
    TrainConfig,
    WhitespaceTokenizer,
    train_uniform_scalarization,
)


class TableBackend(Backend):
    """Backend with prescribed conditional distributions.

    ``table`` maps context tuples to probability vectors.  Lookups fall
    back to the longest matching suffix of the query context, then to the
    uniform distribution, so hand-written cases only need to pin the
    contexts they care about.
    """

    def __init__(
        self,
        vocab_size: int,
        table: Mapping[Sequence[int], Sequence[float]],
        max_context: int = 4096,
        tokenizer: WhitespaceTokenizer | None = None,
        name: str = "table",
    ):
        self.vocab_size = vocab_size
        self.table = {as_tokens(k): np.asarray(v, dtype=np.float64) for k, v in table.items()}
        for ctx, p in self.table.items():
            if p.shape != (vocab_size,):
                raise ValueError(f"bad distribution length for context {ctx}")
            if abs(p.sum() - 1.0) > 1e-9:
                raise ValueError(f"distribution for context {ctx} not normalized")
        self._info = BackendInfo(vocab_size, max_context, name)
        self.tokenizer = tokenizer
        self.calls = 0

    def info(self) -> BackendInfo:
        return self._info

    def next_logprobs(self, context):
        context = as_tokens(context)
        self._check_context(context)
        self.calls += 1
        for start in range(len(context)):
            suffix = context[start:]
            if suffix in self.table:
                with np.errstate(divide="ignore"):
                    return np.log(self.table[suffix])
        return np.full(self.vocab_size, -np.log(self.vocab_size))

    def encode(self, text: str) -> Tokens:
        if self.tokenizer is None:
            raise ContractError("no tokenizer")
        return self.tokenizer.encode(text)

    def decode(self, tokens) -> str:
        if self.tokenizer is None:
            raise ContractError("no tokenizer")
        return self.tokenizer.decode(tokens)

    @property
    def eot_token_id(self) -> int:
        return self.tokenizer.eot_id if self.tokenizer is not None else 0


class CountingBackend(Backend):
    """Wrapper that counts calls reaching the inner backend."""

    def __init__(self, inner: Backend):
        self.inner = inner
        self.logprob_calls = 0
        self.score_calls = 0

    def info(self):
        return self.inner.info()

    def next_logprobs(self, context):
        self.logprob_calls += 1
        return self.inner.next_logprobs(context)

    def score_continuation(self, context, continuation):
        self.score_calls += 1
        return self.inner.score_continuation(context, continuation)

    def encode(self, text):
        return self.inner.encode(text)

    def decode(self, tokens):
        return self.inner.decode(tokens)

    @property
    def eot_token_id(self):
        return self.inner.eot_token_id


@pytest.fixture(scope="session")
def copy_task():
    """The desk-scale long-range benchmark: |V|=8, offset 10, q=0.7."""
    return make_copy_source_task(
        vocab_size=8, length=200_000, copy_offset=10, copy_prob=0.7, seed=1, eval_len=2000
    )


@pytest.fixture(scope="session")
def copy_heldout():
    """A held-out stream from the same process, different seed."""
    return make_copy_source_task(
        vocab_size=8, length=20_000, copy_offset=10, copy_prob=0.7, seed=7, eval_len=0
    ).train


@pytest.fixture(scope="session")
def undertrained_params(copy_task):
    """Copy-source model at the default (deliberately small) budget."""
    return train_uniform_scalarization(copy_task.train, TrainConfig())


@pytest.fixture(scope="session")
def trained_params(copy_task):
    """Well-trained copy-source model."""
    return train_uniform_scalarization(
        copy_task.train, TrainConfig(max_context=12, steps=3000, seed=0)
    )


@pytest.fixture(scope="session")
def trained_backend(trained_params):
    return ToyBackend(trained_params)


@pytest.fixture(scope="session")
def alternating_params():
    """Model fit on a deterministic alternating stream, lag depth 2."""
    corpus = tuple([0, 1] * 2000)
    return train_uniform_scalarization(
        corpus, TrainConfig(max_context=2, steps=2500, seed=0)
    )


@pytest.fixture(scope="session")
def uniform_backend():
    """Zero-parameter model: uniform predictions everywhere."""
    from cboost.toy_lm import ToyLMParams

    return ToyBackend(ToyLMParams.zeros(8, 3))
