"""Coherence tuning: distill the boosted model back into the base model.

Each step samples sequences from the current model, computes boosted
next-token distributions at interior positions (treated as constants),
and takes one gradient step on the mean KL from those targets to the
base model's own predictions.  The boosted ensemble's behaviour is thus
baked into the parameters, removing the extra expert evaluations at
inference time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import Tokens, as_tokens
from .boosting import BoostSpec, boosted_next_dist
from .dist import log_softmax
from .errors import ContractError, NumericalGuardError
from .rng import named_rng
from .toy_lm import ToyBackend, ToyLMParams

log = logging.getLogger(__name__)


@dataclass
class TuneConfig:
    spec: BoostSpec
    steps: int = 32
    batch: int = 32
    seq_len: int = 32
    learning_rate: float = 2.0
    tail_positions: int | None = None  # None = use every interior position
    seed: int = 0

    def __post_init__(self):
        if min(self.steps, self.batch, self.seq_len) < 1:
            raise ContractError("steps, batch and seq_len must be positive")
        if self.seq_len < 2:
            raise ContractError("seq_len must be >= 2 to give interior positions")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not any(
            isinstance(key, (int, str)) and key != "max" and w < 0
            for key, w in self.spec.weights.items()
        ):
            log.warning("tuning spec has no negative short-context weight")


@dataclass
class TuneResult:
    params: ToyLMParams
    kl_trace: list[float]


def sample_sequences(
    params: ToyLMParams, batch: int, seq_len: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample (batch, seq_len) token arrays from the model, untruncated at
    temperature 1.  The first token of each sequence is uniform (the model
    needs at least one conditioning token)."""
    v = params.vocab_size
    seqs = np.empty((batch, seq_len), dtype=np.int64)
    seqs[:, 0] = rng.integers(0, v, size=batch)
    for t in range(1, seq_len):
        z = np.broadcast_to(params.bias, (batch, v)).copy()
        for j in range(1, min(t, params.lag_depth) + 1):
            z += params.lag_tables[j - 1][seqs[:, t - j]]
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(batch)
        seqs[:, t] = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1)
    return seqs


def _interior_positions(seq_len: int, tail: int | None) -> list[int]:
    ks = list(range(1, seq_len))  # context lengths
    if tail is not None:
        ks = ks[-tail:]
    return ks


def kl_and_gradient(
    params: ToyLMParams,
    contexts: Sequence[Tokens],
    target_logprobs: Sequence[np.ndarray],
) -> tuple[float, ToyLMParams]:
    """Mean KL(target || model) over contexts and its gradient.

    The targets are fixed log-probability vectors: the gradient flows only
    through the model side (d/dlogits = softmax(logits) - target).  When a
    target equals the model's own prediction bit-for-bit, the KL and the
    gradient are exactly zero.
    """
    if len(contexts) != len(target_logprobs):
        raise ContractError("one target distribution per context")
    if not contexts:
        raise ContractError("no positions")
    n = len(contexts)
    grad = ToyLMParams.zeros(params.vocab_size, params.lag_depth)
    total_kl = 0.0
    for ctx, logt in zip(contexts, target_logprobs):
        ctx = as_tokens(ctx)
        logp = log_softmax(params.logits(ctx))
        target = np.exp(logt)
        mask = target > 0
        total_kl += float(np.sum(target[mask] * (logt[mask] - logp[mask])))
        g = (np.exp(logp) - target) / n
        grad.bias += g
        for j in range(1, min(len(ctx), params.lag_depth) + 1):
            grad.lag_tables[j - 1][ctx[-j]] += g
    return total_kl / n, grad


def _step_positions(seqs: np.ndarray, tail: int | None) -> list[Tokens]:
    contexts = []
    ks = _interior_positions(seqs.shape[1], tail)
    for row in seqs:
        for k in ks:
            contexts.append(tuple(int(x) for x in row[:k]))
    return contexts


def coherence_tune(params: ToyLMParams, cfg: TuneConfig) -> TuneResult:
    """Run the self-distillation loop and return the tuned parameters with
    the per-step mean-KL trace.

    Targets are recomputed from the *current* parameters each step and
    treated as constants within the step.  Aborts with
    NumericalGuardError if the mean KL grows past 10x its initial value.
    """
    params = params.copy()
    rng = named_rng(cfg.seed, "coherence-tune-sampling")
    trace: list[float] = []
    for step in range(cfg.steps):
        seqs = sample_sequences(params, cfg.batch, cfg.seq_len, rng)
        contexts = _step_positions(seqs, cfg.tail_positions)
        backend = ToyBackend(params)
        targets = [boosted_next_dist(backend, ctx, cfg.spec) for ctx in contexts]
        kl, grad = kl_and_gradient(params, contexts, targets)
        trace.append(kl)
        if kl > 10.0 * trace[0]:
            raise NumericalGuardError(
                f"mean KL diverged at step {step}: {kl:.6f} vs initial {trace[0]:.6f}"
            )
        params.bias -= cfg.learning_rate * grad.bias
        params.lag_tables -= cfg.learning_rate * grad.lag_tables
    return TuneResult(params=params, kl_trace=trace)


def kl_to_boosted(
    params: ToyLMParams, spec: BoostSpec, sequences: Sequence[Sequence[int]]
) -> float:
    """Mean KL(boosted || base) over the interior positions of the given
    sequences."""
    backend = ToyBackend(params)
    total = 0.0
    n = 0
    for seq in sequences:
        seq = as_tokens(seq)
        if len(seq) < 2:
            raise ContractError("sequences must have length >= 2")
        for k in range(1, len(seq)):
            ctx = seq[:k]
            logt = boosted_next_dist(backend, ctx, spec)
            logp = backend.next_logprobs(ctx)
            target = np.exp(logt)
            mask = target > 0
            total += float(np.sum(target[mask] * (logt[mask] - logp[mask])))
            n += 1
    return total / n


def write_kl_trace(path: str, trace: Sequence[float]) -> None:
    """CSV trace: step, mean_kl."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "mean_kl"])
        for i, kl in enumerate(trace):
            writer.writerow([i, f"{kl:.12g}"])
