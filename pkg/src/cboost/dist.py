"""Exact probability-vector arithmetic.

All vectors are 1-D float64 numpy arrays over a fixed vocabulary.  Two
conventions are used throughout:

* ``LogProbs`` — log-probabilities in nats, normalized so that
  ``logsumexp(v) == 0`` (within 1e-9).  ``-inf`` entries mark
  zero-probability tokens; NaN is never allowed.
* ``Probs`` — non-negative entries summing to 1 (within 1e-9).

Everything here is pure and reentrant; arrays are never mutated in place.
"""

from __future__ import annotations

import warnings
from typing import Sequence

import numpy as np

from .errors import ContractError, SupportMismatchError

LogProbs = np.ndarray
Probs = np.ndarray

# Default log-probability floor applied to negatively-weighted experts in
# log_linear_mix.  Remote backends may return truncated/quantized logprobs
# with hard zeros; the floor keeps negative powers finite and tunable.
DEFAULT_LOG_FLOOR = float(np.log(1e-10))

NORM_TOL = 1e-9


def logsumexp(values: np.ndarray) -> float:
    """Stable log(sum(exp(values))); tolerates -inf entries."""
    values = np.asarray(values, dtype=np.float64)
    m = np.max(values)
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(values - m))))


def softmax(logits: Sequence[float] | np.ndarray) -> Probs:
    """Exponentiate-and-normalize.  -inf entries map to probability 0.

    Raises ContractError("degenerate distribution") when every entry is
    -inf, and on NaN input.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size == 0:
        raise ContractError("softmax expects a non-empty 1-D vector")
    if np.any(np.isnan(logits)):
        raise ContractError("softmax input contains NaN")
    m = np.max(logits)
    if m == -np.inf:
        raise ContractError("degenerate distribution")
    e = np.exp(logits - m)
    return e / e.sum()


def log_softmax(logits: Sequence[float] | np.ndarray) -> LogProbs:
    """Normalize logits into log-probabilities (logsumexp shifted to 0)."""
    logits = np.asarray(logits, dtype=np.float64)
    if np.any(np.isnan(logits)):
        raise ContractError("log_softmax input contains NaN")
    z = logsumexp(logits)
    if z == -np.inf:
        raise ContractError("degenerate distribution")
    with np.errstate(invalid="ignore"):
        out = logits - z
    out[logits == -np.inf] = -np.inf
    return out


def log_linear_mix(
    experts: Sequence[LogProbs],
    weights: Sequence[float],
    log_floor: float | None = DEFAULT_LOG_FLOOR,
) -> LogProbs:
    """Weighted product of experts, renormalized, in log space.

    The result is proportional to prod_i expert_i ** weight_i.  Tokens with
    probability zero under a positively-weighted expert keep probability
    zero.  Zero probability under a *negatively*-weighted expert would blow
    up to +inf; instead that expert's log-probs are clamped from below at
    ``log_floor``.  Pass ``log_floor=None`` to disable the clamp, in which
    case such tokens raise SupportMismatchError.

    Zero-weight experts are dropped exactly, and a single expert with
    weight exactly 1.0 is returned unchanged (bit-identical).
    """
    if len(experts) == 0:
        raise ContractError("log_linear_mix needs at least one expert")
    if len(experts) != len(weights):
        raise ContractError("experts and weights must have equal length")
    weights = [float(w) for w in weights]
    if any(not np.isfinite(w) for w in weights):
        raise ContractError("weights must be finite")
    n = len(np.asarray(experts[0]))
    active = [(np.asarray(e, dtype=np.float64), w) for e, w in zip(experts, weights) if w != 0.0]
    for e, _ in active:
        if e.shape != (n,):
            raise ContractError("experts must all have the same length")
    if not active:
        # prod of nothing: uniform
        return np.full(n, -np.log(n))
    if len(active) == 1 and active[0][1] == 1.0:
        return active[0][0].copy()

    forced_zero = np.zeros(n, dtype=bool)
    for e, w in active:
        if w > 0:
            forced_zero |= e == -np.inf

    total = np.zeros(n)
    for e, w in active:
        if w < 0:
            neg_inf = e == -np.inf
            if log_floor is not None:
                e = np.maximum(e, log_floor)
            elif np.any(neg_inf):
                if np.any(neg_inf & ~forced_zero):
                    raise SupportMismatchError("support mismatch")
                # zero under a positive expert too: that expert already
                # forces the token to 0, so the negative term is moot
                e = np.where(neg_inf, 0.0, e)
        total = total + w * e
    total[forced_zero] = -np.inf
    return log_softmax(total)


def truncate_top_p(dist: Probs, p: float) -> Probs:
    """Keep the smallest prefix of probability-sorted tokens with cumulative
    mass >= p, zero the rest, renormalize.  Ties break toward lower ids."""
    if not (0.0 < p <= 1.0):
        raise ContractError(f"top-p threshold must be in (0, 1], got {p}")
    dist = np.asarray(dist, dtype=np.float64)
    # stable sort on -p: equal probabilities keep ascending id order
    order = np.argsort(-dist, kind="stable")
    csum = np.cumsum(dist[order])
    # float dust: 0.6 + 0.3 < 0.9 in binary; admit within 1e-12
    cut = int(np.searchsorted(csum, p - 1e-12)) + 1
    kept = order[:cut]
    out = np.zeros_like(dist)
    out[kept] = dist[kept]
    return out / out.sum()


def truncate_top_k(dist: Probs, k: int) -> Probs:
    """Keep the k highest-probability tokens (ties to lower id), renormalize."""
    if k <= 0:
        raise ContractError(f"top-k must be positive, got {k}")
    dist = np.asarray(dist, dtype=np.float64)
    if k >= dist.size:
        return dist.copy()
    order = np.argsort(-dist, kind="stable")
    kept = order[:k]
    out = np.zeros_like(dist)
    out[kept] = dist[kept]
    return out / out.sum()


def apply_temperature(logprobs: LogProbs, temperature: float) -> LogProbs:
    """Renormalized values/T; T=1 returns the input unchanged."""
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    logprobs = np.asarray(logprobs, dtype=np.float64)
    if temperature == 1.0:
        return logprobs
    with np.errstate(invalid="ignore"):
        scaled = logprobs / temperature
    scaled[logprobs == -np.inf] = -np.inf
    return log_softmax(scaled)


def kl_divergence(p: Probs, q: Probs) -> float:
    """KL(p || q) in nats.  Support violations return +inf with a warning."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError("kl_divergence: shape mismatch")
    mask = p > 0
    if np.any(q[mask] == 0):
        warnings.warn("kl_divergence: support(p) not contained in support(q)")
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def sample(dist: Probs, rng: np.random.Generator) -> int:
    """Draw one token id from dist.  Deterministic given the generator state."""
    dist = np.asarray(dist, dtype=np.float64)
    csum = np.cumsum(dist)
    u = rng.random() * csum[-1]
    return int(np.searchsorted(csum, u, side="right").clip(0, dist.size - 1))


def argmax_token(values: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest token id."""
    return int(np.argmax(values))


def assert_normalized_logprobs(v: LogProbs, tol: float = NORM_TOL) -> None:
    z = logsumexp(v)
    if not abs(z) <= tol:
        raise ContractError(f"log-probabilities not normalized: logsumexp={z}")


def uniform_logprobs(n: int) -> LogProbs:
    return np.full(n, -np.log(n))
