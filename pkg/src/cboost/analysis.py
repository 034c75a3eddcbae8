"""Numerical verification of the boosted-ensemble improvement condition.

For the one-parameter family proportional to f_max^(1+t) * f_k^(-t), the
derivative of the held-out mean NLL at t = 0 equals

    (L_max - L_k) + mean KL(f_max || f_k)

so the boosted model improves on the full-context predictor to first
order exactly when the loss gap L_k - L_max exceeds the mean divergence
between the two experts.  This module computes both sides: the analytic
expression from losses and divergences, and a central finite difference
of the actual NLL curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .toy_lm import LossProfile, ToyLMParams, eval_positions

DEFAULT_PROBES = (0.05, 0.1)


def _normalized_logprobs_at(
    params: ToyLMParams, tokens: np.ndarray, positions: np.ndarray, k: int
) -> np.ndarray:
    """Row-normalized log-probabilities conditioning on the last k tokens
    before each position."""
    v = params.vocab_size
    z = np.broadcast_to(params.bias, (len(positions), v)).copy()
    for j in range(1, min(k, params.lag_depth) + 1):
        z += params.lag_tables[j - 1][tokens[positions - j]]
    mx = z.max(axis=1, keepdims=True)
    return z - (np.log(np.exp(z - mx).sum(axis=1, keepdims=True)) + mx)


@dataclass
class BoostDerivativeReport:
    k: int
    max_context: int
    loss_full: float            # held-out NLL of the full-context expert
    loss_short: float           # held-out NLL of the k-token expert
    mean_kl: float              # mean KL(full || short)
    analytic_derivative: float  # (loss_full - loss_short) + mean_kl
    fd_derivative: float
    h: float
    improvement_predicted: bool
    probe_nll: dict[float, float]  # exponent t -> held-out NLL, incl. t = 0
    probe_improved: bool

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "max_context": self.max_context,
            "loss_full": self.loss_full,
            "loss_short": self.loss_short,
            "mean_kl": self.mean_kl,
            "analytic_derivative": self.analytic_derivative,
            "fd_derivative": self.fd_derivative,
            "h": self.h,
            "improvement_predicted": self.improvement_predicted,
            "probe_nll": {str(t): v for t, v in self.probe_nll.items()},
            "probe_improved": self.probe_improved,
        }


def boost_derivative_check(
    params: ToyLMParams,
    heldout: Sequence[int],
    k: int,
    h: float = 1e-3,
    max_context: int | None = None,
    probes: Sequence[float] = DEFAULT_PROBES,
) -> BoostDerivativeReport:
    """Compare the analytic derivative of the boosted NLL at t = 0 with a
    central finite difference at step h, on held-out positions with full
    context available.

    ``improvement_predicted`` is the sign test (derivative < 0);
    ``probe_improved`` reports whether a direct NLL probe at a small
    positive exponent actually went below the base NLL.  The probe is a
    local first-order claim, so it is reported, not asserted.
    """
    if h <= 0:
        raise ContractError("finite-difference step h must be positive")
    m = params.lag_depth if max_context is None else max_context
    if not (1 <= k <= m):
        raise ContractError(f"k must be in [1, {m}]")
    tokens = np.asarray(heldout, dtype=np.int64)
    pos = eval_positions(tokens, m)
    targets = tokens[pos]
    rows = np.arange(len(pos))

    lf_full = _normalized_logprobs_at(params, tokens, pos, m)
    lf_short = _normalized_logprobs_at(params, tokens, pos, k)
    loss_full = float(np.mean(-lf_full[rows, targets]))
    loss_short = float(np.mean(-lf_short[rows, targets]))
    p_full = np.exp(lf_full)
    mean_kl = float(np.mean(np.sum(p_full * (lf_full - lf_short), axis=1)))
    analytic = (loss_full - loss_short) + mean_kl

    def nll(t: float) -> float:
        mix = (1.0 + t) * lf_full - t * lf_short
        mx = mix.max(axis=1, keepdims=True)
        logz = np.log(np.exp(mix - mx).sum(axis=1)) + mx[:, 0]
        return float(np.mean(logz - mix[rows, targets]))

    fd = (nll(h) - nll(-h)) / (2.0 * h)
    probe_nll = {0.0: nll(0.0)}
    for t in probes:
        probe_nll[float(t)] = nll(float(t))
    improvement = analytic < 0
    probe_improved = any(
        probe_nll[t] < probe_nll[0.0] for t in probe_nll if t != 0.0
    )
    return BoostDerivativeReport(
        k=k,
        max_context=m,
        loss_full=loss_full,
        loss_short=loss_short,
        mean_kl=mean_kl,
        analytic_derivative=analytic,
        fd_derivative=fd,
        h=h,
        improvement_predicted=improvement,
        probe_nll=probe_nll,
        probe_improved=probe_improved,
    )


@dataclass
class ParetoProfile:
    losses: LossProfile          # held-out NLL by context length 1..M
    kl_from_max: np.ndarray      # mean KL(f_max || f_k) for k = 1..M

    def to_dict(self) -> dict:
        return {
            "per_length_nll": [float(x) for x in self.losses.per_length_nll],
            "kl_from_max": [float(x) for x in self.kl_from_max],
        }


def pareto_profile(
    params: ToyLMParams, heldout: Sequence[int], max_context: int | None = None
) -> ParetoProfile:
    """Held-out loss at every context length plus each length's divergence
    from the full-context expert; the raw material of the improvement
    condition, emitted for inspection."""
    m = params.lag_depth if max_context is None else max_context
    tokens = np.asarray(heldout, dtype=np.int64)
    pos = eval_positions(tokens, m)
    targets = tokens[pos]
    rows = np.arange(len(pos))
    v = params.vocab_size

    lf_full = _normalized_logprobs_at(params, tokens, pos, m)
    p_full = np.exp(lf_full)

    losses = np.empty(m)
    kls = np.empty(m)
    z = np.broadcast_to(params.bias, (len(pos), v)).copy()
    for k in range(1, m + 1):
        if k <= params.lag_depth:
            z += params.lag_tables[k - 1][tokens[pos - k]]
        mx = z.max(axis=1, keepdims=True)
        lf_k = z - (np.log(np.exp(z - mx).sum(axis=1, keepdims=True)) + mx)
        losses[k - 1] = float(np.mean(-lf_k[rows, targets]))
        kls[k - 1] = float(np.mean(np.sum(p_full * (lf_full - lf_k), axis=1)))
    return ParetoProfile(losses=LossProfile(losses), kl_from_max=kls)


def render_derivative_report(report: BoostDerivativeReport) -> str:
    rows = [
        ("short context k", str(report.k)),
        ("max context", str(report.max_context)),
        ("loss (full)", f"{report.loss_full:.6f}"),
        ("loss (short)", f"{report.loss_short:.6f}"),
        ("mean KL(full||short)", f"{report.mean_kl:.6f}"),
        ("analytic derivative", f"{report.analytic_derivative:+.6f}"),
        (f"finite difference (h={report.h:g})", f"{report.fd_derivative:+.6f}"),
        ("improvement predicted", str(report.improvement_predicted)),
        ("probe improved", str(report.probe_improved)),
    ]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def render_pareto_table(profile: ParetoProfile) -> str:
    header = f"{'k':>4}  {'loss (nats)':>12}  {'KL(full||k)':>12}"
    lines = [header]
    for i, (loss, kl) in enumerate(
        zip(profile.losses.per_length_nll, profile.kl_from_max), start=1
    ):
        lines.append(f"{i:>4}  {loss:>12.6f}  {kl:>12.6f}")
    return "\n".join(lines)
