"""Coherence-boosted next-token distributions and answer scores.

A boosted distribution is a log-linear (product-of-experts) mixture of the
same model evaluated at several context lengths:

    p(w) proportional to  prod_k  f_k(w | context)^weight_k

where f_k conditions on only the last k context tokens and the sentinel
length "max" denotes the full context.  Weights may be negative, which
penalizes tokens that are already predictable from the short context.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import numpy as np

from .backend import Backend, Tokens, as_tokens, truncated_context
from .dist import (
    DEFAULT_LOG_FLOOR,
    LogProbs,
    argmax_token,
    log_linear_mix,
    uniform_logprobs,
)
from .errors import ContractError

log = logging.getLogger(__name__)

MAX_CONTEXT = "max"  # sentinel weight key: the full-context expert


@dataclass(frozen=True)
class FixedK:
    """Short experts condition on fixed suffix lengths (the integer keys
    of the weight map)."""


@dataclass(frozen=True)
class AfterSeparator:
    """The short expert conditions on the tokens after the last occurrence
    of a separator (e.g. the response generated so far in a dialog)."""

    separator: int


@dataclass(frozen=True)
class PremiseFree:
    """The short expert conditions on an explicitly supplied context (the
    premise-free part of a prompt)."""

    context: Tokens


ShortContextPolicy = FixedK | AfterSeparator | PremiseFree

# weight key for the policy-defined short expert under AfterSeparator /
# PremiseFree policies
SHORT = "short"


@dataclass(frozen=True)
class BoostSpec:
    """Sparse expert weights plus the policy choosing the short context.

    ``weights`` maps context lengths to real exponents; the full-context
    expert is stored under the key "max" like any other entry, and the
    policy-defined short expert (dialog suffix or premise-free context)
    under "short".  At most ``max_entries`` nonzero entries are allowed:
    evaluating the model is expensive, so mixtures stay sparse.
    """

    weights: Mapping[int | str, float]
    policy: ShortContextPolicy = field(default_factory=FixedK)
    max_entries: int = 2

    def __post_init__(self):
        object.__setattr__(self, "weights", dict(self.weights))
        nonzero = 0
        for key, w in self.weights.items():
            if not np.isfinite(w):
                raise ContractError("boost weights must be finite")
            if w != 0:
                nonzero += 1
            if isinstance(key, bool) or not isinstance(key, (int, str)):
                raise ContractError(f"bad weight key {key!r}")
            if isinstance(key, int) and key < 1:
                raise ContractError("fixed context lengths must be >= 1")
            if isinstance(key, str) and key not in (MAX_CONTEXT, SHORT):
                raise ContractError(f"unknown sentinel weight key {key!r}")
            if key == SHORT and isinstance(self.policy, FixedK):
                raise ContractError('"short" entries need an after-separator or premise-free policy')
        if nonzero > self.max_entries:
            raise ContractError(
                f"boost spec has {nonzero} nonzero entries, at most {self.max_entries} allowed"
            )

    @classmethod
    def fixed_k(cls, k: int, alpha: float, max_weight: float = 1.0) -> "BoostSpec":
        """Mixture f_max^max_weight * f_k^alpha."""
        return cls(weights={MAX_CONTEXT: max_weight, k: alpha})

    @classmethod
    def after_separator(cls, separator: int, alpha: float) -> "BoostSpec":
        """Dialog-style mixture f_max * f_suffix^alpha."""
        return cls(weights={MAX_CONTEXT: 1.0, SHORT: alpha}, policy=AfterSeparator(separator))

    @classmethod
    def base_model(cls) -> "BoostSpec":
        return cls(weights={MAX_CONTEXT: 1.0})


def _short_context_after_separator(context: Tokens, separator: int) -> Tokens:
    for i in range(len(context) - 1, -1, -1):
        if context[i] == separator:
            return context[i + 1 :]
    return context  # no separator: the whole context is the "response"


def resolve_expert_contexts(
    context: Sequence[int], spec: BoostSpec
) -> list[tuple[Tokens, float]]:
    """Resolve spec entries to (expert context, weight) pairs.

    Zero-weight entries are dropped.  Fixed lengths >= len(context) collapse
    into the full-context expert with weights summed, so the mixture never
    evaluates the same context twice.  Under an after-separator policy an
    empty suffix drops the short expert (the step is unboosted).
    """
    context = as_tokens(context)
    if not context:
        raise ContractError("context must be non-empty")
    full_weight = 0.0
    shorts: list[tuple[Tokens, float]] = []
    for key, w in spec.weights.items():
        if w == 0:
            continue
        if key == MAX_CONTEXT:
            full_weight += w
        elif key == SHORT:
            if isinstance(spec.policy, AfterSeparator):
                suffix = _short_context_after_separator(context, spec.policy.separator)
                if suffix:
                    shorts.append((suffix, w))
                # empty suffix: nothing generated yet, leave this step unboosted
            elif isinstance(spec.policy, PremiseFree):
                if not spec.policy.context:
                    raise ContractError("premise-free policy context must be non-empty")
                shorts.append((as_tokens(spec.policy.context), w))
            else:  # pragma: no cover - rejected at construction
                raise ContractError('"short" entry without a short-context policy')
        else:
            if key >= len(context):
                full_weight += w  # expert coincides with the full context
            else:
                shorts.append((truncated_context(context, key), w))
    experts: list[tuple[Tokens, float]] = []
    if full_weight != 0.0:
        experts.append((context, full_weight))
    experts.extend(shorts)
    return experts


def boosted_next_dist(
    backend: Backend,
    context: Sequence[int],
    spec: BoostSpec,
    log_floor: float | None = DEFAULT_LOG_FLOOR,
) -> LogProbs:
    """Next-token log-probabilities under the boosted mixture.

    With all weight on a single expert at exponent 1 this is exactly that
    expert's distribution; with every weight zero it is uniform (an empty
    product).
    """
    experts = resolve_expert_contexts(context, spec)
    if not experts:
        return uniform_logprobs(backend.info().vocab_size)
    logprob_vecs = [backend.next_logprobs(ctx) for ctx, _ in experts]
    return log_linear_mix(logprob_vecs, [w for _, w in experts], log_floor=log_floor)


@dataclass(frozen=True)
class MCScore:
    """Scores of one candidate answer: log-likelihood given the full
    context, given the premise-free context, and their combination
    full + alpha * short."""

    full_logprob: float
    short_logprob: float
    combined: float


def score_choice(
    backend: Backend,
    full_ctx: Sequence[int],
    premise_free_ctx: Sequence[int],
    answer: Sequence[int],
    alpha: float,
) -> MCScore:
    """Score one answer candidate by full-context and premise-free-context
    log-likelihoods, combined as full + alpha * short.

    alpha = 0 reproduces base-model ranking; alpha = -1 ranks by the
    pointwise mutual information between the premise and the answer.  An
    empty premise-free context is replaced by a single end-of-text token
    (autoregressive backends need at least one conditioning token).
    """
    answer = as_tokens(answer)
    if not answer:
        raise ContractError("answer must be non-empty")
    premise_free_ctx = as_tokens(premise_free_ctx)
    if not premise_free_ctx:
        log.warning(
            "empty premise-free context: substituting a single end-of-text token"
        )
        premise_free_ctx = (backend.eot_token_id,)
    full = backend.score_continuation(full_ctx, answer)
    short = backend.score_continuation(premise_free_ctx, answer)
    # alpha == 0 must reproduce the base path bit-for-bit (and never touch
    # a possibly infinite short score)
    combined = full if alpha == 0 else full + alpha * short
    return MCScore(full_logprob=full, short_logprob=short, combined=combined)


@dataclass
class GridSearchResult:
    k: int | None
    alpha: float
    score: float
    objective: str
    table: list[tuple[int | None, float, float]]  # (k, alpha, score) per cell


def grid_search(
    backend: Backend,
    dataset: Sequence,
    k_grid: Sequence[int | None],
    alpha_grid: Sequence[float],
    objective: Literal["accuracy", "nll"] = "accuracy",
    evaluate=None,
) -> GridSearchResult:
    """Exhaustive sweep over (k, alpha) cells, best cell by objective.

    ``evaluate(backend, dataset, k, alpha, objective) -> float`` defaults to
    the task-appropriate harness from eval_tasks (dispatched on item type).
    Accuracy is maximized, NLL minimized.  Ties prefer smaller ``abs(alpha)``
    and then smaller k — the candidate closest to the base model.
    """
    if not len(dataset) or not len(k_grid) or not len(alpha_grid):
        raise ContractError("grid search needs a non-empty dataset and non-empty grids")
    if evaluate is None:
        from .tasks import evaluate_cell

        evaluate = evaluate_cell
    sign = 1.0 if objective == "accuracy" else -1.0
    table = []
    best = None
    for k in k_grid:
        for alpha in alpha_grid:
            score = evaluate(backend, dataset, k, alpha, objective)
            table.append((k, float(alpha), float(score)))
            rank = (sign * score, -abs(alpha), -(k if k is not None else 0))
            if best is None or rank > best[0]:
                best = (rank, k, float(alpha), float(score))
    _, k_star, alpha_star, score_star = best
    return GridSearchResult(
        k=k_star, alpha=alpha_star, score=score_star, objective=objective, table=table
    )


def boosted_argmax(backend: Backend, context: Sequence[int], spec: BoostSpec) -> int:
    """Top-ranked next token under the boosted mixture (ties to lowest id)."""
    return argmax_token(boosted_next_dist(backend, context, spec))
