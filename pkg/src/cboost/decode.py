"""Autoregressive generation: greedy, sampling and beam search, with
optional coherence boosting and short-context policies.

Every mode shares one per-step pipeline: boosted (or base) log-probs,
then temperature, then top-k/top-p truncation, in that order — truncation
applies to the boosted distribution, not to the raw model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .backend import Backend, Tokens, as_tokens
from .boosting import BoostSpec, boosted_next_dist
from .dist import (
    Probs,
    apply_temperature,
    argmax_token,
    sample,
    truncate_top_k,
    truncate_top_p,
)
from .errors import BackendError, ContractError
from .rng import named_rng


@dataclass(frozen=True)
class GenConfig:
    max_new_tokens: int = 200
    mode: Literal["greedy", "sample", "beam"] = "greedy"
    temperature: float = 1.0
    top_p: float | None = None
    top_k: int | None = None
    beam_width: int | None = None
    stop_tokens: frozenset[int] = field(default_factory=frozenset)
    seed: int = 0
    boost: BoostSpec | None = None

    def __post_init__(self):
        if self.max_new_tokens < 0:
            raise ContractError("max_new_tokens must be >= 0")
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        if self.mode == "beam":
            if not self.beam_width or self.beam_width < 1:
                raise ContractError("beam mode requires beam_width >= 1")
        elif self.beam_width is not None:
            raise ContractError("beam_width is only valid in beam mode")
        object.__setattr__(self, "stop_tokens", frozenset(self.stop_tokens))


@dataclass
class GenResult:
    tokens: Tokens                 # newly generated tokens (prompt excluded)
    error: str | None = None       # set when the backend failed mid-generation

    @property
    def ok(self) -> bool:
        return self.error is None


def step_dist(backend: Backend, context: Sequence[int], cfg: GenConfig) -> Probs:
    """The per-step next-token distribution: boost, temperature, truncation."""
    if cfg.boost is not None:
        lp = boosted_next_dist(backend, context, cfg.boost)
    else:
        lp = backend.next_logprobs(context)
    lp = apply_temperature(lp, cfg.temperature)
    probs = np.exp(lp)
    if cfg.top_k is not None:
        probs = truncate_top_k(probs, cfg.top_k)
    if cfg.top_p is not None:
        probs = truncate_top_p(probs, cfg.top_p)
    return probs


def _window(context: Tokens, backend: Backend) -> Tokens:
    """Slide the context window so it fits the backend's budget."""
    limit = backend.info().max_context
    return context if len(context) <= limit else context[-limit:]


def generate(backend: Backend, prompt: Sequence[int], cfg: GenConfig) -> GenResult:
    """Append tokens until a stop token or max_new_tokens.

    Deterministic given cfg.seed.  A backend failure mid-generation returns
    the partial output with the error recorded instead of raising.
    """
    prompt = as_tokens(prompt)
    if not prompt:
        raise ContractError("prompt must be non-empty")
    if cfg.mode == "beam":
        return beam_search(backend, prompt, cfg.beam_width, cfg)
    rng = named_rng(cfg.seed, "decode-sample")
    ctx = prompt
    out: list[int] = []
    for _ in range(cfg.max_new_tokens):
        try:
            probs = step_dist(backend, _window(ctx, backend), cfg)
        except BackendError as exc:
            return GenResult(tuple(out), error=str(exc))
        tok = argmax_token(probs) if cfg.mode == "greedy" else sample(probs, rng)
        out.append(tok)
        ctx = ctx + (tok,)
        if tok in cfg.stop_tokens:
            break
    return GenResult(tuple(out))


def generate_dialog(
    backend: Backend,
    conversation: Sequence[int],
    separator: int,
    alpha: float,
    cfg: GenConfig | None = None,
) -> GenResult:
    """Generate a response to ``conversation``.

    The long expert sees conversation + separator + response-so-far; the
    short expert sees only the response generated after the separator, so
    the mixture f_max * f_response^alpha penalizes (for alpha < 0) tokens
    that need no conversation context.  The first step has an empty
    response and is therefore unboosted.
    """
    if cfg is None:
        cfg = GenConfig(max_new_tokens=64)
    if cfg.mode == "beam":
        raise ContractError("dialog boosting uses greedy or sampled decoding")
    spec = BoostSpec.after_separator(separator, alpha)
    cfg = replace(cfg, boost=spec)
    prompt = as_tokens(conversation) + (separator,)
    return generate(backend, prompt, cfg)


def sequence_logprob(backend: Backend, prompt: Tokens, tokens: Tokens, cfg: GenConfig) -> float:
    """Total log-probability of ``tokens`` under the per-step pipeline."""
    total = 0.0
    ctx = prompt
    for tok in tokens:
        probs = step_dist(backend, _window(ctx, backend), cfg)
        p = probs[tok]
        total += float(np.log(p)) if p > 0 else -np.inf
        ctx = ctx + (tok,)
    return total


def beam_search(
    backend: Backend, prompt: Sequence[int], beam_width: int, cfg: GenConfig | None = None
) -> GenResult:
    """Length-wise beam over summed per-step log-probs.

    Ties break toward lexicographically smaller token sequences.  The
    greedy continuation is kept as a floor candidate, so the result never
    scores below the greedy sequence.
    """
    prompt = as_tokens(prompt)
    if not prompt:
        raise ContractError("prompt must be non-empty")
    if beam_width < 1:
        raise ContractError("beam_width must be >= 1")
    if cfg is None:
        cfg = GenConfig(mode="beam", beam_width=beam_width)
    step_cfg = replace(cfg, mode="greedy", beam_width=None)

    # (total logprob, generated tokens, finished?)
    beams: list[tuple[float, Tokens, bool]] = [(0.0, (), False)]
    try:
        for _ in range(cfg.max_new_tokens):
            candidates: list[tuple[float, Tokens, bool]] = []
            for total, toks, finished in beams:
                if finished:
                    candidates.append((total, toks, True))
                    continue
                probs = step_dist(backend, _window(prompt + toks, backend), step_cfg)
                for tok in np.flatnonzero(probs > 0):
                    tok = int(tok)
                    candidates.append(
                        (
                            total + float(np.log(probs[tok])),
                            toks + (tok,),
                            tok in cfg.stop_tokens,
                        )
                    )
            candidates.sort(key=lambda c: (-c[0], c[1]))
            beams = candidates[:beam_width]
            if all(f for _, _, f in beams):
                break

        best_total, best_toks, _ = beams[0]
        greedy = generate(backend, prompt, step_cfg)
        if greedy.error is None:
            greedy_total = sequence_logprob(backend, prompt, greedy.tokens, step_cfg)
            if greedy_total > best_total:
                best_toks = greedy.tokens
    except BackendError as exc:
        return GenResult((), error=str(exc))
    return GenResult(best_toks)


def generation_record(
    record_id: str,
    prompt_tokens: Sequence[int],
    result: GenResult,
    text: str,
    config_hash: str,
) -> dict:
    """One JSONL generation record."""
    rec = {
        "id": record_id,
        "prompt_tokens": list(prompt_tokens),
        "output_tokens": list(result.tokens),
        "text": text,
        "config_hash": config_hash,
    }
    if result.error is not None:
        rec["error"] = result.error
    return rec
