"""A small trainable autoregressive LM over lagged bigram tables.

The model's logits for a context w_1..w_n are

    bias[w] + sum_{j=1..min(n, lag_depth)} lag_tables[j-1][w_{n-j+1}, w]

i.e. an additive log-linear contribution from each of the last
``lag_depth`` tokens, indexed by how far back they sit.  Truncating the
context to its last k tokens is exactly equivalent to zeroing the
contributions of lags > k, which makes short-context experts exact, and
the gradients are closed-form (softmax minus one-hot per prediction).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import Backend, BackendInfo, Tokens, as_tokens
from .dist import LogProbs, log_softmax
from .errors import ContractError
from .rng import named_rng

MAGIC = b"TLM1"


@dataclass
class ToyLMParams:
    bias: np.ndarray        # (V,)
    lag_tables: np.ndarray  # (lag_depth, V, V): [j-1][prev, next] in nats

    def __post_init__(self):
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.lag_tables = np.asarray(self.lag_tables, dtype=np.float64)
        if self.bias.ndim != 1 or self.lag_tables.ndim != 3:
            raise ContractError("bias must be (V,), lag_tables (M, V, V)")
        v = self.bias.shape[0]
        if self.lag_tables.shape[1:] != (v, v):
            raise ContractError("lag table shape does not match vocab size")
        if not (np.all(np.isfinite(self.bias)) and np.all(np.isfinite(self.lag_tables))):
            raise ContractError("parameters must be finite")

    @property
    def vocab_size(self) -> int:
        return self.bias.shape[0]

    @property
    def lag_depth(self) -> int:
        return self.lag_tables.shape[0]

    def copy(self) -> "ToyLMParams":
        return ToyLMParams(self.bias.copy(), self.lag_tables.copy())

    @classmethod
    def zeros(cls, vocab_size: int, lag_depth: int) -> "ToyLMParams":
        return cls(np.zeros(vocab_size), np.zeros((lag_depth, vocab_size, vocab_size)))

    def logits(self, context: Sequence[int]) -> np.ndarray:
        """Next-token logits for a (non-empty) context."""
        context = as_tokens(context)
        if not context:
            raise ContractError("context must be non-empty")
        z = self.bias.copy()
        for j in range(1, min(len(context), self.lag_depth) + 1):
            z += self.lag_tables[j - 1][context[-j]]
        return z


@dataclass
class TrainConfig:
    """SGD settings.

    The default step budget is deliberately small: it leaves the model in
    the undertrained regime where long-range structure is only partially
    learned, which is the regime coherence boosting targets.  Pass more
    steps for a well-converged model.
    """

    max_context: int = 12
    learning_rate: float = 0.1
    steps: int = 12
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.max_context < 1 or self.max_context > 64:
            raise ContractError("max_context must be in [1, 64] at desk scale")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.l2 < 0:
            raise ContractError("l2 must be non-negative")


@dataclass
class LossProfile:
    """Held-out NLL (nats/token) as a function of context length: entry
    k-1 is the mean loss predicting a token from its last k tokens."""

    per_length_nll: np.ndarray

    def __post_init__(self):
        self.per_length_nll = np.asarray(self.per_length_nll, dtype=np.float64)
        if not np.all(np.isfinite(self.per_length_nll)):
            raise ContractError("loss profile must be finite")

    def __getitem__(self, k: int) -> float:
        """Loss at context length k (1-based)."""
        return float(self.per_length_nll[k - 1])


def window_loss_and_gradient(
    params: ToyLMParams, window: Sequence[int]
) -> tuple[float, ToyLMParams]:
    """Mean NLL over all next-token predictions inside one window, plus its
    exact gradient in parameter shape.

    A window w_0..w_L yields L predictions; prediction t conditions on
    w_0..w_t, so every context length 1..L contributes once with equal
    weight — the uniform-scalarization inner term.
    """
    window = as_tokens(window)
    if len(window) < 2:
        raise ContractError("window must contain at least 2 tokens")
    v = params.vocab_size
    n_pred = len(window) - 1
    grad = ToyLMParams.zeros(v, params.lag_depth)
    loss = 0.0
    for t in range(n_pred):
        ctx = window[: t + 1]
        z = params.logits(ctx)
        m = z.max()
        e = np.exp(z - m)
        p = e / e.sum()
        target = window[t + 1]
        loss += float(np.log(e.sum()) + m - z[target])
        g = p.copy()
        g[target] -= 1.0
        g /= n_pred
        grad.bias += g
        for j in range(1, min(len(ctx), params.lag_depth) + 1):
            grad.lag_tables[j - 1][ctx[-j]] += g
    return loss / n_pred, grad


def gradient(params: ToyLMParams, window: Sequence[int]) -> ToyLMParams:
    """Exact gradient of the window's uniform-scalarized NLL."""
    return window_loss_and_gradient(params, window)[1]


def train_uniform_scalarization(
    corpus: Sequence[int],
    cfg: TrainConfig,
    vocab_size: int | None = None,
    loss_trace: list[float] | None = None,
) -> ToyLMParams:
    """Fit parameters by SGD on windows of length max_context+1 sampled
    uniformly from the corpus stream.

    Each window contributes the mean NLL of all its next-token predictions
    (one per context length), so short and long contexts receive equal
    weight.  Deterministic given (corpus, cfg).  If ``loss_trace`` is a
    list, the per-step mean batch loss is appended to it.
    """
    corpus = as_tokens(corpus)
    m = cfg.max_context
    win = m + 1
    if len(corpus) < 10 * win:
        raise ContractError(
            f"corpus too short: need at least {10 * win} tokens, got {len(corpus)}"
        )
    v = int(max(corpus)) + 1 if vocab_size is None else vocab_size
    if v <= int(max(corpus)):
        raise ContractError("vocab_size smaller than largest corpus token id")
    params = ToyLMParams.zeros(v, m)
    rng = named_rng(cfg.seed, "toy-lm-train-windows")
    windows = np.asarray(corpus, dtype=np.int64)
    for _ in range(cfg.steps):
        starts = rng.integers(0, len(corpus) - win + 1, size=cfg.batch_size)
        batch = np.stack([windows[s : s + win] for s in starts])
        loss, grad = _batch_loss_and_gradient(params, batch)
        if loss_trace is not None:
            loss_trace.append(loss)
        lr = cfg.learning_rate
        params.bias -= lr * (grad.bias + 2.0 * cfg.l2 * params.bias)
        params.lag_tables -= lr * (grad.lag_tables + 2.0 * cfg.l2 * params.lag_tables)
    return params


def _batch_loss_and_gradient(
    params: ToyLMParams, batch: np.ndarray
) -> tuple[float, ToyLMParams]:
    """Vectorized mean window loss and gradient over a (B, win) batch."""
    b, win = batch.shape
    n_pred = win - 1
    v = params.vocab_size
    grad = ToyLMParams.zeros(v, params.lag_depth)
    total = 0.0
    scale = 1.0 / (n_pred * b)
    for t in range(n_pred):
        # prediction t: context batch[:, :t+1], target batch[:, t+1]
        z = np.broadcast_to(params.bias, (b, v)).copy()
        for j in range(1, min(t + 1, params.lag_depth) + 1):
            z += params.lag_tables[j - 1][batch[:, t + 1 - j]]
        mx = z.max(axis=1, keepdims=True)
        e = np.exp(z - mx)
        sums = e.sum(axis=1, keepdims=True)
        p = e / sums
        targets = batch[:, t + 1]
        rows = np.arange(b)
        total += float(np.sum(np.log(sums[:, 0]) + mx[:, 0] - z[rows, targets]))
        g = p
        g[rows, targets] -= 1.0
        g *= scale
        grad.bias += g.sum(axis=0)
        for j in range(1, min(t + 1, params.lag_depth) + 1):
            np.add.at(grad.lag_tables[j - 1], batch[:, t + 1 - j], g)
    return total * scale, grad


def _suffix_logits(
    params: ToyLMParams, tokens: np.ndarray, positions: np.ndarray, k: int
) -> np.ndarray:
    """Logits at each position t in ``positions`` conditioning on the last
    k tokens before t.  Requires min(positions) >= k."""
    v = params.vocab_size
    z = np.broadcast_to(params.bias, (len(positions), v)).copy()
    for j in range(1, min(k, params.lag_depth) + 1):
        z += params.lag_tables[j - 1][tokens[positions - j]]
    return z


def eval_positions(heldout: Sequence[int], max_context: int) -> np.ndarray:
    """Target positions in a held-out stream with full context available."""
    heldout = np.asarray(heldout, dtype=np.int64)
    if len(heldout) <= max_context:
        raise ContractError("held-out stream shorter than max_context + 1")
    return np.arange(max_context, len(heldout))


def loss_profile(
    params: ToyLMParams, heldout: Sequence[int], max_context: int | None = None
) -> LossProfile:
    """Mean held-out NLL at every context length 1..max_context.

    All lengths are scored at the same positions (those with at least
    max_context tokens of history), so the profile isolates the effect of
    truncation.
    """
    m = params.lag_depth if max_context is None else max_context
    tokens = np.asarray(heldout, dtype=np.int64)
    pos = eval_positions(tokens, m)
    targets = tokens[pos]
    rows = np.arange(len(pos))
    v = params.vocab_size
    z = np.broadcast_to(params.bias, (len(pos), v)).copy()
    losses = np.empty(m)
    for k in range(1, m + 1):
        if k <= params.lag_depth:
            z += params.lag_tables[k - 1][tokens[pos - k]]
        mx = z.max(axis=1)
        logz = np.log(np.exp(z - mx[:, None]).sum(axis=1)) + mx
        losses[k - 1] = float(np.mean(logz - z[rows, targets]))
    return LossProfile(losses)


# ---------------------------------------------------------------------------
# Persistence: magic "TLM1", little-endian u32 vocab, u32 lag depth, then
# float64 arrays bias, lag table 1..M in row-major order.
# ---------------------------------------------------------------------------

def save_params(params: ToyLMParams, path: str) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", params.vocab_size, params.lag_depth))
        f.write(params.bias.astype("<f8").tobytes())
        f.write(np.ascontiguousarray(params.lag_tables, dtype="<f8").tobytes())


def load_params(path: str) -> ToyLMParams:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise ContractError(f"not a toy LM parameter file: {path}")
    v, m = struct.unpack("<II", blob[4:12])
    arr = np.frombuffer(blob[12:], dtype="<f8")
    expected = v + m * v * v
    if arr.size != expected:
        raise ContractError(f"corrupt parameter file: expected {expected} floats, got {arr.size}")
    bias = arr[:v].copy()
    tables = arr[v:].reshape(m, v, v).copy()
    return ToyLMParams(bias, tables)


# ---------------------------------------------------------------------------
# Tokenizer + backend wrapper
# ---------------------------------------------------------------------------

UNK_TOKEN = "<unk>"
EOT_TOKEN = "<eot>"


class WhitespaceTokenizer:
    """Whitespace tokenizer over a fixed word list, with reserved unknown
    (id 0) and end-of-text (id 1) tokens."""

    def __init__(self, words: Sequence[str]):
        self.id_to_word = [UNK_TOKEN, EOT_TOKEN] + list(words)
        if len(set(self.id_to_word)) != len(self.id_to_word):
            raise ContractError("duplicate words in tokenizer vocabulary")
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    @classmethod
    def from_corpus(cls, text: str) -> "WhitespaceTokenizer":
        words = sorted({w for w in text.split() if w not in (UNK_TOKEN, EOT_TOKEN)})
        return cls(words)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_word)

    @property
    def unk_id(self) -> int:
        return 0

    @property
    def eot_id(self) -> int:
        return 1

    def encode(self, text: str) -> Tokens:
        return tuple(self.word_to_id.get(w, 0) for w in text.split())

    def decode(self, tokens: Sequence[int]) -> str:
        return " ".join(self.id_to_word[t] for t in tokens)


def corpus_tokens(text: str, tokenizer: WhitespaceTokenizer) -> Tokens:
    """Tokenize a corpus file: one document per non-empty line, documents
    joined into a single stream by end-of-text separators."""
    docs = [tokenizer.encode(line) for line in text.splitlines() if line.strip()]
    if not docs:
        raise ContractError("empty corpus")
    out: list[int] = []
    for i, d in enumerate(docs):
        if i:
            out.append(tokenizer.eot_id)
        out.extend(d)
    return tuple(out)


class ToyBackend(Backend):
    """Backend view of a ToyLMParams model.

    ``max_context`` is the longest context the backend accepts; only the
    last ``params.lag_depth`` tokens influence the output, so the full-
    context expert coincides with the lag-depth truncation.
    """

    def __init__(
        self,
        params: ToyLMParams,
        tokenizer: WhitespaceTokenizer | None = None,
        max_context: int = 2**20,
        name: str = "toy",
        eot_token_id: int | None = None,
    ):
        if tokenizer is not None and tokenizer.vocab_size != params.vocab_size:
            raise ContractError("tokenizer vocabulary does not match parameters")
        self.params = params
        self.tokenizer = tokenizer
        self._info = BackendInfo(params.vocab_size, max_context, name)
        if eot_token_id is None:
            eot_token_id = tokenizer.eot_id if tokenizer is not None else 0
        self._eot = int(eot_token_id)

    def info(self) -> BackendInfo:
        return self._info

    def next_logprobs(self, context: Sequence[int]) -> LogProbs:
        context = as_tokens(context)
        self._check_context(context)
        v = self.params.vocab_size
        if any(t < 0 or t >= v for t in context):
            raise ContractError("token id out of range for this backend")
        return log_softmax(self.params.logits(context))

    def encode(self, text: str) -> Tokens:
        if self.tokenizer is None:
            raise ContractError("this backend has no tokenizer")
        return self.tokenizer.encode(text)

    def decode(self, tokens: Sequence[int]) -> str:
        if self.tokenizer is None:
            raise ContractError("this backend has no tokenizer")
        return self.tokenizer.decode(tokens)

    @property
    def eot_token_id(self) -> int:
        return self._eot
