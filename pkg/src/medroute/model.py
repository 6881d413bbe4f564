"""Transformer-encoder classifier in float64 numpy with hand-written backward pass.

Architecture: token + learned position embeddings, ``n_layers`` pre-norm
blocks (``x + Attn(LN(x))`` then ``x + FF(LN(x))``), a linear head on the
final hidden state of the CLS position. Padding keys get a ``-inf``
attention bias, so logits do not depend on trailing PAD columns.

Parameters are a plain ``dict[str, np.ndarray]`` in the canonical order
given by :func:`param_shapes`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, NamedTuple

import numpy as np

from .rng import SplitMix64

Params = Dict[str, np.ndarray]

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class ContractError(ValueError):
    """Input violates a shape or range contract."""


class NonFiniteError(FloatingPointError):
    def __init__(self, name: str, step: int | None = None):
        self.name = name
        self.step = step
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"non-finite values in {name}{where}")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    max_len: int = 128
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "max_len", "d_model", "n_heads", "n_layers", "d_ff"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


class Batch(NamedTuple):
    ids: np.ndarray
    mask: np.ndarray
    targets: np.ndarray | None = None


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (cfg.vocab_size, d),
        "pos_emb": (cfg.max_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        shapes[p + "ln1.gamma"] = (d,)
        shapes[p + "ln1.beta"] = (d,)
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (d, d)
            shapes[p + f"attn.b{w}"] = (d,)
        shapes[p + "ln2.gamma"] = (d,)
        shapes[p + "ln2.beta"] = (d,)
        shapes[p + "ff.w1"] = (d, f)
        shapes[p + "ff.b1"] = (f,)
        shapes[p + "ff.w2"] = (f, d)
        shapes[p + "ff.b2"] = (d,)
    shapes["head.w"] = (d, cfg.n_classes)
    shapes["head.b"] = (cfg.n_classes,)
    return shapes


def init_params(cfg: ModelConfig) -> Params:
    """Glorot-uniform matrices, zero biases/shifts, unit layer-norm scales.

    Matrices are filled in canonical order from one SplitMix64 stream
    seeded with ``cfg.seed``.
    """
    rng = SplitMix64(cfg.seed)
    params: Params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            u = rng.uniform(shape[0] * shape[1]).reshape(shape)
            params[name] = (2.0 * u - 1.0) * bound
        elif name.endswith("gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def copy_params(params: Params) -> Params:
    return {k: v.copy() for k, v in params.items()}


# --- primitives -------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient ``(softmax - onehot) / B``."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    b = logits.shape[0]
    rows = np.arange(b)
    loss = -float(log_softmax(logits)[rows, targets].mean())
    grad = softmax(logits)
    grad[rows, targets] -= 1.0
    grad /= b
    return loss, grad


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _ln_forward(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd)


def _ln_backward(dy, gamma, cache):
    xhat, rstd = cache
    red = tuple(range(dy.ndim - 1))
    dgamma = (dy * xhat).sum(axis=red)
    dbeta = dy.sum(axis=red)
    dxhat = dy * gamma
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


class _Dropout:
    """Inverted dropout with masks drawn in call order from one stream."""

    def __init__(self, rate: float, seed: int | None):
        self.rate = rate
        self.rng = SplitMix64(seed) if rate > 0 and seed is not None else None

    def __call__(self, x):
        if self.rng is None:
            return x, None
        keep = (self.rng.uniform(x.size).reshape(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * keep, keep


def _split_heads(x, h):
    b, t, d = x.shape
    return x.reshape(b, t, h, d // h).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


# --- forward / backward -----------------------------------------------------


def check_batch(cfg: ModelConfig, batch: Batch) -> None:
    ids, mask = np.asarray(batch.ids), np.asarray(batch.mask)
    if ids.ndim != 2:
        raise ContractError(f"ids must be [B, L], got shape {ids.shape}")
    if mask.shape != ids.shape:
        raise ContractError(f"mask shape {mask.shape} != ids shape {ids.shape}")
    if ids.shape[1] > cfg.max_len or ids.shape[1] < 1:
        raise ContractError(f"sequence length {ids.shape[1]} outside 1..{cfg.max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ContractError("token id outside vocabulary")
    if ids.size and not np.all(mask[:, 0] == 1):
        raise ContractError("position 0 (CLS) must be unmasked")
    if batch.targets is not None:
        t = np.asarray(batch.targets)
        if t.shape != (ids.shape[0],):
            raise ContractError(f"targets shape {t.shape} != ({ids.shape[0]},)")
        if t.size and (t.min() < 0 or t.max() >= cfg.n_classes):
            raise ContractError("target outside class range")


def _forward(params: Params, cfg: ModelConfig, ids, mask, dropout: _Dropout):
    h_heads = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    b, t = ids.shape
    key_bias = np.where(mask[:, None, None, :] > 0, 0.0, -np.inf)

    x = params["tok_emb"][ids] + params["pos_emb"][:t]
    x, drop0 = dropout(x)
    caches = []
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        # the head reads only CLS, so the last block computes that row alone
        tq = 1 if i == cfg.n_layers - 1 else t
        a, ln1 = _ln_forward(x, params[p + "ln1.gamma"], params[p + "ln1.beta"])
        aq = a[:, :tq]
        q = _split_heads(aq @ params[p + "attn.wq"] + params[p + "attn.bq"], h_heads)
        k = _split_heads(a @ params[p + "attn.wk"] + params[p + "attn.bk"], h_heads)
        v = _split_heads(a @ params[p + "attn.wv"] + params[p + "attn.bv"], h_heads)
        probs = softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
        ctx = _merge_heads(probs @ v)
        attn_out, drop1 = dropout(ctx @ params[p + "attn.wo"] + params[p + "attn.bo"])
        x_mid = x[:, :tq] + attn_out
        c, ln2 = _ln_forward(x_mid, params[p + "ln2.gamma"], params[p + "ln2.beta"])
        pre = c @ params[p + "ff.w1"] + params[p + "ff.b1"]
        act, tanh_t = _gelu(pre)
        ff_out, drop2 = dropout(act @ params[p + "ff.w2"] + params[p + "ff.b2"])
        caches.append((tq, a, ln1, q, k, v, probs, ctx, drop1, c, ln2, pre, act, tanh_t, drop2))
        x = x_mid + ff_out
    cls = x[:, 0]
    logits = cls @ params["head.w"] + params["head.b"]
    return logits, (ids, drop0, caches, cls)


def forward(params: Params, cfg: ModelConfig, batch: Batch, *, training: bool = False,
            dropout_seed: int | None = None) -> np.ndarray:
    """Logits [B, C]. Dropout is active only with ``training`` and a seed."""
    check_batch(cfg, batch)
    ids, mask = np.asarray(batch.ids), np.asarray(batch.mask)
    drop = _Dropout(cfg.dropout_rate if training else 0.0, dropout_seed)
    return _forward(params, cfg, ids, mask, drop)[0]


def loss_and_grad(params: Params, cfg: ModelConfig, batch: Batch, *, training: bool = False,
                  dropout_seed: int | None = None) -> tuple[float, Params]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    check_batch(cfg, batch)
    if batch.targets is None:
        raise ContractError("targets required for backward")
    ids, mask = np.asarray(batch.ids), np.asarray(batch.mask)
    drop = _Dropout(cfg.dropout_rate if training else 0.0, dropout_seed)
    logits, (ids, drop0, caches, cls) = _forward(params, cfg, ids, mask, drop)
    loss, dlogits = cross_entropy_loss(logits, batch.targets)
    if not math.isfinite(loss):
        raise NonFiniteError("loss")

    h_heads = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.head_dim)
    grads: Params = {}
    grads["head.w"] = cls.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dx = np.zeros((ids.shape[0], 1, cfg.d_model))
    dx[:, 0] = dlogits @ params["head.w"].T

    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}."
        tq, a, ln1, q, k, v, probs, ctx, drop1, c, ln2, pre, act, tanh_t, drop2 = caches[i]
        # x_out = x_mid + FF(LN2(x_mid))
        dff = dx if drop2 is None else dx * drop2
        grads[p + "ff.w2"] = np.einsum("bti,btj->ij", act, dff)
        grads[p + "ff.b2"] = dff.sum(axis=(0, 1))
        dpre = (dff @ params[p + "ff.w2"].T) * _gelu_grad(pre, tanh_t)
        grads[p + "ff.w1"] = np.einsum("bti,btj->ij", c, dpre)
        grads[p + "ff.b1"] = dpre.sum(axis=(0, 1))
        dc = dpre @ params[p + "ff.w1"].T
        dln, grads[p + "ln2.gamma"], grads[p + "ln2.beta"] = _ln_backward(dc, params[p + "ln2.gamma"], ln2)
        dx_mid = dx + dln
        # x_mid = x[:, :tq] + Attn(LN1(x))
        dattn = dx_mid if drop1 is None else dx_mid * drop1
        grads[p + "attn.wo"] = np.einsum("bti,btj->ij", ctx, dattn)
        grads[p + "attn.bo"] = dattn.sum(axis=(0, 1))
        dctx = _split_heads(dattn @ params[p + "attn.wo"].T, h_heads)
        dprobs = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
        dq = _merge_heads(dscores @ k)
        dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
        dv = _merge_heads(dv)
        aq = a[:, :tq]
        grads[p + "attn.wq"] = np.einsum("bti,btj->ij", aq, dq)
        grads[p + "attn.bq"] = dq.sum(axis=(0, 1))
        grads[p + "attn.wk"] = np.einsum("bti,btj->ij", a, dk)
        grads[p + "attn.bk"] = dk.sum(axis=(0, 1))
        grads[p + "attn.wv"] = np.einsum("bti,btj->ij", a, dv)
        grads[p + "attn.bv"] = dv.sum(axis=(0, 1))
        da = dk @ params[p + "attn.wk"].T + dv @ params[p + "attn.wv"].T
        da[:, :tq] += dq @ params[p + "attn.wq"].T
        dx_in, grads[p + "ln1.gamma"], grads[p + "ln1.beta"] = _ln_backward(da, params[p + "ln1.gamma"], ln1)
        dx_in[:, :tq] += dx_mid
        dx = dx_in

    if drop0 is not None:
        dx = dx * drop0
    t = ids.shape[1]
    dtok = np.zeros_like(params["tok_emb"])
    np.add.at(dtok, ids.reshape(-1), dx.reshape(-1, cfg.d_model))
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(params["pos_emb"])
    dpos[:t] = dx.sum(axis=0)
    grads["pos_emb"] = dpos

    ordered = {name: grads[name] for name in params}
    for name, g in ordered.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"grad[{name}]")
    return loss, ordered


def backward(params: Params, cfg: ModelConfig, batch: Batch, **kwargs) -> Params:
    """Gradients of the mean cross-entropy, shaped like ``params``."""
    return loss_and_grad(params, cfg, batch, **kwargs)[1]


# --- inference --------------------------------------------------------------


def trim_to_content(ids: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop trailing columns that are padding in every row (logits unchanged)."""
    if ids.shape[0] == 0:
        return ids, mask
    width = max(int(mask.sum(axis=1).max()), 1)
    return ids[:, :width], mask[:, :width]


def predict_logits(params: Params, cfg: ModelConfig, ids: np.ndarray, mask: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for many sequences, in chunks."""
    out = np.zeros((ids.shape[0], cfg.n_classes))
    for s in range(0, ids.shape[0], batch_size):
        bi, bm = trim_to_content(ids[s : s + batch_size], mask[s : s + batch_size])
        out[s : s + batch_size] = forward(params, cfg, Batch(bi, bm))
    return out


def rank_probabilities(probs: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top ``k`` (class id, probability), descending; ties by ascending id."""
    order = np.argsort(-probs, kind="stable")[:k]
    return [(int(i), float(probs[i])) for i in order]


def predict_topk(params: Params, cfg: ModelConfig, sequence, k: int) -> list[tuple[int, float]]:
    if not 1 <= k <= cfg.n_classes:
        raise ValueError(f"k must be in 1..{cfg.n_classes}, got {k}")
    batch = Batch(np.asarray(sequence.ids)[None, :], np.asarray(sequence.mask)[None, :])
    logits = forward(params, cfg, batch)[0]
    return rank_probabilities(softmax(logits), k)
