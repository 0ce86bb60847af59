"""Visibility query generator, knowledge pool and cross-modal attention."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .modality import normalized_samples, sinusoid_code
from .numerics import (
    Tensor, add, add_bias, concat_last_dim, concat_rows, index, layer_norm, matmul,
    parameter, relu, scale, softmax_rows, transpose,
)
from .skysim import VisibilitySet


def visibility_tokens(vs: VisibilitySet, n_freqs: int = 8, amp_scale: float = 64.0) -> np.ndarray:
    """(L, 4 + 4*n_freqs) rows of (u, v, re, im) followed by sin/cos of u and v."""
    raw = normalized_samples(vs, amp_scale).T
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    ang_u = raw[:, :1] * freqs
    ang_v = raw[:, 1:2] * freqs
    return np.concatenate([raw, np.sin(ang_u), np.cos(ang_u), np.sin(ang_v), np.cos(ang_v)], axis=1)


def _heads(x: Tensor, h: int, n_heads: int) -> Tensor:
    dh = x.shape[1] // n_heads
    return index(x, (slice(None), slice(h * dh, (h + 1) * dh)))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    """Scaled dot-product attention per channel group; heads concatenated."""
    d = q.shape[1]
    if d % n_heads:
        raise ConfigError(f"dim {d} not divisible by {n_heads} heads", field="n_heads")
    dh = d // n_heads
    outs = []
    for h in range(n_heads):
        qh, kh, vh = _heads(q, h, n_heads), _heads(k, h, n_heads), _heads(v, h, n_heads)
        w = softmax_rows(scale(matmul(qh, transpose(kh)), 1.0 / np.sqrt(dh)))
        outs.append(matmul(w, vh))
    return outs[0] if n_heads == 1 else concat_last_dim(outs)


def _linear(x, w, b):
    return add_bias(matmul(x, w), b)


class VisibilityQueryGenerator:
    """Pre-LN transformer encoder whose learned summary tokens become the query."""

    def __init__(self, d_in: int, d_model: int = 64, n_query: int = 16, n_heads: int = 4,
                 n_layers: int = 2, ff_mult: int = 2, use_position_codes: bool = True,
                 rng: np.random.Generator | None = None):
        if d_model % n_heads:
            raise ConfigError(f"d_model {d_model} not divisible by {n_heads} heads", field="n_heads")
        rng = np.random.default_rng(0) if rng is None else rng
        self.d_model, self.n_query, self.n_heads = d_model, n_query, n_heads
        self.use_position_codes = use_position_codes
        d, f = d_model, ff_mult * d_model
        p = {}
        p["in.w"] = parameter((d_in, d), rng, fan_in=d_in)
        p["in.b"] = Tensor(np.zeros(d), requires_grad=True)
        p["summary"] = parameter((n_query, d), rng, fan_in=d)
        for i in range(n_layers):
            for name in ("ln1", "ln2"):
                p[f"l{i}.{name}.g"] = Tensor(np.ones(d), requires_grad=True)
                p[f"l{i}.{name}.b"] = Tensor(np.zeros(d), requires_grad=True)
            for name in ("q", "k", "v", "o"):
                p[f"l{i}.{name}.w"] = parameter((d, d), rng, fan_in=d)
                p[f"l{i}.{name}.b"] = Tensor(np.zeros(d), requires_grad=True)
            p[f"l{i}.ff1.w"] = parameter((d, f), rng, fan_in=d)
            p[f"l{i}.ff1.b"] = Tensor(np.zeros(f), requires_grad=True)
            p[f"l{i}.ff2.w"] = parameter((f, d), rng, fan_in=f)
            p[f"l{i}.ff2.b"] = Tensor(np.zeros(d), requires_grad=True)
        p["out.ln.g"] = Tensor(np.ones(d), requires_grad=True)
        p["out.ln.b"] = Tensor(np.zeros(d), requires_grad=True)
        for k, t in p.items():
            t.name = f"vqg.{k}"
        self.params = p
        self.n_layers = n_layers

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def __call__(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.float64)
        L = tokens.shape[0]
        if L < 1:
            raise UsageError("query generator needs at least one visibility token")
        p = self.params
        x = _linear(Tensor(tokens), p["in.w"], p["in.b"])
        if self.use_position_codes:
            x = add(x, Tensor(sinusoid_code(np.arange(L), self.d_model)))
        h = concat_rows([p["summary"], x])
        for i in range(self.n_layers):
            last = i == self.n_layers - 1
            a = layer_norm(h, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
            # only the summary rows survive the last layer, so only they need queries
            qa = index(a, slice(0, self.n_query)) if last else a
            q = _linear(qa, p[f"l{i}.q.w"], p[f"l{i}.q.b"])
            k = _linear(a, p[f"l{i}.k.w"], p[f"l{i}.k.b"])
            v = _linear(a, p[f"l{i}.v.w"], p[f"l{i}.v.b"])
            att = multi_head_attention(q, k, v, self.n_heads)
            if last:
                h = index(h, slice(0, self.n_query))
            h = add(h, _linear(att, p[f"l{i}.o.w"], p[f"l{i}.o.b"]))
            a = layer_norm(h, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
            ff = _linear(relu(_linear(a, p[f"l{i}.ff1.w"], p[f"l{i}.ff1.b"])),
                         p[f"l{i}.ff2.w"], p[f"l{i}.ff2.b"])
            h = add(h, ff)
        return layer_norm(h, p["out.ln.g"], p["out.ln.b"])


def vqg_encode(vt, vqg: VisibilityQueryGenerator) -> Tensor:
    return vqg(vt)


def build_knowledge_pool(visual: Tensor | None, textual: Tensor | None) -> Tensor:
    """Row-wise concatenation, visual tokens first; empty blocks are skipped."""
    blocks = [t for t in (visual, textual) if t is not None and t.shape[0] > 0]
    if not blocks:
        return Tensor(np.zeros((0, visual.shape[1] if visual is not None else textual.shape[1])))
    if len({b.shape[1] for b in blocks}) > 1:
        raise ShapeError(f"token dims differ: {[b.shape for b in blocks]}")
    return blocks[0] if len(blocks) == 1 else concat_rows(blocks)


def crossmodal_attention(zeta: Tensor, xi: Tensor, n_heads: int = 4) -> Tensor:
    """Projection-free multi-head attention of the query over the knowledge pool."""
    if xi.shape[0] == 0:
        raise UsageError("knowledge pool is empty")
    if zeta.shape[1] != xi.shape[1]:
        raise ShapeError(f"query dim {zeta.shape[1]} != pool dim {xi.shape[1]}")
    return multi_head_attention(zeta, xi, xi, n_heads)


def attention_weights(zeta: np.ndarray, xi: np.ndarray, n_heads: int = 4) -> np.ndarray:
    """Per-head attention weights (H, T_q, T_pool), for diagnostics and tests."""
    d = zeta.shape[1]
    dh = d // n_heads
    out = []
    for h in range(n_heads):
        s = zeta[:, h * dh:(h + 1) * dh] @ xi[:, h * dh:(h + 1) * dh].T / np.sqrt(dh)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        out.append(s / s.sum(axis=1, keepdims=True))
    return np.stack(out)


def fuse_residual(kappa: Tensor, zeta: Tensor) -> Tensor:
    if kappa.shape != zeta.shape:
        raise ShapeError(f"fuse_residual shapes differ: {kappa.shape} vs {zeta.shape}")
    return add(kappa, zeta)


def feature_stats(t, bins: int = 64) -> dict:
    """Mean, population std and 64-bin histogram entropy (nats) of all entries."""
    x = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64).ravel()
    if x.size == 0:
        raise UsageError("feature_stats of an empty tensor")
    counts, _ = np.histogram(x, bins=bins)
    p = counts[counts > 0] / x.size
    ent = float(-(p * np.log(p)).sum())
    return {"mean": float(x.mean()), "std": float(x.std()), "entropy": max(ent, 0.0)}
