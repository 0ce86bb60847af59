"""FiLM-conditioned coordinate field over the uv grid."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from ..numerics import (
    Tensor, add_bias, film_modulate, index, matmul, mean_pool_tokens, parameter, record,
    relu, reshape, scale,
)


def grid_encoding(n: int, n_freqs: int = 16) -> np.ndarray:
    """(n*n, 2 + 4*n_freqs) sinusoidal encoding of normalised cell coordinates.

    Frequencies are geometric from pi to pi*n/2 so the finest one resolves a
    single cell.
    """
    c = n // 2
    coords = (np.arange(n) - c) / c
    vv, uu = np.meshgrid(coords, coords, indexing="ij")
    u, v = uu.ravel()[:, None], vv.ravel()[:, None]
    if n_freqs > 1:
        freqs = np.pi * (n / 2) ** (np.arange(n_freqs) / (n_freqs - 1))
    else:
        freqs = np.array([np.pi])
    return np.concatenate([u, v, np.sin(u * freqs), np.cos(u * freqs),
                           np.sin(v * freqs), np.cos(v * freqs)], axis=1)


class NeuralField:
    """MLP from encoded (u, v) to (re, im); ``depth`` counts affine maps."""

    def __init__(self, n: int, depth: int = 5, width: int = 128, n_freqs: int = 16,
                 out_scale: float = 64.0, rng: np.random.Generator | None = None):
        if depth < 2:
            raise ConfigError("field depth must be >= 2", field="field_depth")
        rng = np.random.default_rng(0) if rng is None else rng
        self.n, self.width, self.out_scale = n, width, float(out_scale)
        self.encoding = grid_encoding(n, n_freqs)
        d_in = self.encoding.shape[1]
        self.weights, self.biases = [], []
        fan = d_in
        for j in range(depth - 1):
            self.weights.append(parameter((fan, width), rng, fan_in=fan, name=f"field.w{j}"))
            self.biases.append(Tensor(np.zeros(width), requires_grad=True, name=f"field.b{j}"))
            fan = width
        # zero head: an untrained field predicts nothing outside the measured cells
        self.head_w = Tensor(np.zeros((width, 2)), requires_grad=True, name="field.head_w")
        self.head_b = Tensor(np.zeros(2), requires_grad=True, name="field.head_b")

    @property
    def n_hidden(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out + [self.head_w, self.head_b]

    def __call__(self, film: list[tuple[Tensor, Tensor]]) -> Tensor:
        if len(film) != self.n_hidden:
            raise ShapeError(f"need {self.n_hidden} (gamma, beta) pairs, got {len(film)}")
        h = Tensor(self.encoding)
        for (w, b), (g, bt) in zip(zip(self.weights, self.biases), film):
            h = film_modulate(relu(add_bias(matmul(h, w), b)), g, bt)
        out = scale(add_bias(matmul(h, self.head_w), self.head_b), self.out_scale)
        return reshape(out, (self.n, self.n, 2))


class FiLMHeads:
    """Per hidden layer, affine maps from one chunk of pooled eta to (gamma, beta).

    gamma is parameterised as ``1 + affine(chunk)`` so a zero context leaves
    activations unscaled at initialisation.
    """

    def __init__(self, d_model: int, n_hidden: int, width: int,
                 rng: np.random.Generator | None = None):
        if d_model % n_hidden:
            raise ConfigError(f"d_model {d_model} does not split into {n_hidden} chunks",
                              field="field_depth")
        rng = np.random.default_rng(0) if rng is None else rng
        self.chunk = d_model // n_hidden
        self.n_hidden, self.width = n_hidden, width
        self.heads = []
        for j in range(n_hidden):
            self.heads.append({
                "gw": parameter((self.chunk, width), rng, fan_in=self.chunk, name=f"film{j}.gamma_w"),
                "gb": Tensor(np.zeros(width), requires_grad=True, name=f"film{j}.gamma_b"),
                "bw": parameter((self.chunk, width), rng, fan_in=self.chunk, name=f"film{j}.beta_w"),
                "bb": Tensor(np.zeros(width), requires_grad=True, name=f"film{j}.beta_b"),
            })

    def parameters(self) -> list[Tensor]:
        return [t for h in self.heads for t in (h["gw"], h["gb"], h["bw"], h["bb"])]

    def __call__(self, eta: Tensor) -> list[tuple[Tensor, Tensor]]:
        pooled = reshape(mean_pool_tokens(eta), (1, eta.shape[1]))
        out = []
        for j, h in enumerate(self.heads):
            chunk = index(pooled, (slice(None), slice(j * self.chunk, (j + 1) * self.chunk)))
            g = reshape(add_bias(matmul(chunk, h["gw"]), h["gb"]), (self.width,))
            g = _add_const(g, 1.0)
            b = reshape(add_bias(matmul(chunk, h["bw"]), h["bb"]), (self.width,))
            out.append((g, b))
        return out


def _add_const(x: Tensor, c: float) -> Tensor:
    return record(x.data + c, (x,), lambda g: (g,))


def _conj_perm(n):
    return (n - np.arange(n)) % n


def overwrite_measured(pred: Tensor, rows, cols, values) -> Tensor:
    """Replace predicted cells at measured locations by the measured values."""
    out = pred.data.copy()
    out[rows, cols, 0] = values.real
    out[rows, cols, 1] = values.imag

    def bw(g):
        g = g.copy()
        g[rows, cols, :] = 0.0
        return (g,)

    return record(out, (pred,), bw)


def hermitian_symmetrize(x: Tensor) -> Tensor:
    """Average a (n, n, 2) re/im grid with its conjugate-reflected copy."""
    n = x.shape[0]
    p = _conj_perm(n)

    def flip(a):
        return a[p][:, p]

    X = x.data
    out = np.empty_like(X)
    out[..., 0] = 0.5 * (X[..., 0] + flip(X[..., 0]))
    out[..., 1] = 0.5 * (X[..., 1] - flip(X[..., 1]))

    def bw(g):
        gx = np.empty_like(g)
        gx[..., 0] = 0.5 * (g[..., 0] + flip(g[..., 0]))
        gx[..., 1] = 0.5 * (g[..., 1] - flip(g[..., 1]))
        return (gx,)

    return record(out, (x,), bw)


def to_complex(grid: Tensor | np.ndarray) -> np.ndarray:
    a = grid.data if isinstance(grid, Tensor) else np.asarray(grid)
    return a[..., 0] + 1j * a[..., 1]
