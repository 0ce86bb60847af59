"""Image-form and text-form views of sparse visibility, plus frozen encoders.

The encoders are deterministic seeded projections standing in for
pre-trained vision-language towers.  Anything exposing ``kind``, ``dim`` and
``encode(x) -> (T, dim) Tensor`` can replace them.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import kernels
from .errors import ShapeError, UsageError
from .numerics import Tensor, add, conv1d, conv2d, matmul, parameter, permute, record, reshape
from .skysim import VisibilitySet

STAT_KEYS = ("n_samples", "amp_mean", "amp_std", "amp_min", "amp_max",
             "phase_mean", "uv_radius_max", "coverage")
FALLBACK_NAME = "unnamed-survey"


def sinusoid_code(values, dim: int) -> np.ndarray:
    """Transformer-style sin/cos code of each value, shape (len(values), dim)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = 1.0 / 10000.0 ** (np.arange(half) / max(half, 1))
    ang = values[:, None] * freqs[None, :]
    out = np.zeros((values.size, dim))
    out[:, 0:2 * half:2] = np.sin(ang)
    out[:, 1:2 * half:2] = np.cos(ang)
    return out


def position_codes_2d(rows: int, cols: int, dim: int) -> np.ndarray:
    """Row code in the first half of the channels, column code in the second."""
    half = dim // 2
    r = sinusoid_code(np.repeat(np.arange(rows), cols), half)
    c = sinusoid_code(np.tile(np.arange(cols), rows), dim - half)
    return np.concatenate([r, c], axis=1)


def normalized_samples(vs: VisibilitySet, amp_scale: float) -> np.ndarray:
    """(4, L) array of (u, v, re, im): uv over n/2, values over ``amp_scale``."""
    h = vs.grid_size / 2
    return np.stack([vs.u / h, vs.v / h, vs.values.real / amp_scale, vs.values.imag / amp_scale])


def bilinear_scatter(feat: Tensor, rows, cols, H: int, W: int, normalize: bool = True) -> Tensor:
    """Spread each column of ``feat`` (C, L) onto an H x W grid.

    Each sample lands on its four neighbouring cells with bilinear weights.
    With ``normalize`` every touched cell is divided by its accumulated weight.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    cols = np.ascontiguousarray(cols, dtype=np.float64)
    acc, wsum = kernels.scatter_bilinear(np.ascontiguousarray(feat.data), rows, cols, H, W)
    if normalize:
        inv = np.where(wsum > 0, 1.0 / np.where(wsum > 0, wsum, 1.0), 0.0)
    else:
        inv = np.ones_like(wsum)
    out = acc * inv[None]

    def bw(g):
        return (kernels.gather_bilinear(np.ascontiguousarray(g * inv[None]), rows, cols),)

    return record(out, (feat,), bw)


class ImageIllustration:
    """Conv1d over the raster-ordered sample sequence, bilinear scatter, conv2d."""

    def __init__(self, channels: int = 4, k1: int = 3, k2: int = 3, amp_scale: float = 64.0,
                 rng: np.random.Generator | None = None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.channels = channels
        self.amp_scale = float(amp_scale)
        self.w1 = parameter((channels, 4, k1), rng, fan_in=4 * k1, name="conv1d.w")
        self.b1 = Tensor(np.zeros(channels), requires_grad=True, name="conv1d.b")
        self.w2 = parameter((channels, channels, k2, k2), rng, fan_in=channels * k2 * k2,
                            name="conv2d.w")
        self.b2 = Tensor(np.zeros(channels), requires_grad=True, name="conv2d.b")

    @property
    def theta_c1(self) -> list[Tensor]:
        return [self.w1, self.b1]

    @property
    def theta_c2(self) -> list[Tensor]:
        return [self.w2, self.b2]

    def __call__(self, vs: VisibilitySet) -> Tensor:
        return image_illustration_transform(vs, self.theta_c1, self.theta_c2, self.amp_scale)


def image_illustration_transform(vs: VisibilitySet, theta_c1, theta_c2,
                                 amp_scale: float = 64.0) -> Tensor:
    if len(vs) == 0:
        raise UsageError("image-illustration transform of an empty visibility set")
    order = np.lexsort((vs.cols, vs.rows))          # raster order of cells
    seq = Tensor(normalized_samples(vs, amp_scale)[:, order])
    w1, b1 = theta_c1
    w2, b2 = theta_c2
    feats = conv1d(seq, w1, b1)
    n = vs.grid_size
    grid = bilinear_scatter(feats, vs.v[order] + n // 2, vs.u[order] + n // 2, n, n)
    return conv2d(grid, w2, b2)


@dataclass
class DatasetMeta:
    name: str = ""
    subject: str = "radio sky images of galaxies"


@dataclass
class TextPrompt:
    dataset_block: str
    sample_block: str
    stats: dict = field(default_factory=dict, repr=False)

    @property
    def full(self) -> str:
        return f"{self.dataset_block} {self.sample_block}"


def visibility_stats(vs: VisibilitySet) -> dict:
    amps = np.abs(vs.values)
    idx = np.arange(len(vs))
    partner = vs.partner if vs.partner is not None else np.full(len(vs), -1)
    lead = (partner < 0) | (idx <= partner)
    ph = np.angle(vs.values[lead])
    return {
        "n_samples": int(len(vs)),
        "amp_mean": float(amps.mean()),
        "amp_std": float(amps.std()),
        "amp_min": float(amps.min()),
        "amp_max": float(amps.max()),
        "phase_mean": float(np.arctan2(np.sin(ph).mean(), np.cos(ph).mean())),
        "uv_radius_max": float(np.hypot(vs.u, vs.v).max()),
        "coverage": float(len(vs)) / vs.grid_size ** 2,
    }


def _fmt(key, value) -> str:
    return str(int(value)) if key == "n_samples" else f"{value:#.6g}"


def render_sample_block(stats: dict) -> str:
    return " ".join(f"{k}={_fmt(k, stats[k])}" for k in STAT_KEYS)


def parse_sample_block(block: str) -> dict:
    out = {}
    for tok in block.split():
        key, _, val = tok.partition("=")
        if key not in STAT_KEYS:
            raise UsageError(f"unknown statistic {key!r} in prompt")
        out[key] = int(val) if key == "n_samples" else float(val)
    if tuple(out) != STAT_KEYS:
        raise UsageError("prompt statistics incomplete or out of order")
    return out


def text_rendering_transform(vs: VisibilitySet, meta: DatasetMeta | None = None) -> TextPrompt:
    if len(vs) == 0:
        raise UsageError("text rendering of an empty visibility set")
    meta = meta or DatasetMeta()
    name = meta.name.strip() or FALLBACK_NAME
    dataset_block = f"dataset {name} subject {meta.subject.strip()}"
    stats = visibility_stats(vs)
    return TextPrompt(dataset_block, render_sample_block(stats), stats)


class TokenEncoder(Protocol):
    kind: str
    dim: int

    def encode(self, x) -> Tensor: ...


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FrozenEncoder:
    """Seeded, immutable token producer (visual or textual)."""
    kind: str
    seed: int
    dim: int
    weights: np.ndarray = field(repr=False)
    channels: int = 0
    patch: int = 0
    max_tokens: int = 0

    @classmethod
    def visual(cls, seed: int, dim: int = 64, channels: int = 4, patch: int = 8) -> "FrozenEncoder":
        rng = np.random.default_rng([seed, 0])
        fan_in = channels * patch * patch
        w = rng.uniform(-1, 1, size=(fan_in, dim)) * np.sqrt(3.0 / fan_in)
        return cls("visual", seed, dim, _frozen(w), channels=channels, patch=patch)

    @classmethod
    def textual(cls, seed: int, dim: int = 64, vocab: int = 2048, max_tokens: int = 32) -> "FrozenEncoder":
        rng = np.random.default_rng([seed, 1])
        table = rng.normal(0.0, 1.0 / np.sqrt(2), size=(vocab, dim))
        return cls("textual", seed, dim, _frozen(table), max_tokens=max_tokens)

    def encode(self, x) -> Tensor:
        if self.kind == "visual":
            return vkg_encode(x, self)
        return ikg_encode(x, self)


def vkg_encode(fmap: Tensor, enc: FrozenEncoder) -> Tensor:
    """Patchify the image-form map, project each patch, add 2-D position codes."""
    if enc.kind != "visual":
        raise UsageError("vkg_encode needs a visual encoder")
    C, H, W = fmap.shape
    P = enc.patch
    if H % P or W % P:
        raise ShapeError(f"map {H}x{W} not divisible into {P}x{P} patches")
    if C != enc.channels:
        raise ShapeError(f"map has {C} channels, encoder expects {enc.channels}")
    nh, nw = H // P, W // P
    x = reshape(fmap, (C, nh, P, nw, P))
    x = permute(x, (1, 3, 0, 2, 4))
    x = reshape(x, (nh * nw, C * P * P))
    tokens = matmul(x, Tensor(enc.weights))
    return add(tokens, Tensor(position_codes_2d(nh, nw, enc.dim)))


_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _word_index(word: str, seed: int, vocab: int) -> int:
    h = hashlib.blake2b(f"{seed}:{word}".encode(), digest_size=8).digest()
    return int.from_bytes(h, "little") % vocab


def tokenize(text: str) -> list[str]:
    """Whitespace split; ``key=value`` pairs become two tokens."""
    return [t for t in re.split(r"[\s=]+", text) if t]


def ikg_encode(prompt: TextPrompt | str, enc: FrozenEncoder) -> Tensor:
    """Embed prompt tokens into a fixed (max_tokens, dim) block, zero-padded."""
    if enc.kind != "textual":
        raise UsageError("ikg_encode needs a textual encoder")
    text = prompt.full if isinstance(prompt, TextPrompt) else str(prompt)
    toks = tokenize(text)[: enc.max_tokens]
    out = np.zeros((enc.max_tokens, enc.dim))
    vocab = enc.weights.shape[0]
    for i, tok in enumerate(toks):
        if _NUMBER.match(tok):
            # same sin/cos basis as the visual position codes, on a log-like scale
            out[i] = sinusoid_code([8.0 * np.arcsinh(float(tok))], enc.dim)[0]
        else:
            out[i] = enc.weights[_word_index(tok, enc.seed, vocab)]
    return Tensor(out)
