"""End-to-end model: modality transforms -> knowledge bank -> conditioned field."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import ExperimentConfig
from ..fusion import (
    VisibilityQueryGenerator, build_knowledge_pool, crossmodal_attention, fuse_residual,
    visibility_tokens,
)
from ..imaging import DenseVisibilityGrid
from ..modality import (
    DatasetMeta, FrozenEncoder, ImageIllustration, TextPrompt, ikg_encode,
    text_rendering_transform, vkg_encode,
)
from ..numerics import Tensor
from ..skysim import SkyImage, VisibilitySet, centered_fft2
from .field import FiLMHeads, NeuralField, hermitian_symmetrize, overwrite_measured, to_complex

GROUPS = ("theta_c1", "theta_c2", "theta_v", "theta_R")


@dataclass
class Sample:
    """One training/evaluation example with its data-only derived inputs cached."""
    sky: SkyImage
    vs: VisibilitySet
    truth: np.ndarray
    prompt: TextPrompt
    vtokens: np.ndarray = field(repr=False)
    name: str = ""


def prepare_sample(sky: SkyImage, vs: VisibilitySet, cfg: ExperimentConfig, name: str = "") -> Sample:
    meta = DatasetMeta(cfg.dataset_name, cfg.dataset_subject)
    return Sample(sky, vs, centered_fft2(sky.pixels), text_rendering_transform(vs, meta),
                  visibility_tokens(vs, cfg.vis_freqs, cfg.amp_scale), name)


@dataclass
class Features:
    zeta: Tensor | None
    xi: Tensor | None
    eta: Tensor


class VisFuseModel:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 0])
        d = cfg.d_model
        self.illustration = ImageIllustration(cfg.channels, cfg.conv1d_kernel, cfg.conv2d_kernel,
                                              cfg.amp_scale, rng)
        self.visual_encoder = FrozenEncoder.visual(cfg.encoder_seed, d, cfg.channels, cfg.patch)
        self.text_encoder = FrozenEncoder.textual(cfg.encoder_seed, d, max_tokens=cfg.text_tokens)
        self.vqg = VisibilityQueryGenerator(4 + 4 * cfg.vis_freqs, d, cfg.n_query, cfg.n_heads,
                                            cfg.vqg_layers, cfg.ff_mult, cfg.use_position_codes, rng)
        self.field = NeuralField(cfg.grid_size, cfg.field_depth, cfg.field_width, cfg.field_freqs,
                                 cfg.amp_scale, rng)
        self.film = FiLMHeads(d, self.field.n_hidden, cfg.field_width, rng)

    # parameters ----------------------------------------------------------
    def groups(self) -> dict[str, list[Tensor]]:
        return {
            "theta_c1": self.illustration.theta_c1,
            "theta_c2": self.illustration.theta_c2,
            "theta_v": self.vqg.parameters(),
            "theta_R": self.field.parameters() + self.film.parameters(),
        }

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for g, params in self.groups().items():
            for i, p in enumerate(params):
                out.append((f"{g}.{i:03d}.{p.name or 'p'}", p))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def frozen_arrays(self) -> dict[str, np.ndarray]:
        return {"visual": self.visual_encoder.weights, "textual": self.text_encoder.weights}

    # forward -------------------------------------------------------------
    def features(self, s: Sample) -> Features:
        cfg = self.cfg
        if cfg.ablation == "vis_only":
            return Features(None, None, Tensor(np.zeros((cfg.n_query, cfg.d_model))))
        zeta = self.vqg(s.vtokens)
        if cfg.ablation == "no_kb":
            return Features(zeta, None, zeta)
        visual = textual = None
        if cfg.ablation != "no_visual":
            visual = vkg_encode(self.illustration(s.vs), self.visual_encoder)
        if cfg.ablation != "no_text":
            textual = ikg_encode(s.prompt, self.text_encoder)
        xi = build_knowledge_pool(visual, textual)
        kappa = crossmodal_attention(zeta, xi, cfg.n_heads)
        return Features(zeta, xi, fuse_residual(kappa, zeta))

    def reconstruct_tensor(self, vs: VisibilitySet, eta: Tensor) -> Tensor:
        raw = self.field(self.film(eta))
        return hermitian_symmetrize(overwrite_measured(raw, vs.rows, vs.cols, vs.values))

    def forward(self, s: Sample) -> tuple[Tensor, Features]:
        feats = self.features(s)
        return self.reconstruct_tensor(s.vs, feats.eta), feats

    def predict(self, s: Sample) -> np.ndarray:
        """Complex dense grid prediction (no tape)."""
        pred, _ = self.forward(s)
        return to_complex(pred)


def reconstruct(vs: VisibilitySet, eta: Tensor, model: VisFuseModel) -> DenseVisibilityGrid:
    return DenseVisibilityGrid(to_complex(model.reconstruct_tensor(vs, eta)))


def analytic_parameter_count(cfg: ExperimentConfig) -> dict[str, int]:
    """Closed-form size of each trainable group."""
    C, d, w = cfg.channels, cfg.d_model, cfg.field_width
    c1 = C * 4 * cfg.conv1d_kernel + C
    c2 = C * C * cfg.conv2d_kernel ** 2 + C
    d_in = 4 + 4 * cfg.vis_freqs
    f = cfg.ff_mult * d
    per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d)
    v = d_in * d + d + cfg.n_query * d + cfg.vqg_layers * per_layer + 2 * d
    enc = 2 + 4 * cfg.field_freqs
    hidden = cfg.field_depth - 1
    field_p = (enc * w + w) + (hidden - 1) * (w * w + w) + (w * 2 + 2)
    chunk = d // hidden
    film_p = hidden * 2 * (chunk * w + w)
    return {"theta_c1": c1, "theta_c2": c2, "theta_v": v, "theta_R": field_p + film_p}
