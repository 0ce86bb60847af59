"""Training loop, evaluation and checkpoint persistence."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..config import ExperimentConfig
from ..errors import ConfigError, DataIOError, UsageError
from ..imaging import clean_brightness, dirty_beam, dirty_image, hogbom_clean, ift_image, psnr, ssim
from ..numerics import Adam, Tape, backward, tensorio
from .loss import spectral_loss
from .model import Sample, VisFuseModel

log = logging.getLogger(__name__)


def select_training_subset(n_train: int, fraction: float, seed: int) -> np.ndarray:
    """Indices of ceil(fraction * n_train) samples chosen by a seeded shuffle."""
    k = max(1, math.ceil(fraction * n_train - 1e-9))
    perm = np.random.default_rng([seed, 1]).permutation(n_train)
    return np.sort(perm[:k])


@dataclass
class TrainResult:
    model: VisFuseModel
    history: list = field(default_factory=list)
    used_indices: np.ndarray = None
    seconds_per_iter: float = 0.0


def score_grid(grid: np.ndarray, sky: np.ndarray) -> tuple[float, float]:
    img = ift_image(grid)
    return psnr(img, sky, 1.0), ssim(img, sky, 1.0)


def learning_rate(cfg: ExperimentConfig, step: int, total: int) -> float:
    """Step size for 0-based ``step`` of ``total``; cosine decays to zero."""
    if cfg.lr_schedule == "constant" or total <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def train(train_set: Sequence[Sample], cfg: ExperimentConfig, val_set: Sequence[Sample] = (),
          model: VisFuseModel | None = None,
          on_epoch: Callable[[int, VisFuseModel], None] | None = None) -> TrainResult:
    if len(train_set) == 0:
        raise UsageError("training set is empty")
    model = VisFuseModel(cfg) if model is None else model
    used = select_training_subset(len(train_set), cfg.train_fraction, cfg.seed)
    opt = Adam(model.parameters(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    order_rng = np.random.default_rng([cfg.seed, 2])
    monitor = list(val_set) if len(val_set) else [train_set[i] for i in used[:20]]
    history = []
    steps, t_total = 0, 0.0
    total_steps = cfg.epochs * len(used)
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for i in order_rng.permutation(used):
            t0 = time.perf_counter()
            with Tape():
                pred, _ = model.forward(train_set[i])
                rep = spectral_loss(pred, train_set[i].truth)
                backward(rep.loss)
            opt.lr = learning_rate(cfg, steps, total_steps)
            opt.step()
            opt.zero_grad()
            t_total += time.perf_counter() - t0
            steps += 1
            if not np.isfinite(rep.value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            losses.append(rep.value)
        scores = np.array([score_grid(model.predict(s), s.sky.pixels) for s in monitor])
        row = {"epoch": epoch, "loss": float(np.mean(losses)),
               "psnr": float(scores[:, 0].mean()), "ssim": float(scores[:, 1].mean())}
        history.append(row)
        log.info("epoch %d loss %.6g psnr %.3f ssim %.4f", epoch, row["loss"], row["psnr"], row["ssim"])
        if on_epoch is not None:
            on_epoch(epoch, model)
    return TrainResult(model, history, used, t_total / max(steps, 1))


def history_csv(history) -> str:
    lines = ["epoch,loss,psnr,ssim"]
    lines += [f"{h['epoch']},{h['loss']!r},{h['psnr']!r},{h['ssim']!r}" for h in history]
    return "\n".join(lines) + "\n"


@dataclass
class EvalResult:
    rows: list
    consistent: bool
    max_hermitian_error: float

    def mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.rows]))

    def summary(self) -> dict:
        keys = [k for k in self.rows[0] if k != "sample"]
        return {k: self.mean(k) for k in keys}

    def to_csv(self) -> str:
        keys = list(self.rows[0])
        lines = [",".join(keys)]
        for r in self.rows:
            lines.append(",".join(r[k] if k == "sample" else repr(float(r[k])) for k in keys))
        return "\n".join(lines) + "\n"


def evaluate(samples: Sequence[Sample], model: VisFuseModel | None,
             with_clean: bool = True, predictor: Callable[[Sample], np.ndarray] | None = None,
             cfg: ExperimentConfig | None = None) -> EvalResult:
    """Score model, dirty and (optionally) CLEAN images against the true skies."""
    cfg = cfg or model.cfg
    predictor = predictor or model.predict
    rows = []
    consistent = True
    herm = 0.0
    for s in samples:
        grid = predictor(s)
        vs = s.vs
        consistent &= bool(np.array_equal(grid[vs.rows, vs.cols], vs.values))
        p = (len(grid) - np.arange(len(grid))) % len(grid)
        herm = max(herm, float(np.abs(grid - np.conj(grid[np.ix_(p, p)])).max()))
        sky = s.sky.pixels
        mp, ms = score_grid(grid, sky)
        dimg = dirty_image(vs)
        row = {"sample": s.name, "model_psnr": mp, "model_ssim": ms,
               "dirty_psnr": psnr(dimg, sky), "dirty_ssim": ssim(dimg, sky)}
        if with_clean:
            res = hogbom_clean(dirty_image(vs, normalized=True), dirty_beam(vs), cfg.clean_gain,
                               cfg.clean_max_iter, cfg.clean_threshold)
            cimg = clean_brightness(res, vs)
            row["clean_psnr"] = psnr(cimg, sky)
            row["clean_ssim"] = ssim(cimg, sky)
        rows.append(row)
    return EvalResult(rows, consistent, herm)


# checkpoints ---------------------------------------------------------------

def save_checkpoint(model: VisFuseModel, out_dir, epoch: int) -> Path:
    out = Path(out_dir)
    try:
        (out / "params").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {out}: {exc}") from exc
    cfg = model.cfg
    cfg.save(out / "config.txt")
    names = []
    for name, p in model.named_parameters():
        tensorio.save(out / "params" / f"{name}.vvtt", p.data)
        names.append(name)
    manifest = [
        f"config_hash = {cfg.hash()}",
        f"model_hash = {cfg.model_hash()}",
        f"seed = {cfg.seed}",
        f"epoch = {epoch}",
        f"parameter_count = {model.parameter_count()}",
    ] + [f"param = {n}" for n in names]
    try:
        (out / "manifest.txt").write_text("\n".join(manifest) + "\n")
    except OSError as exc:
        raise DataIOError(f"cannot write manifest: {exc}") from exc
    return out


def read_manifest(path) -> dict:
    try:
        text = (Path(path) / "manifest.txt").read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint manifest in {path}: {exc}") from exc
    out: dict = {"param": []}
    for line in text.splitlines():
        k, _, v = (s.strip() for s in line.partition("="))
        if k == "param":
            out["param"].append(v)
        elif k:
            out[k] = v
    return out


def load_checkpoint(path, cfg: ExperimentConfig | None = None) -> VisFuseModel:
    """Rebuild a model from ``path``; ``cfg`` (if given) must match its architecture."""
    path = Path(path)
    manifest = read_manifest(path)
    ck_cfg = ExperimentConfig.load(path / "config.txt", env={})
    if cfg is not None and cfg.model_hash() != manifest.get("model_hash"):
        raise ConfigError("checkpoint architecture does not match the supplied config",
                          field="model_hash")
    if ck_cfg.model_hash() != manifest.get("model_hash"):
        raise ConfigError("checkpoint config does not match its manifest", field="model_hash")
    model = VisFuseModel(cfg.replace(seed=ck_cfg.seed) if cfg is not None else ck_cfg)
    named = dict(model.named_parameters())
    if sorted(named) != sorted(manifest["param"]):
        raise ConfigError("checkpoint parameter set differs from the model", field="params")
    for name, p in named.items():
        arr = tensorio.load(path / "params" / f"{name}.vvtt")
        if arr.shape != p.shape:
            raise ConfigError(f"parameter {name} has shape {arr.shape}, expected {p.shape}",
                              field=name)
        p.data = arr
    return model
