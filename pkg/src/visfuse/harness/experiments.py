"""Multi-seed experiment orchestration: baselines, ablation arms, fraction sweeps.

Every arm trains on the same training split and is scored on the same test
split; seeds only change model initialisation, subset choice and visit order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..config import ABLATIONS, ExperimentConfig
from ..errors import UsageError
from ..reconstructor.training import (
    EvalResult, evaluate, history_csv, load_checkpoint, read_manifest, save_checkpoint, train,
)
from .dataset import Dataset, split_hash

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2)


def pooled_std(*stds: float) -> float:
    """Root mean square of per-group standard deviations."""
    return float(math.sqrt(np.mean(np.square(stds)))) if stds else 0.0


@dataclass
class ArmResult:
    name: str
    psnr: list = field(default_factory=list)   # one mean per seed
    ssim: list = field(default_factory=list)
    seconds_per_iter: float = float("nan")
    split_hash: str = ""

    def stat(self, metric: str) -> tuple[float, float]:
        vals = np.asarray(getattr(self, metric), dtype=np.float64)
        return float(vals.mean()), float(vals.std())


@dataclass
class RunReport:
    arms: dict
    parameter_count: int
    seconds_per_iter: float
    split_hash: str
    seeds: tuple

    def to_csv(self) -> str:
        # wall-clock timings live in table() only, so the CSV stays byte-reproducible
        lines = ["method,psnr_mean,psnr_std,ssim_mean,ssim_std,split_hash"]
        for name, arm in self.arms.items():
            pm, ps = arm.stat("psnr")
            sm, sd = arm.stat("ssim")
            lines.append(f"{name},{pm!r},{ps!r},{sm!r},{sd!r},{arm.split_hash}")
        return "\n".join(lines) + "\n"

    def per_seed_csv(self) -> str:
        lines = ["method,seed,psnr,ssim"]
        for name, arm in self.arms.items():
            for seed, p, s in zip(self.seeds, arm.psnr, arm.ssim):
                lines.append(f"{name},{seed},{p!r},{s!r}")
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        out = [f"{'method':<10} {'PSNR (dB)':>16} {'SSIM':>16} {'s/iter':>8}"]
        for name, arm in self.arms.items():
            pm, ps = arm.stat("psnr")
            sm, sd = arm.stat("ssim")
            t = "-" if math.isnan(arm.seconds_per_iter) else f"{arm.seconds_per_iter:.4f}"
            out.append(f"{name:<10} {pm:>9.3f} ± {ps:<5.3f} {sm:>9.4f} ± {sd:<5.4f} {t:>8}")
        out.append(f"learnable parameters: {self.parameter_count}")
        out.append(f"seconds per iteration: {self.seconds_per_iter:.4f}")
        out.append(f"test split hash: {self.split_hash}")
        return "\n".join(out) + "\n"


def _checkpoint_matches(path: Path, cfg: ExperimentConfig) -> bool:
    try:
        return read_manifest(path).get("config_hash") == cfg.hash()
    except Exception:
        return False


def checkpoint_dir(out_dir, cfg: ExperimentConfig):
    """Checkpoint location inside ``out_dir``, keyed by the full config hash.

    Runs that share an ``out_dir`` reuse each other's models whenever the
    configs coincide (e.g. the ``full`` ablation arm and the 1.0 sweep row).
    """
    if out_dir is None:
        return None
    name = f"{cfg.ablation}_f{cfg.train_fraction:g}_s{cfg.seed}_{cfg.hash()[:12]}"
    return Path(out_dir) / "checkpoints" / name


def train_or_load(ds: Dataset, cfg: ExperimentConfig, ckpt_dir=None):
    """Train ``cfg`` on ``ds.train`` unless a checkpoint with the same config hash exists.

    Returns ``(model, seconds_per_iter)``; the timing is NaN for reloaded models.
    """
    if ckpt_dir is not None and _checkpoint_matches(Path(ckpt_dir), cfg):
        log.info("reusing checkpoint %s", ckpt_dir)
        return load_checkpoint(ckpt_dir, cfg), float("nan")
    res = train(ds.train, cfg, ds.val)
    if ckpt_dir is not None:
        save_checkpoint(res.model, ckpt_dir, cfg.epochs)
        (Path(ckpt_dir) / "history.csv").write_text(history_csv(res.history))
    return res.model, res.seconds_per_iter


def _mean_eval(ev: EvalResult, key: str) -> tuple[float, float]:
    return ev.mean(f"{key}_psnr"), ev.mean(f"{key}_ssim")


def ablate(ds: Dataset, cfg: ExperimentConfig, seeds: Sequence[int] = DEFAULT_SEEDS,
           arms: Sequence[str] = ABLATIONS, out_dir=None, with_baselines: bool = True) -> RunReport:
    """Train and score every ablation arm for every seed."""
    if len(seeds) < 1:
        raise UsageError("ablate needs at least one seed")
    for a in arms:
        if a not in ABLATIONS:
            raise UsageError(f"unknown ablation arm {a!r}")
    results: dict[str, ArmResult] = {}
    test_hash = split_hash(ds.test)
    if with_baselines:
        base = evaluate(ds.test, None, with_clean=True, predictor=_zero_predictor(), cfg=cfg)
        for key in ("dirty", "clean"):
            p, s = _mean_eval(base, key)
            # baselines are deterministic, so every seed sees the same value
            results[key] = ArmResult(key, [p] * len(seeds), [s] * len(seeds), split_hash=test_hash)
    count, timings = 0, []
    for arm in arms:
        res = ArmResult(arm, split_hash=split_hash(ds.test))
        arm_t = []
        for seed in seeds:
            c = cfg.replace(ablation=arm, seed=int(seed))
            model, spi = train_or_load(ds, c, checkpoint_dir(out_dir, c))
            count = model.parameter_count()
            ev = evaluate(ds.test, model, with_clean=False)
            p, s = _mean_eval(ev, "model")
            res.psnr.append(p)
            res.ssim.append(s)
            if not math.isnan(spi):
                arm_t.append(spi)
            log.info("arm %s seed %d psnr %.3f ssim %.4f", arm, seed, p, s)
        res.seconds_per_iter = float(np.mean(arm_t)) if arm_t else float("nan")
        timings += arm_t
        results[arm] = res
    spi = float(np.mean(timings)) if timings else float("nan")
    return RunReport(results, count, spi, test_hash, tuple(int(s) for s in seeds))


def _zero_predictor():
    """Predictor returning the zero-filled grid: scores equal the dirty image."""
    return lambda s: s.vs.zero_filled()


@dataclass
class SweepRow:
    fraction: float
    n_used: int
    psnr: list
    ssim: list

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def psnr_std(self) -> float:
        return float(np.std(self.psnr))


def parse_fractions(text: str) -> list[float]:
    try:
        vals = sorted({float(t) for t in text.split(",") if t.strip()})
    except ValueError as exc:
        raise UsageError(f"bad fraction list {text!r}") from exc
    if not vals or any(not 0 < f <= 1 for f in vals):
        raise UsageError(f"fractions must lie in (0, 1]: {text!r}")
    return vals


def sweep_fraction(ds: Dataset, cfg: ExperimentConfig, fractions: Sequence[float],
                   seeds: Sequence[int] = DEFAULT_SEEDS, out_dir=None) -> list[SweepRow]:
    """Full-model PSNR/SSIM per training fraction, ascending."""
    rows = []
    for frac in sorted(fractions):
        row = SweepRow(frac, 0, [], [])
        for seed in seeds:
            c = cfg.replace(train_fraction=float(frac), seed=int(seed))
            model, _ = train_or_load(ds, c, checkpoint_dir(out_dir, c))
            row.n_used = max(1, math.ceil(frac * len(ds.train) - 1e-9))
            p, s = _mean_eval(evaluate(ds.test, model, with_clean=False), "model")
            row.psnr.append(p)
            row.ssim.append(s)
            log.info("fraction %g seed %d psnr %.3f", frac, seed, p)
        rows.append(row)
    return rows


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["fraction,n_train,psnr_mean,psnr_std,ssim_mean,ssim_std"]
    for r in rows:
        lines.append(f"{r.fraction!r},{r.n_used},{r.psnr_mean!r},{r.psnr_std!r},"
                     f"{float(np.mean(r.ssim))!r},{float(np.std(r.ssim))!r}")
    return "\n".join(lines) + "\n"

