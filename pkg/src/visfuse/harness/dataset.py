"""Synthetic dataset generation and on-disk layout.

Layout::

    <root>/manifest.txt
    <root>/<split>/<index>/sky.vvtt  sky.png  vis.csv  mask.vvtt  prompt.txt
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..config import ExperimentConfig
from ..errors import DataIOError
from ..imaging import save_png
from ..numerics import tensorio
from ..reconstructor.model import Sample, prepare_sample
from ..skysim import (
    SkyImage, VisibilitySet, compute_uv_coverage, eht_like, make_synthetic_sky, sample_visibility,
)

SPLITS = ("train", "val", "test")
_SPLIT_CODE = {"train": 0, "val": 1, "test": 2}


@dataclass
class Dataset:
    train: list
    val: list
    test: list

    def split(self, name: str) -> list:
        return getattr(self, name)


def coverage_for(cfg: ExperimentConfig):
    arr = eht_like(cfg.n_hour_angles, cfg.span_hours, cfg.declination_deg)
    return compute_uv_coverage(arr, cfg.grid_size, cfg.uv_fill)


def split_sizes(cfg: ExperimentConfig) -> dict:
    return {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}


def generate_pairs(cfg: ExperimentConfig) -> dict[str, list[tuple[SkyImage, VisibilitySet]]]:
    """Deterministic (sky, visibility) pairs for every split."""
    cov = coverage_for(cfg)
    out = {}
    for split, count in split_sizes(cfg).items():
        pairs = []
        for i in range(count):
            ss = np.random.SeedSequence([cfg.data_seed, _SPLIT_CODE[split], i])
            rng = np.random.default_rng(ss)
            kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
            sky = make_synthetic_sky(kind, cfg.grid_size, rng)
            pairs.append((sky, sample_visibility(sky, cov, cfg.noise_sigma, rng)))
        out[split] = pairs
    return out


def generate_dataset(cfg: ExperimentConfig) -> Dataset:
    pairs = generate_pairs(cfg)
    return Dataset(*[[prepare_sample(sky, vs, cfg, f"{split}/{i:04d}")
                      for i, (sky, vs) in enumerate(pairs[split])] for split in SPLITS])


def split_hash(samples) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.name.encode())
        h.update(np.ascontiguousarray(s.sky.pixels).tobytes())
        h.update(np.ascontiguousarray(s.vs.values).tobytes())
    return h.hexdigest()


def simulate(cfg: ExperimentConfig, out_dir) -> Path:
    """Write the dataset for ``cfg`` under ``out_dir``."""
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create dataset directory {root}: {exc}") from exc
    pairs = generate_pairs(cfg)
    meta_lines = []
    for split in SPLITS:
        for i, (sky, vs) in enumerate(pairs[split]):
            d = root / split / f"{i:04d}"
            try:
                d.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                raise DataIOError(f"cannot create {d}: {exc}") from exc
            tensorio.save(d / "sky.vvtt", sky.pixels)
            save_png(d / "sky.png", sky.pixels)
            vs.save(d / "vis.csv", d / "mask.vvtt")
            s = prepare_sample(sky, vs, cfg)
            (d / "prompt.txt").write_text(s.prompt.full + "\n", encoding="utf-8")
            meta_lines.append(f"sample = {split}/{i:04d} {sky.label}")
    cfg.save(root / "config.txt")
    manifest = [f"config_hash = {cfg.hash()}", f"data_seed = {cfg.data_seed}"]
    manifest += [f"{k} = {v}" for k, v in split_sizes(cfg).items()]
    manifest += meta_lines
    (root / "manifest.txt").write_text("\n".join(manifest) + "\n")
    return root


def load_dataset(data_dir, cfg: ExperimentConfig | None = None,
                 splits=SPLITS) -> tuple[Dataset, ExperimentConfig]:
    """Read a simulated dataset; ``cfg`` defaults to the config stored with it."""
    root = Path(data_dir)
    if not (root / "manifest.txt").exists():
        raise DataIOError(f"{root} is not a dataset directory (no manifest.txt)")
    data_cfg = ExperimentConfig.load(root / "config.txt", env={})
    cfg = cfg or data_cfg
    labels = {}
    for line in (root / "manifest.txt").read_text().splitlines():
        if line.startswith("sample = "):
            name, label = line[len("sample = "):].split()
            labels[name] = label
    parts = {}
    for split in SPLITS:
        samples = []
        if split in splits:
            d = root / split
            for sub in sorted(p for p in d.iterdir() if p.is_dir()) if d.exists() else []:
                name = f"{split}/{sub.name}"
                sky = SkyImage(tensorio.load(sub / "sky.vvtt"), label=labels.get(name, ""))
                vs = VisibilitySet.load(sub / "vis.csv", sub / "mask.vvtt")
                samples.append(prepare_sample(sky, vs, cfg, name))
        parts[split] = samples
    return Dataset(parts["train"], parts["val"], parts["test"]), cfg
