"""``visfuse`` command line.

Every subcommand exits 0 on success.  On failure a single line
``error code=<CODE> message=<text>`` goes to stderr and the exit status is 2
(usage and configuration problems) or 1 (everything else).

Panel layout written by ``reconstruct``: three N x N tiles (dirty |
reconstruction | truth) separated and surrounded by a ``PANEL_MARGIN`` pixel
black border, i.e. (N + 2m) rows by (3N + 4m) columns.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..config import ABLATIONS, ExperimentConfig
from ..errors import DataIOError, UsageError, VisfuseError
from ..fusion import feature_stats
from ..imaging import (
    clean_brightness, dirty_beam, dirty_image, hogbom_clean, ift_image, psnr, save_png, ssim, to_png_array,
)
from ..numerics import tensorio
from ..reconstructor.model import prepare_sample
from ..reconstructor.training import (
    evaluate, history_csv, load_checkpoint, save_checkpoint, train,
)
from ..skysim import SkyImage, VisibilitySet
from . import experiments
from .dataset import load_dataset, simulate

PANEL_MARGIN = 4
log = logging.getLogger("visfuse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig.from_text("")


def _write(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def _parse_seeds(text: str) -> list[int]:
    try:
        seeds = [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad seed list {text!r}") from exc
    if not seeds:
        raise UsageError("at least one seed is required")
    return seeds


def _dataset(args, cfg=None, splits=("train", "val", "test")):
    if not Path(args.data).is_dir():
        raise DataIOError(f"dataset directory {args.data} does not exist")
    return load_dataset(args.data, cfg, splits)


def _load_sample(sample_dir, cfg: ExperimentConfig):
    d = Path(sample_dir)
    for f in ("sky.vvtt", "vis.csv", "mask.vvtt"):
        if not (d / f).exists():
            raise DataIOError(f"sample directory {d} lacks {f}")
    sky = SkyImage(tensorio.load(d / "sky.vvtt"))
    vs = VisibilitySet.load(d / "vis.csv", d / "mask.vvtt")
    return prepare_sample(sky, vs, cfg, d.name)


def panel(images, margin: int = PANEL_MARGIN) -> np.ndarray:
    """Tile equally sized 8-bit images left to right with black margins."""
    n = images[0].shape[0]
    k = len(images)
    out = np.zeros((n + 2 * margin, k * n + (k + 1) * margin), dtype=np.uint8)
    for i, img in enumerate(images):
        c0 = margin + i * (n + margin)
        out[margin:margin + n, c0:c0 + n] = to_png_array(img)
    return out


# subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = _load_config(args.config)
    root = simulate(cfg, args.out)
    print(f"wrote dataset to {root} config_hash={cfg.hash()}")


def cmd_train(args) -> None:
    ds, data_cfg = _dataset(args)
    cfg = _load_config(args.config) if args.config else data_cfg
    res = train(ds.train, cfg, ds.val)
    out = save_checkpoint(res.model, args.out, cfg.epochs)
    _write(out / "history.csv", history_csv(res.history))
    print(f"parameter_count = {res.model.parameter_count()}")
    print(f"seconds_per_iter = {res.seconds_per_iter:.6f}")
    print(f"checkpoint = {out}")


def cmd_evaluate(args) -> None:
    model = load_checkpoint(args.checkpoint)
    ds, _ = _dataset(args, model.cfg, splits=("test",))
    ev = evaluate(ds.test, model, with_clean=not args.no_clean)
    _write(args.out, ev.to_csv())
    if args.out:
        summary = " ".join(f"{k}={v:.4f}" for k, v in ev.summary().items())
        print(f"{summary} data_consistent={ev.consistent}")


def cmd_clean_baseline(args) -> None:
    ds, cfg = _dataset(args, splits=("test",))
    lines = ["sample,dirty_psnr,dirty_ssim,clean_psnr,clean_ssim,components,iterations"]
    for s in ds.test:
        vs, sky = s.vs, s.sky.pixels
        dimg = dirty_image(vs)
        res = hogbom_clean(dirty_image(vs, normalized=True), dirty_beam(vs), cfg.clean_gain,
                           cfg.clean_max_iter, cfg.clean_threshold)
        cimg = clean_brightness(res, vs)
        scores = (psnr(dimg, sky), ssim(dimg, sky), psnr(cimg, sky), ssim(cimg, sky))
        lines.append(f"{s.name}," + ",".join(repr(float(x)) for x in scores) + ","
                     f"{len(res.components)},{res.iterations}")
    _write(args.out, "\n".join(lines) + "\n")


def cmd_reconstruct(args) -> None:
    model = load_checkpoint(args.checkpoint)
    s = _load_sample(args.sample, model.cfg)
    grid = model.predict(s)
    recon = ift_image(grid)
    dirty = dirty_image(s.vs)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {out}: {exc}") from exc
    tensorio.save(out / "reconstruction.vvtt", recon)
    tensorio.save(out / "dirty.vvtt", dirty)
    save_png(out / "panel.png", panel([dirty, recon, s.sky.pixels]))
    print(f"psnr_dirty={psnr(dirty, s.sky.pixels):.4f} psnr_model={psnr(recon, s.sky.pixels):.4f}")


def cmd_ablate(args) -> None:
    cfg = _load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    arms = [a.strip() for a in args.arms.split(",") if a.strip()]
    for a in arms:
        if a not in ABLATIONS:
            raise UsageError(f"unknown ablation arm {a!r}")
    ds, _ = _dataset(args, cfg)
    report = experiments.ablate(ds, cfg, seeds, arms, args.out)
    if args.out:
        _write(Path(args.out) / "ablation.csv", report.to_csv())
        _write(Path(args.out) / "ablation_seeds.csv", report.per_seed_csv())
        _write(Path(args.out) / "ablation.txt", report.table())
    sys.stdout.write(report.table())


def cmd_sweep_fraction(args) -> None:
    cfg = _load_config(args.config)
    fractions = experiments.parse_fractions(args.fractions)
    seeds = _parse_seeds(args.seeds)
    ds, _ = _dataset(args, cfg)
    rows = experiments.sweep_fraction(ds, cfg, fractions, seeds, args.out)
    text = experiments.sweep_csv(rows)
    if args.out:
        _write(Path(args.out) / "sweep.csv", text)
    sys.stdout.write(text)


def cmd_stats(args) -> None:
    model = load_checkpoint(args.checkpoint)
    s = _load_sample(args.sample, model.cfg)
    feats = model.features(s)
    lines = ["name,mean,std,entropy"]
    for name in ("zeta", "xi", "eta"):
        t = getattr(feats, name)
        if t is None:
            # the ablation never computes this feature
            lines.append(f"{name},nan,nan,nan")
            continue
        st = feature_stats(t)
        lines.append(f"{name},{st['mean']!r},{st['std']!r},{st['entropy']!r}")
    _write(args.out, "\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="visfuse", description="Multimodal sparse-visibility reconstruction toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("train", help="train a model and write a checkpoint")
    s.add_argument("--config", help="defaults to the dataset's config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", help="CSV path (stdout if omitted)")
    s.add_argument("--no-clean", action="store_true", help="skip the CLEAN baseline columns")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("clean-baseline", help="dirty and CLEAN scores per test sample")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_clean_baseline)

    s = sub.add_parser("reconstruct", help="write dirty|model|truth panel for one sample")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sample", required=True, help="sample directory inside a dataset")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_reconstruct)

    s = sub.add_parser("ablate", help="train and compare the ablation arms")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--arms", default=",".join(ABLATIONS))
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("sweep-fraction", help="PSNR as a function of training fraction")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out")
    s.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    s.add_argument("--seeds", default="0,1,2")
    s.set_defaults(fn=cmd_sweep_fraction)

    s = sub.add_parser("stats", help="feature statistics of zeta, xi and eta")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--sample", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_stats)
    return p


def _fail(code: str, message: str, status: int) -> int:
    one_line = " ".join(str(message).split())
    sys.stderr.write(f"error code={code} message={one_line}\n")
    return status


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
        args.fn(args)
    except (UsageError,) as exc:
        return _fail(exc.code, exc, 2)
    except VisfuseError as exc:
        status = 2 if exc.code == "CONFIG_ERROR" else 1
        msg = f"{exc} field={exc.field}" if getattr(exc, "field", None) else str(exc)
        return _fail(exc.code, msg, status)
    except OSError as exc:
        return _fail("IO_ERROR", exc, 1)
    except FloatingPointError as exc:
        return _fail("NUMERIC_ERROR", exc, 1)
    except Exception as exc:  # keep the one-line contract even for bugs
        return _fail("INTERNAL_ERROR", f"{type(exc).__name__}: {exc}", 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
