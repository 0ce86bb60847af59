import csv
import io
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from visfuse.config import ExperimentConfig
from visfuse.harness import experiments
from visfuse.harness.cli import PANEL_MARGIN, main
from visfuse.harness.dataset import load_dataset
from visfuse.numerics import tensorio
from visfuse.reconstructor import VisFuseModel, analytic_parameter_count, evaluate, save_checkpoint, train
from visfuse.reconstructor.training import read_manifest

TINY = """\
grid_size = 32
n_train = 6
n_val = 1
n_test = 3
n_hour_angles = 6
d_model = 16
n_query = 4
n_heads = 2
vqg_layers = 1
vis_freqs = 2
field_width = 16
field_freqs = 4
epochs = 1
clean_max_iter = 50
"""


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.txt").write_text(TINY)
    assert main(["simulate", "--config", str(root / "cfg.txt"), "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "ck")]) == 0
    return root


# simulate ---------------------------------------------------------------------------

def test_simulate_is_byte_identical(work, tmp_path, capsys):
    code, out, _ = run(["simulate", "--config", work / "cfg.txt", "--out", tmp_path / "again"], capsys)
    assert code == 0 and "config_hash=" in out
    assert tree_bytes(tmp_path / "again") == tree_bytes(work / "data")


def test_simulate_sample_count(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("grid_size = 16\nn_train = 100\nn_val = 0\nn_test = 20\n")
    assert run(["simulate", "--config", tmp_path / "c.txt", "--out", tmp_path / "d"], capsys)[0] == 0
    dirs = [p for p in (tmp_path / "d").glob("*/*") if p.is_dir()]
    assert len(dirs) == 120
    for d in dirs:
        assert {p.name for p in d.iterdir()} == {"sky.vvtt", "sky.png", "vis.csv", "mask.vvtt", "prompt.txt"}


def test_manifest_hash_tracks_config(tmp_path, capsys):
    base = "grid_size = 16\nn_train = 2\nn_val = 0\nn_test = 1\n"
    hashes = set()
    for i, extra in enumerate(["", "seed = 1\n", "noise_sigma = 0.1\n", "data_seed = 8\n",
                               "kinds = blobs\n", "n_hour_angles = 5\n"]):
        (tmp_path / f"c{i}.txt").write_text(base + extra)
        run(["simulate", "--config", tmp_path / f"c{i}.txt", "--out", tmp_path / f"d{i}"], capsys)
        man = (tmp_path / f"d{i}" / "manifest.txt").read_text().splitlines()
        hashes.add(man[0])
        cfg = ExperimentConfig.load(tmp_path / f"d{i}" / "config.txt", env={})
        assert man[0] == f"config_hash = {cfg.hash()}"
    assert len(hashes) == 6


def test_manifest_reproduces_dataset(work, tmp_path):
    # the stored config alone regenerates the same samples
    ds, cfg = load_dataset(work / "data")
    from visfuse.harness.dataset import generate_dataset
    regen = generate_dataset(cfg)
    for a, b in zip(ds.test, regen.test):
        assert a.sky.pixels.tobytes() == b.sky.pixels.tobytes()
        assert a.vs.values.tobytes() == b.vs.values.tobytes()


# train / evaluate / baselines -----------------------------------------------------------

def test_train_reports_parameter_count(work, tmp_path, capsys):
    code, out, _ = run(["train", "--data", work / "data", "--out", tmp_path / "ck"], capsys)
    assert code == 0
    cfg = ExperimentConfig.from_text(TINY, env={})
    count = int(out.split("parameter_count = ")[1].split()[0])
    assert count == sum(analytic_parameter_count(cfg).values())
    # determinism: a second run writes the same checkpoint bytes
    assert tree_bytes(tmp_path / "ck") == tree_bytes(work / "ck")


def test_evaluate_zero_head_checkpoint_matches_dirty(work, tmp_path, capsys):
    cfg = ExperimentConfig.from_text(TINY, env={})
    save_checkpoint(VisFuseModel(cfg), tmp_path / "zero", 0)
    code, out, _ = run(["evaluate", "--checkpoint", tmp_path / "zero", "--data", work / "data",
                        "--no-clean"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert len(rows) == 3
    for r in rows:
        assert abs(float(r["model_psnr"]) - float(r["dirty_psnr"])) < 1e-9
        assert abs(float(r["model_ssim"]) - float(r["dirty_ssim"])) < 1e-9


def test_evaluate_writes_file(work, tmp_path, capsys):
    code, out, _ = run(["evaluate", "--checkpoint", work / "ck", "--data", work / "data",
                        "--out", tmp_path / "ev.csv"], capsys)
    assert code == 0 and "data_consistent=True" in out
    rows = read_csv((tmp_path / "ev.csv").read_text())
    assert {"clean_psnr", "clean_ssim"} <= set(rows[0])


def test_clean_baseline_one_row_per_sample(work, capsys):
    code, out, _ = run(["clean-baseline", "--data", work / "data"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert [r["sample"] for r in rows] == ["test/0000", "test/0001", "test/0002"]
    assert all(int(r["iterations"]) >= 1 for r in rows)


def test_reconstruct_panel_layout(work, tmp_path, capsys):
    code, _, _ = run(["reconstruct", "--checkpoint", work / "ck", "--sample",
                      work / "data" / "test" / "0001", "--out", tmp_path / "r"], capsys)
    assert code == 0
    n, m = 32, PANEL_MARGIN
    with Image.open(tmp_path / "r" / "panel.png") as im:
        assert im.size == (3 * n + 4 * m, n + 2 * m)
    assert tensorio.load(tmp_path / "r" / "reconstruction.vvtt").shape == (n, n)


def test_stats_rows(work, tmp_path, capsys):
    code, out, _ = run(["stats", "--checkpoint", work / "ck", "--sample",
                        work / "data" / "test" / "0000"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert [r["name"] for r in rows] == ["zeta", "xi", "eta"]
    assert list(rows[0]) == ["name", "mean", "std", "entropy"]


def test_stats_constant_features_are_degenerate(work, tmp_path, capsys):
    cfg = ExperimentConfig.from_text(TINY + "ablation = vis_only\n", env={})
    save_checkpoint(VisFuseModel(cfg), tmp_path / "vo", 0)
    code, out, _ = run(["stats", "--checkpoint", tmp_path / "vo", "--sample",
                        work / "data" / "test" / "0000"], capsys)
    assert code == 0
    eta = read_csv(out)[2]
    assert float(eta["std"]) == 0.0 and float(eta["entropy"]) == 0.0


# experiments -------------------------------------------------------------------------

def test_ablate_report_shape_and_split(work, tmp_path, capsys):
    code, out, _ = run(["ablate", "--config", work / "cfg.txt", "--data", work / "data",
                        "--seeds", "0", "--out", tmp_path / "ab"], capsys)
    assert code == 0
    rows = read_csv((tmp_path / "ab" / "ablation.csv").read_text())
    arms = [r["method"] for r in rows]
    assert arms == ["dirty", "clean", "full", "no_kb", "no_visual", "no_text", "vis_only"]
    assert len({r["split_hash"] for r in rows}) == 1
    for r in rows:
        for k in ("psnr_mean", "psnr_std", "ssim_mean", "ssim_std"):
            assert np.isfinite(float(r[k]))
    assert "learnable parameters" in out
    # rerun reuses checkpoints and reproduces the CSVs byte for byte
    first = tree_bytes(tmp_path / "ab")
    run(["ablate", "--config", work / "cfg.txt", "--data", work / "data", "--seeds", "0",
         "--out", tmp_path / "ab"], capsys)
    again = tree_bytes(tmp_path / "ab")
    for name in ("ablation.csv", "ablation_seeds.csv"):
        assert again[name] == first[name]


def test_sweep_fraction_order_and_identity(work, tmp_path, capsys):
    code, out, _ = run(["sweep-fraction", "--config", work / "cfg.txt", "--data", work / "data",
                        "--fractions", "1.0,0.5", "--seeds", "0"], capsys)
    assert code == 0
    rows = read_csv(out)
    assert [float(r["fraction"]) for r in rows] == [0.5, 1.0]
    assert [int(r["n_train"]) for r in rows] == [3, 6]
    # fraction 1.0 equals a plain train + evaluate with the same seed
    ds, cfg = load_dataset(work / "data")
    plain = evaluate(ds.test, train(ds.train, cfg, ds.val).model, with_clean=False)
    assert float(rows[1]["psnr_mean"]) == plain.mean("model_psnr")


def test_parse_fractions():
    assert experiments.parse_fractions("0.5, 0.1,1.0,0.25,0.1") == [0.1, 0.25, 0.5, 1.0]
    for bad in ("", "0", "1.5", "a,b"):
        with pytest.raises(Exception) as ei:
            experiments.parse_fractions(bad)
        assert ei.value.code == "USAGE_ERROR"


def test_pooled_std():
    assert experiments.pooled_std(3.0, 4.0) == pytest.approx(np.sqrt(12.5))
    assert experiments.pooled_std() == 0.0


# errors ------------------------------------------------------------------------------

def _error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("error code=")
    return lines[0]


@pytest.mark.parametrize("argv,code,status", [
    (["frobnicate"], "USAGE_ERROR", 2),
    (["train", "--data"], "USAGE_ERROR", 2),
    (["evaluate", "--checkpoint", "/nonexistent", "--data", "/nonexistent"], "IO_ERROR", 1),
    (["clean-baseline", "--data", "/nonexistent"], "IO_ERROR", 1),
    (["ablate", "--data", "/nonexistent", "--seeds", "x"], "USAGE_ERROR", 2),
])
def test_error_lines(argv, code, status, capsys):
    rc, _, err = run(argv, capsys)
    assert rc == status
    assert f"error code={code} " in _error_line(err)


def test_config_error_names_field(tmp_path, capsys):
    (tmp_path / "c.txt").write_text("n_trian = 5\n")
    rc, _, err = run(["simulate", "--config", tmp_path / "c.txt", "--out", tmp_path / "d"], capsys)
    assert rc == 2
    assert "code=CONFIG_ERROR" in _error_line(err) and "field=n_trian" in err


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    rc, _, err = run(["simulate", "--out", blocker / "sub"], capsys)
    assert rc == 1 and "code=IO_ERROR" in _error_line(err)


def test_checkpoint_config_mismatch(work, tmp_path, capsys):
    (tmp_path / "c.txt").write_text(TINY.replace("field_width = 16", "field_width = 8"))
    rc, _, err = run(["ablate", "--config", tmp_path / "c.txt", "--data", work / "data",
                      "--seeds", "0", "--arms", "full", "--out", tmp_path / "x"], capsys)
    assert rc == 0   # a different config simply trains a fresh arm
    bad = tmp_path / "ckbad"
    import shutil
    shutil.copytree(work / "ck", bad)
    (bad / "config.txt").write_text(TINY.replace("field_width = 16", "field_width = 8"))
    rc, _, err = run(["evaluate", "--checkpoint", bad, "--data", work / "data"], capsys)
    assert rc == 2 and "code=CONFIG_ERROR" in _error_line(err)


def test_missing_sample_file(work, tmp_path, capsys):
    rc, _, err = run(["stats", "--checkpoint", work / "ck", "--sample", tmp_path], capsys)
    assert rc == 1 and "code=IO_ERROR" in _error_line(err)
