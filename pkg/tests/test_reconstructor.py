import math

import numpy as np
import pytest

from conftest import tiny_config
from gradcheck import grad_errors
from visfuse.config import ExperimentConfig
from visfuse.errors import ConfigError, DegenerateInputError, ShapeError
from visfuse.harness.dataset import generate_dataset
from visfuse.imaging import dirty_image, psnr, ssim
from visfuse.numerics import Tape, Tensor, backward, film_modulate
from visfuse.reconstructor import (
    GROUPS, FiLMHeads, NeuralField, VisFuseModel, analytic_parameter_count, evaluate,
    grid_encoding, hermitian_symmetrize, load_checkpoint, overwrite_measured, read_manifest,
    save_checkpoint, select_training_subset, spectral_loss, to_complex, train,
    weighted_sq_error,
)
from visfuse.reconstructor.training import learning_rate


# field ------------------------------------------------------------------------------

def test_grid_encoding_shape_and_range():
    enc = grid_encoding(64, 16)
    assert enc.shape == (64 * 64, 66)
    assert enc[:, :2].min() == -1.0 and enc[:, :2].max() < 1.0
    # the centre cell encodes (0, 0)
    np.testing.assert_array_equal(enc[32 * 64 + 32, :2], [0.0, 0.0])


def test_film_identity_and_zero_gamma():
    tau = Tensor(np.random.default_rng(0).normal(size=(5, 3)))
    np.testing.assert_array_equal(film_modulate(tau, Tensor(np.ones(3)), Tensor(np.zeros(3))).data,
                                  tau.data)
    beta = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(film_modulate(tau, Tensor(np.zeros(3)), Tensor(beta)).data,
                                  np.tile(beta, (5, 1)))


def test_film_heads_receive_gradient():
    rng = np.random.default_rng(0)
    field = NeuralField(8, depth=3, width=6, n_freqs=2, out_scale=1.0, rng=rng)
    field.head_w.data[:] = rng.normal(size=field.head_w.shape)
    heads = FiLMHeads(8, field.n_hidden, 6, rng)
    eta = Tensor(rng.normal(size=(3, 8)))
    with Tape():
        out = field(heads(eta))
        backward(weighted_sq_error(out, np.zeros((8, 8), complex), np.ones((8, 8))))
    for p in heads.parameters():
        assert np.abs(p.grad).sum() > 0, p.name


def test_film_heads_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    field = NeuralField(4, depth=3, width=3, n_freqs=1, out_scale=1.0, rng=rng)
    field.head_w.data[:] = rng.normal(size=field.head_w.shape)
    heads = FiLMHeads(4, field.n_hidden, 3, rng)
    errs = grad_errors(lambda t: field(heads(t[0])), [rng.normal(size=(2, 4))])
    assert max(errs) < 1e-4


def test_overwrite_and_symmetrize_are_data_consistent(tiny_ds):
    s = tiny_ds.test[0]
    n = s.vs.grid_size
    raw = Tensor(np.random.default_rng(0).normal(size=(n, n, 2)))
    out = to_complex(hermitian_symmetrize(overwrite_measured(raw, s.vs.rows, s.vs.cols, s.vs.values)))
    assert np.array_equal(out[s.vs.rows, s.vs.cols], s.vs.values)
    p = (n - np.arange(n)) % n
    assert np.abs(out - np.conj(out[np.ix_(p, p)])).max() < 1e-12


def test_overwrite_blocks_gradient_at_measured_cells():
    raw = Tensor(np.ones((4, 4, 2)), requires_grad=True)
    with Tape():
        out = overwrite_measured(raw, np.array([1]), np.array([2]), np.array([3 + 4j]))
        backward(weighted_sq_error(out, np.zeros((4, 4), complex), np.ones((4, 4))))
    assert raw.grad[1, 2].tolist() == [0.0, 0.0] and raw.grad[0, 0, 0] > 0


def test_untrained_model_predicts_zero_off_samples(tiny_cfg, tiny_ds):
    model = VisFuseModel(tiny_cfg)
    s = tiny_ds.test[0]
    grid = model.predict(s)
    off = ~s.vs.mask
    assert not grid[off].any()
    np.testing.assert_array_equal(grid, s.vs.zero_filled())


# loss -------------------------------------------------------------------------------

def test_loss_zero_at_truth():
    truth = np.random.default_rng(0).normal(size=(8, 8)) + 1j
    pred = Tensor(np.stack([truth.real, truth.imag], -1))
    rep = spectral_loss(pred, truth)
    assert rep.value == 0.0 and not rep.omega.any()


def test_loss_single_cell_hand_value():
    rep = spectral_loss(Tensor(np.array([[[2.5, 0.0]]])), np.array([[2.0 + 0j]]))
    assert rep.omega[0, 0] == 1.0
    assert rep.value == 0.25


def test_loss_non_negative_on_random_grids():
    r = np.random.default_rng(0)
    for _ in range(1000):
        n = int(r.integers(1, 6))
        truth = r.normal(size=(n, n)) + 1j * r.normal(size=(n, n))
        rep = spectral_loss(Tensor(r.normal(size=(n, n, 2)) * 3), truth)
        assert rep.value >= 0


def test_loss_gradient_with_weight_fixed():
    r = np.random.default_rng(2)
    truth = r.normal(size=(4, 4)) + 1j * r.normal(size=(4, 4))
    pred = r.normal(size=(4, 4, 2))
    omega = spectral_loss(Tensor(pred), truth).omega
    errs = grad_errors(lambda t: weighted_sq_error(t[0], truth, omega), [pred])
    assert max(errs) < 1e-4


def test_loss_errors():
    with pytest.raises(DegenerateInputError):
        spectral_loss(Tensor(np.ones((2, 2, 2))), np.zeros((2, 2), complex))
    with pytest.raises(ShapeError):
        spectral_loss(Tensor(np.ones((2, 3, 2))), np.ones((2, 2), complex))


# parameters ---------------------------------------------------------------------------

def _hand_count(C, d, d_in, Tq, layers, ff, w, depth, F, k1=3, k2=3):
    c1 = C * 4 * k1 + C
    c2 = C * C * k2 * k2 + C
    layer = 2 * 2 * d + 4 * (d * d + d) + (d * ff * d + ff * d) + (ff * d * d + d)
    v = (d_in * d + d) + Tq * d + layers * layer + 2 * d
    enc = 2 + 4 * F
    hidden = depth - 1
    field = (enc * w + w) + (hidden - 1) * (w * w + w) + (2 * w + 2)
    film = hidden * 2 * ((d // hidden) * w + w)
    return c1 + c2 + v + field + film


@pytest.mark.parametrize("kw", [{}, {"field_width": 32, "d_model": 32, "vqg_layers": 3},
                                {"channels": 2, "n_query": 5, "field_depth": 3}])
def test_parameter_count_matches_hand_formula(kw):
    cfg = ExperimentConfig(**kw)
    model = VisFuseModel(cfg)
    hand = _hand_count(cfg.channels, cfg.d_model, 4 + 4 * cfg.vis_freqs, cfg.n_query,
                       cfg.vqg_layers, cfg.ff_mult, cfg.field_width, cfg.field_depth, cfg.field_freqs)
    assert model.parameter_count() == hand == sum(analytic_parameter_count(cfg).values())
    sizes = {g: sum(p.size for p in ps) for g, ps in model.groups().items()}
    assert sizes == analytic_parameter_count(cfg)
    assert tuple(sizes) == GROUPS


# training -------------------------------------------------------------------------

def test_training_subset_size_and_determinism():
    for n, f in [(200, 0.1), (200, 0.25), (37, 0.5), (5, 0.1), (10, 1.0)]:
        idx = select_training_subset(n, f, 3)
        assert len(idx) == math.ceil(f * n)
        assert len(set(idx.tolist())) == len(idx)
        np.testing.assert_array_equal(idx, select_training_subset(n, f, 3))
    assert not np.array_equal(select_training_subset(200, 0.1, 0), select_training_subset(200, 0.1, 1))


def test_cosine_schedule():
    cfg = ExperimentConfig(lr=0.01, lr_schedule="cosine")
    assert learning_rate(cfg, 0, 100) == 0.01
    assert learning_rate(cfg, 50, 100) == pytest.approx(0.005)
    assert learning_rate(cfg.replace(lr_schedule="constant"), 99, 100) == 0.01


def test_one_epoch_smoke_and_gradient_groups(tiny_cfg, tiny_ds):
    model = VisFuseModel(tiny_cfg)
    frozen = {k: v.copy() for k, v in model.frozen_arrays().items()}
    s = tiny_ds.train[0]
    # the zero-initialised head blocks all upstream gradient, so perturb it first
    model.field.head_w.data[:] = np.random.default_rng(0).normal(size=model.field.head_w.shape)
    with Tape():
        pred, _ = model.forward(s)
        backward(spectral_loss(pred, s.truth).loss)
    for g, params in model.groups().items():
        assert all(p.grad is not None for p in params), g
        assert sum(np.abs(p.grad).sum() for p in params) > 0, g
    res = train(tiny_ds.train, tiny_cfg, tiny_ds.val, model=model)
    assert len(res.history) == 1 and np.isfinite(res.history[0]["loss"])
    for k, v in model.frozen_arrays().items():
        assert v.tobytes() == frozen[k].tobytes()


def test_zero_head_gives_zero_upstream_gradient(tiny_cfg, tiny_ds):
    model = VisFuseModel(tiny_cfg)
    s = tiny_ds.train[0]
    with Tape():
        pred, _ = model.forward(s)
        backward(spectral_loss(pred, s.truth).loss)
    assert np.abs(model.field.head_w.grad).sum() > 0
    assert not any(np.abs(p.grad).any() for p in model.groups()["theta_c1"])


def test_checkpoint_roundtrip_and_mismatch(tmp_path, tiny_cfg, tiny_ds):
    model = train(tiny_ds.train, tiny_cfg).model
    save_checkpoint(model, tmp_path / "ck", 1)
    man = read_manifest(tmp_path / "ck")
    assert man["config_hash"] == tiny_cfg.hash() and man["epoch"] == "1"
    assert int(man["parameter_count"]) == model.parameter_count()
    back = load_checkpoint(tmp_path / "ck")
    for (na, a), (nb, b) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb and a.data.tobytes() == b.data.tobytes()
    np.testing.assert_array_equal(back.predict(tiny_ds.test[0]), model.predict(tiny_ds.test[0]))
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path / "ck", tiny_cfg.replace(field_width=8))


def test_evaluate_zero_head_reproduces_dirty(tiny_cfg, tiny_ds):
    ev = evaluate(tiny_ds.test, VisFuseModel(tiny_cfg), with_clean=False)
    for s, row in zip(tiny_ds.test, ev.rows):
        d = dirty_image(s.vs)
        assert abs(row["model_psnr"] - psnr(d, s.sky.pixels)) < 1e-9
        assert abs(row["model_ssim"] - ssim(d, s.sky.pixels)) < 1e-9
    assert ev.consistent and ev.max_hermitian_error < 1e-12


def test_evaluate_oracle_hits_cap_and_is_deterministic(tiny_cfg, tiny_ds):
    from visfuse.skysim import centered_fft2
    ev = evaluate(tiny_ds.test, None, with_clean=True, cfg=tiny_cfg,
                  predictor=lambda s: centered_fft2(s.sky.pixels))
    assert ev.mean("model_psnr") == 100.0
    model = VisFuseModel(tiny_cfg)
    assert evaluate(tiny_ds.test, model).to_csv() == evaluate(tiny_ds.test, model).to_csv()


@pytest.mark.parametrize("ablation", ["full", "no_kb", "no_visual", "no_text", "vis_only"])
def test_ablations_produce_valid_grids(ablation, tiny_cfg, tiny_ds):
    model = VisFuseModel(tiny_cfg.replace(ablation=ablation))
    model.field.head_w.data[:] = 0.01
    s = tiny_ds.test[1]
    feats = model.features(s)
    assert feats.eta.shape == (tiny_cfg.n_query, tiny_cfg.d_model)
    if ablation == "vis_only":
        assert not feats.eta.data.any()
    if ablation == "no_kb":
        assert feats.eta is feats.zeta
    grid = model.predict(s)
    assert np.array_equal(grid[s.vs.rows, s.vs.cols], s.vs.values)


def test_loss_decreases_over_training():
    # 50 samples, lr 1e-3, d = 64, 20 epochs; smaller grid and field keep it quick
    for seed in range(3):
        cfg = ExperimentConfig(grid_size=32, n_train=50, n_val=0, n_test=1, n_hour_angles=6,
                               field_width=32, epochs=20, lr=1e-3, seed=seed, data_seed=seed)
        ds = generate_dataset(cfg)
        hist = train(ds.train, cfg).history
        assert hist[-1]["loss"] < hist[0]["loss"], seed
