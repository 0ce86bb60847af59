import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from visfuse.errors import ShapeError, UsageError
from visfuse.fusion import (
    VisibilityQueryGenerator, attention_weights, build_knowledge_pool, crossmodal_attention,
    feature_stats, fuse_residual, visibility_tokens,
)
from visfuse.numerics import Tape, Tensor, backward, sum_all
from visfuse.skysim import compute_uv_coverage, eht_like, make_synthetic_sky, sample_visibility


def _vqg(d=16, pos=True, seed=0, d_in=12):
    return VisibilityQueryGenerator(d_in, d, n_query=16, n_heads=4, n_layers=2, ff_mult=2,
                                    use_position_codes=pos, rng=np.random.default_rng(seed))


@pytest.mark.parametrize("L", [1, 10, 500])
def test_query_shape_independent_of_sample_count(L):
    z = _vqg()(np.random.default_rng(L).normal(size=(L, 12)))
    assert z.shape == (16, 16)


def test_query_rejects_empty_input():
    with pytest.raises(UsageError):
        _vqg()(np.zeros((0, 12)))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000))
def test_query_permutation_invariant_without_position_codes(seed):
    r = np.random.default_rng(seed)
    tok = r.normal(size=(20, 12))
    perm = r.permutation(20)
    g = _vqg(pos=False)
    assert np.abs(g(tok).data - g(tok[perm]).data).max() < 1e-10
    gp = _vqg(pos=True)
    assert np.abs(gp(tok).data - gp(tok[perm]).data).max() > 1e-6


def test_query_gradient_matches_finite_differences():
    g = VisibilityQueryGenerator(6, 8, n_query=3, n_heads=2, n_layers=2, ff_mult=2,
                                 rng=np.random.default_rng(1))
    tok = np.random.default_rng(2).normal(size=(5, 6))
    R = np.random.default_rng(3).normal(size=(3, 8))

    def objective():
        return float((g(tok).data * R).sum())

    with Tape():
        backward(sum_all(g(tok) * Tensor(R)))
    h = 1e-6
    for name, p in g.params.items():
        num = np.zeros_like(p.data)
        for idx in np.ndindex(p.shape):
            old = p.data[idx]
            p.data[idx] = old + h
            fp = objective()
            p.data[idx] = old - h
            fm = objective()
            p.data[idx] = old
            num[idx] = (fp - fm) / (2 * h)
        # the key bias shifts every logit of a row equally, so its true gradient is 0;
        # the absolute floor absorbs finite-difference round-off there
        denom = max(np.linalg.norm(num), np.linalg.norm(p.grad))
        assert np.linalg.norm(p.grad - num) <= 1e-4 * denom + 1e-7, name


def test_visibility_tokens_layout():
    vs = sample_visibility(make_synthetic_sky("ring", 32, 0), compute_uv_coverage(eht_like(4), 32))
    t = visibility_tokens(vs, n_freqs=3, amp_scale=8.0)
    assert t.shape == (len(vs), 16)
    np.testing.assert_allclose(t[:, 0], vs.u / 16)
    np.testing.assert_allclose(t[:, 3], vs.values.imag / 8.0)
    np.testing.assert_allclose(t[:, 4 + 2], np.sin(4 * np.pi * vs.u / 16))


# knowledge pool and attention ---------------------------------------------------

def test_pool_concatenation():
    r = np.random.default_rng(0)
    vis, txt = Tensor(r.normal(size=(64, 8))), Tensor(r.normal(size=(32, 8)))
    xi = build_knowledge_pool(vis, txt)
    assert xi.shape == (96, 8)
    assert xi.data[:64].tobytes() == vis.data.tobytes()
    assert build_knowledge_pool(vis, Tensor(np.zeros((0, 8)))) is vis
    assert build_knowledge_pool(None, txt) is txt
    with pytest.raises(ShapeError):
        build_knowledge_pool(vis, Tensor(np.zeros((2, 4))))


def test_attention_single_row_and_identical_rows():
    r = np.random.default_rng(0)
    zeta = Tensor(r.normal(size=(5, 8)))
    row = r.normal(size=(1, 8))
    np.testing.assert_allclose(crossmodal_attention(zeta, Tensor(row), 4).data,
                               np.repeat(row, 5, 0), atol=1e-15)
    same = Tensor(np.repeat(row, 7, 0))
    np.testing.assert_allclose(crossmodal_attention(zeta, same, 2).data, np.repeat(row, 5, 0),
                               atol=1e-14)


def test_attention_hand_computed_case():
    zeta = Tensor([[1.0, 0.0]])
    xi = Tensor([[1.0, 0.0], [0.0, 1.0]])
    w = np.exp(1 / np.sqrt(2)) / (np.exp(1 / np.sqrt(2)) + 1)
    assert w == pytest.approx(0.6698, abs=5e-5)
    kappa = crossmodal_attention(zeta, xi, 1).data
    np.testing.assert_allclose(kappa, [[w, 1 - w]], atol=1e-15)
    np.testing.assert_allclose(attention_weights(zeta.data, xi.data, 1)[0], [[w, 1 - w]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_attention_output_in_convex_hull_per_head(seed):
    r = np.random.default_rng(seed)
    zeta, xi = r.normal(size=(3, 8)), r.normal(size=(6, 8))
    kappa = crossmodal_attention(Tensor(zeta), Tensor(xi), 2).data
    W = attention_weights(zeta, xi, 2)
    np.testing.assert_allclose(W.sum(axis=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(kappa[:, :4], W[0] @ xi[:, :4], atol=1e-12)
    assert np.all(kappa <= xi.max(axis=0) + 1e-12) and np.all(kappa >= xi.min(axis=0) - 1e-12)


def test_attention_errors():
    with pytest.raises(UsageError):
        crossmodal_attention(Tensor(np.ones((2, 4))), Tensor(np.zeros((0, 4))))
    with pytest.raises(ShapeError):
        crossmodal_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 6))))


def test_residual_fusion_algebra():
    r = np.random.default_rng(1)
    k, z = r.normal(size=(4, 8)), r.normal(size=(4, 8))
    np.testing.assert_array_equal(fuse_residual(Tensor(np.zeros((4, 8))), Tensor(z)).data, z)
    np.testing.assert_array_equal(fuse_residual(Tensor(k), Tensor(np.zeros((4, 8)))).data, k)
    np.testing.assert_array_equal(fuse_residual(Tensor(k), Tensor(z)).data - z, (k + z) - z)
    with pytest.raises(ShapeError):
        fuse_residual(Tensor(k), Tensor(np.ones((3, 8))))


def test_feature_stats_cases():
    s = feature_stats(np.full((4, 4), 2.5))
    assert s == {"mean": 2.5, "std": 0.0, "entropy": 0.0}
    s = feature_stats(np.array([0.0, 1.0] * 50))
    assert s["entropy"] == pytest.approx(np.log(2), abs=1e-12)
    assert s["mean"] == 0.5 and s["std"] == 0.5
    with pytest.raises(UsageError):
        feature_stats(np.zeros(0))
