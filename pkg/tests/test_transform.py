import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seme.basis import SemanticBasisSet, bases_from_head, kl_divergence, nearest_basis, semantic_probabilities
from seme.decomposition import decompose, resultant
from seme.transform import (
    TransformPlan,
    calibrate_magnitude,
    depth_map,
    interpolate_layer_semantics,
    preserve_transform,
    resample_layers,
    transform_batch,
)


def _orthonormal(rng, d):
    return np.linalg.qr(rng.standard_normal((d, d)))[0]


def _probs(r, b):
    return semantic_probabilities(r, b).probs


def test_same_orthonormal_bases_preserve_probabilities(rng):
    B = SemanticBasisSet(_orthonormal(rng, 6))
    plan = TransformPlan(B, B)
    for _ in range(20):
        r = rng.standard_normal(6)
        assert kl_divergence(_probs(r, B), _probs(preserve_transform(r, plan), B)) <= 1e-6


def test_rotation_oracle(rng):
    Q = _orthonormal(rng, 5)
    Bx = SemanticBasisSet(_orthonormal(rng, 5))
    By = SemanticBasisSet(Bx.bases @ Q.T)
    plan = TransformPlan(Bx, By)
    r = rng.standard_normal(5)
    y = preserve_transform(r, plan)
    ref = Q @ resultant(decompose(r, Bx))
    assert y @ ref / (np.linalg.norm(y) * np.linalg.norm(ref)) >= 0.999
    assert kl_divergence(_probs(r, Bx), _probs(y, By)) <= 1e-6


def test_uniform_probabilities_give_mean_direction():
    B = SemanticBasisSet(np.eye(3))
    plan = TransformPlan(B, B, calibration="none", weighting="probability")
    y = preserve_transform(np.ones(3), plan)
    np.testing.assert_allclose(y, B.unit().mean(axis=0), atol=1e-15)
    y = preserve_transform(np.ones(3), TransformPlan(B, B, calibration="none"))
    m = B.unit().mean(axis=0)
    assert y @ m / (np.linalg.norm(y) * np.linalg.norm(m)) == pytest.approx(1.0)


def test_probability_weighting_does_not_preserve():
    # literal probability weights lose the semantics even with identical bases
    B = SemanticBasisSet(np.eye(3))
    r = np.array([1.0, 0, 0])
    y = preserve_transform(r, TransformPlan(B, B, weighting="probability"))
    assert kl_divergence(_probs(r, B), _probs(y, B)) > 1e-3


def test_calibration_modes(rng):
    Bx = bases_from_head(rng.standard_normal((4, 20)))
    By = bases_from_head(3 * rng.standard_normal((4, 20)))
    raw = rng.standard_normal(4)
    r = rng.standard_normal(4)
    np.testing.assert_array_equal(calibrate_magnitude(raw, r, TransformPlan(Bx, By, calibration="none")), raw)
    same = calibrate_magnitude(raw, r, TransformPlan(Bx, Bx, calibration="norm_match"))
    assert np.linalg.norm(same) == pytest.approx(np.linalg.norm(r), rel=1e-6)
    nm = calibrate_magnitude(raw, r, TransformPlan(Bx, By, calibration="norm_match"))
    ratio_y = np.linalg.norm(nm) / np.mean([np.linalg.norm(s) for s in By.bases])
    ratio_x = np.linalg.norm(r) / np.mean([np.linalg.norm(s) for s in Bx.bases])
    assert ratio_y == pytest.approx(ratio_x, rel=1e-9)
    bs = calibrate_magnitude(raw, r, TransformPlan(Bx, By, calibration="basis_scale"))
    np.testing.assert_allclose(bs, raw * By.mean_norm())
    with pytest.raises(ValueError):
        calibrate_magnitude(np.zeros(4), r, TransformPlan(Bx, By))


def test_plan_validation(rng):
    a = bases_from_head(rng.standard_normal((3, 10)))
    b = bases_from_head(rng.standard_normal((3, 11)))
    with pytest.raises(ValueError, match="vocabulary"):
        TransformPlan(a, b)
    with pytest.raises(ValueError):
        TransformPlan(a, a, calibration="bogus")
    with pytest.raises(ValueError):
        preserve_transform(np.zeros(3), TransformPlan(a, a))


def test_same_bases_preserve_semantics_wide_vocab(rng):
    B = bases_from_head(rng.standard_normal((8, 200)))
    plan = TransformPlan(B, B)
    for _ in range(20):
        r = rng.standard_normal(8)
        assert kl_divergence(_probs(r, B), _probs(preserve_transform(r, plan), B)) <= 1e-4


def test_argmax_stability_perturbed_head():
    rng = np.random.default_rng(7)
    d, v = 16, 1024
    W = rng.standard_normal((d, v))
    Q = _orthonormal(rng, d)
    Wy = Q @ W + 0.01 * rng.standard_normal((d, v))
    plan = TransformPlan(bases_from_head(W), bases_from_head(Wy))
    hits = 0
    trials = 200
    for _ in range(trials):
        r = rng.standard_normal(d)
        p = _probs(r, plan.source_bases)
        hits += nearest_basis(preserve_transform(r, plan), plan.target_bases) == int(np.argmax(p))
    assert hits / trials >= 0.95


def test_transform_batch_report(rng):
    B = bases_from_head(rng.standard_normal((4, 12)))
    out, rows = transform_batch(rng.standard_normal((5, 4)), TransformPlan(B, B))
    assert out.shape == (5, 4)
    assert all(r["kl"] <= 1e-4 and r["argmax_source"] == r["argmax_target"] for r in rows)


def test_depth_map_examples():
    assert depth_map(4, 4).positions == (0, 1, 2, 3)
    assert depth_map(3, 5).positions == (0, 0.5, 1, 1.5, 2)
    # j * 11 / 6 for j = 0..6
    expected = (0.0, 1.8333333333333333, 3.6666666666666665, 5.5, 7.333333333333333, 9.166666666666666, 11.0)
    assert depth_map(12, 7).positions == pytest.approx(expected, abs=1e-12)
    assert depth_map(5, 1).positions == (2.0,)
    with pytest.raises(ValueError):
        depth_map(0, 3)


@given(st.integers(1, 50), st.integers(2, 50))
def test_depth_map_monotone_anchored(ls, lt):
    pos = depth_map(ls, lt).positions
    assert len(pos) == lt
    assert pos[0] == 0 and pos[-1] == pytest.approx(ls - 1)
    assert all(a <= b for a, b in zip(pos, pos[1:]))


def test_interpolation_examples(rng):
    xs = [rng.standard_normal(3) for _ in range(4)]
    for k in range(4):
        np.testing.assert_array_equal(interpolate_layer_semantics(xs, k), xs[k])
    vs = [np.zeros(2), np.zeros(2), np.array([2.0, 4.0])]
    np.testing.assert_array_equal(interpolate_layer_semantics(vs, 1.5), [1, 2])
    with pytest.raises(ValueError):
        interpolate_layer_semantics(xs, 3.5)
    with pytest.raises(ValueError):
        interpolate_layer_semantics([], 0)


def test_interpolation_two_point_oracle(rng):
    for _ in range(50):
        n = int(rng.integers(2, 9))
        xs = [rng.standard_normal(4) for _ in range(n)]
        p = float(rng.uniform(0, n - 1))
        lo = int(p)
        hi = min(lo + 1, n - 1)
        t = p - lo
        expected = [xs[lo][k] + t * (xs[hi][k] - xs[lo][k]) for k in range(4)]
        np.testing.assert_allclose(interpolate_layer_semantics(xs, p), expected, atol=1e-12)


def test_resample_layers(rng):
    xs = [np.full(2, float(i)) for i in range(3)]
    out = resample_layers(xs, 5)
    assert [o[0] for o in out] == [0, 0.5, 1, 1.5, 2]
