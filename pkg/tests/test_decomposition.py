import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seme.basis import SemanticBasisSet, bases_from_head
from seme.decomposition import (
    ComponentSet,
    decompose,
    parallelism_score,
    project,
    resultant,
    run_validation,
)


def test_project_examples():
    np.testing.assert_array_equal(project([1, 1], [1, 0]), [1, 0])
    np.testing.assert_array_equal(project([0, 3], [2, 0]), [0, 0])
    np.testing.assert_array_equal(project([2, 1], [1, 1]), [1.5, 1.5])
    with pytest.raises(ValueError):
        project([1, 1], [0, 0])


def test_orthonormal_expansion_is_exact(rng):
    Q = np.linalg.qr(rng.standard_normal((7, 7)))[0]
    r = rng.standard_normal(7)
    np.testing.assert_allclose(resultant(decompose(r, SemanticBasisSet(Q))), r, atol=1e-12)


def test_single_basis(rng):
    s = rng.standard_normal((1, 3))
    r = rng.standard_normal(3)
    comps = decompose(r, SemanticBasisSet(s))
    assert len(comps) == 1
    np.testing.assert_allclose(comps.components[0], project(r, s[0]))


def test_components_match_projection_oracle(rng):
    B = rng.standard_normal((64, 8))
    r = rng.standard_normal(8)
    comps = decompose(r, SemanticBasisSet(B)).components
    for i in range(64):
        s = B[i]
        expected = (sum(r[k] * s[k] for k in range(8)) / sum(s[k] * s[k] for k in range(8))) * s
        np.testing.assert_allclose(comps[i], expected, atol=1e-6, rtol=0)
        c = comps[i]
        assert abs(abs(c @ s) / (np.linalg.norm(c) * np.linalg.norm(s)) - 1) <= 1e-6


def test_zero_rows_skipped():
    B = np.array([[1.0, 0], [0, 0]])
    with pytest.warns(RuntimeWarning):
        comps = decompose(np.array([2.0, 3.0]), B)
    assert comps.skipped == (1,)
    np.testing.assert_array_equal(comps.components[1], [0, 0])


def test_resultant_examples(rng):
    np.testing.assert_array_equal(resultant(np.array([[1.0, 0], [0, 1.0]])), [1, 1])
    c = rng.standard_normal(4)
    np.testing.assert_array_equal(resultant(np.stack([c, -c])), np.zeros(4))
    comps = rng.standard_normal((64, 5))
    fold = np.zeros(5)
    for row in comps[::-1]:
        fold = fold + row
    np.testing.assert_allclose(resultant(comps), fold, atol=1e-6)
    with pytest.raises(ValueError):
        resultant(np.zeros((0, 3)))


def test_parallelism_examples(rng):
    r = rng.standard_normal(5)
    assert parallelism_score(r, 2 * r) == pytest.approx(1.0, abs=1e-15)
    assert parallelism_score(r, -r) == pytest.approx(-1.0, abs=1e-15)
    assert abs(parallelism_score(np.array([1.0, 2, 0]), np.array([-2.0, 1, 5]))) <= 1e-9
    with pytest.raises(ValueError):
        parallelism_score(r, np.zeros(5))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5))
def test_linearity_and_idempotence(seed, a, b):
    rng = np.random.default_rng(seed)
    B = SemanticBasisSet(rng.standard_normal((10, 4)))
    r, q = rng.standard_normal(4), rng.standard_normal(4)
    combo = a * r + b * q
    if np.linalg.norm(combo) < 1e-6:
        return
    lhs = decompose(combo, B).components
    rhs = a * decompose(r, B).components + b * decompose(q, B).components
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    s = B.bases[0]
    np.testing.assert_allclose(project(project(r, s), s), project(r, s), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_score_scale_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    r, x = rng.standard_normal(6), rng.standard_normal(6)
    assert parallelism_score(a * r, b * x) == pytest.approx(parallelism_score(r, x), abs=1e-12)


def test_validation_orthonormal_complete(rng):
    Q = np.linalg.qr(rng.standard_normal((5, 5)))[0]
    rep = run_validation(SemanticBasisSet(Q), trials=1, seed=3)
    assert rep.parallelism_semantic == pytest.approx(1.0, abs=1e-12)


def test_validation_reproducible_and_thread_independent(rng):
    bases = bases_from_head(rng.standard_normal((6, 40)))
    a = run_validation(bases, trials=20, seed=9)
    b = run_validation(bases, trials=20, seed=9, threads=4)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()
    assert run_validation(bases, trials=20, seed=10).to_json() != a.to_json()


def test_validation_v1024_d16_floor():
    W = np.random.default_rng(0).standard_normal((16, 1024))
    rep = run_validation(bases_from_head(W), trials=200, seed=1)
    assert rep.parallelism_semantic >= 0.95
    assert -1 <= rep.parallelism_random <= 1


def test_validation_activation_sampling(rng):
    bases = bases_from_head(rng.standard_normal((4, 30)))
    acts = rng.standard_normal((7, 4))
    rep = run_validation(bases, trials=5, seed=0, activations=acts)
    assert rep.config["representation_distribution"] == "activations"
    with pytest.raises(ValueError):
        run_validation(bases, trials=5, seed=0, activations=np.ones((3, 5)))


def test_validation_rejects_bad_config(rng):
    bases = bases_from_head(rng.standard_normal((4, 30)))
    with pytest.raises(ValueError):
        run_validation(bases, trials=0, seed=0)
    with pytest.raises(ValueError):
        run_validation(bases, trials=1, seed=0, random_basis_distribution="cauchy")


def test_report_csv_format(rng):
    rep = run_validation(bases_from_head(rng.standard_normal((3, 9))), trials=3, seed=0)
    lines = rep.to_csv().split("\r\n")
    assert lines[0] == "trial,parallelism"
    assert len(lines) == 5 and lines[-1] == ""
