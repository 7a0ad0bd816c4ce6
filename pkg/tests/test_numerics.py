"""Tests for the shared numerical kernels."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from klgames.errors import DegenerateReference, DimensionMismatch, SupportMismatch
from klgames.numerics import (
    RidgeState,
    gibbs_tilt,
    gibbs_tilt_rows,
    kl_divergence,
    kl_divergence_rows,
    mahalanobis,
    ridge_absorb,
    ridge_solve,
    soft_value,
    soft_value_rows,
)

from oracles import grid_max_tilted, tilted_objective


def _distributions(dim):
    """Hypothesis strategy: a strictly positive distribution of length dim."""
    return st.lists(
        st.floats(min_value=0.01, max_value=10.0), min_size=dim, max_size=dim
    ).map(lambda w: np.array(w) / np.sum(w))


# ---------------------------------------------------------------------------
# kl_divergence


def test_kl_point_mass_vs_uniform():
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(
        math.log(2.0), abs=1e-12)


def test_kl_self_is_zero():
    for p in ([0.3, 0.7], [1.0], [0.2, 0.2, 0.6]):
        assert kl_divergence(p, p) == 0.0


def test_kl_zero_log_zero_convention():
    # the q mass outside p's support must not contribute
    val = kl_divergence([0.0, 1.0], [0.5, 0.5])
    assert val == pytest.approx(math.log(2.0), abs=1e-12)


def test_kl_support_mismatch():
    with pytest.raises(SupportMismatch):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_kl_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        kl_divergence([0.5, 0.5], [0.5, 0.25, 0.25])


def test_kl_rejects_non_distribution():
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(ValueError):
        kl_divergence([-0.1, 1.1], [0.5, 0.5])


@settings(max_examples=100, deadline=None)
@given(_distributions(4), _distributions(4))
def test_kl_nonnegative(p, q):
    assert kl_divergence(p, q) >= 0.0


# ---------------------------------------------------------------------------
# soft_value


def test_soft_value_two_point_example():
    got = soft_value([0.5, 0.5], [1.0, 0.0], 1.0)
    assert got == pytest.approx(math.log((math.e + 1.0) / 2.0), abs=1e-12)
    # pin the decimal value quoted around this example
    assert got == pytest.approx(0.620115, abs=1e-6)


def test_soft_value_beta_zero_is_supported_max():
    assert soft_value([0.5, 0.5], [1.0, 3.0], 0.0) == 3.0
    # entries with zero reference mass are excluded from the max
    assert soft_value([1.0, 0.0], [1.0, 3.0], 0.0) == 1.0


def test_soft_value_extreme_scores_no_overflow():
    got = soft_value([0.5, 0.5], [1000.0, 0.0], 1.0)
    assert got == pytest.approx(1000.0 + math.log(0.5), rel=1e-12)


def test_soft_value_degenerate_reference():
    with pytest.raises(DegenerateReference):
        soft_value([0.0, 0.0], [1.0, 2.0], 1.0)


def test_soft_value_negative_beta_rejected():
    with pytest.raises(ValueError):
        soft_value([0.5, 0.5], [1.0, 0.0], -1.0)


@settings(max_examples=100, deadline=None)
@given(_distributions(3),
       st.lists(st.floats(-50, 50), min_size=3, max_size=3),
       st.floats(min_value=0.05, max_value=20.0),
       st.floats(min_value=-100.0, max_value=100.0))
def test_soft_value_shift_equivariance(ref, scores, beta, c):
    s = np.array(scores)
    a = soft_value(ref, s + c, beta)
    b = soft_value(ref, s, beta) + c
    assert abs(a - b) <= 1e-9 * max(1.0, abs(b))


def test_soft_value_matches_grid_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10):
        w = rng.uniform(0.2, 1.0, size=2)
        ref = w / w.sum()
        scores = rng.uniform(-2.0, 2.0, size=2)
        beta = rng.uniform(0.5, 2.0)
        oracle, _ = grid_max_tilted(ref, scores, beta, step=1e-2, refine_to=1e-4)
        got = soft_value(ref, scores, beta)
        # the grid point is feasible, so the true optimum can only be above it
        assert got >= oracle - 1e-12
        assert got - oracle <= 1e-6


# ---------------------------------------------------------------------------
# gibbs_tilt


def test_gibbs_two_point_example():
    out = gibbs_tilt([0.5, 0.5], [1.0, 0.0], 1.0)
    e = math.e
    assert out == pytest.approx([e / (e + 1.0), 1.0 / (e + 1.0)], abs=1e-12)


def test_gibbs_zero_reference_entry_stays_zero():
    out = gibbs_tilt([0.0, 0.5, 0.5], [100.0, 1.0, 0.0], 1.0)
    assert out[0] == 0.0
    assert out.sum() == pytest.approx(1.0, abs=1e-12)


def test_gibbs_beta_zero_point_mass_lowest_index_ties():
    out = gibbs_tilt([0.25, 0.25, 0.25, 0.25], [1.0, 3.0, 3.0, 0.0], 0.0)
    assert list(out) == [0.0, 1.0, 0.0, 0.0]
    # zero-reference entries cannot win even with the best score
    out = gibbs_tilt([0.0, 0.5, 0.5], [9.0, 1.0, 1.0], 0.0)
    assert list(out) == [0.0, 1.0, 0.0]


def test_gibbs_degenerate_reference():
    with pytest.raises(DegenerateReference):
        gibbs_tilt([0.0, 0.0], [1.0, 2.0], 1.0)


def test_gibbs_attains_soft_value():
    rng = np.random.default_rng(11)
    for _ in range(20):
        dim = rng.integers(2, 6)
        w = rng.uniform(0.1, 1.0, size=dim)
        ref = w / w.sum()
        scores = rng.uniform(-3.0, 3.0, size=dim)
        beta = rng.uniform(0.2, 3.0)
        p = gibbs_tilt(ref, scores, beta)
        attained = tilted_objective(p[None, :], ref, scores, beta)[0]
        assert attained == pytest.approx(soft_value(ref, scores, beta), abs=1e-10)


def test_gibbs_beats_grid():
    rng = np.random.default_rng(13)
    for _ in range(5):
        w = rng.uniform(0.2, 1.0, size=3)
        ref = w / w.sum()
        scores = rng.uniform(-2.0, 2.0, size=3)
        beta = rng.uniform(0.5, 2.0)
        oracle, _ = grid_max_tilted(ref, scores, beta, step=1e-2, refine_to=1e-3)
        p = gibbs_tilt(ref, scores, beta)
        attained = tilted_objective(p[None, :], ref, scores, beta)[0]
        assert attained >= oracle - 1e-12


@settings(max_examples=100, deadline=None)
@given(_distributions(3),
       st.lists(st.floats(-20, 20), min_size=3, max_size=3),
       st.floats(min_value=0.05, max_value=10.0),
       st.floats(min_value=-50.0, max_value=50.0))
def test_gibbs_shift_invariance(ref, scores, beta, c):
    s = np.array(scores)
    a = gibbs_tilt(ref, s + c, beta)
    b = gibbs_tilt(ref, s, beta)
    assert np.max(np.abs(a - b)) <= 1e-9


# ---------------------------------------------------------------------------
# RidgeState


def test_ridge_single_absorb_example():
    st1 = ridge_absorb(RidgeState(2, lam=1.0), [1.0, 0.0], 1.0)
    assert np.array_equal(st1.sigma, np.diag([2.0, 1.0]))
    assert np.allclose(st1.sigma_inv, np.diag([0.5, 1.0]), atol=1e-12)
    assert np.array_equal(st1.xty, [1.0, 0.0])
    assert st1.count == 1


def test_ridge_functional_absorb_leaves_input_unchanged():
    st0 = RidgeState(2, lam=1.0)
    ridge_absorb(st0, [1.0, 0.0], 1.0)
    assert st0.count == 0
    assert np.array_equal(st0.sigma, np.eye(2))


def test_ridge_solve_empty_is_zero():
    assert np.array_equal(ridge_solve(RidgeState(3)), np.zeros(3))


def test_ridge_solve_two_identical_samples():
    s = RidgeState(2, lam=1.0)
    s.absorb([1.0, 0.0], 1.0)
    s.absorb([1.0, 0.0], 1.0)
    assert np.allclose(s.solve(), [2.0 / 3.0, 0.0], atol=1e-12)


def test_ridge_recovers_noiseless_truth():
    rng = np.random.default_rng(3)
    omega = rng.normal(size=4)
    s = RidgeState(4, lam=1e-8)
    for _ in range(50):
        phi = rng.normal(size=4)
        phi /= max(1.0, np.linalg.norm(phi))
        s.absorb(phi, float(phi @ omega))
    assert np.max(np.abs(s.solve() - omega)) < 1e-4


def test_ridge_zero_feature_is_noop_except_count():
    s = RidgeState(2)
    s.absorb([0.0, 0.0], 5.0)
    assert s.count == 1
    assert np.array_equal(s.sigma, np.eye(2))
    assert np.array_equal(s.xty, np.zeros(2))


def test_mahalanobis_example_and_bound():
    s = RidgeState(2, lam=1.0)
    assert mahalanobis(s, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    s.absorb([1.0, 0.0], 1.0)
    assert mahalanobis(s, [1.0, 0.0]) == pytest.approx(math.sqrt(0.5), abs=1e-12)
    rng = np.random.default_rng(5)
    for lam in (0.5, 1.0, 4.0):
        s = RidgeState(3, lam=lam)
        for _ in range(20):
            phi = rng.normal(size=3)
            phi /= max(1.0, np.linalg.norm(phi))
            s.absorb(phi, 0.0)
            assert s.mahalanobis(phi) <= 1.0 / math.sqrt(lam) + 1e-9


def test_mahalanobis_nonincreasing_in_data():
    rng = np.random.default_rng(9)
    s = RidgeState(3, lam=1.0)
    probe = rng.normal(size=3)
    probe /= np.linalg.norm(probe)
    prev = s.mahalanobis(probe)
    for _ in range(40):
        phi = rng.normal(size=3)
        phi /= max(1.0, np.linalg.norm(phi))
        s.absorb(phi, rng.normal())
        cur = s.mahalanobis(probe)
        assert cur <= prev + 1e-12
        prev = cur


def test_ridge_inverse_stays_consistent_across_refactors():
    rng = np.random.default_rng(17)
    for interval in (4, 256):
        s = RidgeState(5, lam=0.7, refactor_interval=interval)
        phis = []
        for _ in range(100):
            phi = rng.normal(size=5)
            phi /= max(1.0, np.linalg.norm(phi))
            s.absorb(phi, rng.normal())
            phis.append(phi)
        ident = s.sigma_inv @ s.sigma
        assert np.linalg.norm(ident - np.eye(5)) <= 1e-6
        recon = 0.7 * np.eye(5) + sum(np.outer(p, p) for p in phis)
        assert np.max(np.abs(recon - s.sigma)) <= 1e-8
        evals = np.linalg.eigvalsh(s.sigma)
        assert evals.min() >= 0.7 - 1e-9


def test_ridge_dimension_mismatch():
    s = RidgeState(3)
    with pytest.raises(DimensionMismatch):
        s.absorb([1.0, 2.0], 0.0)
    with pytest.raises(DimensionMismatch):
        s.mahalanobis([1.0, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.lists(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
                min_size=1, max_size=30),
       st.floats(min_value=0.1, max_value=5.0))
def test_ridge_inverse_identity_property(rows, lam):
    s = RidgeState(3, lam=lam, refactor_interval=8)
    for row in rows:
        phi = np.array(row)
        nrm = np.linalg.norm(phi)
        if nrm > 1.0:
            phi = phi / nrm
        s.absorb(phi, 0.5)
    ident = s.sigma_inv @ s.sigma
    assert np.linalg.norm(ident - np.eye(3)) <= 1e-6


# ---------------------------------------------------------------------------
# row-vectorized kernels match their scalar counterparts


def _random_ref_rows(rng, k, n, with_zeros):
    refs = rng.dirichlet(np.ones(n), size=k)
    if with_zeros:
        # knock out some entries per row, keep at least one alive
        for r in refs:
            dead = rng.random(n) < 0.4
            dead[rng.integers(n)] = False
            r[dead] = 0.0
            r /= r.sum()
    return refs


def test_soft_value_rows_matches_scalar():
    rng = np.random.default_rng(101)
    for beta in (0.0, 0.3, 2.0):
        for with_zeros in (False, True):
            refs = _random_ref_rows(rng, 6, 4, with_zeros)
            scores = rng.normal(0, 3, size=(6, 4))
            rows = soft_value_rows(refs, scores, beta)
            for i in range(6):
                assert rows[i] == pytest.approx(
                    soft_value(refs[i], scores[i], beta), abs=1e-12)


def test_gibbs_tilt_rows_matches_scalar():
    rng = np.random.default_rng(103)
    for beta in (0.0, 0.7):
        for with_zeros in (False, True):
            refs = _random_ref_rows(rng, 6, 5, with_zeros)
            scores = rng.normal(0, 2, size=(6, 5))
            rows = gibbs_tilt_rows(refs, scores, beta)
            for i in range(6):
                expect = gibbs_tilt(refs[i], scores[i], beta)
                assert np.max(np.abs(rows[i] - expect)) <= 1e-12
                # zero-reference entries stay exactly zero
                assert np.all(rows[i][refs[i] == 0.0] == 0.0)


def test_gibbs_tilt_rows_no_overflow_off_support():
    # a huge score on a zero-reference entry must not poison the row
    refs = np.array([[0.5, 0.5, 0.0]])
    scores = np.array([[1.0, 2.0, 1e6]])
    out = gibbs_tilt_rows(refs, scores, 0.001)
    assert np.all(np.isfinite(out))
    assert out[0, 2] == 0.0
    val = soft_value_rows(refs, scores, 0.001)
    assert np.isfinite(val[0])


def test_kl_divergence_rows_matches_scalar():
    rng = np.random.default_rng(107)
    p = _random_ref_rows(rng, 5, 4, with_zeros=True)
    q = _random_ref_rows(rng, 5, 4, with_zeros=False)
    rows = kl_divergence_rows(p, q)
    for i in range(5):
        assert rows[i] == pytest.approx(kl_divergence(p[i], q[i]), abs=1e-12)


def test_kl_divergence_rows_support_mismatch():
    p = np.array([[0.5, 0.5], [1.0, 0.0]])
    q = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SupportMismatch):
        kl_divergence_rows(p, q)
