import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpt_tomo.core import FrequencyMatrix, ValidationError
from gpt_tomo.synth import (ExperimentDesign, build_ground_truth, sample_frequency_matrix)
from gpt_tomo.wlra import (FitOptions, chi2, fit_feasibility, fit_rank_k, solve_col_qp,
                           solve_row_qp)


def exact_F(D, sigma=0.01, mask=None):
    D = np.asarray(D, float)
    mask = np.ones(D.shape, bool) if mask is None else mask
    s = np.full(D.shape, sigma)
    s[:, 0] = 0.0
    return FrequencyMatrix(np.where(mask, D, np.nan), s, mask)


def random_feasible_model(rng, m, n, k):
    """Random rank-k model with entries in [0, 1] and a unit first column."""
    while True:
        S = np.column_stack([np.ones(m), rng.uniform(-1, 1, (m, k - 1))])
        E = np.vstack([rng.uniform(0.3, 0.7, n), rng.uniform(-0.3, 0.3, (k - 1, n)) / (k - 1)])
        E[:, 0] = 0.0
        E[0, 0] = 1.0
        D = S @ E
        if D.min() >= 0 and D.max() <= 1:
            return S, E, D


# ---------------------------------------------------------------------------
# chi-square

def test_chi2_examples():
    D = np.array([[1.0, 0.6]])
    F = FrequencyMatrix(np.array([[1.0, 0.5]]), np.array([[0.0, 0.1]]), np.ones((1, 2), bool))
    assert chi2(F, D) == pytest.approx(1.0)
    assert chi2(F, np.array([[1.0, 0.5]])) == 0.0


def test_chi2_masking_removes_term():
    rng = np.random.default_rng(0)
    f = np.column_stack([np.ones(4), rng.uniform(0, 1, (4, 3))])
    s = np.column_stack([np.zeros(4), rng.uniform(0.05, 0.2, (4, 3))])
    D = np.column_stack([np.ones(4), rng.uniform(0, 1, (4, 3))])
    F = FrequencyMatrix(f, s, np.ones((4, 4), bool))
    mk = np.ones((4, 4), bool)
    mk[2, 1] = False
    term = ((f[2, 1] - D[2, 1]) / s[2, 1]) ** 2
    assert chi2(F, D) - chi2(F.with_mask(mk), D) == pytest.approx(term, rel=1e-12)


def test_chi2_exact_column_mismatch():
    F = exact_F(np.array([[1.0, 0.4]]))
    with pytest.raises(ValidationError):
        chi2(F, np.array([[0.99, 0.4]]))


# ---------------------------------------------------------------------------
# single-row / single-column QPs

def test_row_qp_matches_weighted_least_squares_when_inactive():
    rng = np.random.default_rng(1)
    S, E, D = random_feasible_model(rng, 1, 8, 3)
    f = D[0] + rng.normal(0, 1e-3, 8)
    f[0] = 1.0
    sig = np.full(8, 0.01)
    s = solve_row_qp(E, f, sig, np.ones(8, bool))
    # weighted least squares on the Bloch part with s0 = 1
    A = E[1:, 1:].T
    b = f[1:] - E[0, 1:]
    ls = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(s, np.concatenate([[1.0], ls]), atol=1e-10)


def test_row_qp_active_upper_bound():
    E = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = solve_row_qp(E, [1.0, 1.2], [0.0, 1.0], [True, True])
    np.testing.assert_allclose(s, [1.0, 1.0], atol=1e-14)


def test_row_qp_requires_unit_column():
    with pytest.raises(ValidationError):
        solve_row_qp(np.array([[0.5, 0.5], [0.0, 1.0]]), [1, 0.5], [0, 1], [True, True])


def test_row_qp_random_feasible_oracle():
    rng = np.random.default_rng(2)
    for trial in range(5):
        k, n = 3, 10
        _, E, _ = random_feasible_model(rng, 1, n, k)
        f = np.concatenate([[1.0], rng.uniform(-0.2, 1.2, n - 1)])
        sig = np.concatenate([[0.0], rng.uniform(0.05, 0.3, n - 1)])
        s = solve_row_qp(E, f, sig, np.ones(n, bool))
        p = s @ E
        assert p.min() >= -1e-10 and p.max() <= 1 + 1e-10
        obj = lambda P: (((P[..., 1:] - f[1:]) / sig[1:]) ** 2).sum(axis=-1)
        X = np.column_stack([np.ones(10_000), rng.uniform(-3, 3, (10_000, k - 1))])
        P = X @ E
        P = P[(P >= 0).all(axis=1) & (P <= 1).all(axis=1)]
        assert len(P) > 0
        assert obj(p) <= obj(P).min() + 1e-9


def test_col_qp_random_feasible_oracle():
    rng = np.random.default_rng(3)
    S, _, _ = random_feasible_model(rng, 12, 2, 3)
    f = rng.uniform(-0.1, 1.1, 12)
    sig = rng.uniform(0.05, 0.2, 12)
    e = solve_col_qp(S, f, sig, np.ones(12, bool))
    p = S @ e
    assert p.min() >= -1e-10 and p.max() <= 1 + 1e-10
    obj = lambda P: (((P - f) / sig) ** 2).sum(axis=-1)
    X = np.column_stack([rng.uniform(0, 1, 10_000), rng.uniform(-1, 1, (10_000, 2))])
    P = X @ S.T
    P = P[(P >= 0).all(axis=1) & (P <= 1).all(axis=1)]
    assert obj(p) <= obj(P).min() + 1e-9


def test_col_qp_unit_column_recovers_unit_effect():
    rng = np.random.default_rng(4)
    S, _, _ = random_feasible_model(rng, 15, 2, 4)
    e = solve_col_qp(S, np.ones(15), np.full(15, 1e-3), np.ones(15, bool))
    np.testing.assert_allclose(e, [1, 0, 0, 0], atol=1e-9)


# ---------------------------------------------------------------------------
# alternating fit

def test_noiseless_rank2_classical_bit():
    rng = np.random.default_rng(5)
    # classical-bit mixtures: states (1, x), effects (a, b) with a +- b in [0, 1]
    x = rng.uniform(-1, 1, 10)
    a = rng.uniform(0.2, 0.8, 8)
    b = rng.uniform(-1, 1, 8) * np.minimum(a, 1 - a)
    S = np.column_stack([np.ones(10), x])
    E = np.vstack([np.concatenate([[1.0], a]), np.concatenate([[0.0], b])])
    F = exact_F(S @ E)
    r = fit_rank_k(F, FitOptions(rank=2))
    assert r.chi2 < 1e-8
    assert r.converged


def test_noiseless_rank4_qubit():
    _, D = build_ground_truth(12, 13, 0.9, 0.95)
    r = fit_rank_k(exact_F(D.entries), FitOptions(rank=4))
    assert r.chi2 < 1e-8
    np.testing.assert_array_equal(r.D[:, 0], 1.0)


def test_full_rank_interpolates():
    rng = np.random.default_rng(6)
    f = np.column_stack([np.ones(5), rng.uniform(0.1, 0.9, (5, 4))])
    r = fit_rank_k(exact_F(f, 0.05), FitOptions(rank=5))
    assert r.chi2 < 1e-8


def test_rank_above_min_dimension_rejected():
    with pytest.raises(ValidationError):
        fit_rank_k(exact_F(np.ones((3, 4))), FitOptions(rank=4))


def test_fit_options_validation():
    with pytest.raises(ValidationError):
        FitOptions(rank=0)
    with pytest.raises(ValidationError):
        FitOptions(rank=2, delta_chi2_tol=0)
    with pytest.raises(ValidationError):
        FitOptions(rank=2, init_strategy="magic")


@pytest.fixture(scope="module")
def noisy_fit():
    _, D = build_ground_truth(20, 21, 0.98, 0.98)
    F = sample_frequency_matrix(D, ExperimentDesign.full(20, 21), 20000, seed=8)
    return F, D, fit_rank_k(F, FitOptions(rank=4, restarts=3))


def test_noisy_fit_properties(noisy_fit):
    F, D, r = noisy_fit
    assert fit_feasibility(r) <= 1e-9
    np.testing.assert_array_equal(r.D[:, 0] == 1.0, True)
    assert np.all(np.diff(r.chi2_trace) <= 1e-9 * r.chi2_trace[0])
    assert r.chi2 == pytest.approx(chi2(F, r.D, atol=1e-12), rel=1e-9)
    assert len(r.per_restart_chi2) == 3
    assert r.chi2 <= min(r.per_restart_chi2) + 1e-9
    resid = np.abs(r.D - np.nan_to_num(F.values))[:, 1:]
    assert np.all(resid <= np.maximum(5 * F.sigmas[:, 1:], 0.05))


def test_gauge_invariance(noisy_fit):
    F, _, r = noisy_fit
    rng = np.random.default_rng(9)
    R = np.eye(4)
    R[1:, 1:] = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    R[0, 1:] = rng.normal(size=3) * 0.1          # keeps S[:, 0] = 1 after S R^-1
    S2 = r.S @ np.linalg.inv(R)
    E2 = R @ r.E
    np.testing.assert_allclose(S2[:, 0], 1.0, atol=1e-12)
    assert chi2(F, S2 @ E2, atol=1e-9) == pytest.approx(r.chi2, rel=1e-9)


def test_fiducial_design_keeps_unmeasured_in_box():
    design = ExperimentDesign.fiducial(30, 31, 6)
    _, D = build_ground_truth(30, 31, 0.98, 0.98, design=design)
    F = sample_frequency_matrix(D, design, 20000, seed=2)
    r = fit_rank_k(F, FitOptions(rank=4, restarts=2))
    Dh = r.D
    assert Dh.min() >= -1e-9 and Dh.max() <= 1 + 1e-9
    resid = np.abs(Dh - np.nan_to_num(F.values))[design.mask]
    assert resid.max() < 0.05


def test_deterministic_under_seed():
    _, D = build_ground_truth(10, 11, 0.95, 0.95)
    F = sample_frequency_matrix(D, ExperimentDesign.full(10, 11), 5000, seed=1)
    a = fit_rank_k(F, FitOptions(rank=3, restarts=3, seed=4))
    b = fit_rank_k(F, FitOptions(rank=3, restarts=3, seed=4))
    np.testing.assert_array_equal(a.S, b.S)
    np.testing.assert_array_equal(a.E, b.E)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 3))
def test_chi2_monotone_on_random_data(seed, k):
    rng = np.random.default_rng(seed)
    m, n = 6, 7
    f = np.column_stack([np.ones(m), rng.uniform(0, 1, (m, n - 1))])
    s = np.column_stack([np.zeros(m), rng.uniform(0.02, 0.3, (m, n - 1))])
    F = FrequencyMatrix(f, s, np.ones((m, n), bool))
    r = fit_rank_k(F, FitOptions(rank=k, restarts=2, seed=seed))
    tr = np.asarray(r.chi2_trace)
    assert np.all(np.diff(tr) <= 1e-9 * max(1.0, tr[0]))
    assert fit_feasibility(r) <= 1e-9
