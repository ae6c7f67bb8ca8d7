import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from matchtu.equilibrium import SolverOptions, solve_ipfp
from matchtu.errors import ConvergenceError, MatchingError, SingularHessianError, ZeroCellError
from matchtu.estimation import (
    FitOptions,
    QuadrupleSet,
    asymptotic_covariance,
    double_difference,
    fit,
    fit_hybrid_sista,
    fit_mle,
    fit_moment_matching,
    gradient_F,
    hessian_F,
    log_likelihood,
    max_score_fit,
    multinomial_covariance,
    objective_F,
    saturated_log_likelihood,
    score,
    sphere_grid,
)
from matchtu.estimation.maxscore import oriented_differences
from matchtu.model import BasisSystem, Margins, MatchingPatterns, ParameterVector, SampleCounts
from matchtu.simulation import equilibrium_frequencies, sample_from_frequencies


def exact_sample(lam, basis, margins, n_households=1e5):
    pi = equilibrium_frequencies(basis.surplus(lam), margins)
    return SampleCounts.from_frequencies(pi, n_households)


def random_basis(rng, K, nx, ny):
    return BasisSystem(rng.normal(size=(K, nx, ny)))


def random_alpha(rng, K, nx, ny, scale=1.0):
    return ParameterVector(rng.normal(scale=scale, size=K), rng.uniform(0, 2, nx), rng.uniform(0, 2, ny))


def random_pi(rng, nx, ny):
    v = rng.uniform(0.2, 1.0, nx * ny + nx + ny)
    return MatchingPatterns.from_vector(v / v.sum(), nx, ny)


ONES_1x1 = BasisSystem(np.ones((1, 1, 1)))


# ---------------------------------------------------------------- the objective

def test_objective_examples():
    pi = MatchingPatterns([[1 / 3]], [1 / 3], [1 / 3])
    alpha = ParameterVector([0.0], [0.0], [0.0])
    assert objective_F(alpha, pi, ONES_1x1) == pytest.approx(4.0, abs=1e-15)

    rng = np.random.default_rng(0)
    basis = random_basis(rng, 2, 2, 3)
    alpha = random_alpha(rng, 2, 2, 3)
    zero = MatchingPatterns(np.zeros((2, 3)), np.zeros(2), np.zeros(3))
    phi = basis.surplus(alpha.lam)
    expected = (np.exp(-alpha.u).sum() + np.exp(-alpha.v).sum()
                + 2 * np.exp((phi - alpha.u[:, None] - alpha.v[None, :]) / 2).sum())
    assert objective_F(alpha, zero, basis) == pytest.approx(expected, rel=1e-14)


def test_objective_invariant_to_orthonormal_rotation(rng):
    basis = random_basis(rng, 3, 3, 3)
    alpha = random_alpha(rng, 3, 3, 3)
    pi = random_pi(rng, 3, 3)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rotated = BasisSystem(np.tensordot(Q.T, basis.bases, axes=1))  # phi'_j = sum_k Q_kj phi_k
    alpha_r = ParameterVector(Q.T @ alpha.lam, alpha.u, alpha.v)
    assert objective_F(alpha_r, pi, rotated) == pytest.approx(objective_F(alpha, pi, basis), rel=1e-12)


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        basis = random_basis(rng, 2, 2, 2)
        alpha = random_alpha(rng, 2, 2, 2)
        pi = random_pi(rng, 2, 2)
        x = alpha.as_vector()
        h = 1e-6
        fd = np.empty_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = h
            fp = objective_F(ParameterVector.from_vector(x + e, 2, 2, 2), pi, basis)
            fm = objective_F(ParameterVector.from_vector(x - e, 2, 2, 2), pi, basis)
            fd[i] = (fp - fm) / (2 * h)
        g = gradient_F(alpha, pi, basis)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_hessian_matches_finite_differences_of_gradient(rng):
    basis = random_basis(rng, 2, 3, 2)
    alpha = random_alpha(rng, 2, 3, 2)
    pi = random_pi(rng, 3, 2)
    x = alpha.as_vector()
    h = 1e-6
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        gp = gradient_F(ParameterVector.from_vector(x + e, 2, 3, 2), pi, basis)
        gm = gradient_F(ParameterVector.from_vector(x - e, 2, 3, 2), pi, basis)
        cols.append((gp - gm) / (2 * h))
    np.testing.assert_allclose(hessian_F(alpha, basis), np.column_stack(cols), atol=1e-7)


def test_lambda_gradient_vanishes_when_moments_match(rng):
    basis = random_basis(rng, 2, 3, 3)
    alpha = random_alpha(rng, 2, 3, 3)
    from matchtu.estimation import predicted_patterns

    mu = predicted_patterns(alpha, basis)
    pi = mu.scaled(1.0)  # treat the implied patterns as data
    np.testing.assert_allclose(gradient_F(alpha, pi, basis), 0.0, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_midpoint_convexity(seed):
    r = np.random.default_rng(seed)
    basis = random_basis(r, 2, 3, 2)
    pi = random_pi(r, 3, 2)
    a1 = random_alpha(r, 2, 3, 2, scale=2).as_vector()
    a2 = random_alpha(r, 2, 3, 2, scale=2).as_vector()
    f = lambda v: objective_F(ParameterVector.from_vector(v, 2, 3, 2), pi, basis)  # noqa: E731
    mid = f((a1 + a2) / 2)
    avg = (f(a1) + f(a2)) / 2
    assert mid <= avg + 1e-12 * max(1.0, abs(avg))


# ---------------------------------------------------------------- moment matching

def test_exact_data_recovers_lambda(rng):
    basis = random_basis(rng, 2, 4, 5)
    lam0 = np.array([0.8, -0.4])
    margins = Margins(rng.uniform(0.5, 2, 4), rng.uniform(0.5, 2, 5))
    rep = fit_moment_matching(exact_sample(lam0, basis, margins), basis)
    np.testing.assert_allclose(rep.lam, lam0, atol=1e-6)
    assert rep.converged and rep.diagnostics["gradient_sup_norm"] <= 1e-10
    # moment equations hold at the optimum
    assert np.abs(rep.diagnostics["moment_residuals"]).max() <= 1e-9


def test_zero_surplus_recovery_one_by_one():
    sample = exact_sample([0.0], ONES_1x1, Margins([1.0], [1.0]))
    assert fit_moment_matching(sample, ONES_1x1).lam[0] == pytest.approx(0.0, abs=1e-9)


def test_saturated_model_reproduces_singles(rng):
    counts = MatchingPatterns(rng.integers(5, 50, (2, 3)).astype(float),
                              rng.integers(5, 50, 2).astype(float), rng.integers(5, 50, 3).astype(float))
    sample = SampleCounts(counts)
    rep = fit_moment_matching(sample, BasisSystem.saturated(2, 3))
    pi = sample.frequencies
    np.testing.assert_allclose(np.exp(-rep.alpha_hat.u), pi.mu_x0, rtol=1e-8)
    np.testing.assert_allclose(np.exp(-rep.alpha_hat.v), pi.mu_0y, rtol=1e-8)
    np.testing.assert_allclose(rep.mu_fit.as_vector(), counts.as_vector(), rtol=1e-7)


def test_hybrid_agrees_with_gradient(rng):
    basis = random_basis(rng, 2, 3, 4)
    margins = Margins(rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 4))
    sample = exact_sample([0.5, 0.3], basis, margins)
    a = fit_moment_matching(sample, basis)
    b = fit_hybrid_sista(sample, basis, FitOptions(algorithm="coordinate-hybrid"))
    np.testing.assert_allclose(a.lam, b.lam, atol=1e-5)
    c = fit(sample, basis, FitOptions(algorithm="coordinate-hybrid"))
    np.testing.assert_array_equal(b.lam, c.lam)


def test_hybrid_with_frozen_lambda_is_ipfp(rng):
    basis = random_basis(rng, 2, 3, 3)
    margins = Margins(rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3))
    sample = exact_sample([0.5, -0.5], basis, margins)
    lam = np.array([0.1, 0.2])
    init = ParameterVector(lam, np.zeros(3), -np.log(sample.frequencies.mu_0y))
    rep = fit_hybrid_sista(sample, basis,
                           FitOptions(algorithm="coordinate-hybrid", step_size=0.0, tol=1e-13,
                                      with_covariance=False), init=init)
    np.testing.assert_array_equal(rep.lam, lam)
    ref = solve_ipfp(basis.surplus(lam), sample.frequencies.margins(), SolverOptions(tol=1e-13))
    np.testing.assert_allclose(rep.alpha_hat.u, ref.u, atol=1e-10)
    np.testing.assert_allclose(rep.alpha_hat.v, ref.v, atol=1e-10)


def test_hybrid_first_sweep_solves_its_quadratic(rng):
    basis = random_basis(rng, 1, 2, 2)
    sample = exact_sample([0.7], basis, Margins([1.0, 1.5], [0.8, 1.2]))
    pi = sample.frequencies
    with pytest.raises(ConvergenceError) as info:
        fit_hybrid_sista(sample, basis, FitOptions(algorithm="coordinate-hybrid", max_iter=1,
                                                   with_covariance=False))
    a = np.exp(-info.value.result.alpha_hat.u / 2)
    b0 = np.sqrt(pi.mu_0y)  # initial b, with S = 1 at lambda = 0
    np.testing.assert_allclose(a * a + a * b0.sum(), pi.N_x, atol=1e-12)


def test_zero_cell_requires_pseudo_count():
    counts = MatchingPatterns([[5.0, 0.0], [3.0, 4.0]], [2.0, 2.0], [1.0, 3.0])
    sample = SampleCounts(counts)
    basis = BasisSystem.saturated(2, 2)
    with pytest.raises(ZeroCellError) as info:
        fit_moment_matching(sample, basis)
    assert info.value.cells == [(1, 2)]
    rep = fit_moment_matching(sample, basis, FitOptions(pseudo_count=0.5))
    assert rep.diagnostics["pseudo_count"] == 0.5
    # a basis that ignores the empty cell does not need it
    partial = BasisSystem(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    fit_moment_matching(sample, partial)


def test_fit_options_validation():
    with pytest.raises(ValueError):
        FitOptions(algorithm="newton")
    with pytest.raises(ValueError):
        FitOptions(tol=0)


def test_moment_matching_non_convergence_keeps_report(rng):
    basis = random_basis(rng, 2, 3, 3)
    sample = exact_sample([0.5, 0.5], basis, Margins(np.ones(3), np.ones(3)))
    with pytest.raises(ConvergenceError) as info:
        fit_moment_matching(sample, basis, FitOptions(max_iter=2))
    assert info.value.result.iterations == 2


# ---------------------------------------------------------------- covariance

def test_hessian_block_example():
    pi = MatchingPatterns([[0.5]], [0.25], [0.25])
    # lambda = log(mu^2 / (mu_x0 mu_0y)) = log 4 makes the implied patterns equal pi
    alpha = ParameterVector([math.log(4.0)], -np.log(pi.mu_x0), -np.log(pi.mu_0y))
    H = hessian_F(alpha, ONES_1x1)
    # u-block: half the couples plus the singles, 0.5 / 2 + 0.25
    assert H[1, 1] == pytest.approx(0.5, abs=1e-15)
    assert H[0, 0] == pytest.approx(0.25, abs=1e-15)


def test_covariance_symmetric_psd(rng):
    basis = random_basis(rng, 2, 3, 3)
    margins = Margins(rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3))
    pi = equilibrium_frequencies(basis.surplus([0.4, -0.2]), margins)
    sample = sample_from_frequencies(pi, 20_000, seed=3)
    rep = fit_moment_matching(sample, basis)
    V = rep.covariance
    np.testing.assert_allclose(V, V.T, atol=0)
    assert np.linalg.eigvalsh(V).min() >= -1e-8 * np.abs(V).max()
    np.testing.assert_allclose(rep.std_errors, np.sqrt(np.diag(V) / 20_000), rtol=1e-12)
    assert V.shape == (2 + 3 + 3,) * 2


def test_multinomial_covariance_rows_sum_to_zero(rng):
    V = multinomial_covariance(random_pi(rng, 2, 3))
    np.testing.assert_allclose(V.sum(axis=1), 0.0, atol=1e-15)


def test_singular_hessian_detected():
    pi = MatchingPatterns([[1e-30]], [0.5], [0.5])
    alpha = ParameterVector([0.0], [0.0], [0.0])
    sample = SampleCounts.from_frequencies(pi, 100)
    basis = BasisSystem(np.ones((1, 1, 1)))
    with pytest.raises(SingularHessianError):
        asymptotic_covariance(ParameterVector([-200.0], [0.0], [0.0]), sample, basis)


# ---------------------------------------------------------------- likelihood

def test_log_likelihood_examples():
    sample = SampleCounts(MatchingPatterns([[1.0]], [1.0], [1.0]))
    assert log_likelihood([0.0], sample, ONES_1x1) == pytest.approx(3 * math.log(1 / 3), abs=1e-12)
    lonely = SampleCounts(MatchingPatterns([[0.0]], [5.0], [0.0]))
    ll = log_likelihood([0.0], lonely, ONES_1x1, margins=Margins([1.0], [1.0]))
    assert ll == pytest.approx(5 * math.log(1 / 3), abs=1e-12)


def test_log_likelihood_saturated_bound(rng):
    counts = MatchingPatterns(rng.integers(5, 50, (2, 2)).astype(float),
                              rng.integers(5, 50, 2).astype(float), rng.integers(5, 50, 2).astype(float))
    sample = SampleCounts(counts)
    basis = BasisSystem.saturated(2, 2)
    rep = fit_moment_matching(sample, basis)
    ll = log_likelihood(rep.lam, sample, basis)
    assert ll == pytest.approx(saturated_log_likelihood(sample), abs=1e-8)
    assert log_likelihood(rep.lam + 0.1, sample, basis) < ll


def test_mle_recovers_exact_lambda_k1(rng):
    basis = random_basis(rng, 1, 3, 3)
    sample = exact_sample([0.6], basis, Margins(rng.uniform(0.5, 2, 3), rng.uniform(0.5, 2, 3)))
    rep = fit_mle(sample, basis, FitOptions(algorithm="mle", n_starts=3))
    assert rep.lam[0] == pytest.approx(0.6, abs=1e-4)
    assert rep.diagnostics["score_sup_norm"] <= 1e-6
    assert rep.covariance is None


def test_mle_matches_moment_matching_on_saturated_basis(rng):
    basis = BasisSystem.saturated(2, 2)
    pi = equilibrium_frequencies(rng.normal(size=(2, 2)), Margins([1.0, 1.2], [0.9, 1.1]))
    sample = sample_from_frequencies(pi, 100_000, seed=11)
    mle = fit(sample, basis, FitOptions(algorithm="mle", n_starts=2))
    mm = fit(sample, basis)
    np.testing.assert_allclose(mle.lam, mm.lam, atol=1e-4)
    assert mle.diagnostics["n_local_optima"] >= 1


# ---------------------------------------------------------------- max score

def test_double_difference_examples():
    assert double_difference(np.full((3, 3), 2.0), 0, 1, 0, 2) == 0.0
    phi = np.outer([1.0, 2.0], [1.0, 2.0])  # x*y on {1,2}^2
    assert double_difference(phi, 0, 1, 0, 1) == 1.0
    additive = np.add.outer([0.3, -1.0, 2.0], [1.0, 4.0])
    for q in QuadrupleSet.all(3, 2).items:
        assert double_difference(additive, *q) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(IndexError):
        double_difference(phi, 0, 2, 0, 1)


def test_quadruple_validation():
    with pytest.raises(MatchingError):
        QuadrupleSet(((0, 0, 0, 1),))
    assert len(QuadrupleSet.all(4, 4)) == 36


def test_max_score_errors(rng):
    basis = random_basis(rng, 1, 2, 2)
    sample = exact_sample([1.0], basis, Margins([1.0, 1.0], [1.0, 1.0]))
    with pytest.raises(MatchingError):
        max_score_fit(sample, basis, QuadrupleSet(()))
    wide = random_basis(rng, 5, 3, 3)
    with pytest.raises(MatchingError):
        max_score_fit(exact_sample(np.ones(5) * 0.1, wide, Margins(np.ones(3), np.ones(3))), wide,
                      QuadrupleSet.all(3, 3))


@pytest.mark.parametrize("lam0", [0.8, -0.5])
def test_max_score_sign_k1(rng, lam0):
    basis = random_basis(rng, 1, 3, 3)
    sample = exact_sample([lam0], basis, Margins(np.ones(3), np.ones(3)))
    rep = max_score_fit(sample, basis, QuadrupleSet.all(3, 3))
    assert np.sign(rep.lam[0]) == np.sign(lam0)


def test_max_score_attains_full_score_on_exact_data(rng):
    basis = random_basis(rng, 3, 4, 4)
    lam0 = np.array([0.5, -1.0, 0.3])
    sample = exact_sample(lam0, basis, Margins(np.ones(4), np.ones(4)))
    quads = QuadrupleSet.all(4, 4)
    rep = max_score_fit(sample, basis, quads)
    d, _ = oriented_differences(sample, basis, quads)
    assert score(lam0, d) == len(d) == rep.diagnostics["score"]
    assert score(rep.lam, d) == rep.diagnostics["score"]
    assert np.linalg.norm(rep.lam) == pytest.approx(1.0)
    # the score only sees directions
    assert score(7.5 * rep.lam, d) == score(rep.lam, d)


def test_sphere_grid_is_unit_and_deterministic():
    for K in (1, 2, 3, 4):
        g = sphere_grid(K, budget=1000)
        np.testing.assert_allclose(np.linalg.norm(g, axis=1), 1.0, rtol=1e-12)
        np.testing.assert_array_equal(g, sphere_grid(K, budget=1000))
    g4 = sphere_grid(4, budget=20000)
    assert np.abs(g4.mean(axis=0)).max() < 0.05  # roughly balanced over the sphere
