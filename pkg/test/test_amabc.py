import logging

import pytest
import numpy as np
import os
import sys

# Add parent directory to Python path
parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)

from sigmar import amabc
from sigmar import evaluate
from sigmar import kronlin
from sigmar import model
from sigmar import simulate
from sigmar.errors import DomainError, NumericalError, ValidationError


@pytest.fixture(scope="module")
def truth():
    W = simulate.gen_weight(3, seed=17)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=2, n=3, s=4, seed=17), W)
    return params, W


@pytest.fixture(scope="module")
def noisy(truth):
    params, W = truth
    return simulate.simulate_series(params, W, T=300, seed=17)


def noiseless_series(params, W, T, rng):
    """Deterministic path X_t = unvec(Pi vec(X_{t-1})) from a random X_0."""
    Pi = model.reduced_form(params, W).Pi
    Y = np.empty((T, Pi.shape[0]))
    Y[0] = rng.standard_normal(Pi.shape[0])
    for t in range(1, T):
        Y[t] = Pi @ Y[t - 1]
    return model.PanelSeries.from_vecs(Y, params.k, params.n)


def reduced_residuals(data, params, W):
    Pi = model.reduced_form(params, W).Pi
    Y = data.vecs()
    return model.PanelSeries.from_vecs(Y[1:] - Y[:-1] @ Pi.T, params.k, params.n).frames


def test_ama_config_validation():
    assert amabc.AmaConfig(lambda_grid=[3, 2, 1]).lambda_grid == [3.0, 2.0, 1.0]
    with pytest.raises(ValidationError):
        amabc.AmaConfig(lambda_grid=[1, 2])
    with pytest.raises(ValidationError):
        amabc.AmaConfig(lambda_grid=[])
    with pytest.raises(ValidationError):
        amabc.AmaConfig(J=0)


def test_update_c_lse_noiseless(truth, rng):
    params, W = truth
    data = noiseless_series(params, W, 15, rng)
    C = amabc.update_c_lse(data, W, model.phi_of(params))
    np.testing.assert_allclose(C, params.C, atol=1e-10)


def test_update_a_and_b_noiseless(truth, rng):
    params, W = truth
    data = noiseless_series(params, W, 15, rng)
    A = amabc.update_a(data, W, params.C, params.B, params.S)
    np.testing.assert_allclose(np.kron(params.B, A), np.kron(params.B, params.A), atol=1e-8)
    B = amabc.update_b(data, W, params.C, params.A, params.S)
    np.testing.assert_allclose(np.kron(B, params.A), np.kron(params.B, params.A), atol=1e-8)


def test_update_a_reduces_to_stacked_regression(noisy):
    k, n = noisy.k, noisy.n
    A = amabc.update_a(noisy, simulate.gen_weight(n, 0), np.zeros((k, k)), np.eye(n),
                       np.zeros((k * n, k * n)))
    X_lag = np.hstack(noisy.frames[:-1])
    X = np.hstack(noisy.frames[1:])
    expected = np.linalg.lstsq(X_lag.T, X.T, rcond=None)[0].T
    np.testing.assert_allclose(A, expected, atol=1e-10)


def test_update_a_singular_gram():
    data = model.PanelSeries(np.zeros((10, 2, 3)))
    W = simulate.gen_weight(3, 0)
    with pytest.raises(NumericalError):
        amabc.update_a(data, W, np.zeros((2, 2)), np.eye(3), np.zeros((6, 6)))


def test_residual_moments_vanish_without_noise(truth, rng):
    params, W = truth
    data = noiseless_series(params, W, 15, rng)
    moments = amabc.residual_moments(data, W, params)
    np.testing.assert_allclose(moments.SigW, 0.0, atol=1e-20)
    np.testing.assert_allclose(moments.SigW2, 0.0, atol=1e-20)
    assert np.all(np.linalg.eigvalsh(moments.GammaW) > 0)


def test_residual_moments_match_explicit_kronecker(truth, noisy):
    params, W = truth
    moments = amabc.residual_moments(noisy, W, params)
    E = reduced_residuals(noisy, params, W)
    m = E.shape[0]
    sig = sum(np.kron(Et, Et) for Et in E) / m
    np.testing.assert_allclose(kronlin.vec(moments.SigW), sig @ kronlin.vec(W.W), atol=1e-10)
    np.testing.assert_allclose(kronlin.vec(moments.SigW2), sig @ kronlin.vec(W.W.T @ W.W), atol=1e-10)
    # frame-level identity behind the matrix-free sums
    Et = E[0]
    np.testing.assert_allclose(np.kron(Et, Et) @ kronlin.vec(W.W), kronlin.vec(Et @ W.W @ Et.T),
                               atol=1e-12)


def test_residual_moments_identity_network(truth, noisy):
    params, _ = truth
    eye = model.WeightMatrix(np.eye(3))
    moments = amabc.residual_moments(noisy, eye, params.replace(C=np.zeros((2, 2))))
    E = reduced_residuals(noisy, params.replace(C=np.zeros((2, 2))), eye)
    expected = np.einsum("tab,tcb->ac", E, E) / E.shape[0]
    np.testing.assert_allclose(moments.SigW, expected, atol=1e-12)
    np.testing.assert_allclose(moments.SigW2, expected, atol=1e-12)


def test_bias_correct_c_scalar():
    moments = amabc.ResidualMoments(GammaW=np.array([[2.0]]), SigW=np.array([[0.3]]),
                                    SigW2=np.array([[0.5]]))
    C = amabc.bias_correct_c(np.array([[0.7]]), moments)
    assert C[0, 0] == pytest.approx(1.1 / 1.5, rel=1e-12)


def test_bias_correct_c_without_residual_moments(rng):
    M = rng.standard_normal((3, 3))
    moments = amabc.ResidualMoments(GammaW=M @ M.T + np.eye(3), SigW=np.zeros((3, 3)),
                                    SigW2=np.zeros((3, 3)))
    C = rng.standard_normal((3, 3))
    np.testing.assert_allclose(amabc.bias_correct_c(C, moments), C, atol=1e-12)


def test_least_squares_c_is_biased_and_correction_fixes_it():
    W = simulate.gen_weight(4, seed=2)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=3, n=4, s=10, seed=2), W)
    Phi = model.phi_of(params)
    wins = 0
    for rep in range(50):
        data = simulate.simulate_series(params, W, T=2000, seed=(2, rep))
        C_lse = amabc.update_c_lse(data, W, Phi)
        C_bc = amabc.bias_correct_c(C_lse, amabc.residual_moments(data, W, params))
        wins += np.linalg.norm(C_lse - params.C) > np.linalg.norm(C_bc - params.C)
    assert wins >= 40


def test_least_squares_c_without_network_effect():
    W = simulate.gen_weight(3, seed=5)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=2, n=3, s=2, seed=5), W)
    params = params.replace(C=np.zeros((2, 2)))
    data = simulate.simulate_series(params, W, T=5000, seed=5)
    C_lse = amabc.update_c_lse(data, W, model.phi_of(params))
    moments = amabc.residual_moments(data, W, params)
    np.testing.assert_allclose(C_lse, moments.SigW @ np.linalg.inv(moments.GammaW), atol=0.05)


def _lasso_inputs(data, W, params):
    Y, Xl = amabc._lasso_problem(data, W, params.C, params.A, params.B)
    return Y, Xl, Xl.T @ Xl, Y.T @ Xl


def test_lasso_null_threshold(truth, noisy):
    params, W = truth
    _, _, _, cross = _lasso_inputs(noisy, W, params)
    top = amabc.lambda_max(cross)
    S = amabc.update_s_lasso(noisy, W, params.C, params.A, params.B, top)
    np.testing.assert_array_equal(S, np.zeros((6, 6)))
    S = amabc.update_s_lasso(noisy, W, params.C, params.A, params.B, 0.9 * top)
    assert np.count_nonzero(S) >= 1


def test_lasso_without_penalty_is_least_squares(truth, noisy):
    params, W = truth
    Y, Xl, _, _ = _lasso_inputs(noisy, W, params)
    S = amabc.update_s_lasso(noisy, W, params.C, params.A, params.B, 0.0)
    expected = np.linalg.lstsq(Xl, Y, rcond=None)[0].T
    np.testing.assert_allclose(S, expected, atol=1e-6)


@pytest.mark.parametrize("fraction", [0.5, 0.1, 0.01])
def test_lasso_kkt_conditions(truth, noisy, fraction):
    params, W = truth
    _, _, gram, cross = _lasso_inputs(noisy, W, params)
    lam = fraction * amabc.lambda_max(cross)
    S, _, violation = amabc.lasso_cd(gram, cross, lam)
    assert violation <= 1e-8
    assert amabc.kkt_violation(gram, cross, S, lam) <= 1e-8


def test_bic_single_element_grid(truth, noisy):
    params, W = truth
    lam = amabc.bic_select_lambda(noisy, W, params.C, params.A, params.B, grid=[3.5])
    assert lam == 3.5
    with pytest.raises(ValidationError):
        amabc.bic_select_lambda(noisy, W, params.C, params.A, params.B, grid=[])


def test_lasso_path_bic_formula(truth, noisy):
    params, W = truth
    fits = amabc.lasso_path(noisy, W, params.C, params.A, params.B)
    assert len(fits) == 20
    assert fits[0].df == 0
    N = 6 * (noisy.T - 1)
    for fit in fits:
        assert fit.bic == pytest.approx(N * np.log(fit.rss / N) + fit.df * np.log(N))
    assert [f.lam for f in fits] == sorted([f.lam for f in fits], reverse=True)


def test_bic_finds_strong_planted_entries(rng):
    k, n = 2, 3
    S0 = np.zeros((6, 6))
    S0[0, 1], S0[2, 3], S0[4, 5] = 1.0, -1.0, 1.0
    W = simulate.gen_weight(n, 1)
    zero_ab = model.SigmarParams(np.zeros((k, k)), np.zeros((n, n)), np.zeros((k, k)), S0)
    data = simulate.simulate_series(zero_ab, W, T=500, seed=3)
    fits = amabc.lasso_path(data, W, zero_ab.C, zero_ab.A, zero_ab.B)
    best = min(fits, key=lambda f: f.bic)
    found = best.S != 0
    assert np.all(found[S0 != 0])
    assert np.count_nonzero(found & (S0 == 0)) <= 10


def test_substeps_do_not_increase_objective(truth, noisy):
    params, W = truth
    start = amabc.default_start(2, 3, seed=1).replace(C=params.C)
    lam = 0.05 * amabc.lambda_max(_lasso_inputs(noisy, W, start)[3])
    before = amabc.surrogate_objective(noisy, W, start, lam)
    A = amabc.update_a(noisy, W, start.C, start.B, start.S)
    after_a = amabc.surrogate_objective(noisy, W, start.replace(A=A), lam)
    B = amabc.update_b(noisy, W, start.C, A, start.S)
    after_b = amabc.surrogate_objective(noisy, W, start.replace(A=A, B=B), lam)
    A, B = model.normalize_ab(A, B)
    normalized = amabc.surrogate_objective(noisy, W, start.replace(A=A, B=B), lam)
    S = amabc.update_s_lasso(noisy, W, start.C, A, B, lam)
    after_s = amabc.surrogate_objective(noisy, W, start.replace(A=A, B=B, S=S), lam)
    assert after_a <= before * (1 + 1e-12)
    assert after_b <= after_a * (1 + 1e-12)
    assert normalized == pytest.approx(after_b, rel=1e-10)
    assert after_s <= normalized * (1 + 1e-10)


def test_fit_amabc_is_deterministic(truth, noisy):
    _, W = truth
    a = amabc.fit_amabc(noisy, W)
    b = amabc.fit_amabc(noisy, W)
    np.testing.assert_array_equal(a.params.C, b.params.C)
    np.testing.assert_array_equal(a.params.S, b.params.S)
    assert a.iterations == len(a.trace)
    assert a.params.sigma2 > 0
    assert np.linalg.norm(a.params.A) == pytest.approx(1.0)


def test_fit_amabc_fixed_blocks(truth, noisy):
    _, W = truth
    fit = amabc.fit_amabc(noisy, W, cfg=amabc.AmaConfig(fit_c=False, fit_s=False))
    np.testing.assert_array_equal(fit.params.C, np.zeros((2, 2)))
    np.testing.assert_array_equal(fit.params.S, np.zeros((6, 6)))
    assert fit.lam == 0.0


def test_fit_amabc_null_model():
    W = simulate.gen_weight(3, seed=9)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=2, n=3, s=0, seed=9), W)
    params = params.replace(C=np.zeros((2, 2)))
    data = simulate.simulate_series(params, W, T=2000, seed=9)
    fit = amabc.fit_amabc(data, W)
    assert np.linalg.norm(fit.params.C) < 0.1
    assert np.linalg.norm(fit.params.S) < 0.2


@pytest.mark.slow
def test_bias_correction_improves_transition_error():
    W = simulate.gen_weight(10, seed=3)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=5, n=10, s=50, seed=3), W)
    Pi = model.reduced_form(params, W).Pi
    errors = {True: [], False: []}
    for rep in range(5):
        data = simulate.simulate_series(params, W, T=2000, seed=(3, rep))
        for corrected in (True, False):
            fit = amabc.fit_amabc(data, W, cfg=amabc.AmaConfig(bias_correction=corrected))
            Pi_hat = model.reduced_form(fit.params, W).Pi
            errors[corrected].append(evaluate.relative_error(Pi_hat, Pi))
    assert np.mean(errors[True]) < np.mean(errors[False])


def test_bias_corrected_fit_starts_from_uncorrected(truth, noisy):
    _, W = truth
    naive = amabc.fit_amabc(noisy, W, cfg=amabc.AmaConfig(bias_correction=False))
    default = amabc.fit_amabc(noisy, W)
    started = amabc.fit_amabc(noisy, W, init=naive.params)
    np.testing.assert_array_equal(default.params.C, started.params.C)
    np.testing.assert_array_equal(default.params.S, started.params.S)


def test_bias_corrected_c_is_admissible_on_reference_cell():
    W = simulate.gen_weight(4, seed=0)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=3, n=4, s=10, seed=0), W)
    data = simulate.simulate_series(params, W, T=500, seed=0)
    fit = amabc.fit_amabc(data, W)
    assert np.isfinite(kronlin.logdet_I_minus_kron(W.eigvals, fit.params.C))
    assert np.all(np.isfinite(model.reduced_form(fit.params, W).Pi))


def test_inadmissible_correction_keeps_previous_c(truth, noisy, monkeypatch, caplog):
    _, W = truth
    naive = amabc.fit_amabc(noisy, W, cfg=amabc.AmaConfig(bias_correction=False))
    # lambda = 1 is an eigenvalue of W, so det(I - W kron diag(20, 0)) < 0
    monkeypatch.setattr(amabc, "bias_correct_c", lambda C_lse, moments: np.diag([20.0, 0.0]))
    with caplog.at_level(logging.WARNING, logger="sigmar.amabc"):
        fit = amabc.fit_amabc(noisy, W, init=naive.params, cfg=amabc.AmaConfig(J=2))
    np.testing.assert_array_equal(fit.params.C, naive.params.C)
    assert "keeping the previous C" in caplog.text


def test_domain_error_reports_iteration(truth, noisy, monkeypatch):
    _, W = truth
    naive = amabc.fit_amabc(noisy, W, cfg=amabc.AmaConfig(bias_correction=False))

    def failing_update(*args):
        raise DomainError("A update left the admissible set")

    monkeypatch.setattr(amabc, "update_a", failing_update)
    with pytest.raises(DomainError) as info:
        amabc.fit_amabc(noisy, W, init=naive.params)
    assert info.value.iteration == 1
    assert str(info.value).endswith("at iteration 1")


@pytest.mark.slow
def test_bic_false_positive_rate_without_sparse_part():
    W = simulate.gen_weight(4, seed=21)
    params = simulate.gen_coefficients(simulate.DgpSpec(k=3, n=4, s=0, seed=21), W)
    rates = []
    for rep in range(20):
        data = simulate.simulate_series(params, W, T=500, seed=(21, rep))
        fit = amabc.fit_amabc(data, W)
        rates.append(evaluate.support_metrics(fit.params.S, params.S).fpr)
    assert np.mean(rates) < 0.05
