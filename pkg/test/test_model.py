import pytest
import numpy as np
import os
import sys

# Add parent directory to Python path
parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)

from sigmar import kronlin
from sigmar import model
from sigmar import simulate
from sigmar.errors import DegenerateInputError, DimensionError, DomainError, ValidationError


@pytest.fixture
def weights():
    return simulate.gen_weight(4, seed=3)


@pytest.fixture
def params(weights):
    return simulate.gen_coefficients(simulate.DgpSpec(k=3, n=4, s=10, seed=3), weights)


def test_panel_series_vecs_round_trip(rng):
    frames = rng.standard_normal((5, 3, 4))
    series = model.PanelSeries(frames, variables=("a", "b", "c"))
    Y = series.vecs()
    np.testing.assert_array_equal(Y[2], kronlin.vec(frames[2]))
    back = model.PanelSeries.from_vecs(Y, 3, 4)
    np.testing.assert_array_equal(back.frames, frames)
    assert (series.T, series.k, series.n) == (5, 3, 4)
    assert series.window(1, 3).variables == ("a", "b", "c")


def test_panel_series_rejects_bad_input():
    with pytest.raises(DimensionError):
        model.PanelSeries(np.zeros((3, 2)))
    with pytest.raises(DomainError):
        model.PanelSeries(np.full((2, 1, 2), np.nan))
    with pytest.raises(DimensionError):
        model.PanelSeries(np.zeros((2, 1, 2)), countries=("x",))


def test_weight_matrix_checks():
    good = model.WeightMatrix([[0, 0.5, 0.5], [0.2, 0, 0.8], [0.7, 0.3, 0]])
    assert good.is_valid()
    np.testing.assert_allclose(np.sort_complex(good.eigvals),
                               np.sort_complex(np.linalg.eigvals(good.W)), atol=1e-12)
    assert not model.WeightMatrix(np.eye(3)).weight_checks()["zero_diagonal"]
    uniform = np.full((3, 3), 0.5)
    np.fill_diagonal(uniform, 0)
    assert not model.WeightMatrix(uniform).weight_checks()["wtw_diagonal_varies"]
    with pytest.raises(DomainError):
        model.WeightMatrix(uniform).require_valid()
    assert model.WeightMatrix([[0, 1], [1, 0]]).is_valid()
    with pytest.raises(DimensionError):
        model.WeightMatrix(np.zeros((2, 3)))


def test_sigmar_params_validation():
    with pytest.raises(DimensionError):
        model.SigmarParams(np.eye(2), np.eye(3), np.eye(2), np.zeros((5, 5)))
    with pytest.raises(DomainError):
        model.SigmarParams(np.eye(2), np.eye(3), np.eye(2), np.zeros((6, 6)), sigma2=0.0)


def test_phi_of(rng):
    k, n = 3, 2
    A, B = np.eye(k) / np.sqrt(k), np.eye(n)
    zero = np.zeros((k * n, k * n))
    p = model.SigmarParams(A, B, np.zeros((k, k)), zero)
    np.testing.assert_allclose(model.phi_of(p), np.eye(k * n) / np.sqrt(k))
    A, B, S = rng.standard_normal((k, k)), rng.standard_normal((n, n)), rng.standard_normal((k * n, k * n))
    p = model.SigmarParams(A, B, np.zeros((k, k)), S)
    expected = np.empty((k * n, k * n))
    for i in range(n):
        for j in range(n):
            expected[i * k:(i + 1) * k, j * k:(j + 1) * k] = B[i, j] * A
    np.testing.assert_allclose(model.phi_of(p), expected + S, rtol=1e-14)


def test_reduced_form_c_zero_is_phi(params, weights):
    p = params.replace(C=np.zeros((3, 3)))
    rf = model.reduced_form(p, weights)
    np.testing.assert_array_equal(rf.Pi, model.phi_of(p))


def test_reduced_form_scalar_case():
    p = model.SigmarParams([[0.5]], [[0.4]], [[0.3]], [[0.1]])
    rf = model.reduced_form(p, model.WeightMatrix([[0.0]]))
    np.testing.assert_allclose(rf.Pi, [[0.3]])


def test_reduced_form_matches_linear_solve(params, weights, rng):
    rf = model.reduced_form(params, weights)
    G = model.g_matrix(params.C, weights)
    np.testing.assert_allclose(rf.Ginv @ G, np.eye(12), atol=1e-10)
    x = rng.standard_normal(12)
    np.testing.assert_allclose(rf.Pi @ x, np.linalg.solve(G, model.phi_of(params) @ x), atol=1e-10)


def test_reduced_form_nonpositive_determinant():
    W = model.WeightMatrix([[0, 1], [1, 0]])
    p = model.SigmarParams([[1.0]], np.eye(2), [[2.0]], np.zeros((2, 2)))
    with pytest.raises(DomainError):
        model.reduced_form(p, W)


def test_check_admissible(params, weights):
    zero = model.SigmarParams.zeros(3, 4)
    report = model.check_admissible(zero, weights)
    assert report.admissible and report.spectral_radius == 0.0
    assert model.check_admissible(params, weights).admissible
    rf = model.reduced_form(params, weights)
    # scaling Phi scales Pi, so the radius can be pushed to 1.2
    factor = 1.2 / rf.spectral_radius
    scaled = params.replace(B=params.B * factor, S=params.S * factor)
    report = model.check_admissible(scaled, weights)
    assert report.det_positive and not report.stationary and not report.admissible
    assert report.spectral_radius == pytest.approx(1.2)


def test_check_admissible_gauge_invariant(params, weights):
    regauged = params.replace(A=params.A * 3.0, B=params.B / 3.0)
    a = model.check_admissible(params, weights)
    b = model.check_admissible(regauged, weights)
    assert a.admissible == b.admissible
    assert a.spectral_radius == pytest.approx(b.spectral_radius, rel=1e-10)


def test_normalize_ab(rng):
    A = np.array([[2.0, 0.0], [0.0, 0.0]])
    B = rng.standard_normal((3, 3))
    A2, B2 = model.normalize_ab(A, B)
    np.testing.assert_allclose(A2, A / 2)
    np.testing.assert_allclose(B2, 2 * B)
    A2, B2 = model.normalize_ab(-np.eye(2) / np.sqrt(2), B)
    np.testing.assert_allclose(A2, np.eye(2) / np.sqrt(2))
    np.testing.assert_allclose(B2, -B)
    for _ in range(20):
        A, B = rng.standard_normal((3, 3)), rng.standard_normal((4, 4))
        A2, B2 = model.normalize_ab(A, B)
        np.testing.assert_allclose(np.kron(B2, A2), np.kron(B, A), atol=1e-12)
        assert np.linalg.norm(A2) == pytest.approx(1.0)
        A3, B3 = model.normalize_ab(A2, B2)
        np.testing.assert_allclose(A3, A2, atol=1e-15)
        np.testing.assert_allclose(B3, B2, atol=1e-15)
    with pytest.raises(DegenerateInputError):
        model.normalize_ab(np.zeros((2, 2)), B)


def test_normalize_ab_sign_tie_follows_first_nonzero_diagonal(rng):
    B = rng.standard_normal((3, 3))
    A2, B2 = model.normalize_ab(np.diag([0.0, -3.0]), B)
    np.testing.assert_allclose(A2, np.diag([0.0, 1.0]))
    np.testing.assert_allclose(B2, -3.0 * B)
    A2, _ = model.normalize_ab(np.diag([-1.0, 2.0]), B)
    assert A2[0, 0] > 0 and A2[1, 1] < 0
    A2, _ = model.normalize_ab(np.diag([1.0, -2.0]), B)
    assert A2[0, 0] > 0 and A2[1, 1] < 0
    A2, B2 = model.normalize_ab(np.array([[0.0, 1.0], [1.0, 0.0]]), B)
    np.testing.assert_allclose(A2, np.array([[0.0, 1.0], [1.0, 0.0]]) / np.sqrt(2))
    np.testing.assert_allclose(B2, np.sqrt(2) * B)


def test_one_step_forecast(params, weights, rng):
    X = rng.standard_normal((3, 4))
    mar = params.replace(C=np.zeros((3, 3)), S=np.zeros((12, 12)))
    np.testing.assert_allclose(model.one_step_forecast(mar, weights, X),
                               mar.A @ X @ mar.B.T, atol=1e-12)
    np.testing.assert_array_equal(model.one_step_forecast(params, weights, np.zeros((3, 4))),
                                  np.zeros((3, 4)))
    G = model.g_matrix(params.C, weights)
    expected = np.linalg.solve(G, model.phi_of(params) @ kronlin.vec(X))
    np.testing.assert_allclose(kronlin.vec(model.one_step_forecast(params, weights, X)),
                               expected, atol=1e-10)


def test_one_step_forecast_contracts(params, weights, rng):
    X = rng.standard_normal((3, 4))
    norms = []
    for _ in range(50):
        X = model.one_step_forecast(params, weights, X)
        norms.append(np.linalg.norm(X))
    assert norms[-1] < 1e-3 * norms[0]


def test_one_step_forecast_inadmissible(params, weights):
    rf = model.reduced_form(params, weights)
    factor = 1.5 / rf.spectral_radius
    scaled = params.replace(B=params.B * factor, S=params.S * factor)
    with pytest.raises(DomainError):
        model.one_step_forecast(scaled, weights, np.ones((3, 4)))


def test_theta_flat_round_trip(params):
    theta = model.ThetaFlat.from_params(params)
    assert (theta.k, theta.n) == (3, 4)
    back = model.ThetaFlat.from_vector(theta.to_vector(), 3, 4)
    np.testing.assert_array_equal(back.Phi, model.phi_of(params))
    np.testing.assert_array_equal(back.C, params.C)
    with pytest.raises(DimensionError):
        model.ThetaFlat.from_vector(np.ones(5), 3, 4)


def test_params_json_round_trip(params, tmp_path):
    path = tmp_path / "params.json"
    model.save_params(params, path)
    loaded = model.load_params(path)
    for name in ("A", "B", "C", "S"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(params, name))
    assert loaded.sigma2 == params.sigma2
    with pytest.raises(ValidationError):
        model.params_from_dict({"k": 1})
