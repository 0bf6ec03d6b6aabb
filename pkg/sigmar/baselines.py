"""Comparator estimators, each producing a linear one-step forecaster.

No intercepts anywhere: panels are demeaned during preprocessing.
"""
import dataclasses
import logging
from typing import List

import numpy as np
import scipy.linalg

from sigmar import amabc
from sigmar import kronlin
from sigmar import model
from sigmar import projection
from sigmar.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)

RIDGE_FACTOR = 1e-4
MAR_MAX_ITER = 200
MAR_TOL = 1e-8


@dataclasses.dataclass
class LinearForecaster:
    """vec(X_{t+1|t}) = transition vec(X_t).

    Attributes:
        kind (str): Estimator name.
        transition (np.ndarray): kn x kn reduced-form matrix.
        components (dict): Estimator-specific coefficient blocks.
        warnings (list): Messages about recoverable anomalies during the fit.
    """
    kind: str
    transition: np.ndarray
    components: dict = dataclasses.field(default_factory=dict)
    warnings: List[str] = dataclasses.field(default_factory=list)

    def predict(self, X):
        return model.forecast_with(self.transition, X)

    def to_dict(self):
        def plain(value):
            if isinstance(value, np.ndarray):
                return value.tolist()
            if isinstance(value, (list, tuple)):
                return [plain(v) for v in value]
            return value
        return {
            "kind": self.kind,
            "transition": self.transition.tolist(),
            "components": {name: plain(value) for name, value in self.components.items()},
            "warnings": list(self.warnings),
        }


def _warn(forecaster_warnings, message):
    logger.warning(message)
    forecaster_warnings.append(message)


def _country_name(data, i):
    return data.countries[i] if data.countries is not None else f"country {i}"


def _ols(target, regressors, what):
    """Coefficient matrix F minimizing sum ||y_t - F z_t||^2 (rows are t)."""
    gram = regressors.T @ regressors
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > amabc.MAX_CONDITION:
        raise NumericalError(f"{what} is singular", condition=condition)
    return scipy.linalg.solve(gram, regressors.T @ target, assume_a="pos").T


def fit_iar(data):
    """Univariate AR(1) for every (variable, country) series."""
    data.require_length(3)
    Y = data.vecs()
    current, lagged = Y[1:], Y[:-1]
    num = np.sum(current * lagged, axis=0)
    den = np.sum(lagged ** 2, axis=0)
    notes = []
    coef = np.zeros(Y.shape[1])
    for i in range(Y.shape[1]):
        if den[i] == 0:
            _warn(notes, f"series {i} has zero variance; AR coefficient set to 0")
        else:
            coef[i] = num[i] / den[i]
    return LinearForecaster("iar", np.diag(coef), {"coefficients": coef}, notes)


def _country_blocks(data):
    """Lists of (current, lagged) arrays of shape (m, k), one per country."""
    X = data.frames
    return [(X[1:, :, i], X[:-1, :, i]) for i in range(data.n)]


def fit_ivar(data):
    """Separate k-variable VAR(1) per country; block-diagonal transition."""
    data.require_length(data.k + 2)
    k, n = data.k, data.n
    transition = np.zeros((k * n, k * n))
    blocks = []
    for i, (current, lagged) in enumerate(_country_blocks(data)):
        Phi_i = _ols(current, lagged, f"Gram matrix of {_country_name(data, i)}")
        transition[i * k:(i + 1) * k, i * k:(i + 1) * k] = Phi_i
        blocks.append(Phi_i)
    return LinearForecaster("ivar", transition, {"blocks": blocks})


def star_variables(data, W):
    """Frames X_t W^T; column i holds the network average seen by country i."""
    Wm = W.W if isinstance(W, model.WeightMatrix) else np.asarray(W, dtype=float)
    return data.frames @ Wm.T


def fit_ivarx(data, W):
    """Country VARX*(1,0) models joined into one forecaster.

    Each country regresses x_{t,i} on [x_{t-1,i}; x*_{t,i}] treating the star
    variables as exogenous. The joint forecaster solves
    (I - diag(Psi_i)(W kron I_k)) vec(X_t) = diag(Phi_i) vec(X_{t-1}).
    """
    data.require_length(2 * data.k + 2)
    k, n = data.k, data.n
    Wm = W.W if isinstance(W, model.WeightMatrix) else np.asarray(W, dtype=float)
    stars = star_variables(data, Wm)
    Phi_diag = np.zeros((k * n, k * n))
    Psi_diag = np.zeros((k * n, k * n))
    phis, psis = [], []
    for i in range(n):
        current = data.frames[1:, :, i]
        regressors = np.hstack([data.frames[:-1, :, i], stars[1:, :, i]])
        coef = _ols(current, regressors, f"VARX Gram matrix of {_country_name(data, i)}")
        Phi_i, Psi_i = coef[:, :k], coef[:, k:]
        Phi_diag[i * k:(i + 1) * k, i * k:(i + 1) * k] = Phi_i
        Psi_diag[i * k:(i + 1) * k, i * k:(i + 1) * k] = Psi_i
        phis.append(Phi_i)
        psis.append(Psi_i)
    joint = np.eye(k * n) - Psi_diag @ np.kron(Wm, np.eye(k))
    condition = np.linalg.cond(joint)
    if not np.isfinite(condition) or condition > amabc.MAX_CONDITION:
        raise NumericalError("joint VARX matrix I - diag(Psi)(W kron I) is singular",
                             condition=condition)
    transition = scipy.linalg.solve(joint, Phi_diag)
    return LinearForecaster("ivarx", transition, {"Phi": phis, "Psi": psis})


def fit_svar(data, ridge_fallback=True):
    """Unrestricted VAR(1) on vec(X_t).

    When T - 1 <= kn or the lagged Gram matrix is singular, a ridge penalty
    of RIDGE_FACTOR * trace(Gram) / kn is added (with a warning) unless
    ``ridge_fallback`` is off.
    """
    data.require_length(2)
    Y = data.vecs()
    current, lagged = Y[1:], Y[:-1]
    kn = Y.shape[1]
    gram = lagged.T @ lagged
    notes = []
    condition = np.linalg.cond(gram)
    if lagged.shape[0] <= kn or not np.isfinite(condition) or condition > amabc.MAX_CONDITION:
        if not ridge_fallback:
            raise NumericalError("stacked VAR design is rank deficient", condition=condition)
        penalty = RIDGE_FACTOR * np.trace(gram) / kn
        if penalty == 0:
            penalty = RIDGE_FACTOR
        _warn(notes, f"stacked VAR uses ridge fallback with penalty {penalty:.3e} "
                     f"({lagged.shape[0]} observations for {kn} regressors)")
        gram = gram + penalty * np.eye(kn)
    transition = scipy.linalg.solve(gram, lagged.T @ current, assume_a="pos").T
    return LinearForecaster("svar", transition, {}, notes)


def mar_objective(data, A, B):
    X = data.frames
    return float(np.sum((X[1:] - A @ X[:-1] @ B.T) ** 2))


def fit_mar(data, max_iter=MAR_MAX_ITER, tol=MAR_TOL):
    """Matrix AR(1) X_t = A X_{t-1} B^T + E_t by alternating least squares.

    Starts from the nearest Kronecker product of the stacked VAR estimate and
    alternates the closed-form A and B updates until kron(B, A) changes by
    less than ``tol`` relatively.
    """
    data.require_length(3)
    k, n = data.k, data.n
    svar = fit_svar(data)
    L = kronlin.rearrange(svar.transition, kronlin.BlockShape(n, n, k, k))
    A, B = projection.extract_ab(L, k, n)
    current, lagged = data.frames[1:], data.frames[:-1]
    previous = np.kron(B, A)
    iteration = 0
    for iteration in range(1, max_iter + 1):
        A = amabc.ols_a(current, lagged, B)
        B = amabc.ols_b(current, lagged, A)
        A, B = model.normalize_ab(A, B)
        kr = np.kron(B, A)
        change = np.linalg.norm(kr - previous) / max(np.linalg.norm(previous), np.finfo(float).tiny)
        previous = kr
        if change < tol:
            break
    logger.debug(f"MAR alternating least squares stopped after {iteration} iterations")
    return LinearForecaster("mar", np.kron(B, A), {"A": A, "B": B, "iterations": iteration},
                            list(svar.warnings))


def sigmar_forecaster(kind, params, W, Phi=None):
    """Forecaster of a fitted SIGMAR model.

    ``Phi`` overrides B kron A + S (QMLE keeps its unstructured Phi).
    """
    Phi = model.phi_of(params) if Phi is None else Phi
    Pi, _ = model.transition_from(params.C, Phi, W)
    components = {"A": params.A, "B": params.B, "C": params.C, "S": params.S,
                  "sigma2": params.sigma2}
    return LinearForecaster(kind, Pi, components)


def oracle_forecaster(params, W):
    """Forecaster using known parameters."""
    return LinearForecaster("oracle", model.reduced_form(params, W).Pi)


def check_dimensions(forecaster, data):
    kn = data.k * data.n
    if forecaster.transition.shape != (kn, kn):
        raise DimensionError(
            f"{forecaster.kind} transition has shape {forecaster.transition.shape}, expected {(kn, kn)}")
