"""Estimation metrics, method dispatch and rolling one-step forecasting."""
import dataclasses
import logging
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from sigmar import amabc
from sigmar import baselines
from sigmar import data_loader
from sigmar import model
from sigmar import projection
from sigmar import qmle
from sigmar.projection import ProjectionResult
from sigmar.qmle import QmleOptions
from sigmar.errors import DimensionError, DomainError, NumericalError, SigmarError, ValidationError

logger = logging.getLogger(__name__)

SUPPORT_ZERO_TOL = 1e-8

SIGMAR_METHODS = ("qmle", "bc", "ama-naive", "gmar", "smar")
BASELINE_METHODS = ("iar", "ivar", "ivarx", "svar", "mar")
METHODS = SIGMAR_METHODS + BASELINE_METHODS


@dataclasses.dataclass
class SupportMetrics:
    """False and true positive rates; None when the denominator is zero."""
    fpr: Optional[float]
    tpr: Optional[float]


@dataclasses.dataclass
class ForecastEval:
    """Per-variable mean squared one-step forecast errors.

    ``se_per_variable`` is the standard deviation over test periods of the
    per-period squared error, divided by sqrt(t_test).
    """
    method: str
    window: int
    t_test: int
    msfe_per_variable: np.ndarray
    se_per_variable: np.ndarray
    n_failed: int = 0
    variables: Optional[Sequence[str]] = None

    @property
    def overall(self):
        return float(np.mean(self.msfe_per_variable))

    def labels(self):
        if self.variables is not None:
            return list(self.variables)
        return [f"var{i}" for i in range(len(self.msfe_per_variable))]

    def to_rows(self):
        return [{"method": self.method, "variable": name, "msfe": float(value), "se": float(se)}
                for name, value, se in zip(self.labels(), self.msfe_per_variable,
                                           self.se_per_variable)]

    def to_dict(self):
        return {
            "method": self.method,
            "window": self.window,
            "t_test": self.t_test,
            "n_failed": self.n_failed,
            "msfe": dict(zip(self.labels(), map(float, self.msfe_per_variable))),
            "se": dict(zip(self.labels(), map(float, self.se_per_variable))),
        }


def relative_error(est, truth):
    """||est - truth||_F / ||truth||_F."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionError(f"shapes {est.shape} and {truth.shape} differ")
    scale = np.linalg.norm(truth)
    if scale == 0:
        raise DomainError("relative error against a zero matrix is undefined")
    return float(np.linalg.norm(est - truth) / scale)


def support_metrics(S_hat, S_0, zero_tol=SUPPORT_ZERO_TOL):
    """FPR and TPR of the estimated support of S."""
    S_hat = np.asarray(S_hat)
    S_0 = np.asarray(S_0)
    if S_hat.shape != S_0.shape:
        raise DimensionError(f"shapes {S_hat.shape} and {S_0.shape} differ")
    est = np.abs(S_hat) > zero_tol
    true = np.abs(S_0) > zero_tol
    n_zero, n_nonzero = int(np.sum(~true)), int(np.sum(true))
    fpr = float(np.sum(est & ~true) / n_zero) if n_zero else None
    tpr = float(np.sum(est & true) / n_nonzero) if n_nonzero else None
    return SupportMetrics(fpr=fpr, tpr=tpr)


def _squared_errors(forecasts, actuals):
    """Array (T_test, k): mean over countries of squared errors per variable."""
    if len(forecasts) != len(actuals):
        raise DimensionError(f"{len(forecasts)} forecasts for {len(actuals)} actuals")
    if len(forecasts) == 0:
        raise DimensionError("no forecasts to score")
    F = np.asarray(forecasts, dtype=float)
    X = np.asarray(actuals, dtype=float)
    if F.shape != X.shape or F.ndim != 3:
        raise DimensionError(f"forecast shape {F.shape} does not match actuals {X.shape}")
    return np.mean((X - F) ** 2, axis=2)


def msfe(forecasts, actuals):
    """MSFE per variable: (1/T_test) sum_t (1/n) ||X_{t+1}[i] - Xhat_{t+1|t}[i]||^2."""
    return _squared_errors(forecasts, actuals).mean(axis=0)


def msfe_se(forecasts, actuals):
    errors = _squared_errors(forecasts, actuals)
    if errors.shape[0] < 2:
        return np.full(errors.shape[1], np.nan)
    return errors.std(axis=0, ddof=1) / np.sqrt(errors.shape[0])


@dataclasses.dataclass
class MethodOptions:
    qmle: QmleOptions = dataclasses.field(default_factory=QmleOptions)
    ama: amabc.AmaConfig = dataclasses.field(default_factory=amabc.AmaConfig)
    admm: projection.AdmmConfig = dataclasses.field(default_factory=projection.AdmmConfig)
    seed: int = 0


@dataclasses.dataclass
class SigmarFit:
    """A fitted SIGMAR-family model.

    ``Phi`` is the transition used for forecasting: B kron A + S for the
    alternating methods, the unstructured estimate for QMLE.
    """
    method: str
    params: model.SigmarParams
    Phi: np.ndarray
    report: object = None
    projection: Optional[ProjectionResult] = None

    def transition(self, W):
        return model.transition_from(self.params.C, self.Phi, W)[0]

    def forecaster(self, W):
        return baselines.sigmar_forecaster(self.method, self.params, W, self.Phi)


def _ama_config(method, base):
    changes = {
        "bc": {},
        "ama-naive": {"bias_correction": False},
        "gmar": {"fit_s": False},
        "smar": {"fit_c": False},
    }[method]
    return dataclasses.replace(base, **changes)


def fit_sigmar(method, data, W, options=None, init=None):
    """Fits one of the SIGMAR-family estimators.

    Args:
        method (str): One of SIGMAR_METHODS.
        data (PanelSeries): Panel.
        W (WeightMatrix): Network.
        options (MethodOptions): Estimator settings.
        init (SigmarParams): Optional warm start.

    Returns:
        SigmarFit: Parameters and the estimator's own report.
    """
    options = options or MethodOptions()
    if not isinstance(W, model.WeightMatrix):
        W = model.WeightMatrix(W)
    if method == "qmle":
        if init is None:
            naive = dataclasses.replace(options.ama, bias_correction=False)
            init = amabc.fit_amabc(data, W, cfg=naive, seed=options.seed).params
        report = qmle.fit_qmle(data, W, init=init, opts=options.qmle)
        proj = projection.project_phi(report.Phi, data.k, data.n, options.admm)
        params = model.SigmarParams(proj.A, proj.B, report.C, proj.S, report.sigma2)
        return SigmarFit(method, params, report.Phi, report, proj)
    if method not in SIGMAR_METHODS:
        raise ValidationError(f"unknown SIGMAR method {method!r}")
    fit = amabc.fit_amabc(data, W, init=init, cfg=_ama_config(method, options.ama),
                          seed=options.seed)
    return SigmarFit(method, fit.params, model.phi_of(fit.params), fit)


def fit_forecaster(method, data, W, options=None, init=None):
    """Fits ``method`` and returns (LinearForecaster, SigmarFit or None)."""
    if method in SIGMAR_METHODS:
        fit = fit_sigmar(method, data, W, options, init)
        return fit.forecaster(W), fit
    if method == "iar":
        return baselines.fit_iar(data), None
    if method == "ivar":
        return baselines.fit_ivar(data), None
    if method == "ivarx":
        return baselines.fit_ivarx(data, W), None
    if method == "svar":
        return baselines.fit_svar(data), None
    if method == "mar":
        return baselines.fit_mar(data), None
    raise ValidationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _weight_at(W_provider, t):
    return W_provider(t) if callable(W_provider) else W_provider


def rolling_forecast(series, W_provider, method, window, options=None, warm_start=False,
                     progress=False):
    """Rolling-window one-step-ahead evaluation.

    For every t from window-1 to T-2 the method is refit on frames
    [t-window+1, t] and X_{t+1} is forecast. Failed windows are logged,
    counted and excluded from the averages.

    Args:
        series (PanelSeries): Panel.
        W_provider: WeightMatrix, or a callable t -> WeightMatrix.
        method: Method name, or a callable (train, W) -> LinearForecaster.
        window (int): Estimation window length.
        options (MethodOptions): Estimator settings.
        warm_start (bool): Start SIGMAR fits from the previous window's estimate.
        progress (bool): Show a progress bar.

    Returns:
        ForecastEval: Scores over the successful windows.
    """
    if window < 2 or series.T < window + 1:
        raise DimensionError(f"series of length {series.T} too short for window {window}")
    loader = data_loader.get_window_loader(series, window)
    name = method if isinstance(method, str) else getattr(method, "__name__", "custom")
    forecasts, actuals = [], []
    failed = 0
    previous = None
    for t, train, actual in tqdm(loader, desc=f"rolling {name}", disable=not progress):
        W = _weight_at(W_provider, t)
        try:
            if callable(method):
                forecaster = method(train, W)
            else:
                init = previous if warm_start else None
                forecaster, fit = fit_forecaster(method, train, W, options, init)
                if fit is not None:
                    previous = fit.params
            baselines.check_dimensions(forecaster, series)
            forecasts.append(forecaster.predict(train.frames[-1]))
            actuals.append(actual)
        except (SigmarError, np.linalg.LinAlgError) as err:
            failed += 1
            logger.warning(f"{name}: window ending at t={t} failed: {err}")
    if not forecasts:
        raise NumericalError(f"{name}: every rolling window failed")
    return ForecastEval(method=name, window=window, t_test=len(forecasts),
                        msfe_per_variable=msfe(forecasts, actuals),
                        se_per_variable=msfe_se(forecasts, actuals),
                        n_failed=failed, variables=series.variables)


def benchmark(series, W_provider, methods, window, options=None, progress=False):
    """Rolling evaluation of several methods on the same panel."""
    results = []
    for method in methods:
        logger.info(f"benchmark: {method}")
        results.append(rolling_forecast(series, W_provider, method, window, options,
                                        progress=progress))
    return results


def benchmark_tables(results):
    """Long (method, variable, msfe, se) and wide (method x variable) tables."""
    long = pd.DataFrame([row for result in results for row in result.to_rows()],
                        columns=["method", "variable", "msfe", "se"])
    wide = long.pivot(index="method", columns="variable", values="msfe")
    wide = wide.loc[[r.method for r in results], list(results[0].labels())]
    wide["overall"] = [r.overall for r in results]
    return long, wide.reset_index()
