"""Gaussian quasi-likelihood of the SIGMAR model and its maximizer.

The likelihood conditions on the first frame and sums t = 1..T-1:

    l(theta) = -(N/2) ln(2 pi) - (N/2) ln(sigma2) + m ln det(G)
               - (1/(2 sigma2)) sum_t v_t^T v_t,

with m = T - 1, N = k n m and v_t = G vec(X_t) - Phi vec(X_{t-1}).

For a fixed C both Phi and sigma2 have closed-form maximizers, so the
search runs over vec(C) only (k^2 unknowns). By the envelope property the
gradient of the profiled likelihood is the C-block of the full gradient.
"""
import dataclasses
import logging
from typing import List, Optional

import numpy as np
import scipy.linalg

from sigmar import amabc
from sigmar import kronlin
from sigmar import model
from sigmar.errors import DomainError, NumericalError

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)


class LoglikWorkspace:
    """Quantities of (PanelSeries, WeightMatrix) reused across evaluations.

    Attributes:
        k, n, m (int): Variables, countries and number of likelihood terms.
        eigW (np.ndarray): Eigenvalues of W.
        current (np.ndarray): Array (m, k*n) of vec(X_t), t = 1..T-1.
        lagged (np.ndarray): Array (m, k*n) of vec(X_{t-1}).
        Sxx (np.ndarray): sum_t vec(X_{t-1}) vec(X_{t-1})^T.
        Syx (np.ndarray): sum_t vec(X_t) vec(X_{t-1})^T.
    """
    def __init__(self, data, W):
        data.require_length(2)
        if not isinstance(W, model.WeightMatrix):
            W = model.WeightMatrix(W)
        if W.n != data.n:
            raise DomainError(f"weight matrix is {W.n}x{W.n} but panel has {data.n} countries")
        self.k, self.n = data.k, data.n
        self.m = data.T - 1
        self.W = W
        self.eigW = W.eigvals
        Y = data.vecs()
        self.current = Y[1:]
        self.lagged = Y[:-1]
        self.frames_current = data.frames[1:]
        self.Sxx = self.lagged.T @ self.lagged
        self.Syx = self.current.T @ self.lagged
        self._sxx_factor = None

    @property
    def N(self):
        return self.k * self.n * self.m

    def G(self, C):
        return model.g_matrix(C, self.W)

    def residuals(self, C, Phi):
        """Rows v_t^T = (G vec(X_t) - Phi vec(X_{t-1}))^T."""
        return self.current @ self.G(C).T - self.lagged @ np.asarray(Phi).T

    def profile_phi(self, C):
        """Phi maximizing the likelihood for fixed C: G Syx Sxx^{-1}."""
        if self._sxx_factor is None:
            try:
                self._sxx_factor = scipy.linalg.cho_factor(self.Sxx)
            except np.linalg.LinAlgError as err:
                raise NumericalError("lagged Gram matrix is singular",
                                     condition=np.linalg.cond(self.Sxx)) from err
        rhs = (self.G(C) @ self.Syx).T
        return scipy.linalg.cho_solve(self._sxx_factor, rhs).T


@dataclasses.dataclass
class QmleOptions:
    tol: float = 1e-6
    max_iter: int = 500
    memory: int = 10
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtrack: int = 60
    compute_se: bool = False


@dataclasses.dataclass
class QmleReport:
    """Result of ``fit_qmle``.

    ``grad_norm`` is the sup-norm of the full gradient divided by the number
    of likelihood terms; ``history`` holds the profiled log-likelihood after
    every accepted step.
    """
    theta_hat: model.ThetaFlat
    loglik: float
    iterations: int
    converged: bool
    grad_norm: float
    se: Optional[np.ndarray] = None
    history: List[float] = dataclasses.field(default_factory=list)

    @property
    def C(self):
        return self.theta_hat.C

    @property
    def Phi(self):
        return self.theta_hat.Phi

    @property
    def sigma2(self):
        return self.theta_hat.sigma2

    def to_dict(self):
        k, n = self.theta_hat.k, self.theta_hat.n
        return {
            "k": k,
            "n": n,
            "C": self.C.tolist(),
            "Phi": self.Phi.tolist(),
            "sigma2": self.sigma2,
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "se": None if self.se is None else self.se.tolist(),
        }


def _workspace(data, W, workspace):
    return workspace if workspace is not None else LoglikWorkspace(data, W)


def loglik(theta, data, W, workspace=None):
    """Evaluates the log-quasi-likelihood at theta.

    Args:
        theta (ThetaFlat): Parameters (vec(C), vec(Phi), sigma2).
        data (PanelSeries): Panel; frame 0 conditions the likelihood.
        W (WeightMatrix): Network.
        workspace (LoglikWorkspace): Optional precomputed workspace.

    Returns:
        float: Log-likelihood value.

    Raises:
        DomainError: det(I - W kron C) <= 0 or sigma2 <= 0.
    """
    ws = _workspace(data, W, workspace)
    if not theta.sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {theta.sigma2}")
    logdet = kronlin.logdet_I_minus_kron(ws.eigW, theta.C)
    rss = float(np.sum(ws.residuals(theta.C, theta.Phi) ** 2))
    N = ws.N
    return (-0.5 * N * LOG_2PI - 0.5 * N * np.log(theta.sigma2)
            + ws.m * logdet - rss / (2.0 * theta.sigma2))


def logdet_gradient(C, ws):
    """Gradient of ln det(I - W kron C) with respect to vec(C).

    Equals -rearrange(G^{-T})^T vec(W), i.e. minus the W-weighted sum of the
    k x k blocks of G^{-T}.
    """
    G = ws.G(C)
    try:
        GinvT = scipy.linalg.solve(G.T, np.eye(G.shape[0]))
    except (np.linalg.LinAlgError, ValueError) as err:
        raise DomainError("I - W kron C is singular") from err
    shape = kronlin.BlockShape(ws.n, ws.n, ws.k, ws.k)
    return -kronlin.rearrange(GinvT, shape).T @ kronlin.vec(ws.W.W)


def grad_loglik(theta, data, W, workspace=None):
    """Analytic gradient of ``loglik``.

    Returns:
        np.ndarray: Vector of length k^2 + (kn)^2 + 1 ordered as
        (vec(C), vec(Phi), sigma2).
    """
    ws = _workspace(data, W, workspace)
    if not theta.sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {theta.sigma2}")
    C, Phi, sigma2 = theta.C, theta.Phi, theta.sigma2
    kronlin.logdet_I_minus_kron(ws.eigW, C)
    V = ws.residuals(C, Phi)
    k, n = ws.k, ws.n
    # V_t as k x n frames: sum_t V_t W X_t^T
    V_frames = V.reshape(ws.m, n, k).transpose(0, 2, 1)
    cross = np.einsum("tab,bc,tdc->ad", V_frames, ws.W.W, ws.frames_current)
    grad_c = kronlin.vec(cross) / sigma2 + ws.m * logdet_gradient(C, ws)
    grad_phi = kronlin.vec(V.T @ ws.lagged) / sigma2
    rss = float(np.sum(V ** 2))
    grad_s2 = -0.5 * ws.N / sigma2 + rss / (2.0 * sigma2 ** 2)
    return np.concatenate([grad_c, grad_phi, [grad_s2]])


def profiled_theta(C, ws):
    """(C, Phi_hat(C), sigma2_hat(C)) with sigma2_hat = RSS / (k n m)."""
    Phi = ws.profile_phi(C)
    rss = float(np.sum(ws.residuals(C, Phi) ** 2))
    sigma2 = max(rss / ws.N, np.finfo(float).tiny)
    return model.ThetaFlat.from_matrices(C, Phi, sigma2)


class _ProfiledObjective:
    """Negative profiled log-likelihood per term, as a function of vec(C)."""
    def __init__(self, ws):
        self.ws = ws

    def __call__(self, c):
        C = kronlin.unvec(c, self.ws.k, self.ws.k)
        theta = profiled_theta(C, self.ws)
        value = -loglik(theta, None, None, workspace=self.ws) / self.ws.m
        grad = -grad_loglik(theta, None, None, workspace=self.ws)[:c.size] / self.ws.m
        return value, grad, theta


def _two_loop(grad, s_hist, y_hist):
    q = grad.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        alpha = rho * (s @ q)
        q -= alpha * y
        alphas.append((rho, alpha))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, alpha) in zip(zip(s_hist, y_hist), reversed(alphas)):
        beta = rho * (y @ q)
        q += (alpha - beta) * s
    return -q


def fit_qmle(data, W, init=None, opts=None):
    """Maximizes the quasi-likelihood.

    L-BFGS over vec(C) with Phi and sigma2 profiled out. The backtracking
    line search rejects trial points where det(I - W kron C) <= 0 and
    enforces the Armijo condition, so the log-likelihood increases at every
    accepted step.

    Args:
        data (PanelSeries): Panel.
        W (WeightMatrix): Network.
        init (SigmarParams): Starting point; only C is used since Phi and
            sigma2 are profiled. Defaults to the naive alternating
            minimization estimate.
        opts (QmleOptions): Optimizer settings.

    Returns:
        QmleReport: Estimates and convergence diagnostics.

    Raises:
        DomainError: The starting C is outside the admissible region.
    """
    opts = opts or QmleOptions()
    ws = LoglikWorkspace(data, W)
    if init is None:
        logger.info("initializing QMLE from naive alternating minimization")
        init = amabc.fit_amabc(data, ws.W, cfg=amabc.AmaConfig(bias_correction=False)).params
    C0 = np.asarray(init.C, dtype=float)
    try:
        kronlin.logdet_I_minus_kron(ws.eigW, C0)
    except DomainError as err:
        raise DomainError(f"QMLE starting point is inadmissible: {err}") from err

    objective = _ProfiledObjective(ws)
    x = kronlin.vec(C0)
    f, g, theta = objective(x)
    history = [-f * ws.m]
    s_hist, y_hist = [], []
    converged = False
    iteration = 0
    for iteration in range(opts.max_iter):
        if np.max(np.abs(g)) < opts.tol:
            converged = True
            break
        d = _two_loop(g, s_hist, y_hist)
        slope = g @ d
        if not slope < 0:
            s_hist, y_hist = [], []
            d, slope = -g, -(g @ g)
        step = 1.0 if s_hist else min(1.0, 1.0 / max(np.max(np.abs(g)), 1e-12))
        accepted = False
        for _ in range(opts.max_backtrack):
            x_new = x + step * d
            try:
                f_new, g_new, theta_new = objective(x_new)
            except DomainError:
                step *= opts.backtrack
                continue
            if f_new <= f + opts.armijo * step * slope:
                accepted = True
                break
            step *= opts.backtrack
        if not accepted:
            logger.warning(f"QMLE line search stalled at iteration {iteration}")
            break
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * max(1.0, s @ s):
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > opts.memory:
                s_hist.pop(0)
                y_hist.pop(0)
        x, f, g, theta = x_new, f_new, g_new, theta_new
        history.append(-f * ws.m)
        logger.debug(f"QMLE iter {iteration}: loglik {history[-1]:.6f} "
                     f"|grad| {np.max(np.abs(g)):.3e} step {step:.3e}")
    else:
        iteration = opts.max_iter
        converged = np.max(np.abs(g)) < opts.tol

    full_grad = grad_loglik(theta, None, None, workspace=ws)
    grad_norm = float(np.max(np.abs(full_grad)) / ws.m)
    value = loglik(theta, None, None, workspace=ws)
    logger.info(f"QMLE finished after {iteration} iterations: loglik {value:.6f}, "
                f"grad norm {grad_norm:.3e}, converged {bool(converged)}")
    report = QmleReport(theta_hat=theta, loglik=value, iterations=iteration,
                        converged=bool(converged and grad_norm < opts.tol),
                        grad_norm=grad_norm, history=history)
    if opts.compute_se:
        report.se = numeric_se(theta, data, ws.W, workspace=ws)
    return report


def numeric_hessian(theta, data, W, workspace=None, rel_step=1e-5):
    """Central-difference Hessian of ``loglik`` built from ``grad_loglik``."""
    ws = _workspace(data, W, workspace)
    k, n = ws.k, ws.n
    x = theta.to_vector()
    H = np.empty((x.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        up, down = x.copy(), x.copy()
        up[j] += h
        down[j] -= h
        g_up = grad_loglik(model.ThetaFlat.from_vector(up, k, n), None, None, workspace=ws)
        g_down = grad_loglik(model.ThetaFlat.from_vector(down, k, n), None, None, workspace=ws)
        H[:, j] = (g_up - g_down) / (2.0 * h)
    return 0.5 * (H + H.T)


def numeric_se(theta_hat, data, W, workspace=None):
    """Standard errors sqrt(diag(H^{-1})) with H the negative Hessian.

    Returns:
        np.ndarray or None: Standard errors in theta order, or None (with a
        logged warning) when H is not positive definite.
    """
    H = -numeric_hessian(theta_hat, data, W, workspace=workspace)
    try:
        factor = scipy.linalg.cho_factor(H)
    except np.linalg.LinAlgError:
        logger.warning("negative Hessian is not positive definite; standard errors unavailable")
        return None
    cov = scipy.linalg.cho_solve(factor, np.eye(H.shape[0]))
    return np.sqrt(np.diag(cov))
