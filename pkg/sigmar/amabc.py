"""Alternating minimization with a bias-corrected network coefficient.

One outer iteration updates, in order,

    C   least squares on X_t - unvec(Phi vec(X_{t-1})), then bias corrected
    A   closed-form least squares given (B, C, S)
    B   closed-form least squares given (A, C, S)
        (A, B) renormalized
    S   Lasso with the penalty chosen by BIC

until the relative change of Phi = B kron A + S falls below ``rel_tol``.
All averages over time divide by the number of summands, T - 1.
"""
import dataclasses
import logging
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg

from sigmar import kronlin
from sigmar import model
from sigmar import simulate
from sigmar.errors import DomainError, NumericalError, ValidationError

logger = logging.getLogger(__name__)

# Gram matrices with a larger condition number are treated as singular.
MAX_CONDITION = 1e12


@dataclasses.dataclass
class AmaConfig:
    """Settings of ``fit_amabc``.

    Attributes:
        J (int): Maximum number of outer iterations.
        rel_tol (float): Stop when ||Phi_new - Phi||_F / ||Phi||_F is below this.
        lambda_grid (list): Explicit Lasso penalties, sorted descending. When
            None a grid of ``n_lambda`` values from lambda_max down to
            ``lambda_ratio * lambda_max`` is built at every iteration.
        lasso_tol (float): KKT tolerance of the coordinate descent.
        lasso_max_iter (int): Maximum coordinate-descent sweeps.
        bias_correction (bool): Apply the moment correction to C.
        fit_c (bool): Estimate the network coefficient; C stays 0 otherwise.
        fit_s (bool): Estimate the sparse part; S stays 0 otherwise.
    """
    J: int = 50
    rel_tol: float = 1e-6
    lambda_grid: Optional[List[float]] = None
    n_lambda: int = 20
    lambda_ratio: float = 1e-3
    lasso_tol: float = 1e-8
    lasso_max_iter: int = 10000
    bias_correction: bool = True
    fit_c: bool = True
    fit_s: bool = True

    def __post_init__(self):
        if self.lambda_grid is not None:
            grid = [float(x) for x in np.atleast_1d(self.lambda_grid)]
            if not grid:
                raise ValidationError("lambda_grid must not be empty")
            if any(x < 0 for x in grid) or any(a < b for a, b in zip(grid, grid[1:])):
                raise ValidationError("lambda_grid must be nonnegative and sorted descending")
            self.lambda_grid = grid
        if self.J < 1 or self.n_lambda < 1:
            raise ValidationError("J and n_lambda must be at least 1")


@dataclasses.dataclass
class ResidualMoments:
    """Moment matrices of the bias correction (all k x k).

    GammaW = (1/m) sum X_t W^T W X_t^T
    SigW   = (1/m) sum E~_t W E~_t^T
    SigW2  = (1/m) sum E~_t W^T W E~_t^T
    """
    GammaW: np.ndarray
    SigW: np.ndarray
    SigW2: np.ndarray


@dataclasses.dataclass
class LassoFit:
    lam: float
    S: np.ndarray
    rss: float
    df: int
    bic: float
    sweeps: int


@dataclasses.dataclass
class AmaTraceRow:
    iteration: int
    objective: float
    rel_change: float
    lam: float


@dataclasses.dataclass
class AmaFit:
    params: model.SigmarParams
    trace: List[AmaTraceRow]
    iterations: int
    converged: bool
    lam: float


def _frames(data):
    """(current frames X_t, lagged frames X_{t-1}, lagged vecs) for t = 1..T-1."""
    data.require_length(3)
    return data.frames[1:], data.frames[:-1], data.vecs()[:-1]


def _vec_frames(frames):
    m, k, n = frames.shape
    return frames.transpose(0, 2, 1).reshape(m, k * n)


def _unvec_frames(Y, k, n):
    return Y.reshape(Y.shape[0], n, k).transpose(0, 2, 1)


def _solve_right(numerator, gram, what):
    """numerator @ inv(gram), rejecting singular or ill-conditioned grams."""
    condition = np.linalg.cond(gram)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericalError(f"{what} is singular", condition=condition)
    return scipy.linalg.solve(gram.T, numerator.T).T


def _weights(W):
    return W.W if isinstance(W, model.WeightMatrix) else np.asarray(W, dtype=float)


def update_c_lse(data, W, Phi):
    """Least-squares C given Phi.

    C = (sum X^c_t W X_t^T)(sum X_t W^T W X_t^T)^{-1} with
    X^c_t = X_t - unvec(Phi vec(X_{t-1})).
    """
    X, _, lagged = _frames(data)
    Wm = _weights(W)
    k, n = data.k, data.n
    Xc = X - _unvec_frames(lagged @ np.asarray(Phi).T, k, n)
    numerator = np.einsum("tab,bc,tdc->ad", Xc, Wm, X)
    XW = X @ Wm.T
    gram = np.einsum("tab,tcb->ac", XW, XW)
    return _solve_right(numerator, gram, "network Gram matrix sum X W^T W X^T")


def _moments(data, W, C, Phi):
    X, _, lagged = _frames(data)
    Wm = _weights(W)
    k, n = data.k, data.n
    m = X.shape[0]
    Pi, _ = model.transition_from(C, Phi, W)
    # E~_t = X_t - unvec(Pi vec(X_{t-1})) = unvec(G^{-1} e_t)
    E = X - _unvec_frames(lagged @ Pi.T, k, n)
    XW = X @ Wm.T
    EW = E @ Wm.T
    GammaW = np.einsum("tab,tcb->ac", XW, XW) / m
    SigW = np.einsum("tab,bc,tdc->ad", E, Wm, E) / m
    SigW2 = np.einsum("tab,tcb->ac", EW, EW) / m
    return ResidualMoments(GammaW=GammaW, SigW=SigW, SigW2=SigW2)


def residual_moments(data, W, params):
    """Moments of the reduced-form residuals at ``params``.

    The structural residual e_t = G vec(X_t) - Phi vec(X_{t-1}) is mapped to
    E~_t = unvec(G^{-1} e_t). The Kronecker-weighted sums are formed through
    (E~ kron E~) vec(W) = vec(E~ W E~^T), never materializing the k^2 x n^2
    matrix.

    Args:
        params (SigmarParams): Parameters; only C and Phi are used.
    """
    if not isinstance(W, model.WeightMatrix):
        W = model.WeightMatrix(W)
    return _moments(data, W, params.C, model.phi_of(params))


def bias_correct_c(C_lse, moments):
    """(C_lse GammaW - SigW)(GammaW - SigW2)^{-1}."""
    numerator = np.asarray(C_lse) @ moments.GammaW - moments.SigW
    return _solve_right(numerator, moments.GammaW - moments.SigW2,
                        "bias-correction denominator GammaW - SigW2")


def _network_removed(X, Wm, C):
    return X - C @ X @ Wm.T


def ols_a(target, lagged_frames, B):
    """A minimizing sum ||target_t - A X_{t-1} B^T||_F^2."""
    XB = lagged_frames @ B.T
    numerator = np.einsum("tab,tcb->ac", target, XB)
    gram = np.einsum("tab,tcb->ac", XB, XB)
    return _solve_right(numerator, gram, "Gram matrix sum X B^T B X^T")


def ols_b(target, lagged_frames, A):
    """B minimizing sum ||target_t - A X_{t-1} B^T||_F^2."""
    AX = A @ lagged_frames
    numerator = np.einsum("tab,tac->bc", target, AX)
    gram = np.einsum("tab,tac->bc", AX, AX)
    return _solve_right(numerator, gram, "Gram matrix sum X^T A^T A X")


def _ab_target(data, W, C, S):
    X, X_lag, lagged = _frames(data)
    k, n = data.k, data.n
    target = _network_removed(X, _weights(W), np.asarray(C))
    return target - _unvec_frames(lagged @ np.asarray(S).T, k, n), X_lag


def update_a(data, W, C, B, S):
    """Closed-form A with X^ab_t = X_t - C X_t W^T - unvec(S vec(X_{t-1}))."""
    target, X_lag = _ab_target(data, W, C, S)
    return ols_a(target, X_lag, np.asarray(B, dtype=float))


def update_b(data, W, C, A, S):
    """Closed-form B, the mirror image of ``update_a``."""
    target, X_lag = _ab_target(data, W, C, S)
    return ols_b(target, X_lag, np.asarray(A, dtype=float))


def _lasso_problem(data, W, C, A, B):
    """(Y, X) with rows vec(X^s_t) and vec(X_{t-1})."""
    X, X_lag, lagged = _frames(data)
    target = _network_removed(X, _weights(W), np.asarray(C)) - np.asarray(A) @ X_lag @ np.asarray(B).T
    return _vec_frames(target), lagged


def lasso_cd(gram, cross, lam, S_init=None, tol=1e-8, max_iter=10000):
    """Coordinate descent for min_S sum ||y_t - S x_t||^2 + lam ||vec(S)||_1.

    The rows of S are independent problems sharing ``gram`` = sum x x^T, so
    one column of S is updated for all rows at once. ``cross`` is
    sum y x^T. Iterates until the KKT violation is at most ``tol``.

    Returns:
        tuple: (S, sweeps, kkt_violation).
    """
    p = gram.shape[0]
    S = np.zeros_like(cross) if S_init is None else np.array(S_init, dtype=float)
    diag = np.diag(gram).copy()
    half = 0.5 * lam
    violation = np.inf
    sweep = 0
    for sweep in range(1, max_iter + 1):
        for j in range(p):
            if diag[j] <= 0:
                S[:, j] = 0.0
                continue
            r = cross[:, j] - S @ gram[:, j] + S[:, j] * diag[j]
            S[:, j] = kronlin.soft_threshold(r, half) / diag[j]
        violation = kkt_violation(gram, cross, S, lam)
        if violation <= tol:
            break
    else:
        logger.warning(f"Lasso stopped after {max_iter} sweeps, KKT violation {violation:.3e}")
    return S, sweep, violation


def kkt_violation(gram, cross, S, lam):
    """Largest violation of the Lasso optimality conditions.

    With g = 2 (cross - S gram) the conditions are |g| <= lam at zeros and
    g = lam sign(S) at nonzeros.
    """
    g = 2.0 * (cross - S @ gram)
    zero = S == 0
    at_zero = np.maximum(np.abs(g[zero]) - lam, 0.0)
    at_nonzero = np.abs(g[~zero] - lam * np.sign(S[~zero]))
    return float(max(at_zero.max(initial=0.0), at_nonzero.max(initial=0.0)))


def lambda_max(cross):
    """Smallest penalty with an all-zero Lasso solution."""
    return float(np.max(np.abs(2.0 * cross))) if cross.size else 0.0


def default_grid(cross, n_lambda=20, ratio=1e-3):
    top = lambda_max(cross)
    if top == 0:
        return [0.0]
    return list(np.geomspace(top, top * ratio, n_lambda))


def update_s_lasso(data, W, C, A, B, lam, S_init=None, tol=1e-8, max_iter=10000):
    """Lasso update of S given (C, A, B).

    Solves min_S sum_t ||vec(X^s_t) - S vec(X_{t-1})||^2 + lam ||vec(S)||_1
    with X^s_t = X_t - C X_t W^T - A X_{t-1} B^T.
    """
    if lam < 0:
        raise DomainError(f"Lasso penalty must be nonnegative, got {lam}")
    Y, Xl = _lasso_problem(data, W, C, A, B)
    S, _, _ = lasso_cd(Xl.T @ Xl, Y.T @ Xl, lam, S_init, tol, max_iter)
    return S


def lasso_path(data, W, C, A, B, grid=None, tol=1e-8, max_iter=10000,
               n_lambda=20, ratio=1e-3):
    """Warm-started Lasso fits along a descending grid, with BIC per point.

    BIC = N ln(RSS/N) + df ln N with N = k n (T-1) and df the number of
    nonzero entries of S.
    """
    Y, Xl = _lasso_problem(data, W, C, A, B)
    gram, cross = Xl.T @ Xl, Y.T @ Xl
    if grid is None:
        grid = default_grid(cross, n_lambda, ratio)
    N = Y.size
    fits = []
    S = None
    for lam in grid:
        S, sweeps, _ = lasso_cd(gram, cross, lam, S, tol, max_iter)
        rss = float(np.sum((Y - Xl @ S.T) ** 2))
        df = int(np.count_nonzero(S))
        bic = N * np.log(max(rss, np.finfo(float).tiny) / N) + df * np.log(N)
        fits.append(LassoFit(lam=float(lam), S=S.copy(), rss=rss, df=df, bic=float(bic),
                             sweeps=sweeps))
    return fits


def _best(fits):
    return min(fits, key=lambda f: f.bic)


def bic_select_lambda(data, W, C, A, B, grid=None, tol=1e-8, max_iter=10000):
    """Penalty minimizing BIC over ``grid`` (warm-started from its largest value)."""
    if grid is not None and len(grid) == 0:
        raise ValidationError("lambda grid must not be empty")
    return _best(lasso_path(data, W, C, A, B, grid, tol, max_iter)).lam


def surrogate_objective(data, W, params, lam):
    """sum_t ||G vec(X_t) - Phi vec(X_{t-1})||^2 + lam ||vec(S)||_1."""
    X, X_lag, lagged = _frames(data)
    k, n = data.k, data.n
    resid = (_network_removed(X, _weights(W), params.C)
             - params.A @ X_lag @ params.B.T
             - _unvec_frames(lagged @ params.S.T, k, n))
    return float(np.sum(resid ** 2) + lam * np.abs(params.S).sum())


def structural_sigma2(data, W, params):
    """Mean squared structural residual at ``params``."""
    X, X_lag, lagged = _frames(data)
    resid = (_network_removed(X, _weights(W), params.C)
             - _unvec_frames(lagged @ model.phi_of(params).T, data.k, data.n))
    return float(np.mean(resid ** 2))


def default_start(k, n, seed=0):
    """Random (A, B) with standard normal entries, normalized; C = S = 0."""
    rng = simulate.rng_for(seed, simulate.STREAM_START_VALUES)
    A, B = model.normalize_ab(rng.standard_normal((k, k)), rng.standard_normal((n, n)))
    return model.SigmarParams(A, B, np.zeros((k, k)), np.zeros((k * n, k * n)))


def _is_admissible_c(W, C):
    """True when det(I - W kron C) > 0 and C is finite."""
    if not np.all(np.isfinite(C)):
        return False
    try:
        kronlin.logdet_I_minus_kron(W.eigvals, C)
    except (DomainError, NumericalError):
        return False
    return True


def fit_amabc(data, W, init=None, cfg=None, seed=0):
    """Bias-corrected alternating minimization.

    Without ``init`` the bias-corrected run starts from the uncorrected fit,
    so the residual moments are formed at a consistent (C, Phi) rather than
    at C = 0. A corrected C that would make I - W kron C singular or give it
    a nonpositive determinant is rejected and the previous C kept.

    Args:
        data (PanelSeries): Panel.
        W (WeightMatrix): Network.
        init (SigmarParams): Starting values; ``default_start`` when omitted.
        cfg (AmaConfig): Settings.
        seed (int): Seed of the default start.

    Returns:
        AmaFit: Final parameters (sigma2 from the structural residuals), a
        per-iteration trace and the selected Lasso penalty.
    """
    cfg = cfg or AmaConfig()
    if not isinstance(W, model.WeightMatrix):
        W = model.WeightMatrix(W)
    data.require_length(3)
    k, n = data.k, data.n
    if init is None and cfg.fit_c and cfg.bias_correction:
        logger.info("starting the bias-corrected fit from the uncorrected estimate")
        init = fit_amabc(data, W, cfg=dataclasses.replace(cfg, bias_correction=False),
                         seed=seed).params
    params = init if init is not None else default_start(k, n, seed)
    A, B = model.normalize_ab(params.A, params.B)
    C = params.C.copy() if cfg.fit_c else np.zeros((k, k))
    S = params.S.copy() if cfg.fit_s else np.zeros((k * n, k * n))
    kronlin.logdet_I_minus_kron(W.eigvals, C)

    trace = []
    lam = 0.0
    converged = False
    iteration = 0
    for iteration in range(1, cfg.J + 1):
        try:
            Phi = np.kron(B, A) + S
            if cfg.fit_c:
                C_lse = update_c_lse(data, W, Phi)
                candidate = C_lse
                if cfg.bias_correction:
                    candidate = bias_correct_c(C_lse, _moments(data, W, C, Phi))
                if _is_admissible_c(W, candidate):
                    C = candidate
                else:
                    logger.warning(f"AMA iter {iteration}: updated C leaves det(I - W kron C) "
                                   f"nonpositive, keeping the previous C")
            A = update_a(data, W, C, B, S)
            B = update_b(data, W, C, A, S)
            A, B = model.normalize_ab(A, B)
            if cfg.fit_s:
                fits = lasso_path(data, W, C, A, B, cfg.lambda_grid, cfg.lasso_tol,
                                  cfg.lasso_max_iter, cfg.n_lambda, cfg.lambda_ratio)
                best = _best(fits)
                S, lam = best.S, best.lam
        except (NumericalError, DomainError) as err:
            err.iteration = iteration
            raise
        Phi_new = np.kron(B, A) + S
        rel_change = np.linalg.norm(Phi_new - Phi) / max(np.linalg.norm(Phi), np.finfo(float).tiny)
        current = model.SigmarParams(A, B, C, S)
        objective = surrogate_objective(data, W, current, lam)
        trace.append(AmaTraceRow(iteration, objective, float(rel_change), lam))
        logger.debug(f"AMA iter {iteration}: objective {objective:.6f} rel change {rel_change:.3e} "
                     f"lambda {lam:.4g} nnz(S) {np.count_nonzero(S)}")
        if rel_change < cfg.rel_tol:
            converged = True
            break

    params = model.SigmarParams(A, B, C, S)
    sigma2 = structural_sigma2(data, W, params)
    params = params.replace(sigma2=max(sigma2, np.finfo(float).tiny))
    logger.info(f"alternating minimization finished after {iteration} iterations "
                f"(converged {converged}, bias correction {cfg.bias_correction})")
    return AmaFit(params=params, trace=trace, iterations=iteration, converged=converged, lam=lam)
