"""SIGMAR parameterization, admissibility checks and one-step forecasting.

The model for a k x n panel is

    X_t = C X_t W^T + A X_{t-1} B^T + unvec(S vec(X_{t-1})) + E_t,

or, with Phi = B kron A + S and G = I - W kron C,

    G vec(X_t) = Phi vec(X_{t-1}) + vec(E_t).
"""
import dataclasses
import json
import logging
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from sigmar import kronlin
from sigmar.errors import DegenerateInputError, DimensionError, DomainError, ValidationError

logger = logging.getLogger(__name__)

# Spectral radius must stay below 1 - ADMISSIBLE_MARGIN.
ADMISSIBLE_MARGIN = 1e-6


@dataclasses.dataclass
class PanelSeries:
    """Ordered sequence of T observation matrices of shape (k, n).

    Attributes:
        frames (np.ndarray): Array of shape (T, k, n); frames[t] is X_t.
        variables (tuple): Optional labels of the k variables.
        countries (tuple): Optional labels of the n countries.
        periods (tuple): Optional labels of the T periods.
    """
    frames: np.ndarray
    variables: Optional[Tuple[str, ...]] = None
    countries: Optional[Tuple[str, ...]] = None
    periods: Optional[Tuple] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise DimensionError(f"frames must have shape (T, k, n), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DomainError("panel contains non-finite values")
        T, k, n = self.frames.shape
        for name, labels, size in (("variables", self.variables, k),
                                   ("countries", self.countries, n),
                                   ("periods", self.periods, T)):
            if labels is not None and len(labels) != size:
                raise DimensionError(f"{len(labels)} {name} labels for {size} entries")
        if self.variables is not None:
            self.variables = tuple(self.variables)
        if self.countries is not None:
            self.countries = tuple(self.countries)
        if self.periods is not None:
            self.periods = tuple(self.periods)

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def k(self):
        return self.frames.shape[1]

    @property
    def n(self):
        return self.frames.shape[2]

    def __len__(self):
        return self.T

    def vecs(self):
        """Returns the (T, k*n) array whose row t is vec(X_t)."""
        return self.frames.transpose(0, 2, 1).reshape(self.T, self.k * self.n)

    @classmethod
    def from_vecs(cls, Y, k, n, **labels):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[1] != k * n:
            raise DimensionError(f"rows of length {Y.shape[-1]} do not match k*n={k * n}")
        return cls(Y.reshape(Y.shape[0], n, k).transpose(0, 2, 1), **labels)

    def window(self, start, stop):
        """Frames [start, stop) as a new series, labels carried along."""
        periods = None if self.periods is None else self.periods[start:stop]
        return PanelSeries(self.frames[start:stop], self.variables, self.countries, periods)

    def require_length(self, minimum):
        if self.T < minimum:
            raise DimensionError(f"need at least {minimum} frames, got {self.T}")


@dataclasses.dataclass
class WeightMatrix:
    """Fixed n x n network matrix with cached eigenvalues.

    The constructor only checks shape. ``weight_checks`` reports each network
    condition by name and ``require_valid`` enforces them.
    """
    W: np.ndarray
    eigvals: np.ndarray = dataclasses.field(init=False, repr=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[0] != self.W.shape[1]:
            raise DimensionError(f"weight matrix must be square, got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise DomainError("weight matrix contains non-finite values")
        self.eigvals = kronlin.eigvals(self.W)

    @property
    def n(self):
        return self.W.shape[0]

    def weight_checks(self):
        wtw_diag = np.diag(self.W.T @ self.W)
        return {
            "zero_diagonal": bool(np.all(np.diag(self.W) == 0)),
            # a zero-diagonal row-normalized 2x2 matrix always has equal entries
            "wtw_diagonal_varies": bool(self.n < 3 or np.ptp(wtw_diag) > 0),
            "nonzero_symmetric_part": bool(np.any(self.W + self.W.T != 0)),
        }

    def is_valid(self):
        return all(self.weight_checks().values())

    def require_valid(self):
        failed = [name for name, ok in self.weight_checks().items() if not ok]
        if failed:
            raise DomainError(f"weight matrix fails checks: {', '.join(failed)}")
        return self


@dataclasses.dataclass
class SigmarParams:
    """Parameter bundle (A, B, C, S, sigma2) of a SIGMAR model."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    S: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        k, n = self.A.shape[0], self.B.shape[0]
        expected = {"A": (k, k), "B": (n, n), "C": (k, k), "S": (k * n, k * n)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise DimensionError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"{name} contains non-finite values")
        self.sigma2 = float(self.sigma2)
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def k(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.B.shape[0]

    @classmethod
    def zeros(cls, k, n, sigma2=1.0):
        return cls(np.zeros((k, k)), np.zeros((n, n)), np.zeros((k, k)),
                   np.zeros((k * n, k * n)), sigma2)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def normalized(self):
        A, B = normalize_ab(self.A, self.B)
        return self.replace(A=A, B=B)


@dataclasses.dataclass
class ThetaFlat:
    """Stacked parameter vector (vec(C), vec(Phi), sigma2)."""
    vecC: np.ndarray
    vecPhi: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.vecC = np.asarray(self.vecC, dtype=float).ravel()
        self.vecPhi = np.asarray(self.vecPhi, dtype=float).ravel()
        k = int(round(np.sqrt(self.vecC.size)))
        if k * k != self.vecC.size:
            raise DimensionError(f"vecC of length {self.vecC.size} is not a square")
        kn = int(round(np.sqrt(self.vecPhi.size)))
        if kn * kn != self.vecPhi.size or kn % k:
            raise DimensionError(
                f"vecPhi of length {self.vecPhi.size} does not match k={k}")
        self.sigma2 = float(self.sigma2)
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def k(self):
        return int(round(np.sqrt(self.vecC.size)))

    @property
    def n(self):
        return int(round(np.sqrt(self.vecPhi.size))) // self.k

    @property
    def C(self):
        return kronlin.unvec(self.vecC, self.k, self.k)

    @property
    def Phi(self):
        kn = self.k * self.n
        return kronlin.unvec(self.vecPhi, kn, kn)

    @classmethod
    def from_params(cls, params):
        return cls(kronlin.vec(params.C), kronlin.vec(phi_of(params)), params.sigma2)

    @classmethod
    def from_matrices(cls, C, Phi, sigma2):
        return cls(kronlin.vec(C), kronlin.vec(Phi), sigma2)

    def to_vector(self):
        return np.concatenate([self.vecC, self.vecPhi, [self.sigma2]])

    @classmethod
    def from_vector(cls, v, k, n):
        v = np.asarray(v, dtype=float)
        kk, knkn = k * k, (k * n) ** 2
        if v.size != kk + knkn + 1:
            raise DimensionError(f"theta of length {v.size} does not match (k={k}, n={n})")
        return cls(v[:kk], v[kk:kk + knkn], v[-1])


@dataclasses.dataclass
class ReducedForm:
    """VAR(1) form vec(X_t) = Pi vec(X_{t-1}) + Ginv vec(E_t)."""
    Pi: np.ndarray
    Ginv: np.ndarray
    spectral_radius: float


@dataclasses.dataclass
class AdmissibilityReport:
    det_positive: bool
    spectral_radius: Optional[float]
    stationary: bool
    weight_checks: dict
    admissible: bool


def phi_of(params):
    """Returns B kron A + S."""
    Phi = kronlin.kron(params.B, params.A)
    if Phi.shape != params.S.shape:
        raise DimensionError(f"B kron A has shape {Phi.shape} but S has {params.S.shape}")
    return Phi + params.S


def g_matrix(C, W):
    """Returns I - W kron C."""
    W = W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=float)
    C = np.asarray(C, dtype=float)
    return np.eye(W.shape[0] * C.shape[0]) - np.kron(W, C)


def transition_from(C, Phi, W):
    """Reduced-form transition G^{-1} Phi and G^{-1} for a given (C, Phi).

    Raises:
        DomainError: det(G) is not positive.
    """
    if not isinstance(W, WeightMatrix):
        W = WeightMatrix(W)
    C = np.asarray(C, dtype=float)
    Phi = np.asarray(Phi, dtype=float)
    kn = W.n * C.shape[0]
    if Phi.shape != (kn, kn):
        raise DimensionError(f"Phi has shape {Phi.shape}, expected {(kn, kn)}")
    kronlin.logdet_I_minus_kron(W.eigvals, C)
    lu = scipy.linalg.lu_factor(g_matrix(C, W), check_finite=False)
    Ginv = scipy.linalg.lu_solve(lu, np.eye(kn), check_finite=False)
    Pi = scipy.linalg.lu_solve(lu, Phi, check_finite=False)
    return Pi, Ginv


def reduced_form(params, W):
    """Computes Pi = (I - W kron C)^{-1} (B kron A + S).

    Args:
        params (SigmarParams): Model parameters.
        W (WeightMatrix): Network matrix.

    Returns:
        ReducedForm: Transition, inverse of G and the spectral radius of Pi.
    """
    if params.C.any():
        Pi, Ginv = transition_from(params.C, phi_of(params), W)
    else:
        kn = params.k * params.n
        Pi, Ginv = phi_of(params), np.eye(kn)
    return ReducedForm(Pi=Pi, Ginv=Ginv, spectral_radius=kronlin.spectral_radius(Pi))


def check_admissible(params, W):
    """Diagnoses whether (params, W) define a stationary SIGMAR process."""
    if not isinstance(W, WeightMatrix):
        W = WeightMatrix(W)
    checks = W.weight_checks()
    try:
        radius = reduced_form(params, W).spectral_radius
        det_positive = True
    except DomainError:
        radius, det_positive = None, False
    stationary = radius is not None and radius < 1.0 - ADMISSIBLE_MARGIN
    return AdmissibilityReport(
        det_positive=det_positive,
        spectral_radius=radius,
        stationary=stationary,
        weight_checks=checks,
        admissible=det_positive and stationary and all(checks.values()),
    )


def normalize_ab(A, B):
    """Fixes the scale and sign gauge of (A, B).

    A is scaled to unit Frobenius norm and B absorbs the scale. The sign is
    flipped when more diagonal entries of A are negative than positive, or,
    on a tie, when the first nonzero diagonal entry is negative. B kron A is
    unchanged.

    Raises:
        DegenerateInputError: A is zero.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    scale = np.linalg.norm(A)
    if scale == 0:
        raise DegenerateInputError("cannot normalize a zero A")
    diag = np.diag(A)
    negative, positive = np.sum(diag < 0), np.sum(diag > 0)
    if negative == positive:
        nonzero = diag[diag != 0]
        flip = nonzero.size > 0 and nonzero[0] < 0
    else:
        flip = negative > positive
    sign = -1.0 if flip else 1.0
    return sign * A / scale, sign * B * scale


def forecast_with(Pi, X):
    """unvec(Pi vec(X)) for a k x n frame."""
    X = np.asarray(X, dtype=float)
    k, n = X.shape
    return kronlin.unvec(Pi @ kronlin.vec(X), k, n)


def one_step_forecast(params, W, X_t):
    """Conditional mean of X_{t+1} given X_t.

    Raises:
        DomainError: Parameters are not admissible.
    """
    rf = reduced_form(params, W)
    if not rf.spectral_radius < 1.0 - ADMISSIBLE_MARGIN:
        raise DomainError(f"transition has spectral radius {rf.spectral_radius:.6f} >= 1")
    if np.shape(X_t) != (params.k, params.n):
        raise DimensionError(f"frame has shape {np.shape(X_t)}, expected {(params.k, params.n)}")
    return forecast_with(rf.Pi, X_t)


def params_to_dict(params):
    """JSON-ready dict; S is stored as (row, col, value) triplets."""
    rows, cols = np.nonzero(params.S)
    return {
        "k": params.k,
        "n": params.n,
        "A": params.A.tolist(),
        "B": params.B.tolist(),
        "C": params.C.tolist(),
        "S": [[int(r), int(c), float(params.S[r, c])] for r, c in zip(rows, cols)],
        "sigma2": params.sigma2,
    }


def params_from_dict(doc):
    try:
        k, n = int(doc["k"]), int(doc["n"])
        S = np.zeros((k * n, k * n))
        for r, c, value in doc["S"]:
            S[int(r), int(c)] = float(value)
        return SigmarParams(np.array(doc["A"], dtype=float), np.array(doc["B"], dtype=float),
                            np.array(doc["C"], dtype=float), S, float(doc["sigma2"]))
    except (KeyError, TypeError, ValueError, IndexError) as err:
        if isinstance(err, (DimensionError, DomainError)):
            raise
        raise ValidationError(f"malformed parameter document: {err}") from err


def save_params(params, path):
    with open(path, "wt") as fp:
        json.dump(params_to_dict(params), fp, indent=2)


def load_params(path):
    with open(path, "rt") as fp:
        return params_from_dict(json.loads(fp.read()))
