"""Data-generating process for Monte-Carlo experiments.

Random streams are ``numpy.random.Generator`` objects seeded with a tuple
(seed, purpose, index), so results do not depend on how replications are
scheduled across workers.
"""
import dataclasses
import logging

import numpy as np

from sigmar import kronlin
from sigmar import model
from sigmar.errors import DomainError, GenerationError, ValidationError

logger = logging.getLogger(__name__)

STREAM_COEFFICIENTS = 1
STREAM_WEIGHTS = 2
STREAM_NOISE = 3
STREAM_START_VALUES = 4
STREAM_DESIGNS = 5

SIGN_RESAMPLES = 100
MAGNITUDE_HALVINGS = 10
WEIGHT_ATTEMPTS = 10


def rng_for(seed, *keys):
    """Returns the generator for stream (seed, *keys).

    ``seed`` may itself be a tuple, so a replication stream can be passed
    around as a single value.
    """
    if isinstance(seed, (tuple, list)):
        entropy = [int(s) for s in seed] + [int(k) for k in keys]
    else:
        entropy = [int(seed)] + [int(k) for k in keys]
    if any(e < 0 for e in entropy):
        raise ValidationError(f"seeds must be nonnegative, got {entropy}")
    return np.random.default_rng(entropy)


@dataclasses.dataclass
class DgpSpec:
    """Simulation design.

    Attributes:
        k (int): Number of variables.
        n (int): Number of countries.
        s (int): Number of nonzero entries of S.
        rho_ar (float): Target rho(A) * rho(B).
        rho_sp (float): Target rho(C).
        s_mag (float): Magnitude of the nonzero entries of S.
        sigma (float): Noise standard deviation.
        T (int): Series length.
        burn_in (int): Discarded initial steps.
        seed (int): Configuration seed.
    """
    k: int = 3
    n: int = 4
    s: int = 10
    rho_ar: float = 0.6
    rho_sp: float = 0.6
    s_mag: float = 0.15
    sigma: float = 1.0
    T: int = 2000
    burn_in: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.n < 2:
            raise ValidationError(f"need k >= 1 and n >= 2, got k={self.k}, n={self.n}")
        if not 0 <= self.s <= (self.k * self.n) ** 2:
            raise ValidationError(f"s={self.s} outside [0, {(self.k * self.n) ** 2}]")
        for name in ("rho_ar", "rho_sp"):
            if not 0 < getattr(self, name) < 1:
                raise ValidationError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.T < 1 or self.burn_in < 1:
            raise ValidationError("T and burn_in must be at least 1")
        if self.sigma < 0 or self.s_mag < 0:
            raise ValidationError("sigma and s_mag must be nonnegative")


def _rescale(M, target):
    radius = kronlin.spectral_radius(M)
    if radius == 0:
        raise GenerationError("drew a nilpotent coefficient matrix")
    return M * (target / radius)


def gen_weight(n, seed):
    """Random row-normalized network with zero diagonal.

    Args:
        n (int): Number of countries (>= 2).
        seed (int): Configuration seed.

    Returns:
        WeightMatrix: A matrix passing the network checks.
    """
    if n < 2:
        raise DomainError(f"a network needs at least 2 countries, got {n}")
    for attempt in range(WEIGHT_ATTEMPTS):
        rng = rng_for(seed, STREAM_WEIGHTS, attempt)
        M = rng.uniform(size=(n, n))
        np.fill_diagonal(M, 0.0)
        M /= M.sum(axis=1, keepdims=True)
        wm = model.WeightMatrix(M)
        if wm.is_valid():
            return wm
        logger.debug(f"weight draw {attempt} failed {wm.weight_checks()}")
    raise GenerationError(f"no valid weight matrix after {WEIGHT_ATTEMPTS} draws")


def gen_coefficients(spec, W=None):
    """Draws admissible SIGMAR parameters.

    A, B and C have standard normal entries; A and B share the factor that
    brings rho(A) rho(B) to ``rho_ar`` and C is scaled to rho(C) = ``rho_sp``.
    S has ``s`` entries of +/- ``s_mag`` at distinct random positions. When the
    result is not admissible the sign pattern is redrawn, and after
    SIGN_RESAMPLES failures the magnitude is halved.

    Args:
        spec (DgpSpec): Simulation design.
        W (WeightMatrix): Network used for the admissibility check. Drawn with
            ``gen_weight(spec.n, spec.seed)`` when omitted.

    Returns:
        SigmarParams: Parameters with sigma2 = spec.sigma ** 2 (1 when sigma is 0;
            pass sigma to simulate_series in that case).
    """
    if W is None:
        W = gen_weight(spec.n, spec.seed)
    k, n = spec.k, spec.n
    rng = rng_for(spec.seed, STREAM_COEFFICIENTS)
    A = rng.standard_normal((k, k))
    B = rng.standard_normal((n, n))
    C = rng.standard_normal((k, k))
    factor = np.sqrt(spec.rho_ar / (kronlin.spectral_radius(A) * kronlin.spectral_radius(B)))
    A, B = A * factor, B * factor
    C = _rescale(C, spec.rho_sp)
    sigma2 = spec.sigma ** 2 if spec.sigma > 0 else 1.0

    kn = k * n
    positions = rng.choice(kn * kn, size=spec.s, replace=False)
    magnitude = spec.s_mag
    for halving in range(MAGNITUDE_HALVINGS + 1):
        for _ in range(SIGN_RESAMPLES):
            S = np.zeros(kn * kn)
            S[positions] = magnitude * rng.choice([-1.0, 1.0], size=spec.s)
            params = model.SigmarParams(A, B, C, S.reshape(kn, kn), sigma2)
            report = model.check_admissible(params, W)
            if report.admissible:
                if halving:
                    logger.warning(f"S magnitude reduced to {magnitude} to reach admissibility")
                return params
            if spec.s == 0:
                break
        magnitude /= 2
    raise GenerationError(f"could not draw admissible coefficients for {spec}")


def simulate_series(params, W, T, burn_in=200, seed=0, sigma=None, **labels):
    """Simulates vec(X_t) = Pi vec(X_{t-1}) + G^{-1} vec(E_t) from X = 0.

    Args:
        params (SigmarParams): Admissible parameters; noise variance is params.sigma2.
        W (WeightMatrix): Network.
        T (int): Number of frames returned.
        burn_in (int): Steps discarded before the first returned frame.
        seed: Seed, or a full stream tuple such as (seed, STREAM_NOISE, rep).
        sigma (float): Noise standard deviation; defaults to sqrt(params.sigma2).

    Returns:
        PanelSeries: The last T frames.
    """
    report = model.check_admissible(params, W)
    if not (report.det_positive and report.stationary):
        raise DomainError(f"cannot simulate from inadmissible parameters "
                          f"(spectral radius {report.spectral_radius})")
    rf = model.reduced_form(params, W)
    k, n = params.k, params.n
    rng = rng_for(seed) if isinstance(seed, (tuple, list)) else rng_for(seed, STREAM_NOISE)
    steps = burn_in + T
    scale = np.sqrt(params.sigma2) if sigma is None else sigma
    noise = rng.standard_normal((steps, n, k)).reshape(steps, k * n) * scale
    shocks = noise @ rf.Ginv.T
    x = np.zeros(k * n)
    out = np.empty((T, k * n))
    for step in range(steps):
        x = rf.Pi @ x + shocks[step]
        if step >= burn_in:
            out[step - burn_in] = x
    return model.PanelSeries.from_vecs(out, k, n, **labels)
