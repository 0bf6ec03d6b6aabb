"""Kronecker-plus-sparse projection of a transition matrix.

Phi (kn x kn) is rearranged into Phi~ = rearrange(Phi, (n, n, k, k)), under
which B kron A becomes the rank-one matrix vec(B) vec(A)^T. Phi~ is split
into a low-rank L and a sparse S~ by alternating directions on

    min ||L||_* + lambda ||vec(S~)||_1  subject to  Phi~ = L + S~,

after which (A, B) come from the top singular triplet of L and
S = rearrange_inv(S~).
"""
import dataclasses
import logging
from typing import List, Optional

import numpy as np
import scipy.linalg

from sigmar import kronlin
from sigmar import model
from sigmar.errors import DegenerateInputError, DimensionError, DomainError, NumericalError

logger = logging.getLogger(__name__)

# Entries of S with |value| above this count as nonzero.
SUPPORT_TOL = 1e-8


@dataclasses.dataclass
class AdmmConfig:
    """ADMM settings; ``lam`` and ``mu`` default to 1/sqrt(kn) and
    (kn)^2 / (4 ||vec(Phi~)||_1)."""
    lam: Optional[float] = None
    mu: Optional[float] = None
    tol: float = 1e-7
    max_iter: int = 1000

    def __post_init__(self):
        for name in ("lam", "mu"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DomainError(f"{name} must be positive, got {value}")
        if not self.tol > 0 or self.max_iter < 1:
            raise DomainError("tol must be positive and max_iter at least 1")

    def resolve(self, PhiTilde):
        """Returns (lam, mu) for the given rearranged matrix."""
        size = PhiTilde.size
        lam = self.lam if self.lam is not None else 1.0 / np.sqrt(np.sqrt(size))
        l1 = np.abs(PhiTilde).sum()
        if self.mu is not None:
            mu = self.mu
        else:
            # zero input: any mu leaves L = S~ = 0
            mu = size / (4.0 * l1) if l1 > 0 else 1.0
        return lam, mu


@dataclasses.dataclass
class AdmmDiagnostics:
    primal_residual: float
    iterations: int
    converged: bool
    objective: List[float] = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class ProjectionResult:
    L: np.ndarray
    Stilde: np.ndarray
    A: np.ndarray
    B: np.ndarray
    S: np.ndarray
    primal_residual: float
    iterations: int
    converged: bool = True
    residual: float = 0.0

    def support(self, zero_tol=SUPPORT_TOL):
        return np.abs(self.S) > zero_tol

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "S": [[int(r), int(c), float(self.S[r, c])] for r, c in zip(*np.nonzero(self.S))],
            "L": self.L.tolist(),
            "primal_residual": self.primal_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "residual": self.residual,
        }


def admm_lowrank_sparse(PhiTilde, cfg=None):
    """Alternating directions for low-rank plus sparse splitting.

    Starting from S~ = Y = 0, each iteration applies

        L  <- D_{1/mu}(Phi~ - S~ + Y/mu)
        S~ <- S_{lam/mu}(Phi~ - L + Y/mu)
        Y  <- Y + mu (Phi~ - L - S~)

    and stops when ||Phi~ - L - S~||_F / max(1, ||Phi~||_F) <= tol. A stall
    of the iterates (relative change below tol) also ends the loop, without
    counting as convergence.

    Args:
        PhiTilde (np.ndarray): Matrix to split.
        cfg (AdmmConfig): Settings.

    Returns:
        tuple: (L, Stilde, AdmmDiagnostics).
    """
    cfg = cfg or AdmmConfig()
    PhiTilde = np.asarray(PhiTilde, dtype=float)
    lam, mu = cfg.resolve(PhiTilde)
    scale = max(1.0, np.linalg.norm(PhiTilde))
    L = np.zeros_like(PhiTilde)
    S = np.zeros_like(PhiTilde)
    Y = np.zeros_like(PhiTilde)
    objective = []
    residual = np.inf
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iter + 1):
        L_new, sing = kronlin.svt(PhiTilde - S + Y / mu, 1.0 / mu, return_singular_values=True)
        S_new = kronlin.soft_threshold(PhiTilde - L_new + Y / mu, lam / mu)
        gap = PhiTilde - L_new - S_new
        Y = Y + mu * gap
        change = (np.linalg.norm(L_new - L) + np.linalg.norm(S_new - S)) / scale
        L, S = L_new, S_new
        residual = np.linalg.norm(gap) / scale
        objective.append(float(sing.sum() + lam * np.abs(S).sum()))
        if residual <= cfg.tol:
            converged = True
            break
        if iteration > 1 and change <= cfg.tol:
            break
    if not converged:
        logger.warning(f"ADMM stopped after {iteration} iterations with primal residual {residual:.3e}")
    else:
        logger.debug(f"ADMM converged in {iteration} iterations, residual {residual:.3e}")
    return L, S, AdmmDiagnostics(float(residual), iteration, converged, objective)


def extract_ab(L, k, n):
    """Reads (A, B) off the top singular triplet of L.

    vec(A) is the top right singular vector and vec(B) the top singular
    value times the top left singular vector; the pair is then normalized.

    Raises:
        DegenerateInputError: L is zero.
    """
    L = np.asarray(L, dtype=float)
    if L.shape != (n * n, k * k):
        raise DimensionError(f"L has shape {L.shape}, expected {(n * n, k * k)}")
    try:
        U, s, Vt = scipy.linalg.svd(L, full_matrices=False)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise NumericalError(f"SVD failed: {err}") from err
    if s.size == 0 or s[0] == 0:
        raise DegenerateInputError("cannot extract a Kronecker factor from a zero matrix")
    A = kronlin.unvec(Vt[0], k, k)
    B = kronlin.unvec(s[0] * U[:, 0], n, n)
    return model.normalize_ab(A, B)


def project_phi(Phi, k, n, cfg=None):
    """Splits Phi into B kron A + S.

    Args:
        Phi (np.ndarray): kn x kn transition.
        k (int): Number of variables.
        n (int): Number of countries.
        cfg (AdmmConfig): ADMM settings.

    Returns:
        ProjectionResult: Factors, sparse part and residual
        ||Phi - B kron A - S||_F.
    """
    Phi = np.asarray(Phi, dtype=float)
    if Phi.shape != (k * n, k * n):
        raise DimensionError(f"Phi has shape {Phi.shape}, expected {(k * n, k * n)}")
    shape = kronlin.BlockShape(n, n, k, k)
    PhiTilde = kronlin.rearrange(Phi, shape)
    L, Stilde, diag = admm_lowrank_sparse(PhiTilde, cfg)
    S = kronlin.rearrange_inv(Stilde, shape)
    if not np.any(L):
        logger.warning("low-rank part is zero; returning zero Kronecker factors")
        A, B = np.zeros((k, k)), np.zeros((n, n))
    else:
        A, B = extract_ab(L, k, n)
    residual = float(np.linalg.norm(Phi - np.kron(B, A) - S))
    return ProjectionResult(L=L, Stilde=Stilde, A=A, B=B, S=S,
                            primal_residual=diag.primal_residual,
                            iterations=diag.iterations, converged=diag.converged,
                            residual=residual)
