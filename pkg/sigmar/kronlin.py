"""Dense linear-algebra kernel.

All matrices are numpy arrays. ``vec`` stacks columns, so every reshape
between a matrix and its vectorization uses ``order="F"``. Block indexing in
the rearrangement operators follows the block enumeration
vec(M_11), ..., vec(M_p1,1), ..., vec(M_1,p2), ..., vec(M_p1,p2) and does not
depend on how numpy stores the array.
"""
import dataclasses
import logging

import numpy as np
import scipy.linalg

from sigmar.errors import DimensionError, DomainError, NumericalError

logger = logging.getLogger(__name__)

# Relative tolerance on the imaginary part of det(I - W kron C).
IMAG_RESIDUAL_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class BlockShape:
    """Block layout of a (p1*d1) x (p2*d2) matrix.

    Attributes:
        p1 (int): Number of block rows.
        p2 (int): Number of block columns.
        d1 (int): Rows per block.
        d2 (int): Columns per block.
    """
    p1: int
    p2: int
    d1: int
    d2: int

    def __post_init__(self):
        if min(self.p1, self.p2, self.d1, self.d2) <= 0:
            raise DimensionError(f"block shape must be positive, got {self}")

    @property
    def transposed(self):
        return BlockShape(self.p2, self.p1, self.d2, self.d1)


def vec(M):
    """Stacks the columns of ``M`` into a vector."""
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def unvec(v, k, n):
    """Inverse of ``vec`` for a k x n matrix.

    Args:
        v (np.ndarray): Vector of length k*n.
        k (int): Number of rows.
        n (int): Number of columns.

    Returns:
        np.ndarray: Matrix of shape (k, n).
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != k * n:
        raise DimensionError(f"cannot unvec a vector of shape {v.shape} into {k}x{n}")
    return v.reshape((k, n), order="F")


def kron(P, Q):
    return np.kron(np.asarray(P, dtype=float), np.asarray(Q, dtype=float))


def rearrange(M, shape):
    """Maps a block matrix to the matrix whose rows are the vectorized blocks.

    Row ``j + l * p1`` of the result is vec of block (j, l), so a Kronecker
    product P kron Q with P of shape (p1, p2) is mapped to vec(P) vec(Q)^T.

    Args:
        M (np.ndarray): Matrix of shape (p1*d1, p2*d2).
        shape (BlockShape): Block layout.

    Returns:
        np.ndarray: Matrix of shape (p1*p2, d1*d2).
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (shape.p1 * shape.d1, shape.p2 * shape.d2):
        raise DimensionError(f"matrix of shape {M.shape} does not fit {shape}")
    # blocks[j, a, l, b] = M[j*d1 + a, l*d2 + b]
    blocks = M.reshape(shape.p1, shape.d1, shape.p2, shape.d2)
    return blocks.transpose(2, 0, 3, 1).reshape(shape.p2 * shape.p1, shape.d2 * shape.d1)


def rearrange_inv(N, shape):
    """Exact inverse of ``rearrange``."""
    N = np.asarray(N, dtype=float)
    if N.shape != (shape.p1 * shape.p2, shape.d1 * shape.d2):
        raise DimensionError(f"matrix of shape {N.shape} does not fit {shape}")
    blocks = N.reshape(shape.p2, shape.p1, shape.d2, shape.d1)
    return blocks.transpose(1, 3, 0, 2).reshape(shape.p1 * shape.d1, shape.p2 * shape.d2)


def rearrange2(M, shape):
    """Second rearrangement operator.

    Maps a (d1*d2) x (p1*p2) matrix back to a (p1*d1) x (p2*d2) matrix. It is
    characterized by ``rearrange2_inv(M) == rearrange(M.T, shape.transposed).T``,
    which gives rearrange2(rearrange(P kron Q).T).T == P kron Q and
    rearrange2(E kron E) == vec(E) vec(E)^T.
    """
    M = np.asarray(M, dtype=float)
    if M.shape != (shape.d1 * shape.d2, shape.p1 * shape.p2):
        raise DimensionError(f"matrix of shape {M.shape} does not fit {shape}")
    return rearrange_inv(M.T, shape.transposed).T


def soft_threshold(x, tau):
    """Elementwise shrinkage sgn(x) * max(|x| - tau, 0)."""
    if tau < 0:
        raise DomainError(f"threshold must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return float(out) if out.ndim == 0 else out


def svt(M, tau, return_singular_values=False):
    """Singular value thresholding.

    Args:
        M (np.ndarray): Input matrix.
        tau (float): Nonnegative threshold.
        return_singular_values (bool): Also return the shrunk singular values.

    Returns:
        np.ndarray: U diag(max(s - tau, 0)) V^T, optionally with the shrunk values.
    """
    if tau < 0:
        raise DomainError(f"threshold must be nonnegative, got {tau}")
    M = np.asarray(M, dtype=float)
    try:
        U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesdd")
    except (np.linalg.LinAlgError, ValueError):
        try:
            U, s, Vt = scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")
        except (np.linalg.LinAlgError, ValueError) as err:
            raise NumericalError(f"SVD failed: {err}") from err
    shrunk = np.maximum(s - tau, 0.0)
    out = (U * shrunk) @ Vt
    if return_singular_values:
        return out, shrunk
    return out


def spectral_radius(M):
    """Largest eigenvalue modulus of a square matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"spectral radius needs a square matrix, got {M.shape}")
    if M.size == 0:
        return 0.0
    try:
        eig = scipy.linalg.eigvals(M)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise NumericalError(f"eigensolver failed: {err}") from err
    return float(np.max(np.abs(eig)))


def eigvals(M):
    try:
        return scipy.linalg.eigvals(np.asarray(M, dtype=float))
    except (np.linalg.LinAlgError, ValueError) as err:
        raise NumericalError(f"eigensolver failed: {err}") from err


def logdet_I_minus_kron(eigW, C):
    """Log-determinant of I - W kron C from the eigenvalues of W and C.

    det(I - W kron C) = prod_ij (1 - lambda_i(W) mu_j(C)). The logs of the
    factors are summed in complex arithmetic; the accumulated phase must be a
    multiple of 2 pi (real positive determinant).

    Args:
        eigW (np.ndarray): Complex eigenvalues of W.
        C (np.ndarray): k x k matrix.

    Returns:
        float: ln det(I - W kron C).

    Raises:
        DomainError: The determinant is zero or negative.
    """
    mu = eigvals(C)
    factors = 1.0 - np.outer(np.asarray(eigW), mu)
    if np.any(factors == 0):
        raise DomainError("det(I - W kron C) is zero")
    logs = np.log(factors.astype(complex))
    total = logs.sum()
    phase = np.angle(np.exp(1j * total.imag))
    if abs(np.sin(phase)) > IMAG_RESIDUAL_TOL:
        raise NumericalError(
            f"det(I - W kron C) has a non-negligible imaginary part (phase {phase:.3e})")
    if np.cos(phase) <= 0:
        raise DomainError("det(I - W kron C) is not positive")
    return float(total.real)
