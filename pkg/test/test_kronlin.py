import pytest
import numpy as np
import os
import sys

# Add parent directory to Python path
parent_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.append(parent_dir)

from sigmar import kronlin
from sigmar.errors import DimensionError, DomainError


def _blocks_oracle(M, shape):
    rows = []
    for l in range(shape.p2):
        for j in range(shape.p1):
            block = M[j * shape.d1:(j + 1) * shape.d1, l * shape.d2:(l + 1) * shape.d2]
            rows.append(block.flatten(order="F"))
    return np.array(rows)


def _stable(rng, size, radius):
    M = rng.standard_normal((size, size))
    return M * radius / np.max(np.abs(np.linalg.eigvals(M)))


def test_vec_stacks_columns():
    np.testing.assert_array_equal(kronlin.vec([[1, 2], [3, 4]]), [1, 3, 2, 4])
    np.testing.assert_array_equal(kronlin.vec(np.zeros((2, 3))), np.zeros(6))


def test_unvec_round_trip(rng):
    M = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(kronlin.unvec(kronlin.vec(M), 3, 2), M)
    np.testing.assert_array_equal(kronlin.unvec([1, 2, 3, 4], 2, 2), [[1, 3], [2, 4]])


def test_unvec_length_mismatch():
    with pytest.raises(DimensionError):
        kronlin.unvec(np.arange(5.0), 2, 2)


def test_kron_matches_definition(rng):
    np.testing.assert_array_equal(kronlin.kron(np.eye(2), np.eye(3)), np.eye(6))
    np.testing.assert_array_equal(kronlin.kron([[2]], [[0, 1], [1, 0]]), [[0, 2], [2, 0]])
    P, Q = rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
    K = kronlin.kron(P, Q)
    for i in range(2):
        for j in range(2):
            for a in range(3):
                for b in range(3):
                    assert K[3 * i + a, 3 * j + b] == pytest.approx(P[i, j] * Q[a, b])


def test_rearrange_small_example():
    out = kronlin.rearrange([[1, 2], [3, 4]], kronlin.BlockShape(2, 2, 1, 1))
    np.testing.assert_array_equal(out, [[1], [3], [2], [4]])


@pytest.mark.parametrize("shape", [kronlin.BlockShape(2, 3, 2, 4), kronlin.BlockShape(3, 3, 2, 2),
                                   kronlin.BlockShape(1, 2, 3, 1)])
def test_rearrange_matches_block_enumeration(rng, shape):
    M = rng.standard_normal((shape.p1 * shape.d1, shape.p2 * shape.d2))
    np.testing.assert_array_equal(kronlin.rearrange(M, shape), _blocks_oracle(M, shape))
    np.testing.assert_array_equal(kronlin.rearrange_inv(kronlin.rearrange(M, shape), shape), M)


def test_rearrange_kron_is_rank_one(rng):
    for _ in range(50):
        W, C = rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
        shape = kronlin.BlockShape(2, 2, 3, 3)
        R = kronlin.rearrange(np.kron(W, C), shape)
        np.testing.assert_allclose(R, np.outer(kronlin.vec(W), kronlin.vec(C)), rtol=0, atol=1e-14)
        np.testing.assert_allclose(kronlin.rearrange_inv(R, shape), np.kron(W, C), rtol=0, atol=1e-14)
        s = np.linalg.svd(R, compute_uv=False)
        assert s[1] <= 1e-12 * s[0]


def test_rearrange_zero_and_shape_errors():
    shape = kronlin.BlockShape(2, 2, 3, 3)
    np.testing.assert_array_equal(kronlin.rearrange(np.zeros((6, 6)), shape), np.zeros((4, 9)))
    np.testing.assert_array_equal(kronlin.rearrange_inv(np.zeros((4, 9)), shape), np.zeros((6, 6)))
    with pytest.raises(DimensionError):
        kronlin.rearrange(np.zeros((5, 6)), shape)
    with pytest.raises(DimensionError):
        kronlin.rearrange_inv(np.zeros((9, 4)), shape)
    with pytest.raises(DimensionError):
        kronlin.BlockShape(0, 1, 1, 1)


def test_rearrange2_identities(rng):
    shape = kronlin.BlockShape(2, 2, 3, 3)
    for _ in range(50):
        W, C = rng.standard_normal((2, 2)), rng.standard_normal((3, 3))
        K = np.kron(W, C)
        R = kronlin.rearrange(K, shape)
        np.testing.assert_allclose(kronlin.rearrange2(R.T, shape).T, K, rtol=0, atol=1e-14)
    E = rng.standard_normal((2, 2))
    square = kronlin.BlockShape(2, 2, 2, 2)
    np.testing.assert_allclose(kronlin.rearrange2(np.kron(E, E), square),
                               np.outer(kronlin.vec(E), kronlin.vec(E)), rtol=0, atol=1e-14)
    np.testing.assert_array_equal(kronlin.rearrange2(np.zeros((9, 4)), shape), np.zeros((6, 6)))


@pytest.mark.parametrize("x, tau, expected", [(2.0, 1.5, 0.5), (-1.0, 1.5, 0.0), (-3.0, 1.0, -2.0)])
def test_soft_threshold(x, tau, expected):
    assert kronlin.soft_threshold(x, tau) == pytest.approx(expected)


def test_soft_threshold_identity_and_contraction(rng):
    x, y = rng.standard_normal(100), rng.standard_normal(100)
    np.testing.assert_array_equal(kronlin.soft_threshold(x, 0.0), x)
    gap = np.abs(kronlin.soft_threshold(x, 0.3) - kronlin.soft_threshold(y, 0.3))
    assert np.all(gap <= np.abs(x - y) + 1e-15)
    with pytest.raises(DomainError):
        kronlin.soft_threshold(x, -1.0)


def test_svt_examples(rng):
    np.testing.assert_allclose(kronlin.svt(np.diag([3.0, 1.0]), 2.0), np.diag([1.0, 0.0]), atol=1e-12)
    M = rng.standard_normal((4, 4))
    np.testing.assert_allclose(kronlin.svt(M, 0.0), M, atol=1e-12)
    s = np.linalg.svd(M, compute_uv=False)
    out = kronlin.svt(M, 0.5)
    assert np.linalg.norm(out, "nuc") == pytest.approx(np.sum(np.maximum(s - 0.5, 0)), rel=1e-10)


def test_svt_minimizes_proximal_objective(rng):
    M, tau = rng.standard_normal((4, 5)), 0.7
    out = kronlin.svt(M, tau)

    def objective(L):
        return tau * np.linalg.norm(L, "nuc") + 0.5 * np.linalg.norm(L - M) ** 2
    best = objective(out)
    for _ in range(100):
        assert objective(out + 1e-3 * rng.standard_normal(M.shape)) > best


def test_spectral_radius(rng):
    assert kronlin.spectral_radius(np.eye(3)) == pytest.approx(1.0)
    assert kronlin.spectral_radius([[0.0, 1.0], [-1.0, 0.0]]) == pytest.approx(1.0)
    A = rng.uniform(size=(4, 4))
    # positive matrix: power iteration converges to the Perron root
    v = np.ones(4)
    for _ in range(500):
        v = A @ v
        v /= np.linalg.norm(v)
    assert kronlin.spectral_radius(A) == pytest.approx(v @ A @ v, rel=1e-8)
    with pytest.raises(DimensionError):
        kronlin.spectral_radius(np.zeros((2, 3)))


def test_logdet_examples():
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    eigW = np.linalg.eigvals(W)
    assert kronlin.logdet_I_minus_kron(eigW, np.zeros((3, 3))) == pytest.approx(0.0, abs=1e-14)
    assert kronlin.logdet_I_minus_kron(eigW, [[0.5]]) == pytest.approx(np.log(0.75), rel=1e-12)


def test_logdet_matches_dense_determinant(rng):
    for _ in range(100):
        k, n = rng.integers(1, 6), rng.integers(2, 11)
        W = rng.uniform(size=(n, n))
        np.fill_diagonal(W, 0)
        W /= W.sum(axis=1, keepdims=True)
        C = _stable(rng, k, rng.uniform(0.1, 0.9))
        sign, dense = np.linalg.slogdet(np.eye(k * n) - np.kron(W, C))
        assert sign > 0
        value = kronlin.logdet_I_minus_kron(np.linalg.eigvals(W), C)
        assert value == pytest.approx(dense, rel=1e-8, abs=1e-10)


def test_logdet_nonpositive_determinant():
    W = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(DomainError):
        kronlin.logdet_I_minus_kron(np.linalg.eigvals(W), [[2.0]])
    with pytest.raises(DomainError):
        kronlin.logdet_I_minus_kron(np.linalg.eigvals(W), [[1.0]])
