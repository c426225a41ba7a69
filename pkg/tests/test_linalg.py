import numpy as np
import pytest

from dirotq.errors import ShapeError
from dirotq.linalg import EigenDecomposition, as_matrix, eigh_descending, matmul, random_orthogonal

from oracles import eigvals_oracle, lu_det_oracle, matmul_oracle


def test_matmul_identity():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((5, 5))
    assert np.array_equal(matmul(a, np.eye(5)), a)


def test_matmul_hand_2x2():
    out = matmul([[1.0, 2.0], [3.0, 4.0]], [[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(out, [[19.0, 22.0], [43.0, 50.0]])


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(11)
    a = rng.standard_normal((8, 8))
    b = rng.standard_normal((8, 8))
    got = matmul(a, b)
    want = matmul_oracle(a, b)
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(ShapeError, match=r"\(2, 3\) x \(2, 3\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_rejects_non_2d():
    with pytest.raises(ShapeError):
        matmul(np.zeros(3), np.zeros((3, 2)))


def test_matmul_associativity():
    rng = np.random.default_rng(21)
    a, b, c = (rng.standard_normal((6, 6)) for _ in range(3))
    left = matmul(matmul(a, b), c)
    right = matmul(a, matmul(b, c))
    assert np.max(np.abs(left - right)) <= 1e-10 * np.max(np.abs(left))


def test_matmul_deterministic_rerun():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((64, 32))
    b = rng.standard_normal((32, 48))
    assert np.array_equal(matmul(a, b), matmul(a, b))


def test_as_matrix_rejects_nan():
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix([[1.0, float("nan")]])


def test_eigh_diagonal():
    eig = eigh_descending(np.diag([2.0, 1.0]))
    assert np.array_equal(eig.values, [2.0, 1.0])
    assert np.array_equal(eig.vectors, np.eye(2))


def test_eigh_rank_one():
    eig = eigh_descending([[1.0, 1.0], [1.0, 1.0]])
    assert np.allclose(eig.values, [2.0, 0.0], atol=1e-14)
    # dominant eigenvector is (1,1)/sqrt(2), sign-fixed positive
    assert np.allclose(eig.vectors[:, 0], np.full(2, 1.0 / np.sqrt(2.0)), atol=1e-14)


def test_eigh_values_match_power_iteration_oracle():
    rng = np.random.default_rng(42)
    g = rng.standard_normal((16, 16))
    sym = (g + g.T) / 2.0
    eig = eigh_descending(sym)
    want = eigvals_oracle(sym)
    assert np.max(np.abs(eig.values - want)) <= 1e-8
    assert np.all(np.diff(eig.values) <= 0.0)


def test_eigh_reconstruction_and_orthonormality():
    rng = np.random.default_rng(7)
    g = rng.standard_normal((32, 32))
    sym = (g + g.T) / 2.0
    eig = eigh_descending(sym)
    v = eig.vectors
    recon = v @ np.diag(eig.values) @ v.T
    rel = np.linalg.norm(recon - sym) / np.linalg.norm(sym)
    assert rel <= 1e-10
    assert np.max(np.abs(v.T @ v - np.eye(32))) <= 1e-10


def test_eigh_trace_identity():
    rng = np.random.default_rng(9)
    g = rng.standard_normal((12, 12))
    sym = g @ g.T
    eig = eigh_descending(sym)
    assert abs(eig.values.sum() - np.trace(sym)) <= 1e-8 * abs(np.trace(sym))


def test_eigh_sign_convention():
    rng = np.random.default_rng(13)
    g = rng.standard_normal((10, 10))
    eig = eigh_descending(g @ g.T)
    for col in eig.vectors.T:
        assert col[np.argmax(np.abs(col))] > 0.0


def test_eigh_rejects_nonsquare():
    with pytest.raises(ShapeError):
        eigh_descending(np.zeros((2, 3)))


def test_eigh_rejects_asymmetric():
    with pytest.raises(ValueError, match="not symmetric"):
        eigh_descending([[1.0, 0.5], [0.0, 1.0]])


def test_eigh_symmetrizes_roundoff_noise():
    rng = np.random.default_rng(17)
    g = rng.standard_normal((6, 6))
    sym = g @ g.T
    noisy = sym + rng.uniform(-1e-9, 1e-9, size=sym.shape)
    eig = eigh_descending(noisy)
    assert isinstance(eig, EigenDecomposition)


def test_random_orthogonal_dim_one_is_sign():
    q = random_orthogonal(1, seed=0)
    assert q.shape == (1, 1)
    assert abs(abs(q[0, 0]) - 1.0) <= 1e-15


def test_random_orthogonal_is_orthogonal_with_unit_determinant():
    q = random_orthogonal(64, seed=7)
    assert np.max(np.abs(q.T @ q - np.eye(64))) < 1e-6
    assert abs(abs(lu_det_oracle(q)) - 1.0) < 1e-4
    assert np.max(np.abs(np.linalg.norm(q, axis=0) - 1.0)) <= 1e-12


def test_random_orthogonal_seed_determinism():
    a = random_orthogonal(16, seed=123)
    b = random_orthogonal(16, seed=123)
    c = random_orthogonal(16, seed=124)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_random_orthogonal_rejects_bad_dim():
    with pytest.raises(ValueError):
        random_orthogonal(0, seed=1)
