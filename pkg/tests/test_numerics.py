import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from jella.numerics import (
    SylvesterIllPosedError,
    block_diag_regularizer,
    in_affinity_set,
    laplacian,
    pinv,
    project_to_B,
    solve_sylvester,
    sym_eigs_smallest,
)

from conftest import random_affinity

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- pinv

def test_pinv_identity_and_zero():
    assert np.allclose(pinv(np.eye(4)), np.eye(4))
    assert np.array_equal(pinv(np.zeros((3, 2))), np.zeros((2, 3)))


def _penrose_residuals(M, X):
    rel = lambda E, R: np.linalg.norm(E) / max(np.linalg.norm(R), 1e-300)
    MX, XM = M @ X, X @ M
    return [rel(M @ X @ M - M, M), rel(X @ M @ X - X, X), rel(MX.T - MX, MX), rel(XM.T - XM, XM)]


# integer entries make exact rank deficiency common
@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.integers(-4, 4).map(float)))
def test_pinv_penrose_conditions(M):
    if not M.any():
        assert not pinv(M).any()
        return
    assert max(_penrose_residuals(M, pinv(M))) <= 1e-8


def test_pinv_penrose_random_5x3(rng):
    for _ in range(50):
        M = rng.standard_normal((5, 3))
        assert max(_penrose_residuals(M, pinv(M))) <= 1e-8


def test_pinv_involution_full_rank(rng):
    for _ in range(20):
        M = rng.standard_normal((6, 4))
        assert np.linalg.norm(pinv(pinv(M)) - M) <= 1e-7 * np.linalg.norm(M)


# ---------------------------------------------------------------- laplacian

def test_laplacian_examples():
    assert np.array_equal(laplacian(np.zeros((3, 3))), np.zeros((3, 3)))
    B = np.ones((2, 2)) - np.eye(2)
    assert np.array_equal(laplacian(B), [[1, -1], [-1, 1]])
    with pytest.raises(ValueError):
        laplacian(np.ones((2, 3)))


def test_laplacian_psd_and_zero_rows(rng):
    for n in (2, 5, 17):
        L = laplacian(random_affinity(rng, n))
        assert np.allclose(L.sum(1), 0, atol=1e-12)
        assert np.linalg.eigvalsh(L).min() >= -1e-10


# ---------------------------------------------------------------- eigensolver

def test_sym_eigs_examples():
    res = sym_eigs_smallest(np.eye(3), 2)
    assert np.allclose(res.values, [1, 1])
    res = sym_eigs_smallest(np.diag([3.0, 1.0, 2.0]), 1)
    assert np.isclose(res.values[0], 1.0)
    assert np.allclose(np.abs(res.vectors[:, 0]), [0, 1, 0])
    clique = np.ones((3, 3)) - np.eye(3)
    B = scipy.linalg.block_diag(clique, clique)
    assert np.allclose(sym_eigs_smallest(laplacian(B), 2).values, 0, atol=1e-12)


def test_sym_eigs_errors():
    with pytest.raises(ValueError):
        sym_eigs_smallest(np.array([[0.0, 1.0], [0.0, 0.0]]), 1)
    with pytest.raises(ValueError):
        sym_eigs_smallest(np.eye(3), 4)
    with pytest.raises(ValueError):
        sym_eigs_smallest(np.eye(3), 0)


@given(st.integers(2, 12), st.integers(0, 2**31 - 1), st.data())
def test_sym_eigs_contract(n, seed, data):
    k = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, n))
    S = S + S.T
    res = sym_eigs_smallest(S, k)
    assert np.all(np.diff(res.values) >= 0)
    assert np.linalg.norm(res.vectors.T @ res.vectors - np.eye(k)) <= 1e-8
    assert np.linalg.norm(S @ res.vectors - res.vectors * res.values) <= 1e-7 * np.linalg.norm(S)
    # oracle: scipy's subset eigensolver
    ref = scipy.linalg.eigh(S, eigvals_only=True, subset_by_index=[0, k - 1])
    assert np.allclose(res.values, ref, atol=1e-9)
    # sign convention: largest-magnitude entry positive
    for col in res.vectors.T:
        assert col[np.argmax(np.abs(col))] > 0


# ---------------------------------------------------------------- regularizer

def test_regularizer_examples(rng):
    block = np.ones((3, 3)) - np.eye(3)
    B = scipy.linalg.block_diag(block, block)
    assert abs(block_diag_regularizer(B, 2)) <= 1e-8
    assert block_diag_regularizer(np.zeros((4, 4)), 3) == 0
    B = random_affinity(rng, 7)
    assert np.isclose(block_diag_regularizer(B, 7), np.trace(laplacian(B)))
    with pytest.raises(ValueError):
        block_diag_regularizer(-B, 2)


@given(st.integers(2, 10), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_regularizer_zero_iff_k_components(n, k, seed):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    # n nodes split into `c` connected blocks
    c = int(rng.integers(1, n + 1))
    sizes = np.bincount(rng.integers(0, c, n), minlength=c)
    sizes = sizes[sizes > 0]
    blocks = [np.ones((s, s)) - np.eye(s) for s in sizes]
    B = scipy.linalg.block_diag(*blocks) * (1 + rng.random((n, n)))
    B = (B + B.T) / 2
    val = block_diag_regularizer(B, k)
    assert val >= 0
    assert (val <= 1e-8) == (len(sizes) >= k)


# ---------------------------------------------------------------- projection

def test_projection_examples():
    A = np.array([[0.0, 2.0], [2.0, 0.0]])
    assert np.array_equal(project_to_B(A), A)
    assert np.allclose(project_to_B(np.array([[1.0, -2.0], [3.0, 4.0]])), [[0, 0.5], [0.5, 0]])
    assert np.array_equal(project_to_B(-np.ones((3, 3))), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        project_to_B(np.ones((2, 3)))


def test_projection_2x2_grid_oracle():
    # the feasible 2x2 set is {[[0, b], [b, 0]] : b >= 0}; brute-force b on a fine grid
    A = np.array([[1.0, -2.0], [3.0, 4.0]])
    grid = np.linspace(0, 5, 500001)
    cost = (grid - A[0, 1]) ** 2 + (grid - A[1, 0]) ** 2
    b = grid[np.argmin(cost)]
    assert abs(project_to_B(A)[0, 1] - b) <= 1e-6


@given(arrays(float, st.tuples(st.integers(1, 6), st.just(0)).map(lambda t: (t[0], t[0])),
              elements=finite))
def test_projection_feasible_and_idempotent(A):
    B = project_to_B(A)
    assert in_affinity_set(B, 0.0)
    assert np.array_equal(project_to_B(B), B)


def test_projection_beats_random_feasible(rng):
    for _ in range(20):
        n = int(rng.integers(2, 6))
        A = rng.standard_normal((n, n)) * 3
        best = np.linalg.norm(project_to_B(A) - A)
        for _ in range(1000):
            cand = random_affinity(rng, n) * rng.exponential(2.0)
            assert best <= np.linalg.norm(cand - A) + 1e-12


# ---------------------------------------------------------------- sylvester

def test_sylvester_examples(rng):
    C = rng.standard_normal((3, 4))
    assert np.allclose(solve_sylvester(np.eye(3), np.zeros((4, 4)), C), C)
    assert np.allclose(solve_sylvester(2 * np.eye(3), 2 * np.eye(4), C), C / 4)


def _kron_solve(A, B, C):
    r, n = C.shape
    op = np.kron(np.eye(n), A) + np.kron(B.T, np.eye(r))
    return np.linalg.solve(op, C.reshape(-1, order="F")).reshape((r, n), order="F")


@pytest.mark.parametrize("symmetric_b", [True, False])
def test_sylvester_matches_kronecker(rng, symmetric_b):
    for _ in range(20):
        r, n = int(rng.integers(1, 5)), int(rng.integers(1, 12))
        G = rng.standard_normal((r, r))
        A = G @ G.T + 0.5 * np.eye(r)
        H = rng.standard_normal((n, n))
        B = H @ H.T if symmetric_b else H @ H.T + 0.3 * rng.standard_normal((n, n))
        if not symmetric_b:
            B += 2 * np.abs(np.linalg.eigvals(B)).max() * np.eye(n)
        C = rng.standard_normal((r, n))
        W = solve_sylvester(A, B, C)
        assert np.linalg.norm(W - _kron_solve(A, B, C)) <= 1e-6 * max(1, np.linalg.norm(W))


def test_sylvester_nonsymmetric_a_falls_back(rng):
    A = rng.standard_normal((3, 3)) + 5 * np.eye(3)
    B = rng.standard_normal((4, 4))
    B = B @ B.T
    C = rng.standard_normal((3, 4))
    W = solve_sylvester(A, B, C)
    assert np.linalg.norm(A @ W + W @ B - C) <= 1e-8 * max(1, np.linalg.norm(C))


def test_sylvester_ill_posed():
    with pytest.raises(SylvesterIllPosedError):
        solve_sylvester(np.zeros((2, 2)), np.zeros((3, 3)), np.ones((2, 3)))
    with pytest.raises(SylvesterIllPosedError):
        solve_sylvester(np.eye(2), -np.eye(3), np.ones((2, 3)))
    with pytest.raises(ValueError):
        solve_sylvester(np.eye(2), np.eye(3), np.ones((3, 2)))
