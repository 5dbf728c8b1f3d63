"""Dense linear-algebra kernels shared by the solvers.

Everything here is a pure function on numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymEigResult",
    "SylvesterIllPosedError",
    "pinv",
    "laplacian",
    "sym_eigs_smallest",
    "block_diag_regularizer",
    "project_to_B",
    "in_affinity_set",
    "solve_sylvester",
]

SYM_TOL = 1e-8
FEAS_TOL = 1e-10
SPECTRUM_TOL = 1e-10


class SylvesterIllPosedError(np.linalg.LinAlgError):
    """Raised when the Sylvester operator is (numerically) singular."""


@dataclass(frozen=True)
class SymEigResult:
    values: np.ndarray
    vectors: np.ndarray


def _square(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def pinv(M):
    """Moore-Penrose pseudo-inverse.

    Singular values below ``max(m, n) * eps * s_max`` are treated as zero, so
    exactly rank-deficient input does not pick up round-off directions.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.zeros(M.shape[::-1])
    return np.linalg.pinv(M, rcond=max(M.shape) * np.finfo(float).eps)


def laplacian(B):
    """Graph Laplacian ``Diag(B 1) - B`` of an affinity matrix."""
    B = _square(B, "affinity")
    return np.diag(B.sum(axis=1)) - B


def _fix_signs(vectors):
    # largest-magnitude entry of each column made positive
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigs_smallest(S, k):
    """Eigenpairs for the ``k`` smallest eigenvalues of a symmetric matrix.

    Parameters
    ----------
    S : ndarray, shape (n, n)
        Symmetric matrix. Asymmetry above ``1e-8`` (relative Frobenius) is
        rejected rather than silently symmetrized.
    k : int
        Number of eigenpairs, ``1 <= k <= n``.

    Returns
    -------
    SymEigResult
        Ascending ``values`` (length k) and orthonormal ``vectors`` (n x k).
        Each eigenvector's largest-magnitude entry is positive so results are
        reproducible across LAPACK builds.
    """
    S = _square(S)
    n = S.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    scale = max(1.0, np.linalg.norm(S))
    if np.linalg.norm(S - S.T) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    S = (S + S.T) / 2
    values, vectors = np.linalg.eigh(S)
    return SymEigResult(values[:k].copy(), _fix_signs(vectors[:, :k]))


def in_affinity_set(B, tol=FEAS_TOL):
    """True if ``B`` has zero diagonal, is symmetric and nonnegative (within tol)."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        return False
    return bool(
        np.all(np.abs(np.diag(B)) <= tol)
        and np.all(np.abs(B - B.T) <= tol)
        and np.all(B >= -tol)
    )


def block_diag_regularizer(B, k):
    """Sum of the ``k`` smallest eigenvalues of the Laplacian of ``B``.

    Zero exactly when the graph of ``B`` has at least ``k`` connected
    components.
    """
    B = _square(B, "affinity")
    if not in_affinity_set(B, SYM_TOL):
        raise ValueError("B must be symmetric, nonnegative and have a zero diagonal")
    L = laplacian((B + B.T) / 2)
    values = np.linalg.eigvalsh(L)[:k]
    # L is PSD; clip round-off below zero
    return float(max(values.sum(), 0.0))


def project_to_B(A):
    """Euclidean projection onto {zero diagonal, symmetric, nonnegative}.

    Closed form: zero the diagonal, symmetrize, clip at zero.
    """
    A = _square(A)
    Ahat = A - np.diag(np.diag(A))
    B = np.maximum((Ahat + Ahat.T) / 2, 0.0)
    # (x + y)/2 is commutative in IEEE arithmetic, so B is exactly symmetric
    np.fill_diagonal(B, 0.0)
    return B


def solve_sylvester(A, Bmat, C):
    """Solve ``A W + W Bmat = C`` for W.

    ``A`` (r x r) is expected to be symmetric, which is the case for the
    Gram-type left factor of the embedding update. It is diagonalized once;
    if ``Bmat`` is symmetric too the solve is fully diagonal, otherwise each
    eigen-direction of ``A`` gives one shifted n x n system. Non-symmetric
    ``A`` falls back to Bartels-Stewart (scipy).

    Raises
    ------
    SylvesterIllPosedError
        If some eigenvalue of ``A`` plus some eigenvalue of ``Bmat`` is within
        ``1e-10`` of zero, i.e. the solution is not unique.
    """
    A = _square(A, "A")
    Bmat = _square(Bmat, "Bmat")
    C = np.asarray(C, dtype=float)
    r, n = A.shape[0], Bmat.shape[0]
    if C.shape != (r, n):
        raise ValueError(f"C must have shape {(r, n)}, got {C.shape}")

    a_sym = np.linalg.norm(A - A.T) <= SYM_TOL * max(1.0, np.linalg.norm(A))
    b_sym = np.linalg.norm(Bmat - Bmat.T) <= SYM_TOL * max(1.0, np.linalg.norm(Bmat))

    if not a_sym:
        import scipy.linalg

        gap = np.abs(np.linalg.eigvals(A)[:, None] + np.linalg.eigvals(Bmat)[None, :])
        _check_gap(gap)
        return scipy.linalg.solve_sylvester(A, Bmat, C)

    a_vals, Qa = np.linalg.eigh((A + A.T) / 2)
    if b_sym:
        b_vals, Qb = np.linalg.eigh((Bmat + Bmat.T) / 2)
        denom = a_vals[:, None] + b_vals[None, :]
        _check_gap(np.abs(denom))
        return Qa @ ((Qa.T @ C @ Qb) / denom) @ Qb.T

    _check_gap(np.abs(a_vals[:, None] + np.linalg.eigvals(Bmat)[None, :]))
    Ct = Qa.T @ C
    Wt = np.empty_like(Ct)
    eye = np.eye(n)
    for i, a in enumerate(a_vals):
        # row i: w (a I + Bmat) = c
        Wt[i] = np.linalg.solve((a * eye + Bmat).T, Ct[i])
    return Qa @ Wt


def _check_gap(gap):
    if gap.size and gap.min() <= SPECTRUM_TOL:
        raise SylvesterIllPosedError(
            f"spectra of A and -Bmat overlap (min |a_i + b_j| = {gap.min():.3e})"
        )
