"""IML-BDR: incomplete multi-view learning with a block-diagonal representation.

Objective (Ky Fan form), minimized by alternating exact sub-steps::

    sum_v ||Z_v - U_v W||^2 + alpha ||W - W P||^2 + beta ||P - B||^2
        + gamma tr(F^T L_B F)

    s.t. B in {diag 0, symmetric, >= 0}, F^T F = I, Z_v = X_v where observed.

:func:`bdr_fit` drives the over-relaxed variant: each pass extrapolates the
completed data by ``lam`` before the U-step, and ``lam`` is adapted from the
ratio of consecutive objective values. A pass that raises the objective is
thrown away and redone with ``lam = 1`` (the plain alternating pass, which
never increases it).
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from ..framework import (
    FrameworkContractError,
    IterationTrace,
    IterRecord,
    MONOTONE_SLACK,
    initial_embedding,
    mean_fill,
    stop_rule_relative,
)
from ..mvdata import MultiViewDataset
from ..numerics import (
    in_affinity_set,
    laplacian,
    pinv,
    project_to_B,
    solve_sylvester,
    sym_eigs_smallest,
)

logger = logging.getLogger(__name__)

__all__ = [
    "BdrConfig",
    "BdrState",
    "CONVERGED",
    "bdr_objective",
    "bdr_init",
    "bdr_step_U",
    "bdr_step_W",
    "bdr_step_P",
    "bdr_step_B",
    "bdr_step_F",
    "bdr_step_Z",
    "bdr_basic_iterate",
    "bdr_sor_iterate",
    "extrapolate",
    "rho_ratio",
    "check_state",
    "bdr_fit",
]

ORTHO_TOL = 1e-8

# returned by rho_ratio when the previous objective is exactly zero
CONVERGED = "converged"


@dataclass(frozen=True)
class BdrConfig:
    alpha: float = 1.0
    beta: float = 1e4
    gamma: float = 10.0
    k: int = 2
    r: Optional[int] = None  # defaults to k
    rho1: float = 0.7
    delta: float = 0.2
    lam_max: float = 5.0
    tol: float = 1e-4
    max_iter: int = 500
    seed: int = 0
    sor: bool = True
    check_invariants: bool = True

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0 or self.gamma < 0:
            raise ValueError("alpha and beta must be > 0, gamma >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.r is not None and self.r < 1:
            raise ValueError("r must be >= 1")
        if not 0 < self.rho1 < 1:
            raise ValueError("rho1 must lie in (0, 1)")
        if self.delta <= 0 or self.lam_max < 1:
            raise ValueError("delta must be > 0 and lam_max >= 1")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be > 0 and max_iter >= 1")

    @property
    def rank(self):
        return self.k if self.r is None else self.r


@dataclass
class BdrState:
    Z: List[np.ndarray]
    U: List[np.ndarray]
    W: np.ndarray
    P: np.ndarray
    B: np.ndarray
    F: np.ndarray
    lam: float = 1.0
    objective: float = float("nan")

    def copy(self):
        return BdrState(
            [Z.copy() for Z in self.Z],
            [U.copy() for U in self.U],
            self.W.copy(),
            self.P.copy(),
            self.B.copy(),
            self.F.copy(),
            self.lam,
            self.objective,
        )


def bdr_objective(state: BdrState, ds: MultiViewDataset, cfg: BdrConfig) -> float:
    if len(state.Z) != ds.n_views or len(state.U) != ds.n_views:
        raise ValueError("state and dataset disagree on the number of views")
    n = ds.n
    if state.W.shape[1] != n or state.P.shape != (n, n) or state.B.shape != (n, n):
        raise ValueError("state dimensions do not match the dataset")
    fit = 0.0
    for Z, U in zip(state.Z, state.U):
        D = Z - U @ state.W
        fit += np.vdot(D, D)
    S = state.W - state.W @ state.P
    E = state.P - state.B
    L = laplacian(state.B)
    kyfan = np.trace(state.F.T @ L @ state.F)
    return float(fit + cfg.alpha * np.vdot(S, S) + cfg.beta * np.vdot(E, E) + cfg.gamma * kyfan)


# ---------------------------------------------------------------- sub-steps


def _update_u(Zs, W):
    G = pinv(W @ W.T)
    return [Z @ W.T @ G for Z in Zs]


def _update_w(Zs, Us, P, alpha):
    A = sum(U.T @ U for U in Us)
    C = sum(U.T @ Z for U, Z in zip(Us, Zs))
    M = np.eye(P.shape[0]) - P
    # gradient of alpha ||W (I - P)||^2 is 2 alpha W (I - P)(I - P)^T
    return solve_sylvester(A, alpha * (M @ M.T), C)


def _update_p(W, B, alpha, beta):
    c = beta / alpha
    G = W.T @ W
    n = G.shape[0]
    # G + cI is SPD for c > 0
    return np.linalg.solve(G + c * np.eye(n), G + c * B)


def _kyfan_gradient(F):
    # d tr(F^T L_B F) / dB_ij = ||F_i||^2 - (F F^T)_ij
    FFt = F @ F.T
    return np.diag(FFt)[:, None] - FFt


def _update_b(P, F, beta, gamma):
    Q = P - gamma / (2 * beta) * _kyfan_gradient(F)
    return project_to_B(Q)


def _update_f(B, k):
    n = B.shape[0]
    return sym_eigs_smallest(laplacian(B), min(k, n)).vectors


def _update_z(ds, Us, W):
    Zs = []
    for view, U in zip(ds.views, Us):
        Z = U @ W
        Z[view.mask] = view.data[view.mask]
        Zs.append(Z)
    return Zs


def bdr_step_U(state: BdrState, ds: MultiViewDataset = None):
    """``U_v = Z_v W^T (W W^T)^+`` for every view."""
    return _update_u(state.Z, state.W)


def bdr_step_W(state: BdrState, ds: MultiViewDataset, cfg: BdrConfig):
    """Solve ``(sum_v U_v^T U_v) W + alpha W (I-P)(I-P)^T = sum_v U_v^T Z_v``."""
    return _update_w(state.Z, state.U, state.P, cfg.alpha)


def bdr_step_P(state: BdrState, cfg: BdrConfig):
    """``P = (W^T W + (beta/alpha) I)^{-1} (W^T W + (beta/alpha) B)``."""
    return _update_p(state.W, state.B, cfg.alpha, cfg.beta)


def bdr_step_B(state: BdrState, cfg: BdrConfig):
    return _update_b(state.P, state.F, cfg.beta, cfg.gamma)


def bdr_step_F(state: BdrState, cfg: BdrConfig):
    return _update_f(state.B, cfg.k)


def bdr_step_Z(state: BdrState, ds: MultiViewDataset):
    return _update_z(ds, state.U, state.W)


def extrapolate(state: BdrState, ds: MultiViewDataset, lam: float):
    """Over-relaxed data ``lam Z + (1 - lam) U W`` (equals ``U W + lam R``)."""
    return [lam * Z + (1.0 - lam) * (U @ state.W) for Z, U in zip(state.Z, state.U)]


def bdr_sor_iterate(state: BdrState, ds: MultiViewDataset, cfg: BdrConfig, lam: float) -> BdrState:
    """One over-relaxed pass: U from the extrapolated data, then W, P, B, F, Z.

    With ``lam = 1`` the extrapolation is the identity and this is exactly
    the plain alternating pass.
    """
    if lam < 1:
        raise ValueError(f"relaxation factor must be >= 1, got {lam}")
    Zl = extrapolate(state, ds, lam)
    Us = _update_u(Zl, state.W)
    W = _update_w(Zl, Us, state.P, cfg.alpha)
    P = _update_p(W, state.B, cfg.alpha, cfg.beta)
    B = _update_b(P, state.F, cfg.beta, cfg.gamma)
    F = _update_f(B, cfg.k)
    Zs = _update_z(ds, Us, W)
    new = BdrState(Zs, Us, W, P, B, F, lam)
    new.objective = bdr_objective(new, ds, cfg)
    return new


def bdr_basic_iterate(state: BdrState, ds: MultiViewDataset, cfg: BdrConfig) -> BdrState:
    """One plain alternating pass; raises if the objective goes up."""
    Us = _update_u(state.Z, state.W)
    W = _update_w(state.Z, Us, state.P, cfg.alpha)
    P = _update_p(W, state.B, cfg.alpha, cfg.beta)
    B = _update_b(P, state.F, cfg.beta, cfg.gamma)
    F = _update_f(B, cfg.k)
    new = BdrState(_update_z(ds, Us, W), Us, W, P, B, F, 1.0)
    new.objective = bdr_objective(new, ds, cfg)
    prev = state.objective
    if not np.isfinite(prev):
        prev = bdr_objective(state, ds, cfg)
    if new.objective > prev + MONOTONE_SLACK * max(1.0, abs(prev)):
        raise FrameworkContractError(
            f"basic iteration increased the objective: {prev!r} -> {new.objective!r}"
        )
    return new


def rho_ratio(g_prev: float, g_next: float):
    """``g_next / g_prev``, or :data:`CONVERGED` when ``g_prev == 0``."""
    if g_prev == 0:
        return CONVERGED
    if g_prev < 0:
        raise ValueError("objective values are nonnegative")
    return g_next / g_prev


def check_state(state: BdrState, ds: MultiViewDataset):
    """Raise :class:`FrameworkContractError` if any state invariant fails."""
    if not in_affinity_set(state.B, 0.0):
        raise FrameworkContractError("B left the affinity set")
    k = state.F.shape[1]
    if np.linalg.norm(state.F.T @ state.F - np.eye(k)) > ORTHO_TOL:
        raise FrameworkContractError("F lost orthonormality")
    for v, (view, Z) in enumerate(zip(ds.views, state.Z)):
        if not np.array_equal(Z[view.mask], view.data[view.mask]):
            raise FrameworkContractError(f"Z deviates from observed data in view {v}")
    if state.lam < 1:
        raise FrameworkContractError("relaxation factor below 1")


def _cosine_affinity(W):
    """Clipped cosine similarity of W's columns, degree-normalized.

    ``D^{-1/2} C D^{-1/2}`` has largest eigenvalue 1, so ``I - B`` is the
    normalized Laplacian of the similarity graph.
    """
    norms = np.linalg.norm(W, axis=0)
    Wn = np.divide(W, norms, out=np.zeros_like(W), where=norms > 0)
    C = project_to_B(Wn.T @ Wn)
    deg = C.sum(axis=1)
    inv = np.divide(1.0, np.sqrt(deg), out=np.zeros_like(deg), where=deg > 0)
    return project_to_B(inv[:, None] * C * inv[None, :])


def bdr_init(ds: MultiViewDataset, cfg: BdrConfig) -> BdrState:
    """Deterministic start: mean-filled Z, SVD embedding, cosine-affinity B = P."""
    r = cfg.rank
    limit = min([v.shape[0] for v in ds.views] + [ds.n])
    if r > limit:
        raise ValueError(f"rank {r} exceeds min(d_1..d_V, n) = {limit}")
    if cfg.k >= ds.n:
        warnings.warn(
            f"k={cfg.k} >= n={ds.n}: the block-diagonal term reduces to trace(L_B)",
            stacklevel=2,
        )
    Zs = mean_fill(ds)
    W = initial_embedding(Zs, r)
    Us = _update_u(Zs, W)
    B = _cosine_affinity(W)
    F = _update_f(B, cfg.k)
    state = BdrState(Zs, Us, W, B.copy(), B, F, 1.0)
    state.objective = bdr_objective(state, ds, cfg)
    return state


@dataclass
class BdrDiagnostics:
    """Successive-iterate differences for the tail of a run."""

    dP: List[float] = field(default_factory=list)
    dB: List[float] = field(default_factory=list)
    dZ: List[float] = field(default_factory=list)
    dF: List[float] = field(default_factory=list)
    normP: List[float] = field(default_factory=list)
    normB: List[float] = field(default_factory=list)
    normZ: List[float] = field(default_factory=list)

    def record(self, old: BdrState, new: BdrState):
        self.dP.append(float(np.linalg.norm(new.P - old.P)))
        self.dB.append(float(np.linalg.norm(new.B - old.B)))
        self.dZ.append(float(np.sqrt(sum(np.vdot(a - b, a - b) for a, b in zip(new.Z, old.Z)))))
        # subspace distance, insensitive to sign/rotation of eigenvectors
        self.dF.append(float(np.linalg.norm(new.F @ new.F.T - old.F @ old.F.T)))
        self.normP.append(float(np.linalg.norm(new.P)))
        self.normB.append(float(np.linalg.norm(new.B)))
        self.normZ.append(float(np.sqrt(sum(np.vdot(Z, Z) for Z in new.Z))))


def bdr_fit(ds: MultiViewDataset, cfg: BdrConfig, init: Optional[BdrState] = None,
            callback=None):
    """Fit IML-BDR with adaptive over-relaxation.

    Parameters
    ----------
    ds : MultiViewDataset
    cfg : BdrConfig
        ``cfg.sor = False`` pins ``lam`` to 1 (plain alternating passes).
    init : BdrState, optional
        Starting point; :func:`bdr_init` by default.
    callback : callable, optional
        Called as ``callback(state)`` after every accepted iteration.

    Returns
    -------
    state : BdrState
    trace : IterationTrace
        One record per pass. Rejected over-relaxed passes are kept with
        ``accepted=False``; ``trace.objectives`` lists accepted values only
        and is non-increasing. ``trace.diagnostics`` holds successive-iterate
        differences.
    """
    state = init.copy() if init is not None else bdr_init(ds, cfg)
    if not np.isfinite(state.objective):
        state.objective = bdr_objective(state, ds, cfg)
    stop_rule = stop_rule_relative(cfg.tol, cfg.max_iter)
    trace = IterationTrace(initial_objective=state.objective)
    trace.diagnostics = BdrDiagnostics()
    history: list = []
    lam = 1.0
    t = 0

    while True:
        t0 = time.perf_counter()
        candidate = bdr_sor_iterate(state, ds, cfg, lam)
        rho = rho_ratio(state.objective, candidate.objective)
        if rho != CONVERGED and rho >= 1 and lam > 1:
            trace.append(IterRecord(t + 1, candidate.objective, time.perf_counter() - t0,
                                    lam, accepted=False))
            logger.debug("pass %d rejected at lam=%.2f (rho=%.6f)", t + 1, lam, rho)
            lam = 1.0
            t0 = time.perf_counter()
            candidate = bdr_basic_iterate(state, ds, cfg)
            rho = rho_ratio(state.objective, candidate.objective)
        elif lam == 1.0 and rho != CONVERGED:
            # plain pass: enforce the monotone contract
            slack = MONOTONE_SLACK * max(1.0, abs(state.objective))
            if candidate.objective > state.objective + slack:
                raise FrameworkContractError(
                    f"basic iteration increased the objective: "
                    f"{state.objective!r} -> {candidate.objective!r}"
                )

        t += 1
        trace.append(IterRecord(t, candidate.objective, time.perf_counter() - t0, lam))
        trace.diagnostics.record(state, candidate)
        state = candidate
        if cfg.check_invariants:
            check_state(state, ds)
        if callback is not None:
            callback(state)
        history.append(state.objective)

        if rho == CONVERGED:
            trace.stop_reason = "converged"
            break
        reason = stop_rule(history)
        if reason is None and lam == 1.0 and rho >= 1:
            # a plain pass that made no progress cannot be improved upon
            reason = "converged"
        if reason is not None:
            trace.stop_reason = reason
            break
        if cfg.sor and cfg.rho1 <= rho < 1:
            lam = min(lam + cfg.delta, cfg.lam_max)
        state.lam = lam

    return state, trace
