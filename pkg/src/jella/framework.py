"""Generic alternating minimization for joint embedding + low-rank approximation.

Two drivers are provided:

* :func:`alternate_incomplete` works on masked data (any mix of missing views
  and missing entries). Each view gets a completed surrogate ``Z_v`` that is
  pinned to ``X_v`` on observed entries; iterations run U-step, W-step,
  Z-step.
* :func:`alternate_missing_view` works on whole-column availability only
  (index sets). Each view is fitted on its surviving columns and each sample
  embedding uses only the views it appears in.

Sub-solvers are plain callables. The drivers evaluate the objective after
every pass and raise :class:`FrameworkContractError` if it goes up, which is
how a non-exact sub-solver gets caught.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .mvdata import MultiViewDataset, OmegaSets, omega_sets
from .numerics import pinv

__all__ = [
    "FrameworkContractError",
    "JellaProblem",
    "JellaState",
    "IterRecord",
    "IterationTrace",
    "SubSolvers",
    "MissingViewSubSolvers",
    "squared_loss",
    "stop_rule_relative",
    "initial_state",
    "lstsq_u",
    "lstsq_w",
    "complete_z",
    "lstsq_w_missing",
    "alternate_incomplete",
    "alternate_missing_view",
    "jella_objective",
    "missing_view_objective",
]

MONOTONE_SLACK = 1e-9


class FrameworkContractError(RuntimeError):
    """A sub-solver broke the framework's contract (objective rose, constraint lost)."""


def squared_loss(Z, UW):
    D = Z - UW
    return float(np.vdot(D, D))


@dataclass
class JellaProblem:
    """Loss, regularizers and rank of one JELLA instance.

    ``loss(Z, UW)`` is evaluated per view. ``reg_u(U)`` is summed over views
    and weighted by ``gamma_u``; ``reg_w(W)`` is weighted by ``gamma_w``.
    The constraint fields are descriptive labels only; the sub-solvers are
    responsible for honouring them.
    """

    rank: int
    loss: Callable[[np.ndarray, np.ndarray], float] = squared_loss
    reg_u: Optional[Callable[[np.ndarray], float]] = None
    gamma_u: float = 0.0
    reg_w: Optional[Callable[[np.ndarray], float]] = None
    gamma_w: float = 0.0
    u_constraint: Optional[str] = None
    w_constraint: Optional[str] = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.gamma_u < 0 or self.gamma_w < 0:
            raise ValueError("regularization weights must be nonnegative")

    def validate(self, ds: MultiViewDataset):
        limit = min([v.shape[0] for v in ds.views] + [ds.n])
        if self.rank > limit:
            raise ValueError(f"rank {self.rank} exceeds min(d_1..d_V, n) = {limit}")

    def penalty(self, Us, W):
        total = 0.0
        if self.reg_u is not None and self.gamma_u:
            total += self.gamma_u * sum(self.reg_u(U) for U in Us)
        if self.reg_w is not None and self.gamma_w:
            total += self.gamma_w * self.reg_w(W)
        return total


@dataclass
class JellaState:
    Z: Optional[List[np.ndarray]]
    U: Optional[List[np.ndarray]]
    W: np.ndarray


@dataclass(frozen=True)
class IterRecord:
    iteration: int
    objective: float
    seconds: float
    lam: float = 1.0
    accepted: bool = True


@dataclass
class IterationTrace:
    records: List[IterRecord] = field(default_factory=list)
    stop_reason: Optional[str] = None
    initial_objective: Optional[float] = None

    def append(self, record: IterRecord):
        if not np.isfinite(record.objective):
            raise FrameworkContractError(f"non-finite objective at iteration {record.iteration}")
        self.records.append(record)

    @property
    def objectives(self):
        return [r.objective for r in self.records if r.accepted]

    @property
    def lambdas(self):
        return [r.lam for r in self.records if r.accepted]

    @property
    def n_iterations(self):
        return sum(r.accepted for r in self.records)

    @property
    def n_sweeps(self):
        """All passes, including rejected over-relaxed ones."""
        return len(self.records)

    @property
    def total_seconds(self):
        return float(sum(r.seconds for r in self.records))

    def __len__(self):
        return self.n_iterations


def stop_rule_relative(tol: float = 1e-4, max_iter: int = 500):
    """Relative-change stopping rule.

    The returned callable takes the objective history (one value per
    completed iteration, initial value excluded) and returns ``"converged"``
    once ``|g_{t-1} - g_t| / max(1, |g_{t-1}|) < tol``, ``"max_iter"`` once
    ``t >= max_iter``, else ``None``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")

    def rule(history: Sequence[float]):
        t = len(history)
        if t >= 2:
            prev, cur = history[-2], history[-1]
            if abs(prev - cur) / max(1.0, abs(prev)) < tol:
                return "converged"
        if t >= max_iter:
            return "max_iter"
        return None

    rule.tol = tol
    rule.max_iter = max_iter
    return rule


# ------------------------------------------------------------------ defaults


def mean_fill(ds: MultiViewDataset):
    """Per view: unobserved entries replaced by the row (feature) mean of observed ones."""
    Zs = []
    for view in ds.views:
        X = view.observed()
        counts = view.mask.sum(axis=1)
        means = np.divide(X.sum(axis=1), counts, out=np.zeros(X.shape[0]), where=counts > 0)
        Zs.append(np.where(view.mask, X, means[:, None]))
    return Zs


def initial_embedding(Zs, r):
    """Top-r right singular directions of the stacked views, scaled by singular values."""
    stacked = np.vstack(Zs)
    _, s, Vt = np.linalg.svd(stacked, full_matrices=False)
    W = s[:r, None] * Vt[:r]
    if W.shape[0] < r:
        W = np.vstack([W, np.zeros((r - W.shape[0], W.shape[1]))])
    return W


def initial_state(ds: MultiViewDataset, r: int) -> JellaState:
    Zs = mean_fill(ds)
    W = initial_embedding(Zs, r)
    Us = [lstsq_u(Z, W) for Z in Zs]
    return JellaState(Zs, Us, W)


def lstsq_u(Z, W, U_prev=None, v=None):
    """argmin_U ||Z - U W||^2 = Z W^T (W W^T)^+."""
    return Z @ W.T @ pinv(W @ W.T)


def lstsq_w(Zs, Us, W_prev=None):
    """argmin_W sum_v ||Z_v - U_v W||^2 (minimum-norm solution)."""
    G = sum(U.T @ U for U in Us)
    rhs = sum(U.T @ Z for U, Z in zip(Us, Zs))
    return pinv(G) @ rhs


def complete_z(view, U, W):
    """Z = U W on unobserved entries, X on observed entries (assembled by overwrite)."""
    Z = U @ W
    Z[view.mask] = view.data[view.mask]
    return Z


@dataclass
class SubSolvers:
    """Callbacks for :func:`alternate_incomplete`.

    ``update_u(Z_v, W, U_prev_v, v) -> U_v``, ``update_w(Zs, Us, W_prev) -> W``
    and ``update_z(view, U_v, W) -> Z_v``.
    """

    update_u: Callable = lstsq_u
    update_w: Callable = lstsq_w
    update_z: Callable = complete_z


def jella_objective(problem: JellaProblem, Zs, Us, W):
    return sum(problem.loss(Z, U @ W) for Z, U in zip(Zs, Us)) + problem.penalty(Us, W)


def _check_monotone(prev, cur, t):
    if prev is not None and cur > prev + MONOTONE_SLACK * max(1.0, abs(prev)):
        raise FrameworkContractError(
            f"objective increased at iteration {t}: {prev!r} -> {cur!r}"
        )


def _check_pinned(ds, Zs):
    for v, (view, Z) in enumerate(zip(ds.views, Zs)):
        if not np.array_equal(Z[view.mask], view.data[view.mask]):
            raise FrameworkContractError(f"Z-step broke the observed-entry constraint in view {v}")


def alternate_incomplete(
    problem: JellaProblem,
    ds: MultiViewDataset,
    solvers: Optional[SubSolvers] = None,
    stop_rule=None,
    init: Optional[JellaState] = None,
    callback: Optional[Callable] = None,
):
    """Alternate U-step, W-step, Z-step until ``stop_rule`` fires.

    Returns ``(state, trace)``. Views are updated in order; the W-step sees
    all freshly updated ``U_v``. ``callback(JellaState)`` runs after every
    iteration.
    """
    problem.validate(ds)
    solvers = solvers or SubSolvers()
    stop_rule = stop_rule or stop_rule_relative()
    state = init if init is not None else initial_state(ds, problem.rank)
    Zs = [np.array(Z, dtype=float) for Z in state.Z]
    _check_pinned(ds, Zs)
    Us = None if state.U is None else [np.array(U, dtype=float) for U in state.U]
    W = np.array(state.W, dtype=float)

    trace = IterationTrace()
    prev = jella_objective(problem, Zs, Us, W) if Us is not None else None
    trace.initial_objective = prev
    history: list = []
    while (reason := stop_rule(history)) is None:
        t0 = time.perf_counter()
        Us = [
            solvers.update_u(Z, W, None if Us is None else Us[v], v)
            for v, Z in enumerate(Zs)
        ]
        W = solvers.update_w(Zs, Us, W)
        Zs = [solvers.update_z(view, U, W) for view, U in zip(ds.views, Us)]
        g = jella_objective(problem, Zs, Us, W)
        _check_pinned(ds, Zs)
        _check_monotone(prev, g, len(history) + 1)
        trace.append(IterRecord(len(history) + 1, g, time.perf_counter() - t0))
        history.append(g)
        prev = g
        if callback is not None:
            callback(JellaState(Zs, Us, W))
    trace.stop_reason = reason
    return JellaState(Zs, Us, W), trace


# ------------------------------------------------------- missing-view setting


def availability_groups(avail):
    """Group sample indices by their view-availability pattern (column of ``avail``)."""
    patterns, inverse = np.unique(avail.T, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    return [(pattern, np.flatnonzero(inverse == g)) for g, pattern in enumerate(patterns)]


def lstsq_w_missing(Xs, Us, W_prev, omega: OmegaSets):
    """Per-sample least squares using only the views each sample appears in.

    Samples sharing an availability pattern are solved together.
    """
    W = np.array(W_prev, dtype=float, copy=True)
    avail = omega.availability()
    positions = [{int(i): j for j, i in enumerate(s)} for s in omega.sets]
    for pattern, idx in availability_groups(avail):
        views = np.flatnonzero(pattern)
        if views.size == 0:
            continue
        G = sum(Us[v].T @ Us[v] for v in views)
        rhs = sum(Us[v].T @ Xs[v][:, [positions[v][int(i)] for i in idx]] for v in views)
        W[:, idx] = pinv(G) @ rhs
    return W


def lstsq_u_missing(Xbar, Wbar, U_prev=None, v=None):
    return lstsq_u(Xbar, Wbar)


@dataclass
class MissingViewSubSolvers:
    """Callbacks for :func:`alternate_missing_view`.

    ``update_u(Xbar_v, Wbar_v, U_prev_v, v) -> U_v`` fits view v on its
    surviving columns; ``update_w(Xbars, Us, W_prev, omega) -> W`` updates
    every column of W.
    """

    update_u: Callable = lstsq_u_missing
    update_w: Callable = lstsq_w_missing


def missing_view_objective(problem: JellaProblem, Xbars, Us, W, omega: OmegaSets):
    loss = sum(
        problem.loss(Xb, U @ W[:, omega[v]]) for v, (Xb, U) in enumerate(zip(Xbars, Us))
    )
    return loss + problem.penalty(Us, W)


def alternate_missing_view(
    problem: JellaProblem,
    ds: MultiViewDataset,
    omega: Optional[OmegaSets] = None,
    solvers: Optional[MissingViewSubSolvers] = None,
    stop_rule=None,
    init: Optional[JellaState] = None,
    callback: Optional[Callable] = None,
):
    """Alternate per-view U-steps and per-sample embedding updates.

    Only fully observed columns (the index sets) enter the fit. Returns
    ``(state, trace)`` with ``state.Z`` set to None. ``callback(JellaState)``
    runs after every iteration.
    """
    problem.validate(ds)
    omega = omega if omega is not None else omega_sets(ds)
    missing = set(range(ds.n)) - set(np.concatenate(omega.sets).tolist())
    if missing:
        raise ValueError(f"samples {sorted(missing)[:10]} are absent from every view")
    solvers = solvers or MissingViewSubSolvers()
    stop_rule = stop_rule or stop_rule_relative()
    Xbars = [view.observed()[:, omega[v]] for v, view in enumerate(ds.views)]
    if init is None:
        init = initial_state(ds, problem.rank)
    Us = None if init.U is None else [np.array(U, dtype=float) for U in init.U]
    W = np.array(init.W, dtype=float)

    trace = IterationTrace()
    prev = missing_view_objective(problem, Xbars, Us, W, omega) if Us is not None else None
    trace.initial_objective = prev
    history: list = []
    while (reason := stop_rule(history)) is None:
        t0 = time.perf_counter()
        Us = [
            solvers.update_u(Xb, W[:, omega[v]], None if Us is None else Us[v], v)
            for v, Xb in enumerate(Xbars)
        ]
        W = solvers.update_w(Xbars, Us, W, omega)
        g = missing_view_objective(problem, Xbars, Us, W, omega)
        _check_monotone(prev, g, len(history) + 1)
        trace.append(IterRecord(len(history) + 1, g, time.perf_counter() - t0))
        history.append(g)
        prev = g
        if callback is not None:
            callback(JellaState(None, Us, W))
    trace.stop_reason = reason
    return JellaState(None, Us, W), trace
