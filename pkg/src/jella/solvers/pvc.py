"""Multi-view partial multi-view clustering (PVC) with nonnegative coordinate updates.

Objective over the surviving columns of each view::

    sum_v sum_{i in Omega_v} ||x_i^(v) - U_v w_i||^2 + alpha ||W||_{1,1},
    U_v >= 0, W >= 0.

Both factors are updated one coordinate block at a time with the exact
projected minimizer (HALS-style), so every update is a descent step and the
objective never increases. For U_v the block is a column; for W it is one
latent coordinate across all samples, each sample using only the views it
appears in.
"""

from __future__ import annotations

import numpy as np

from ..framework import (
    JellaProblem,
    JellaState,
    MissingViewSubSolvers,
    SubSolvers,
    alternate_incomplete,
    alternate_missing_view,
    complete_z,
    mean_fill,
)
from ..mvdata import MultiViewDataset, OmegaSets, make_rng, omega_sets

__all__ = ["pvc_problem", "hals_u", "cd_w", "pvc_init", "pvc_fit", "pvc_fit_incomplete"]

EPS = 1e-12


def l11(W):
    return float(np.abs(W).sum())


def pvc_problem(alpha, r):
    return JellaProblem(rank=r, reg_w=l11, gamma_w=alpha,
                        u_constraint="U >= 0", w_constraint="W >= 0")


def hals_u(X, W, U):
    """One sweep over the columns of U for min ||X - U W||^2 with U >= 0."""
    U = np.array(U, dtype=float, copy=True)
    H = W @ W.T
    G = X @ W.T
    for j in range(U.shape[1]):
        if H[j, j] <= EPS:
            continue
        grad = U @ H[:, j] - G[:, j]
        U[:, j] = np.maximum(0.0, U[:, j] - grad / H[j, j])
    return U


def cd_w(Xs, Us, W, avail, cols, alpha):
    """One sweep over the rows of W (latent coordinates), all samples at once.

    Parameters
    ----------
    Xs : list of ndarray
        Per-view data restricted to surviving columns.
    Us : list of ndarray
    W : ndarray, shape (r, n)
    avail : ndarray of bool, shape (V, n)
    cols : list of ndarray
        ``cols[v]`` are the sample indices of ``Xs[v]``'s columns.
    alpha : float
        l1 weight.
    """
    W = np.array(W, dtype=float, copy=True)
    r, n = W.shape
    # residuals on surviving columns, kept current as W changes
    R = [X - U @ W[:, c] for X, U, c in zip(Xs, Us, cols)]
    for j in range(r):
        b = np.zeros(n)
        C = np.zeros(n)
        for v, (U, c) in enumerate(zip(Us, cols)):
            u = U[:, j]
            b[c] += u @ R[v]
            C[c] += u @ u
        ok = C > EPS
        step = np.zeros(n)
        step[ok] = (b[ok] - alpha / 2) / C[ok]
        new = np.maximum(0.0, W[j] + step)
        # coordinate that no view can see: the l1 term alone decides it
        idle = ~ok & avail.any(axis=0)
        if alpha > 0:
            new[idle] = 0.0
        else:
            new[idle] = W[j, idle]
        delta = new - W[j]
        W[j] = new
        for v, (U, c) in enumerate(zip(Us, cols)):
            R[v] -= np.outer(U[:, j], delta[c])
    return W


def pvc_init(ds: MultiViewDataset, r, seed):
    """Random nonnegative factors scaled to the mean of the observed data."""
    rng = make_rng(seed)
    W = rng.random((r, ds.n))
    Us = []
    for view in ds.views:
        mean = float(view.observed().sum() / max(view.mask.sum(), 1))
        scale = np.sqrt(max(mean, 0.0) / (r * 0.25)) if mean > 0 else 0.0
        Us.append(rng.random((view.shape[0], r)) * scale)
    return JellaState(None, Us, W)


def _check_nonnegative(ds):
    for v, view in enumerate(ds.views):
        if np.any(view.data[view.mask] < 0):
            raise ValueError(f"view {v} has negative observed entries; PVC needs X >= 0")


def pvc_fit(ds: MultiViewDataset, omega: OmegaSets = None, alpha=1e-2, r=2,
            stop_rule=None, seed=0, init=None, callback=None):
    """Fit PVC in the missing-view setting. Returns ``(state, trace)``.

    ``callback(JellaState)`` runs after every iteration.
    """
    _check_nonnegative(ds)
    omega = omega if omega is not None else omega_sets(ds)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    avail = omega.availability()
    cols = list(omega.sets)

    def update_u(Xbar, Wbar, U_prev, v):
        return hals_u(Xbar, Wbar, U_prev)

    def update_w(Xbars, Us, W, omega_):
        return cd_w(Xbars, Us, W, avail, cols, alpha)

    init = init if init is not None else pvc_init(ds, r, seed)
    return alternate_missing_view(
        pvc_problem(alpha, r), ds, omega,
        MissingViewSubSolvers(update_u, update_w), stop_rule, init, callback,
    )


def pvc_fit_incomplete(ds: MultiViewDataset, alpha=1e-2, r=2, stop_rule=None, seed=0,
                       callback=None):
    """PVC with completed surrogates ``Z_v`` for data with missing entries."""
    _check_nonnegative(ds)
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    avail = np.ones((ds.n_views, ds.n), dtype=bool)
    cols = [np.arange(ds.n)] * ds.n_views

    def update_u(Z, W, U_prev, v):
        return hals_u(Z, W, U_prev)

    def update_w(Zs, Us, W):
        return cd_w(Zs, Us, W, avail, cols, alpha)

    start = pvc_init(ds, r, seed)
    start.Z = mean_fill(ds)
    return alternate_incomplete(
        pvc_problem(alpha, r), ds, SubSolvers(update_u, update_w, complete_z),
        stop_rule, start, callback,
    )
