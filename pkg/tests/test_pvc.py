import numpy as np
import pytest
from hypothesis import given, strategies as st

from jella.framework import stop_rule_relative
from jella.mvdata import (
    MultiViewDataset,
    ViewMatrix,
    apply_incomplete_mask,
    apply_missing_view_mask,
    omega_sets,
)
from jella.solvers import pvc_fit, pvc_fit_incomplete
from jella.solvers.pvc import cd_w, hals_u, pvc_init


def _nonneg_ds(shapes, n, seed=0, r=2):
    rng = np.random.default_rng(seed)
    W = rng.random((r, n))
    views = tuple(ViewMatrix.full(rng.random((d, r)) @ W + 0.05 * rng.random((d, n)))
                  for d in shapes)
    return MultiViewDataset(views)


def _objective(ds, Us, W, alpha):
    omega = omega_sets(ds)
    fit = 0.0
    for v, view in enumerate(ds.views):
        c = omega[v]
        D = view.data[:, c] - Us[v] @ W[:, c]
        fit += float(np.vdot(D, D))
    return fit + alpha * np.abs(W).sum()


def test_hals_u_column_is_exact_minimizer():
    rng = np.random.default_rng(0)
    X, W, U = rng.random((6, 9)), rng.random((3, 9)), rng.random((6, 3))
    new = hals_u(X, W, U)
    # oracle: after the sweep, each column is the clamped 1-D minimizer given the others
    j = 2
    grid = np.linspace(0, 3, 30001)
    for i in range(6):
        others = new[i] @ W - new[i, j] * W[j]
        cost = [np.sum((X[i] - others - g * W[j]) ** 2) for g in grid]
        assert abs(grid[int(np.argmin(cost))] - new[i, j]) <= 2e-4


def test_cd_w_coordinate_is_exact_minimizer():
    rng = np.random.default_rng(1)
    Xs = [rng.random((5, 8)), rng.random((4, 8))]
    Us = [rng.random((5, 2)), rng.random((4, 2))]
    alpha = 0.3
    cols = [np.arange(8), np.arange(8)]
    avail = np.ones((2, 8), dtype=bool)
    W = cd_w(Xs, Us, rng.random((2, 8)), avail, cols, alpha)
    j, i = 1, 3  # last row updated, so it is optimal given row 0
    grid = np.linspace(0, 3, 30001)

    def cost(g):
        w = W[:, i].copy()
        w[j] = g
        return sum(np.sum((X[:, i] - U @ w) ** 2) for X, U in zip(Xs, Us)) + alpha * g

    best = grid[int(np.argmin([cost(g) for g in grid]))]
    assert abs(best - W[j, i]) <= 2e-4


def test_pvc_alpha_zero_single_view_improves_on_init():
    ds = _nonneg_ds([7], 20)
    init = pvc_init(ds, 2, seed=4)
    start = _objective(ds, init.U, init.W, 0.0)
    state, trace = pvc_fit(ds, alpha=0.0, r=2, stop_rule=stop_rule_relative(1e-8, 100), seed=4)
    assert trace.objectives[-1] <= start
    assert trace.objectives[-1] == pytest.approx(_objective(ds, state.U, state.W, 0.0))


def test_pvc_zero_data_drives_w_to_zero():
    ds = MultiViewDataset((ViewMatrix.full(np.zeros((4, 6))), ViewMatrix.full(np.zeros((3, 6)))))
    state, _ = pvc_fit(ds, alpha=0.1, r=2, stop_rule=stop_rule_relative(1e-8, 20))
    assert np.all(state.W == 0)


def test_pvc_nonnegative_after_100_iterations():
    ds = apply_missing_view_mask(_nonneg_ds([6, 5], 30, seed=2), 0.3, 2)
    # tolerance too small to fire: runs exactly max_iter passes
    state, trace = pvc_fit(ds, alpha=0.05, r=3, stop_rule=stop_rule_relative(1e-300, 100))
    assert len(trace) == 100
    assert all((U >= 0).all() for U in state.U) and (state.W >= 0).all()


def test_pvc_rejects_negative_data():
    ds = MultiViewDataset((ViewMatrix.full(-np.ones((2, 3))),))
    with pytest.raises(ValueError):
        pvc_fit(ds, r=1)
    with pytest.raises(ValueError):
        pvc_fit_incomplete(ds, r=1)
    with pytest.raises(ValueError):
        pvc_fit(_nonneg_ds([3], 4), alpha=-1.0, r=1)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.5), st.sampled_from([0.0, 1e-2, 1.0]))
def test_pvc_monotone_and_nonnegative(seed, m, alpha):
    ds = apply_missing_view_mask(_nonneg_ds([5, 4], 16, seed), m, seed)
    state, trace = pvc_fit(ds, alpha=alpha, r=2, stop_rule=stop_rule_relative(1e-9, 30), seed=seed)
    g = [trace.initial_objective] + trace.objectives
    assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(g, g[1:]))
    assert all((U >= 0).all() for U in state.U) and (state.W >= 0).all()


def test_pvc_incomplete_pins_z():
    full = _nonneg_ds([5, 4], 16, seed=8)
    ds = apply_incomplete_mask(full, 0.3, 8)
    state, trace = pvc_fit_incomplete(ds, alpha=0.01, r=2, stop_rule=stop_rule_relative(1e-8, 50))
    for view, Z in zip(ds.views, state.Z):
        assert np.array_equal(Z[view.mask], view.data[view.mask])
    g = trace.objectives
    assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(g, g[1:]))
    assert (state.W >= 0).all()
