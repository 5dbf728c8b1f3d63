import numpy as np
import pytest
from hypothesis import given, strategies as st

from jella.framework import (
    FrameworkContractError,
    JellaProblem,
    JellaState,
    SubSolvers,
    alternate_incomplete,
    alternate_missing_view,
    initial_state,
    jella_objective,
    mean_fill,
    stop_rule_relative,
)
from jella.mvdata import (
    MultiViewDataset,
    ViewMatrix,
    apply_incomplete_mask,
    apply_missing_view_mask,
    omega_sets,
    synth_union_of_subspaces,
)
from jella.solvers import mvliv_fit


def _ds(shapes, n, seed=0):
    rng = np.random.default_rng(seed)
    return MultiViewDataset(tuple(ViewMatrix.full(rng.standard_normal((d, n))) for d in shapes))


# ---------------------------------------------------------------- stop rule

def test_stop_rule_constant_sequence():
    rule = stop_rule_relative(1e-4, 100)
    assert rule([]) is None
    assert rule([5.0]) is None
    assert rule([5.0, 5.0]) == "converged"


def test_stop_rule_geometric_closed_form():
    # g_t = 2^-t: the relative change is 1/2 while g >= 1, then g_{t-1}/2, which
    # first drops below 1e-4 at t = floor(log2(1 / 2e-4)) + 2 = 14
    rule = stop_rule_relative(1e-4, 1000)
    history = []
    for t in range(1, 100):
        history.append(2.0 ** -t)
        if rule(history):
            break
    assert t == int(np.floor(np.log2(1 / 2e-4))) + 2 == 14
    assert rule(history) == "converged"


def test_stop_rule_max_iter():
    rule = stop_rule_relative(1e-4, 5)
    history = [100.0 - 10 * t for t in range(1, 5)]
    assert rule(history) is None
    history.append(50.0)
    assert rule(history) == "max_iter"


def test_stop_rule_validation():
    with pytest.raises(ValueError):
        stop_rule_relative(0.0, 5)
    with pytest.raises(ValueError):
        stop_rule_relative(1e-3, 0)


# ---------------------------------------------------------------- problem type

def test_problem_invariants():
    with pytest.raises(ValueError):
        JellaProblem(rank=0)
    with pytest.raises(ValueError):
        JellaProblem(rank=2, gamma_w=-1)
    with pytest.raises(ValueError):
        JellaProblem(rank=4).validate(_ds([3, 5], 10))


# ---------------------------------------------------------------- incomplete driver

def _svd_residual(X, r):
    s = np.linalg.svd(X, compute_uv=False)
    return float((s[r:] ** 2).sum())


@pytest.mark.parametrize("shapes", [[8], [6, 5]])
def test_incomplete_full_data_matches_truncated_svd(shapes):
    ds = _ds(shapes, 20, seed=3)
    r = 3
    state, trace = alternate_incomplete(JellaProblem(rank=r), ds,
                                        stop_rule=stop_rule_relative(1e-14, 200))
    stacked = np.vstack([v.data for v in ds.views])
    oracle = _svd_residual(stacked, r)
    assert abs(trace.objectives[-1] - oracle) <= 1e-6 * max(1.0, oracle)


def test_mvliv_full_rank_zero_residual():
    ds = _ds([4], 9)
    state, trace = mvliv_fit(ds, 4, stop_rule_relative(1e-12, 50))
    assert trace.objectives[-1] <= 1e-18 * 1e6


def test_incomplete_single_iteration():
    ds = _ds([4, 4], 10)
    _, trace = alternate_incomplete(JellaProblem(rank=2), ds, stop_rule=stop_rule_relative(1e-4, 1))
    assert len(trace) == 1 and trace.stop_reason == "max_iter"


def test_incomplete_zero_data():
    ds = MultiViewDataset((ViewMatrix.full(np.zeros((3, 5))),))
    _, trace = alternate_incomplete(JellaProblem(rank=1), ds, stop_rule=stop_rule_relative(1e-4, 3))
    assert trace.objectives[0] == 0.0


def test_incomplete_rejects_objective_increase():
    ds = _ds([4, 4], 10)

    def bad_w(Zs, Us, W_prev):
        return W_prev * 10.0 + 1.0

    with pytest.raises(FrameworkContractError):
        alternate_incomplete(JellaProblem(rank=2), ds, SubSolvers(update_w=bad_w),
                             stop_rule_relative(1e-4, 5))


def test_incomplete_rejects_unpinned_z():
    ds = _ds([4], 6)

    def loose_z(view, U, W):
        return U @ W

    with pytest.raises(FrameworkContractError):
        alternate_incomplete(JellaProblem(rank=2), ds, SubSolvers(update_z=loose_z),
                             stop_rule_relative(1e-4, 3))


@given(st.integers(0, 2**31 - 1), st.floats(0.05, 0.6), st.integers(1, 3))
def test_incomplete_monotone_and_pinned(seed, m, r):
    ds = apply_incomplete_mask(synth_union_of_subspaces(2, 2, [5, 6], 6, 0.2, seed=seed), m, seed)
    seen = []

    def z_step(view, U, W):
        from jella.framework import complete_z
        Z = complete_z(view, U, W)
        seen.append(np.array_equal(Z[view.mask], view.data[view.mask]))
        return Z

    state, trace = alternate_incomplete(JellaProblem(rank=r), ds, SubSolvers(update_z=z_step),
                                        stop_rule_relative(1e-6, 40))
    g = [trace.initial_objective] + trace.objectives
    assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(g, g[1:]))
    assert all(seen)


def test_incomplete_deterministic():
    ds = apply_incomplete_mask(_ds([5, 5], 12), 0.3, 1)
    a = alternate_incomplete(JellaProblem(rank=2), ds)
    b = alternate_incomplete(JellaProblem(rank=2), ds)
    assert a[1].objectives == b[1].objectives
    assert np.array_equal(a[0].W, b[0].W)


def test_mean_fill():
    data = np.array([[1.0, np.nan, 3.0], [np.nan, np.nan, np.nan]])
    mask = ~np.isnan(data)
    ds = MultiViewDataset((ViewMatrix(data, mask),))
    assert np.array_equal(mean_fill(ds)[0], [[1, 2, 3], [0, 0, 0]])


# ---------------------------------------------------------------- missing-view driver

def test_missing_view_equals_incomplete_when_nothing_missing():
    ds = _ds([5, 4], 15, seed=2)
    init = initial_state(ds, 2)
    rule = lambda: stop_rule_relative(1e-10, 7)
    s1, t1 = alternate_incomplete(JellaProblem(rank=2), ds, stop_rule=rule(), init=init)
    s2, t2 = alternate_missing_view(JellaProblem(rank=2), ds, stop_rule=rule(), init=init)
    assert np.allclose(s1.W, s2.W, atol=1e-10)
    assert np.allclose(t1.objectives, t2.objectives, rtol=1e-10)


def test_missing_view_sample_uses_only_its_views():
    ds = _ds([5, 4], 15, seed=4)
    masks = [mk.copy() for mk in ds.masks]
    masks[0][:, 6] = False
    ds = ds.replace_masks(masks)
    state, _ = alternate_missing_view(JellaProblem(rank=2), ds, stop_rule=stop_rule_relative(1e-6, 20))
    w = state.W[:, 6]
    U2 = state.U[1]
    x2 = ds.views[1].data[:, 6]
    grad = -2 * U2.T @ (x2 - U2 @ w)
    assert np.linalg.norm(grad) <= 1e-6

    # finite-difference check on the per-sample objective
    f = lambda z: float(np.sum((x2 - U2 @ z) ** 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = 1e-6
        assert abs(f(w + e) - f(w - e)) / 2e-6 <= 1e-4


def test_missing_view_zero_iterations_returns_init():
    ds = _ds([4, 4], 8)
    init = initial_state(ds, 2)
    state, trace = alternate_missing_view(JellaProblem(rank=2), ds,
                                          stop_rule=lambda history: "max_iter", init=init)
    assert len(trace) == 0
    assert np.array_equal(state.W, init.W)


def test_missing_view_rejects_absent_sample():
    ds = _ds([3, 3], 5)
    masks = [mk.copy() for mk in ds.masks]
    for mk in masks:
        mk[:, 2] = False
    with pytest.raises(ValueError):
        alternate_missing_view(JellaProblem(rank=1), ds.replace_masks(masks))


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 0.8))
def test_missing_view_monotone(seed, m):
    ds = apply_missing_view_mask(_ds([4, 5, 3], 12, seed), m, seed)
    _, trace = alternate_missing_view(JellaProblem(rank=2), ds, omega_sets(ds),
                                      stop_rule=stop_rule_relative(1e-8, 30))
    g = [trace.initial_objective] + trace.objectives
    assert all(b <= a + 1e-9 * max(1, abs(a)) for a, b in zip(g, g[1:]))
