"""MVL-IV: squared-loss multi-view completion with no regularizer or constraint."""

from __future__ import annotations

from ..framework import JellaProblem, SubSolvers, alternate_incomplete, initial_state
from ..mvdata import MultiViewDataset

__all__ = ["mvliv_fit"]


def mvliv_fit(ds: MultiViewDataset, r: int, stop_rule=None, seed=0, init=None, callback=None):
    """Returns ``(state, trace)`` with ``state.Z``, ``state.U``, ``state.W``.

    The start point is deterministic (mean fill + SVD); ``seed`` is accepted
    for interface symmetry with the other solvers.
    """
    problem = JellaProblem(rank=r)
    init = init if init is not None else initial_state(ds, r)
    return alternate_incomplete(problem, ds, SubSolvers(), stop_rule, init, callback)
