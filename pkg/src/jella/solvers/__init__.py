from .bdr import (
    BdrConfig,
    BdrState,
    CONVERGED,
    bdr_basic_iterate,
    bdr_fit,
    bdr_init,
    bdr_objective,
    bdr_sor_iterate,
    bdr_step_B,
    bdr_step_F,
    bdr_step_P,
    bdr_step_U,
    bdr_step_W,
    bdr_step_Z,
    check_state,
    extrapolate,
    rho_ratio,
)
from .mvliv import mvliv_fit
from .pvc import pvc_fit, pvc_fit_incomplete

__all__ = [
    "BdrConfig",
    "BdrState",
    "CONVERGED",
    "bdr_basic_iterate",
    "bdr_fit",
    "bdr_init",
    "bdr_objective",
    "bdr_sor_iterate",
    "bdr_step_B",
    "bdr_step_F",
    "bdr_step_P",
    "bdr_step_U",
    "bdr_step_W",
    "bdr_step_Z",
    "check_state",
    "extrapolate",
    "rho_ratio",
    "mvliv_fit",
    "pvc_fit",
    "pvc_fit_incomplete",
]
