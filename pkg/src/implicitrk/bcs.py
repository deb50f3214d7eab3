"""Strong Dirichlet enforcement on the stage unknowns.

The DAE method imposes the algebraic constraints

    sum_j a_ij k_j = (g(t_n + c_i dt) - u_n) / dt   on the boundary,

solved exactly for the stage unknowns (one dense s-by-s solve shared by all
constrained dofs).  The legacy ODE method instead prescribes the time
derivative of the data, k_i = g'(t_n + c_i dt), which silently misses
incompatibilities between initial and boundary data.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .sparsela import KroneckerStageOperator
from .tableaux import ButcherTableau


class BcMethod(Enum):
    DAE = "dae"
    ODE = "ode"


class StageUnknown(Enum):
    """What the stage solve is solving for: derivatives k, Butcher variables
    w = (A (x) I) k, or stage values Y = u_n + dt*w."""

    DERIVATIVE = "derivative"
    W = "w"
    VALUE = "value"


@dataclass
class DirichletBC:
    """Constrained dof set with boundary data.

    ``g(t)`` returns the data at the constrained dofs (aligned with ``dofs``);
    ``g_dot`` is its time derivative and is required only by the ODE method —
    it is never finite-differenced internally.
    """

    dofs: np.ndarray
    g: Callable[[float], np.ndarray]
    g_dot: Optional[Callable[[float], np.ndarray]] = None

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        if len(self.dofs) and self.dofs.min() < 0:
            raise ValueError("negative dof index in DirichletBC")


def stage_bc_values(
    method: BcMethod,
    tab: ButcherTableau,
    bc: DirichletBC,
    u_n: np.ndarray,
    t: float,
    dt: float,
    unknown: StageUnknown = StageUnknown.DERIVATIVE,
) -> np.ndarray:
    """Boundary values of the stage unknowns, shape (s, len(bc.dofs)).

    Under DAE the derivative form needs one dense solve with A (A must be
    invertible); the w and value forms read off directly.  Under ODE the
    derivative values are g' at the stage times, and the w/value forms are
    obtained by mapping through w = A k and Y = u_n + dt*w.
    """
    ub = np.asarray(u_n, dtype=float)[bc.dofs]
    G = np.array([np.broadcast_to(bc.g(t + ci * dt), ub.shape) for ci in tab.c])
    if method is BcMethod.DAE:
        if unknown is StageUnknown.VALUE:
            return G
        W = (G - ub[None, :]) / dt
        if unknown is StageUnknown.W:
            return W
        if not tab.invertible:
            raise ValueError(
                f"DAE boundary conditions on stage derivatives need an invertible "
                f"tableau, got {tab.name!r}"
            )
        return np.linalg.solve(tab.A, W)
    if bc.g_dot is None:
        raise ValueError("ODE boundary conditions require g_dot")
    Gd = np.array([np.broadcast_to(bc.g_dot(t + ci * dt), ub.shape) for ci in tab.c])
    if unknown is StageUnknown.DERIVATIVE:
        return Gd
    W = tab.A @ Gd
    if unknown is StageUnknown.W:
        return W
    return ub[None, :] + dt * W


class ConstrainedStageOperator:
    """Row replacement + column elimination of a stage operator.

    Constrained rows act as the identity; the operator's action on
    unconstrained dofs is untouched.
    """

    def __init__(self, op: KroneckerStageOperator, dofs):
        self.op = op
        self.dofs = np.asarray(dofs, dtype=np.int64)
        if len(self.dofs) and self.dofs.max() >= op.m:
            raise ValueError("constrained dof index out of range")
        self.n = op.n
        self._idx = (np.arange(op.s)[:, None] * op.m + self.dofs[None, :]).ravel()

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        vv = v.copy()
        vv[self._idx] = 0.0
        y = self.op.apply(vv)
        y[self._idx] = v[self._idx]
        return y


def constrain_stage_system(
    op: KroneckerStageOperator,
    rhs: np.ndarray,
    bc: DirichletBC,
    stage_values: np.ndarray,
):
    """Impose stage boundary values on the coupled system.

    Returns the constrained operator and right-hand side: constrained matrix
    rows become identity rows, and the known values are eliminated from the
    coupled rows' right-hand sides.
    """
    if len(bc.dofs) == 0:
        return op, rhs
    cop = ConstrainedStageOperator(op, bc.dofs)
    g_ext = np.zeros(op.n)
    g_ext[cop._idx] = np.asarray(stage_values, dtype=float).ravel()
    out = rhs - op.apply(g_ext)
    out[cop._idx] = g_ext[cop._idx]
    return cop, out
