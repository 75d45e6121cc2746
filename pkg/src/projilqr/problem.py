"""Constrained nonlinear optimal control problem and raw trajectory evaluation.

The problem is

    min  terminal_cost(x_N) + sum_n stage_cost(x_n, u_n, n)
    s.t. x_{n+1} = dynamics(x_n, u_n, n),  x_0 given
         g1(x_n, u_n, n) = 0,  g2(x_n, n) = 0   for n = 0..N-1
         g3(x_N) = 0

Constraint callables may be omitted; an omitted family has dimension zero at
every step. Derivative providers are optional and fall back to central finite
differences in :mod:`projilqr.rollout`.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from projilqr.errors import DefinitionError, NumericalError

logger = logging.getLogger(__name__)

_EMPTY = np.zeros(0)
COST_NEG_TOL = 1e-12


@dataclass(frozen=True)
class OcpDefinition:
    """Discrete-time constrained optimal control problem.

    Attributes:
        dynamics: ``(x, u, n) -> x_next``.
        stage_cost: ``(x, u, n) -> float``, non-negative.
        terminal_cost: ``x -> float``, non-negative.
        horizon: number of steps N.
        x0: initial state.
        input_dim: number of inputs p.
        dt: step length in seconds; scales the stage terms of the constraint ISE.
        state_input_constraint: ``(x, u, n) -> g1``.
        state_constraint: ``(x, n) -> g2``.
        terminal_constraint: ``x -> g3``.
        dynamics_jacobian: ``(x, u, n) -> (A, B)``.
        stage_cost_derivatives: ``(x, u, n) -> (q, r, Q, R, P)`` with P of shape (p, m).
        terminal_cost_derivatives: ``x -> (q, Q)``.
        state_input_constraint_jacobian: ``(x, u, n) -> (D, E)``.
        state_constraint_jacobian: ``(x, n) -> C``.
        terminal_constraint_jacobian: ``x -> C``.
        trajectory_dynamics_jacobian: ``(states[:N], inputs) -> (A, B)`` with
            stacked ``A`` of shape (N, m, m); when given it replaces the
            per-step ``dynamics_jacobian`` during linearization.
    """

    dynamics: Callable
    stage_cost: Callable
    terminal_cost: Callable
    horizon: int
    x0: np.ndarray
    input_dim: int
    dt: float = 1.0
    state_input_constraint: Optional[Callable] = None
    state_constraint: Optional[Callable] = None
    terminal_constraint: Optional[Callable] = None
    dynamics_jacobian: Optional[Callable] = None
    stage_cost_derivatives: Optional[Callable] = None
    terminal_cost_derivatives: Optional[Callable] = None
    state_input_constraint_jacobian: Optional[Callable] = None
    state_constraint_jacobian: Optional[Callable] = None
    terminal_constraint_jacobian: Optional[Callable] = None
    trajectory_dynamics_jacobian: Optional[Callable] = None
    name: str = "ocp"
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise DefinitionError(f"horizon must be a non-negative integer, got {self.horizon}")
        object.__setattr__(self, "horizon", int(self.horizon))
        if self.input_dim < 1:
            raise DefinitionError("input_dim must be positive")
        if not np.all(np.isfinite(x0)):
            raise DefinitionError("x0 must be finite")
        if not self.dt > 0:
            raise DefinitionError(f"dt must be positive, got {self.dt}")

    @property
    def state_dim(self) -> int:
        return self.x0.shape[0]

    def g1(self, x, u, n) -> np.ndarray:
        if self.state_input_constraint is None:
            return _EMPTY
        return np.atleast_1d(np.asarray(self.state_input_constraint(x, u, n), dtype=float))

    def g2(self, x, n) -> np.ndarray:
        if self.state_constraint is None:
            return _EMPTY
        return np.atleast_1d(np.asarray(self.state_constraint(x, n), dtype=float))

    def g3(self, x) -> np.ndarray:
        if self.terminal_constraint is None:
            return _EMPTY
        return np.atleast_1d(np.asarray(self.terminal_constraint(x), dtype=float))

    def is_constrained(self) -> bool:
        return any(
            c is not None
            for c in (self.state_input_constraint, self.state_constraint, self.terminal_constraint)
        )


@dataclass
class TrajectoryPair:
    """States ``(N+1, m)`` and inputs ``(N, p)`` of one rollout."""

    states: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1) if self.inputs.size else self.inputs.reshape(0, 0)
        if len(self.states) != len(self.inputs) + 1:
            raise DefinitionError(
                f"trajectory has {len(self.states)} states but {len(self.inputs)} inputs"
            )

    @property
    def horizon(self) -> int:
        return len(self.inputs)

    def copy(self) -> "TrajectoryPair":
        return TrajectoryPair(self.states.copy(), self.inputs.copy())


@dataclass
class ConstraintRecord:
    """Raw constraint values at one step; ``terminal`` holds g3 on the last record only."""

    step: int
    state_input: np.ndarray
    state: np.ndarray
    terminal: np.ndarray = field(default_factory=lambda: _EMPTY)

    def max_abs(self) -> float:
        parts = [np.abs(v) for v in (self.state_input, self.state, self.terminal) if v.size]
        return float(max((p.max() for p in parts), default=0.0))


def check_dimensions(ocp: OcpDefinition, traj: TrajectoryPair) -> None:
    if traj.horizon != ocp.horizon:
        raise DefinitionError(f"trajectory horizon {traj.horizon} != problem horizon {ocp.horizon}")
    if traj.states.shape[1] != ocp.state_dim:
        raise DefinitionError(f"state dimension {traj.states.shape[1]} != {ocp.state_dim}")
    if ocp.horizon and traj.inputs.shape[1] != ocp.input_dim:
        raise DefinitionError(f"input dimension {traj.inputs.shape[1]} != {ocp.input_dim}")


def evaluate_total_cost(ocp: OcpDefinition, traj: TrajectoryPair) -> float:
    """Terminal cost plus the sum of stage costs along ``traj``."""
    check_dimensions(ocp, traj)
    total = 0.0
    for n in range(ocp.horizon):
        total += _checked_cost(ocp.stage_cost(traj.states[n], traj.inputs[n], n), n)
    total += _checked_cost(ocp.terminal_cost(traj.states[-1]), ocp.horizon)
    return total


def _checked_cost(value, n) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise NumericalError("non-finite cost", step=n)
    if value < -COST_NEG_TOL:
        raise DefinitionError(f"negative cost {value} at step {n}")
    return value


def evaluate_constraint_stack(ocp: OcpDefinition, traj: TrajectoryPair) -> List[ConstraintRecord]:
    """Raw g1, g2 values at steps 0..N-1 and g3 at step N (N+1 records)."""
    check_dimensions(ocp, traj)
    records = []
    for n in range(ocp.horizon):
        x = traj.states[n]
        records.append(ConstraintRecord(n, ocp.g1(x, traj.inputs[n], n), ocp.g2(x, n)))
    records.append(ConstraintRecord(ocp.horizon, _EMPTY, _EMPTY, ocp.g3(traj.states[-1])))
    for rec in records:
        if not np.isfinite(rec.state_input.sum() + rec.state.sum() + rec.terminal.sum()):
            raise NumericalError("non-finite constraint value", step=rec.step)
    return records


def constraint_ise(ocp: OcpDefinition, traj: TrajectoryPair, records=None) -> float:
    """Integrated square error of all equality constraints.

    Stage violations are weighted by ``dt``; the terminal violation is not.
    """
    if records is None:
        records = evaluate_constraint_stack(ocp, traj)
    stage = sum(rec.state_input @ rec.state_input + rec.state @ rec.state for rec in records[:-1])
    terminal = records[-1].terminal
    return float(stage * ocp.dt + terminal @ terminal)


def check_initial_state(ocp: OcpDefinition, tol: float = 1e-9) -> float:
    """Return the pure-state violation at x0 and warn when it exceeds ``tol``."""
    if ocp.horizon > 0:
        g = ocp.g2(ocp.x0, 0)
    else:
        g = ocp.g3(ocp.x0)
    violation = float(np.abs(g).max()) if g.size else 0.0
    if violation > tol:
        logger.warning("initial state violates pure-state constraint by %.3e", violation)
    return violation
