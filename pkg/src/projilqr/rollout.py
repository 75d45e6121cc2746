"""Forward simulation and linear-quadratic approximation along a trajectory."""

from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from projilqr.errors import DefinitionError, DivergenceError, NumericalError
from projilqr.linalg import RANK_TOL, remove_dependent_rows, split_rank_deficient_constraint
from projilqr.problem import OcpDefinition, TrajectoryPair, check_dimensions

FD_REL_STEP = 1e-6
FD_HESS_REL_STEP = 1e-4
PSD_TOL = 1e-8


@dataclass
class LqStage:
    """Taylor coefficients of dynamics and stage cost at one nominal point."""

    A: np.ndarray
    B: np.ndarray
    q: float
    q_vec: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    R: np.ndarray
    P: np.ndarray


@dataclass
class ConstraintStage:
    """Linearized constraints ``D dx + E du = e`` and ``C dx = d`` at one step."""

    D: np.ndarray
    E: np.ndarray
    e: np.ndarray
    C: np.ndarray
    d: np.ndarray


@dataclass
class TerminalStage:
    q: float
    q_vec: np.ndarray
    Q: np.ndarray
    C: np.ndarray
    d: np.ndarray


@dataclass
class LqApproximation:
    stages: List[LqStage]
    constraints: List[ConstraintStage]
    terminal: TerminalStage

    @property
    def horizon(self) -> int:
        return len(self.stages)

    def pure_state(self, n):
        """``(C, d)`` of the pure-state constraint at step ``n`` (terminal at N)."""
        if n == self.horizon:
            return self.terminal.C, self.terminal.d
        return self.constraints[n].C, self.constraints[n].d


@dataclass(frozen=True)
class ContinuousModelAdapter:
    """Zero-order-hold RK4 discretization of ``xdot = f(x, u)``.

    Attributes:
        vector_field: ``(x, u) -> xdot``.
        dt: step length.
        jacobian: ``(x, u) -> (df/dx, df/du)``; finite differences if omitted.
        substeps: RK4 steps per control interval.
        linearization: optional ``(x, u) -> (f, df/dx, df/du)`` evaluated in
            one call; used by the sensitivity integrator when given.
        batch_linearization: the same for stacked points of shape ``(K, m)``
            and ``(K, p)``, returning arrays with a leading axis of length K.
    """

    vector_field: Callable
    dt: float
    jacobian: Optional[Callable] = None
    substeps: int = 1
    linearization: Optional[Callable] = None
    batch_linearization: Optional[Callable] = None
    order: int = field(default=4, init=False)

    def __post_init__(self):
        if not self.dt > 0:
            raise DefinitionError(f"dt must be positive, got {self.dt}")

    def continuous_jacobian(self, x, u):
        if self.jacobian is not None:
            fx, fu = self.jacobian(x, u)
            return np.asarray(fx, dtype=float), np.asarray(fu, dtype=float)
        fx = finite_difference_jacobian(lambda z: self.vector_field(z, u), x)
        fu = finite_difference_jacobian(lambda w: self.vector_field(x, w), u)
        return fx, fu

    def step(self, x, u, n=0):
        f = self.vector_field
        h = self.dt / self.substeps
        for _ in range(self.substeps):
            k1 = f(x, u)
            k2 = f(x + 0.5 * h * k1, u)
            k3 = f(x + 0.5 * h * k2, u)
            k4 = f(x + h * k3, u)
            x = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        return x

    def step_jacobian(self, x, u, n=0):
        _, A, B = integrate_step_with_sensitivities(self, x, u, n)
        return A, B

    def trajectory_jacobian(self, states, inputs):
        """``(A, B)`` stacked over the steps of a trajectory."""
        _, A, B = integrate_steps_with_sensitivities(self, states, inputs)
        return A, B


def integrate_step_with_sensitivities(adapter: ContinuousModelAdapter, x, u, n=0):
    """One RK4 step plus the exact derivatives of the RK4 map.

    The variational equations are carried through all four stages, so ``A`` and
    ``B`` are the Jacobians of the same discrete map that produces ``x_next``.

    Returns:
        ``(x_next, A, B)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x, A, B = _rk4_sensitivities(lambda z, w: _linearize(adapter, z, w), x, u,
                                 adapter.dt / adapter.substeps, adapter.substeps)
    if not np.isfinite(A.sum() + B.sum() + x.sum()):
        raise NumericalError("non-finite sensitivity", step=n)
    return x, A, B


def integrate_steps_with_sensitivities(adapter: ContinuousModelAdapter, states, inputs):
    """:func:`integrate_step_with_sensitivities` for many independent points at once.

    Uses ``adapter.batch_linearization`` when given, otherwise loops.

    Returns:
        ``(x_next, A, B)`` stacked along the first axis.
    """
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    if adapter.batch_linearization is None:
        out = [integrate_step_with_sensitivities(adapter, x, u, n)
               for n, (x, u) in enumerate(zip(states, inputs))]
        m, p = states.shape[1], inputs.shape[1]
        if not out:
            return np.zeros((0, m)), np.zeros((0, m, m)), np.zeros((0, m, p))
        return tuple(np.array(a) for a in zip(*out))
    # non-finite points are reported below, by step
    with np.errstate(invalid="ignore", over="ignore"):
        x, A, B = _rk4_sensitivities(adapter.batch_linearization, states, inputs,
                                     adapter.dt / adapter.substeps, adapter.substeps)
    bad = ~np.isfinite(A.sum(axis=(1, 2)) + B.sum(axis=(1, 2)) + x.sum(axis=1))
    if bad.any():
        raise NumericalError("non-finite sensitivity", step=int(np.argmax(bad)))
    return x, A, B


def _rk4_sensitivities(linearize, x, u, h, substeps):
    """RK4 with the sensitivity block ``[A B]``; leading axes of ``x``, ``u`` are batch axes."""
    m, p = x.shape[-1], u.shape[-1]
    sens = np.zeros(x.shape[:-1] + (m, m + p))
    sens[..., :, :m] = np.eye(m)
    for _ in range(substeps):
        xs, ss = x, sens
        k_sum = np.zeros_like(x)
        ks_sum = np.zeros_like(sens)
        for c, w in ((0.0, 1.0), (0.5, 2.0), (0.5, 2.0), (1.0, 1.0)):
            if c:
                xs = x + c * h * k
                ss = sens + c * h * ks
            k, fx, fu = linearize(xs, u)
            ks = fx @ ss
            ks[..., :, m:] += fu
            k_sum += w * k
            ks_sum += w * ks
        x = x + h / 6.0 * k_sum
        sens = sens + h / 6.0 * ks_sum
    return x, sens[..., :m], sens[..., m:]


def _linearize(adapter, x, u):
    if adapter.linearization is not None:
        k, fx, fu = adapter.linearization(x, u)
        return np.asarray(k, dtype=float), fx, fu
    fx, fu = adapter.continuous_jacobian(x, u)
    return np.asarray(adapter.vector_field(x, u), dtype=float), fx, fu


def finite_difference_jacobian(fn, point, h=None) -> np.ndarray:
    """Central-difference Jacobian of ``fn`` at ``point``."""
    point = np.asarray(point, dtype=float)
    if h is None:
        h = FD_REL_STEP * (1.0 + np.linalg.norm(point))
    f0 = np.atleast_1d(np.asarray(fn(point), dtype=float))
    jac = np.zeros((f0.shape[0], point.shape[0]))
    for i in range(point.shape[0]):
        dp = np.zeros_like(point)
        dp[i] = h
        jac[:, i] = (np.atleast_1d(fn(point + dp)) - np.atleast_1d(fn(point - dp))) / (2.0 * h)
    return jac


def finite_difference_hessian(fn, point, h=None) -> np.ndarray:
    """Central second differences of a scalar function."""
    point = np.asarray(point, dtype=float)
    k = point.shape[0]
    if h is None:
        h = FD_HESS_REL_STEP * (1.0 + np.linalg.norm(point))
    f0 = float(fn(point))
    hess = np.zeros((k, k))
    basis = np.eye(k) * h
    for i in range(k):
        ei = basis[i]
        hess[i, i] = (fn(point + ei) - 2.0 * f0 + fn(point - ei)) / h**2
        for j in range(i + 1, k):
            ej = basis[j]
            val = (
                fn(point + ei + ej) - fn(point + ei - ej) - fn(point - ei + ej) + fn(point - ei - ej)
            ) / (4.0 * h**2)
            hess[i, j] = hess[j, i] = val
    return hess


def rollout_policy(ocp: OcpDefinition, policy) -> TrajectoryPair:
    """Simulate the closed loop ``u_n = policy.control(n, x_n)`` from ``ocp.x0``."""
    N = ocp.horizon
    if policy.horizon != N:
        raise DefinitionError(f"policy horizon {policy.horizon} != problem horizon {N}")
    states = np.empty((N + 1, ocp.state_dim))
    inputs = np.empty((N, ocp.input_dim))
    x = np.array(ocp.x0)
    states[0] = x
    for n in range(N):
        u = policy.control(n, x)
        x = np.asarray(ocp.dynamics(x, u, n), dtype=float)
        if not np.isfinite(x.sum()):
            raise DivergenceError("rollout diverged", step=n + 1)
        inputs[n] = u
        states[n + 1] = x
    return TrajectoryPair(states, inputs)


def _sym(a):
    return 0.5 * (a + a.T)


def stage_cost_derivatives(ocp, x, u, n):
    if ocp.stage_cost_derivatives is not None:
        q_vec, r, Q, R, P = ocp.stage_cost_derivatives(x, u, n)
        return (np.asarray(q_vec, float), np.asarray(r, float), np.atleast_2d(Q),
                np.atleast_2d(R), np.atleast_2d(P))
    m = x.shape[0]
    z = np.concatenate([x, u])
    cost = lambda zz: ocp.stage_cost(zz[:m], zz[m:], n)
    grad = finite_difference_jacobian(cost, z)[0]
    hess = finite_difference_hessian(cost, z)
    return grad[:m], grad[m:], hess[:m, :m], hess[m:, m:], hess[m:, :m]


def terminal_cost_derivatives(ocp, x):
    if ocp.terminal_cost_derivatives is not None:
        q_vec, Q = ocp.terminal_cost_derivatives(x)
        return np.asarray(q_vec, float), np.atleast_2d(Q)
    grad = finite_difference_jacobian(ocp.terminal_cost, x)[0]
    return grad, finite_difference_hessian(ocp.terminal_cost, x)


def dynamics_jacobian(ocp, x, u, n):
    if ocp.dynamics_jacobian is not None:
        A, B = ocp.dynamics_jacobian(x, u, n)
        return np.atleast_2d(A), np.atleast_2d(B)
    A = finite_difference_jacobian(lambda z: ocp.dynamics(z, u, n), x)
    B = finite_difference_jacobian(lambda w: ocp.dynamics(x, w, n), u)
    return A, B


def _state_input_jacobian(ocp, x, u, n, rows):
    m, p = x.shape[0], u.shape[0]
    if rows == 0:
        return np.zeros((0, m)), np.zeros((0, p))
    if ocp.state_input_constraint_jacobian is not None:
        D, E = ocp.state_input_constraint_jacobian(x, u, n)
        return np.atleast_2d(D).reshape(rows, m), np.atleast_2d(E).reshape(rows, p)
    D = finite_difference_jacobian(lambda z: ocp.g1(z, u, n), x)
    E = finite_difference_jacobian(lambda w: ocp.g1(x, w, n), u)
    return D, E


def _state_jacobian(ocp, x, n, rows, terminal=False):
    m = x.shape[0]
    if rows == 0:
        return np.zeros((0, m))
    provider = ocp.terminal_constraint_jacobian if terminal else ocp.state_constraint_jacobian
    if provider is not None:
        C = provider(x) if terminal else provider(x, n)
        return np.atleast_2d(C).reshape(rows, m)
    fn = ocp.g3 if terminal else (lambda z: ocp.g2(z, n))
    return finite_difference_jacobian(fn, x)


def _check_weights(Q, R, n):
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise DefinitionError(f"input weight R is not positive definite at step {n}") from None
    if Q.size and np.linalg.eigvalsh(Q)[0] < -PSD_TOL * max(1.0, np.abs(Q).max()):
        raise DefinitionError(f"state weight Q is not positive semi-definite at step {n}")


def linearize_and_quadratize(ocp: OcpDefinition, traj: TrajectoryPair, rank_tol: float = RANK_TOL,
                             check_weights: bool = True) -> LqApproximation:
    """Linear-quadratic approximation of ``ocp`` about ``traj``.

    Constraint residuals use the sign convention ``e = -g1``, ``d = -g2`` so the
    linearized constraints drive the raw values to zero. Rank-deficient
    state-input rows are moved to the pure-state constraint of the same step and
    dependent pure-state rows are removed.
    """
    check_dimensions(ocp, traj)
    N = ocp.horizon
    stages, constraints = [], []
    checked = None
    batch = None
    if ocp.trajectory_dynamics_jacobian is not None and N:
        batch = ocp.trajectory_dynamics_jacobian(traj.states[:N], traj.inputs)
    for n in range(N):
        x, u = traj.states[n], traj.inputs[n]
        A, B = dynamics_jacobian(ocp, x, u, n) if batch is None else (batch[0][n], batch[1][n])
        q_vec, r, Q, R, P = stage_cost_derivatives(ocp, x, u, n)
        Q, R = _sym(Q), _sym(R)
        # time-invariant weights are checked once
        if check_weights and not (checked is not None and np.array_equal(Q, checked[0])
                                  and np.array_equal(R, checked[1])):
            _check_weights(Q, R, n)
            checked = (Q, R)
        stages.append(LqStage(A, B, float(ocp.stage_cost(x, u, n)), q_vec, Q, r, R, P))

        g1 = ocp.g1(x, u, n)
        D, E = _state_input_jacobian(ocp, x, u, n, g1.shape[0])
        g2 = ocp.g2(x, n)
        C = _state_jacobian(ocp, x, n, g2.shape[0])
        D, E, e, C_extra, d_extra = split_rank_deficient_constraint(D, E, -g1, rank_tol)
        C = np.vstack([C, C_extra])
        d = np.concatenate([-g2, d_extra])
        C, d = remove_dependent_rows(C, d, rank_tol)
        constraints.append(ConstraintStage(D, E, e, C, d))

    xN = traj.states[-1]
    q_vec, Q = terminal_cost_derivatives(ocp, xN)
    Q = _sym(Q)
    g3 = ocp.g3(xN)
    C = _state_jacobian(ocp, xN, N, g3.shape[0], terminal=True)
    C, d = remove_dependent_rows(C, -g3, rank_tol)
    terminal = TerminalStage(float(ocp.terminal_cost(xN)), q_vec, Q, C, d)
    return LqApproximation(stages, constraints, terminal)
