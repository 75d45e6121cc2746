"""Outer iteration: rollout, linearize, project, backward pass, line search."""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from projilqr.errors import DefinitionError, NumericalError
from projilqr.linalg import RANK_TOL
from projilqr.problem import (OcpDefinition, TrajectoryPair, check_initial_state, constraint_ise,
                              evaluate_constraint_stack, evaluate_total_cost)
from projilqr.projection import project_all
from projilqr.riccati import Policy, backward_pass
from projilqr.rollout import (dynamics_jacobian, stage_cost_derivatives, linearize_and_quadratize,
                              rollout_policy)

logger = logging.getLogger(__name__)


@dataclass
class SolverSettings:
    """Tuning of the outer iteration.

    ``sigma=None`` selects ``10 * cost0 / (N * (1 + violation0))`` from the initial
    rollout, raised after the first backward pass if needed so that the full
    model step can lower the merit (see :func:`penalty_floor`); it then stays
    fixed. ``check_every`` sets how often the admissibility checks run
    outside validation mode (0 disables them).
    """

    sigma: Optional[float] = None
    alpha_decay: float = 2.0
    max_linesearch_steps: int = 12
    max_iterations: int = 50
    merit_rel_tol: float = 1e-6
    ise_max: float = 1e-3
    validation_mode: bool = False
    check_every: int = 10
    rank_tol: float = RANK_TOL

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise DefinitionError("sigma must be positive")
        if not self.alpha_decay > 1:
            raise DefinitionError("alpha_decay must exceed 1")
        for name in ("max_linesearch_steps", "max_iterations"):
            if getattr(self, name) < 1:
                raise DefinitionError(f"{name} must be positive")
        for name in ("merit_rel_tol", "ise_max", "rank_tol"):
            if not getattr(self, name) > 0:
                raise DefinitionError(f"{name} must be positive")
        if self.check_every < 0:
            raise DefinitionError("check_every must be non-negative")


@dataclass
class IterationReport:
    iteration: int
    merit: float
    cost: float
    ise: float
    alpha: float
    max_violation: np.ndarray
    linesearch_steps: int = 0
    stalled: bool = False
    converged: bool = False

    @property
    def peak_violation(self) -> float:
        return float(self.max_violation.max(initial=0.0))


@dataclass
class LineSearchResult:
    policy: Policy
    trajectory: TrajectoryPair
    merit: float
    reference_merit: float
    alpha: float
    steps: int
    stalled: bool
    cost: Optional[float] = None
    records: Optional[list] = None


@dataclass
class SolveResult:
    policy: Policy
    trajectory: TrajectoryPair
    reports: List[IterationReport]
    sigma: float
    status: str = "max_iterations"

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return len(self.reports) - 1


def violation_l1(ocp: OcpDefinition, records) -> float:
    """Sum over n of the L1 norm of ``[g1(x_n, u_n); g2(x_{n+1})]``, g3 in the last block."""
    N = ocp.horizon
    total = 0.0
    for n in range(N):
        total += np.abs(records[n].state_input).sum()
        nxt = records[n + 1]
        total += np.abs(nxt.terminal if n + 1 == N else nxt.state).sum()
    return float(total)


def merit(ocp: OcpDefinition, traj: TrajectoryPair, sigma: float, records=None) -> float:
    """Raw cost plus ``sigma`` times the L1 norm of the previewed constraint residuals."""
    if records is None:
        records = evaluate_constraint_stack(ocp, traj)
    value = evaluate_total_cost(ocp, traj) + sigma * violation_l1(ocp, records)
    if not np.isfinite(value):
        raise NumericalError("non-finite merit")
    return value


def default_sigma(ocp: OcpDefinition, traj: TrajectoryPair) -> float:
    records = evaluate_constraint_stack(ocp, traj)
    # per-step normalization: the L1 term sums over the horizon
    steps = max(ocp.horizon, 1)
    sigma = 10.0 * evaluate_total_cost(ocp, traj) / (steps * (1.0 + violation_l1(ocp, records)))
    return sigma if sigma > 0 else 1.0


def penalty_floor(cost0: float, violation0: float, predicted_cost: float) -> float:
    """Smallest sigma for which the full model step lowers the merit by half the model decrease.

    ``predicted_cost`` is the cost the LQ model assigns to the full step, which
    removes the linearized violation entirely.
    """
    if violation0 <= 0.0 or predicted_cost <= cost0:
        return 0.0
    return 2.0 * (predicted_cost - cost0) / violation0


def policy_direction(projections, values):
    """Feedforward direction ``eps + proj l`` and gains ``U + proj L`` per step."""
    direction = np.array([ps.eps + ps.proj @ vs.l for ps, vs in zip(projections, values)])
    gains = np.array([ps.U + ps.proj @ vs.L for ps, vs in zip(projections, values)])
    return direction, gains


def line_search(ocp: OcpDefinition, nominal: TrajectoryPair, projections, values,
                settings: SolverSettings, sigma: float,
                reference_merit: Optional[float] = None) -> LineSearchResult:
    """Backtracking search over the feedforward step length.

    The reference merit is that of the feedback-only (alpha = 0) rollout. Since
    ``nominal`` is itself a rollout from ``x0``, that rollout reproduces it
    exactly (the feedback acts on a zero deviation) and is not re-simulated. The
    first alpha in ``1, 1/a_d, 1/a_d^2, ...`` whose merit is strictly lower is
    accepted; otherwise the best candidate is returned with ``stalled=True``.
    Diverging candidates count as infinite merit. ``reference_merit`` may
    pass in the already known merit of ``nominal``.
    """
    N = ocp.horizon
    if N == 0:
        pol = Policy(np.zeros((0, ocp.input_dim)), np.zeros((0, ocp.input_dim, ocp.state_dim)),
                     np.zeros((0, ocp.state_dim)))
        j = merit(ocp, nominal, sigma)
        return LineSearchResult(pol, nominal, j, j, 0.0, 0, True)
    direction, gains = policy_direction(projections, values)
    reference = nominal.states[:N].copy()

    def candidate(alpha):
        pol = Policy(nominal.inputs + alpha * direction, gains, reference)
        try:
            traj = rollout_policy(ocp, pol)
            records = evaluate_constraint_stack(ocp, traj)
            cost = evaluate_total_cost(ocp, traj)
            j = cost + sigma * violation_l1(ocp, records)
            if not np.isfinite(j):
                raise NumericalError("non-finite merit")
            return pol, traj, j, cost, records
        except NumericalError:
            return pol, None, np.inf, None, None

    ref_policy, ref_traj = Policy(nominal.inputs, gains, reference), nominal
    j0 = merit(ocp, nominal, sigma) if reference_merit is None else reference_merit
    best = (ref_policy, ref_traj, j0, None, None, 0.0)
    alpha = 1.0
    for step in range(1, settings.max_linesearch_steps + 1):
        pol, traj, j, cost, records = candidate(alpha)
        if j < j0:
            return LineSearchResult(pol, traj, j, j0, alpha, step, False, cost, records)
        if traj is not None and (best[1] is ref_traj or j < best[2]):
            best = (pol, traj, j, cost, records, alpha)
        alpha /= settings.alpha_decay
    pol, traj, j, cost, records, a = best
    return LineSearchResult(pol, traj, j, j0, a, settings.max_linesearch_steps, True, cost,
                            records)


def _report(ocp, traj, sigma, iteration, alpha, cost=None, records=None,
            **kw) -> IterationReport:
    if records is None:
        records = evaluate_constraint_stack(ocp, traj)
    if cost is None:
        cost = evaluate_total_cost(ocp, traj)
    return IterationReport(
        iteration=iteration,
        merit=cost + sigma * violation_l1(ocp, records),
        cost=cost,
        ise=constraint_ise(ocp, traj, records),
        alpha=alpha,
        max_violation=np.array([r.max_abs() for r in records]),
        **kw,
    )


def solve(ocp: OcpDefinition, initial_policy: Policy, settings: Optional[SolverSettings] = None,
          observer: Optional[Callable[[IterationReport], None]] = None) -> SolveResult:
    """Run the constrained iLQR iteration from ``initial_policy``.

    Terminates when the relative merit change drops below ``merit_rel_tol``
    while the constraint ISE is below ``ise_max`` (status ``"converged"``),
    after two consecutive line-search stalls (``"stalled"``) or after
    ``max_iterations`` (``"max_iterations"``). A backward pass whose best step
    leaves the merit unchanged to within ``merit_rel_tol`` counts as converged.

    Raises:
        RelativeDegreeError: the linearized constraints are not relative degree one.
        AdmissibilityError: a singular Riccati step is ill defined.
    """
    settings = settings or SolverSettings()
    check_initial_state(ocp, tol=settings.rank_tol)
    traj = rollout_policy(ocp, initial_policy)
    auto_sigma = settings.sigma is None
    sigma = default_sigma(ocp, traj) if auto_sigma else settings.sigma
    policy = initial_policy
    reports = [_report(ocp, traj, sigma, 0, 0.0)]
    check_every = 1 if settings.validation_mode else settings.check_every
    stalls = 0
    status = "max_iterations"
    for k in range(1, settings.max_iterations + 1):
        approx = linearize_and_quadratize(ocp, traj, settings.rank_tol)
        projections, projected = project_all(approx, settings.rank_tol)
        values = backward_pass(projected, approx.terminal, check_every, settings.rank_tol)
        if k == 1:
            if auto_sigma and ocp.horizon:
                r0 = reports[0]
                floor = penalty_floor(r0.cost, (r0.merit - r0.cost) / sigma, values[0].s0)
                if floor > sigma:
                    sigma = floor
                    reports[0] = _report(ocp, traj, sigma, 0, 0.0)
            if observer:
                observer(reports[0])
        ls = line_search(ocp, traj, projections, values, settings, sigma, reports[-1].merit)
        j0 = ls.reference_merit
        rel_change = abs(j0 - ls.merit) / max(abs(j0), 1e-300)
        evaluated = {}
        if not ls.stalled:
            traj, policy, alpha = ls.trajectory, ls.policy, ls.alpha
            evaluated = {"cost": ls.cost, "records": ls.records}
            stalls = 0
        else:
            alpha = 0.0
            if rel_change > settings.merit_rel_tol or not np.isfinite(ls.merit):
                stalls += 1
                rel_change = np.inf
        report = _report(ocp, traj, sigma, k, alpha, linesearch_steps=ls.steps,
                         stalled=stalls > 0, **evaluated)
        report.converged = rel_change < settings.merit_rel_tol and report.ise < settings.ise_max
        reports.append(report)
        logger.info("iter %d merit %.6e cost %.6e ise %.3e alpha %.4g", k, report.merit,
                    report.cost, report.ise, alpha)
        if observer:
            observer(report)
        if report.converged:
            status = "converged"
            break
        if stalls >= 2:
            status = "stalled"
            break
    return SolveResult(policy, traj, reports, sigma, status)


def lqr_initial_policy(ocp: OcpDefinition, u_ss=None, Q=None, R=None) -> Policy:
    """Stationary LQR about ``(x0, u_ss)`` from the discrete Riccati equation.

    ``Q`` and ``R`` default to the stage-cost Hessians at ``(x0, u_ss)``.
    """
    x0 = np.array(ocp.x0)
    u_ss = np.zeros(ocp.input_dim) if u_ss is None else np.asarray(u_ss, dtype=float)
    A, B = dynamics_jacobian(ocp, x0, u_ss, 0)
    if Q is None or R is None:
        _, _, Qc, Rc, _ = stage_cost_derivatives(ocp, x0, u_ss, 0)
        Q = Qc if Q is None else Q
        R = Rc if R is None else R
    Q = np.atleast_2d(Q) + 1e-9 * np.eye(len(x0))
    R = np.atleast_2d(R)
    S = scipy.linalg.solve_discrete_are(A, B, Q, R)
    K = np.linalg.solve(R + B.T @ S @ B, B.T @ S @ A)
    return Policy.constant(u_ss, -K, x0, ocp.horizon)


def zero_policy(ocp: OcpDefinition, u=None) -> Policy:
    u = np.zeros(ocp.input_dim) if u is None else u
    return Policy.constant(u, np.zeros((ocp.input_dim, ocp.state_dim)), ocp.x0, ocp.horizon)
