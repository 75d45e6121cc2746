"""Self-checks shared by the ``validate`` command and the test suite.

Each check returns a :class:`CheckResult`; none of them raise on a failed
check, only on broken inputs.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from projilqr.errors import AdmissibilityError, ProjIlqrError, RelativeDegreeError
from projilqr.linalg import RANK_TOL
from projilqr.problem import OcpDefinition, TrajectoryPair
from projilqr.projection import ProjectedStage, ProjectionStage, project_all
from projilqr.riccati import assemble_policy, backward_pass
from projilqr.rollout import (LqStage, _state_input_jacobian, _state_jacobian, dynamics_jacobian,
                              finite_difference_jacobian, linearize_and_quadratize, rollout_policy)
from projilqr.solver import SolverSettings, solve

JACOBIAN_TOL = 1e-5
IDENTITY_TOL = 1e-9
ORACLE_TOL = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float = 0.0
    detail: str = ""


def relative_error(a, b) -> float:
    """``|a - b| / max(|b|, 1)`` in the Frobenius norm."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1.0))


def sample_points(ocp: OcpDefinition, count: int = 20, seed: int = 0, u_ref=None, scale=0.1):
    """Random ``(x, u, n)`` triples scattered around ``(x0, u_ref)``."""
    rng = np.random.default_rng(seed)
    u_ref = np.zeros(ocp.input_dim) if u_ref is None else np.asarray(u_ref, dtype=float)
    for _ in range(count):
        x = ocp.x0 + scale * rng.normal(size=ocp.state_dim)
        u = u_ref + scale * rng.normal(size=ocp.input_dim)
        n = int(rng.integers(0, max(ocp.horizon, 1)))
        yield x, u, n


def jacobian_errors(ocp: OcpDefinition, count: int = 20, seed: int = 0, u_ref=None) -> dict:
    """Worst relative deviation of each provided Jacobian from central differences."""
    worst = {"dynamics": 0.0, "state_input": 0.0, "state": 0.0, "terminal": 0.0}
    for x, u, n in sample_points(ocp, count, seed, u_ref):
        A, B = dynamics_jacobian(ocp, x, u, n)
        A_fd = finite_difference_jacobian(lambda z: ocp.dynamics(z, u, n), x)
        B_fd = finite_difference_jacobian(lambda w: ocp.dynamics(x, w, n), u)
        worst["dynamics"] = max(worst["dynamics"], relative_error(A, A_fd), relative_error(B, B_fd))
        rows = ocp.g1(x, u, n).shape[0]
        if rows:
            D, E = _state_input_jacobian(ocp, x, u, n, rows)
            D_fd = finite_difference_jacobian(lambda z: ocp.g1(z, u, n), x)
            E_fd = finite_difference_jacobian(lambda w: ocp.g1(x, w, n), u)
            worst["state_input"] = max(worst["state_input"], relative_error(D, D_fd),
                                       relative_error(E, E_fd))
        rows = ocp.g2(x, n).shape[0]
        if rows:
            C_fd = finite_difference_jacobian(lambda z: ocp.g2(z, n), x)
            worst["state"] = max(worst["state"],
                                 relative_error(_state_jacobian(ocp, x, n, rows), C_fd))
        rows = ocp.g3(x).shape[0]
        if rows:
            C_fd = finite_difference_jacobian(ocp.g3, x)
            C = _state_jacobian(ocp, x, ocp.horizon, rows, terminal=True)
            worst["terminal"] = max(worst["terminal"], relative_error(C, C_fd))
    return worst


def projection_identity_errors(lq: LqStage, ps: ProjectionStage, pr: ProjectedStage,
                               rng: np.random.Generator, samples: int = 3) -> dict:
    """Residuals of the algebraic identities linking a stage to its projection.

    Dynamics and cost are compared for ``du = eps + U dx + proj w`` at random
    ``dx, w``; all values are relative to the magnitude of the compared terms.
    """
    P = ps.proj
    scale = max(1.0, np.abs(P).max())
    out = {
        "idempotent": float(np.abs(P @ P - P).max() / scale),
        "symmetric": float(np.abs(P - P.T).max() / scale),
        "annihilates": float(np.abs(ps.E_stack @ P).max(initial=0.0)
                             / max(1.0, np.abs(ps.E_stack).max(initial=0.0))),
        "dynamics": 0.0,
        "cost": 0.0,
        "constraint": 0.0,
    }
    m, p = lq.A.shape[0], lq.B.shape[1]
    for _ in range(samples):
        dx, w = rng.normal(size=m), rng.normal(size=p)
        du = ps.eps + ps.U @ dx + P @ w
        full = lq.A @ dx + lq.B @ du
        proj = pr.A_t @ dx + pr.B_t @ w + pr.g_t
        out["dynamics"] = max(out["dynamics"], relative_error(proj, full))
        c_full = (lq.q + lq.q_vec @ dx + lq.r @ du + 0.5 * dx @ lq.Q @ dx
                  + 0.5 * du @ lq.R @ du + du @ lq.P @ dx)
        c_proj = (pr.q_t + pr.qv_t @ dx + pr.r_t @ w + 0.5 * dx @ pr.Q_t @ dx
                  + 0.5 * w @ pr.R_t @ w + w @ pr.P_t @ dx)
        out["cost"] = max(out["cost"], abs(c_full - c_proj) / max(1.0, abs(c_full)))
        if ps.rhs.size and ps.residual < 1e-12:
            lhs = ps.D_stack @ dx + ps.E_stack @ du
            out["constraint"] = max(out["constraint"], relative_error(lhs, ps.rhs))
    return out


def one_pass_oracle_error(ocp: OcpDefinition, initial_policy, rank_tol: float = RANK_TOL) -> float:
    """Relative deviation of one full-step Riccati iteration from the dense KKT solution.

    Only meaningful for linear dynamics with quadratic cost.
    """
    from projilqr.systems.random_lq import dense_kkt_oracle

    nominal = rollout_policy(ocp, initial_policy)
    approx = linearize_and_quadratize(ocp, nominal, rank_tol)
    projections, projected = project_all(approx, rank_tol)
    values = backward_pass(projected, approx.terminal, 1, rank_tol)
    traj = rollout_policy(ocp, assemble_policy(projections, values, nominal, 1.0))
    dx, du = dense_kkt_oracle(approx.stages, approx.constraints, approx.terminal)
    ref = TrajectoryPair(nominal.states + dx, nominal.inputs + du)
    got = np.concatenate([traj.states.ravel(), traj.inputs.ravel()])
    want = np.concatenate([ref.states.ravel(), ref.inputs.ravel()])
    return float(np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-300))


def strictly_decreasing(values) -> bool:
    values = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(values) < 0))


def run_checks(ocp: OcpDefinition, initial_policy, linear_quadratic: bool = False,
               u_ref=None, seed: int = 0, settings: Optional[SolverSettings] = None
               ) -> List[CheckResult]:
    """Relative degree, derivative, projection, oracle and validation-mode solve checks.

    A relative degree violation is reported and ends the run, since every
    later check depends on the projection.
    """
    results = []
    nominal = rollout_policy(ocp, initial_policy)
    approx = linearize_and_quadratize(ocp, nominal)
    try:
        projections, projected = project_all(approx)
    except RelativeDegreeError as exc:
        results.append(CheckResult("relative_degree", False, float(exc.violation.step), str(exc)))
        return results
    results.append(CheckResult("relative_degree", True, detail=f"{ocp.horizon} steps"))

    errs = jacobian_errors(ocp, 20, seed, u_ref)
    worst = max(errs.values())
    results.append(CheckResult("jacobians_vs_fd", worst <= JACOBIAN_TOL, worst,
                               ", ".join(f"{k}={v:.1e}" for k, v in errs.items())))

    rng = np.random.default_rng(seed)
    ident = {}
    for lq, ps, pr in zip(approx.stages, projections, projected):
        for k, v in projection_identity_errors(lq, ps, pr, rng, samples=1).items():
            ident[k] = max(ident.get(k, 0.0), v)
    worst = max(ident.values(), default=0.0)
    results.append(CheckResult("projection_identities", worst <= IDENTITY_TOL, worst,
                               ", ".join(f"{k}={v:.1e}" for k, v in ident.items())))

    if linear_quadratic:
        err = one_pass_oracle_error(ocp, initial_policy)
        results.append(CheckResult("kkt_oracle", err <= ORACLE_TOL, err, "one full step"))

    settings = settings or SolverSettings()
    settings = SolverSettings(**{**settings.__dict__, "validation_mode": True})
    try:
        res = solve(ocp, initial_policy, settings)
    except AdmissibilityError as exc:
        results.append(CheckResult("singular_conditions", False, detail=str(exc)))
        return results
    except ProjIlqrError as exc:
        results.append(CheckResult("solve", False, detail=f"{type(exc).__name__}: {exc}"))
        return results
    results.append(CheckResult("singular_conditions", True, detail="every step, every iteration"))
    results.append(CheckResult("solve", res.converged, res.reports[-1].ise,
                               f"{res.status} after {res.iterations} iterations"))
    accepted = [r.merit for r in res.reports[1:] if not r.stalled and r.alpha > 0]
    merits = [res.reports[0].merit] + accepted
    results.append(CheckResult("merit_decrease", strictly_decreasing(merits), float(len(merits)),
                               "accepted iterates"))
    if linear_quadratic:
        first = res.reports[1].alpha if len(res.reports) > 1 else 0.0
        results.append(CheckResult("full_step_lq", first == 1.0, first, "first alpha"))
    return results
