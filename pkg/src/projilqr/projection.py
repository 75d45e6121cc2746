"""Nullspace projection of the linearized constraints.

At every step the pure-state constraint of the next step is previewed through
the linearized dynamics and stacked under the state-input constraint::

    [D; C' A] dx + [E; C' B] du = [e; d']

The input increment is then parameterized as
``du = eps + U dx + proj w`` where ``eps, U`` restore the stacked constraint
with minimum norm and ``proj`` maps ``w`` into the kernel of ``[E; C' B]``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from projilqr.errors import RelativeDegreeError
from projilqr.linalg import RANK_TOL, rank_factorize
from projilqr.rollout import ConstraintStage, LqApproximation, LqStage

logger = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-8


@dataclass
class PreviewStack:
    M: np.ndarray
    N_mat: np.ndarray
    D_stack: np.ndarray
    E_stack: np.ndarray
    rhs: np.ndarray
    C_next: np.ndarray


@dataclass(frozen=True)
class RelativeDegreeViolation:
    step: int
    matrix: str
    rank: int
    rows: int

    def __str__(self):
        return (f"relative degree violation at step {self.step}: {self.matrix} has rank "
                f"{self.rank} < {self.rows} rows")


@dataclass
class ProjectionStage:
    M: np.ndarray
    N_mat: np.ndarray
    D_stack: np.ndarray
    E_stack: np.ndarray
    rhs: np.ndarray
    eps: np.ndarray
    U: np.ndarray
    proj: np.ndarray
    rank: int
    residual: float

    @property
    def nullity(self) -> int:
        return self.proj.shape[0] - self.rank


@dataclass
class ProjectedStage:
    A_t: np.ndarray
    B_t: np.ndarray
    g_t: np.ndarray
    q_t: float
    qv_t: np.ndarray
    Q_t: np.ndarray
    r_t: np.ndarray
    R_t: np.ndarray
    P_t: np.ndarray


def build_preview_stack(lq: LqStage, cons: ConstraintStage, C_next, d_next) -> PreviewStack:
    C_next = np.atleast_2d(C_next).reshape(-1, lq.A.shape[0])
    M = C_next @ lq.B
    N_mat = C_next @ lq.A
    return PreviewStack(
        M=M,
        N_mat=N_mat,
        D_stack=np.vstack([cons.D, N_mat]),
        E_stack=np.vstack([cons.E, M]),
        rhs=np.concatenate([cons.e, np.asarray(d_next, dtype=float).reshape(-1)]),
        C_next=C_next,
    )


def check_relative_degree(M, C_next, step: int = 0,
                          rank_tol: float = RANK_TOL) -> Optional[RelativeDegreeViolation]:
    """``None`` if ``M`` and ``C_next`` both have full row rank, else the first violation.

    ``M`` is scaled by ``C_next`` before the rank test, so a preview matrix that
    is tiny relative to the constraint gradient counts as deficient.
    """
    for name, mat, scale in (("C_next", C_next, None), ("M", M, C_next)):
        rows = mat.shape[0]
        if rows == 0:
            continue
        if rows == 1:
            s = np.array([np.sqrt(mat[0] @ mat[0])])
            rank = int(s[0] > 0)
        else:
            fac = rank_factorize(mat, rank_tol)
            s, rank = fac.singular_values, fac.rank
        if scale is not None and rank == rows and s.size:
            ref = max(np.abs(scale).max(), 1e-300)
            if s[rows - 1] <= rank_tol * ref:
                rank = rows - 1
        if rank < rows:
            return RelativeDegreeViolation(step, name, rank, rows)
    return None


def compute_projection(stack: PreviewStack, rank_tol: float = RANK_TOL) -> ProjectionStage:
    """Minimum-norm restoring split ``(eps, U)`` and nullspace projector of the stack."""
    fac = rank_factorize(stack.E_stack, rank_tol)
    pinv = fac.pinv()
    eps = pinv @ stack.rhs
    U = -pinv @ stack.D_stack
    proj = fac.projector()
    residual = float(np.linalg.norm(stack.E_stack @ eps - stack.rhs)) if stack.rhs.size else 0.0
    if residual > CONSISTENCY_TOL * (1.0 + np.linalg.norm(stack.rhs)):
        logger.warning("previewed constraint stack inconsistent; least-squares residual %.3e",
                       residual)
    return ProjectionStage(stack.M, stack.N_mat, stack.D_stack, stack.E_stack, stack.rhs,
                           eps, U, proj, fac.rank, residual)


def _sym(a):
    return 0.5 * (a + a.T)


def project_stage(lq: LqStage, ps: ProjectionStage) -> ProjectedStage:
    """Projected dynamics and stage-cost weights for the free input ``w``."""
    eps, U, proj = ps.eps, ps.U, ps.proj
    R_eps = lq.R @ eps
    RU = lq.R @ U
    return ProjectedStage(
        A_t=lq.A + lq.B @ U,
        B_t=lq.B @ proj,
        g_t=lq.B @ eps,
        q_t=float(lq.q + eps @ lq.r + 0.5 * eps @ R_eps),
        qv_t=lq.q_vec + U.T @ lq.r + lq.P.T @ eps + U.T @ R_eps,
        Q_t=_sym(lq.Q + U.T @ RU + U.T @ lq.P + lq.P.T @ U),
        r_t=proj @ (lq.r + R_eps),
        R_t=_sym(proj @ lq.R @ proj),
        P_t=proj @ (lq.P + RU),
    )


def project_all(approx: LqApproximation, rank_tol: float = RANK_TOL, check_degree: bool = True):
    """Projection and projected stage for every step of ``approx``.

    Raises:
        RelativeDegreeError: on the first step failing the relative degree test.
    """
    projections: List[ProjectionStage] = []
    projected: List[ProjectedStage] = []
    for n, (lq, cons) in enumerate(zip(approx.stages, approx.constraints)):
        C_next, d_next = approx.pure_state(n + 1)
        stack = build_preview_stack(lq, cons, C_next, d_next)
        if check_degree:
            violation = check_relative_degree(stack.M, stack.C_next, n, rank_tol)
            if violation is not None:
                raise RelativeDegreeError(violation)
        ps = compute_projection(stack, rank_tol)
        projections.append(ps)
        projected.append(project_stage(lq, ps))
    return projections, projected
