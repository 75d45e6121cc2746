"""Backward Riccati sweep for the projected, possibly singular LQ problem."""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from projilqr.errors import AdmissibilityError, NumericalError
from projilqr.linalg import RANK_TOL
from projilqr.projection import ProjectedStage, ProjectionStage
from projilqr.rollout import TerminalStage

CONDITION_TOL = 1e-8
VALUE_PSD_TOL = 1e-6


@dataclass
class ValueStage:
    """Quadratic value function ``s0 + s_vec.dx + dx.S.dx/2`` and the step's gains.

    The gain fields are ``None`` on the terminal stage.
    """

    S: np.ndarray
    s_vec: np.ndarray
    s0: float
    h: Optional[np.ndarray] = None
    G: Optional[np.ndarray] = None
    H: Optional[np.ndarray] = None
    l: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None


@dataclass(frozen=True)
class SingularConditionViolation:
    step: int
    condition: str
    value: float

    def __str__(self):
        if self.condition == "hessian_psd":
            return f"step {self.step}: input Hessian has eigenvalue {self.value:.3e} < 0"
        return (f"step {self.step}: kernel of the input Hessian is not contained in the kernel "
                f"of the cross term (residual {self.value:.3e})")


@dataclass
class Policy:
    """Affine feedback ``u = feedforward[n] + gains[n] (x - reference[n])``."""

    feedforward: np.ndarray
    gains: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        self.feedforward = np.asarray(self.feedforward, dtype=float)
        self.gains = np.asarray(self.gains, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        if not (len(self.feedforward) == len(self.gains) == len(self.reference)):
            raise ValueError("policy arrays must share the horizon")
        for arr in (self.feedforward, self.gains, self.reference):
            if not np.all(np.isfinite(arr)):
                raise NumericalError("policy has non-finite entries")

    @property
    def horizon(self) -> int:
        return len(self.feedforward)

    def control(self, n, x):
        return self.feedforward[n] + self.gains[n] @ (x - self.reference[n])

    @classmethod
    def constant(cls, u, gain, x_ref, horizon):
        u = np.asarray(u, dtype=float)
        gain = np.atleast_2d(gain)
        return cls(np.tile(u, (horizon, 1)), np.tile(gain, (horizon, 1, 1)),
                   np.tile(np.asarray(x_ref, dtype=float), (horizon, 1)))


def _sym(a):
    return 0.5 * (a + a.T)


def _hessian_terms(stage: ProjectedStage, S_next, s_next):
    SB = S_next @ stage.B_t
    H = _sym(stage.R_t + stage.B_t.T @ SB)
    G = stage.P_t + SB.T @ stage.A_t
    h = stage.r_t + stage.B_t.T @ (s_next + S_next @ stage.g_t)
    return H, G, h


def _symmetric_pinv_parts(H, rank_tol):
    lam, vec = np.linalg.eigh(H)
    scale = np.abs(lam).max(initial=0.0)
    keep = np.abs(lam) > rank_tol * scale if scale > 0 else np.zeros_like(lam, dtype=bool)
    return lam, vec, keep


def check_singular_conditions(stage: ProjectedStage, S_next, step: int = 0, s_next=None,
                              tol: float = CONDITION_TOL,
                              rank_tol: float = RANK_TOL) -> Optional[SingularConditionViolation]:
    """Admissibility of the singular LQ step.

    Requires the input Hessian ``H`` to be positive semi-definite and every
    kernel vector ``v`` of ``H`` to satisfy ``G^T v = 0`` (the cross term
    ``A_t^T S B_t + P_t^T`` annihilates the kernel).
    """
    if s_next is None:
        s_next = np.zeros(S_next.shape[0])
    H, G, _ = _hessian_terms(stage, S_next, s_next)
    return _check_hg(H, G, step, tol, rank_tol)


def _check_hg(H, G, step, tol, rank_tol):
    lam, vec, keep = _symmetric_pinv_parts(H, rank_tol)
    scale = max(1.0, np.abs(lam).max(initial=0.0))
    if lam.size and lam[0] < -tol * scale:
        return SingularConditionViolation(step, "hessian_psd", float(lam[0]))
    kernel = vec[:, ~keep]
    if kernel.size:
        resid = float(np.linalg.norm(G.T @ kernel, axis=0).max())
        if resid > tol * max(1.0, np.linalg.norm(G)):
            return SingularConditionViolation(step, "kernel_containment", resid)
    return None


def backward_pass(projected: Sequence[ProjectedStage], terminal: TerminalStage,
                  check_every: int = 1, rank_tol: float = RANK_TOL) -> List[ValueStage]:
    """Riccati recursion from the terminal weights back to step 0.

    Args:
        projected: projected stages for n = 0..N-1.
        terminal: terminal cost expansion.
        check_every: run the admissibility and value PSD checks on every k-th
            step (0 disables them); step 0 is always checked when enabled.

    Returns:
        ``N + 1`` value stages; the last one holds the terminal weights.
    """
    N = len(projected)
    S = _sym(np.atleast_2d(terminal.Q))
    s_vec = np.asarray(terminal.q_vec, dtype=float)
    s0 = float(terminal.q)
    values: List[Optional[ValueStage]] = [None] * (N + 1)
    values[N] = ValueStage(S, s_vec, s0)
    for n in range(N - 1, -1, -1):
        st = projected[n]
        H, G, h = _hessian_terms(st, S, s_vec)
        lam, vec, keep = _symmetric_pinv_parts(H, rank_tol)
        checked = check_every and (n % check_every == 0)
        if checked:
            violation = _check_hg(H, G, n, CONDITION_TOL, rank_tol)
            if violation is not None:
                raise AdmissibilityError(violation)
        vk = vec[:, keep]
        H_pinv = (vk / lam[keep]) @ vk.T
        l = -H_pinv @ h
        L = -H_pinv @ G
        S_g = S @ st.g_t
        s_plus = s_vec + S_g
        S_new = st.Q_t + st.A_t.T @ S @ st.A_t - L.T @ H @ L
        s_new = st.qv_t + st.A_t.T @ s_plus + G.T @ l + L.T @ (h + H @ l)
        s0 = float(st.q_t + s0 + st.g_t @ s_vec + 0.5 * st.g_t @ S_g + l @ (h + 0.5 * H @ l))
        S, s_vec = _sym(S_new), s_new
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(s_vec)) and np.isfinite(s0)):
            raise NumericalError("non-finite value function", step=n)
        if checked and S.size:
            lam_s = np.linalg.eigvalsh(S)[0]
            if lam_s < -VALUE_PSD_TOL * max(1.0, np.abs(S).max()):
                raise NumericalError(f"value Hessian lost PSD (eigenvalue {lam_s:.3e})", step=n)
        values[n] = ValueStage(S, s_vec, s0, h, G, H, l, L)
    return values


def assemble_policy(projections: Sequence[ProjectionStage], values: Sequence[ValueStage],
                    nominal, alpha: float) -> Policy:
    """Affine policy ``u_hat + alpha (eps + proj l) + (U + proj L)(x - x_hat)``."""
    N = len(projections)
    ff = np.empty_like(nominal.inputs)
    gains = np.empty((N, nominal.inputs.shape[1], nominal.states.shape[1]))
    for n, (ps, vs) in enumerate(zip(projections, values)):
        ff[n] = nominal.inputs[n] + alpha * (ps.eps + ps.proj @ vs.l)
        gains[n] = ps.U + ps.proj @ vs.L
    return Policy(ff, gains, nominal.states[:N].copy())
