"""Planar double integrator with optional linear equality constraints."""

import numpy as np

from projilqr.problem import OcpDefinition
from projilqr.systems.common import quadratic_cost

VARIANTS = ("none", "state", "state_input", "both")


def double_integrator_matrices(dt, dims=1, euler=False):
    """Exact zero-order-hold discretization, or explicit Euler when ``euler`` is set."""
    eye = np.eye(dims)
    A = np.block([[eye, dt * eye], [np.zeros((dims, dims)), eye]])
    B = np.vstack([(0.0 if euler else 0.5 * dt**2) * eye, dt * eye])
    return A, B


def make_double_integrator(constrained="none", N=50, dt=0.1, dims=None, x0=None,
                           state_weight=1.0, input_weight=0.1, terminal_weight=10.0,
                           euler=False) -> OcpDefinition:
    """Double integrator driven to the origin.

    Args:
        constrained: ``"none"``, ``"state"`` (positions on the diagonal
            ``p1 = p2``), ``"state_input"`` (``u1 - u2 + v1 = 0``) or ``"both"``.
            ``True``/``False`` map to ``"state"``/``"none"``.
        dims: spatial dimensions; defaults to 1 when unconstrained, else 2.
        euler: discretize with explicit Euler, which makes position constraints
            relative degree two.
    """
    if constrained is True:
        constrained = "state"
    elif constrained is False or constrained is None:
        constrained = "none"
    if constrained not in VARIANTS:
        raise ValueError(f"unknown variant {constrained!r}")
    if dims is None:
        dims = 1 if constrained == "none" else 2
    if constrained != "none" and dims < 2:
        raise ValueError("constrained variants need dims >= 2")
    m, p = 2 * dims, dims
    A, B = double_integrator_matrices(dt, dims, euler)
    if x0 is None:
        x0 = np.zeros(m)
        x0[:dims] = 1.0
        x0[dims:] = -0.5
        if constrained in ("state_input", "both"):
            x0[dims] = 0.0
    Q = state_weight * np.eye(m)
    R = input_weight * np.eye(p)
    stage, stage_d, term, term_d = quadratic_cost(Q, R, terminal_weight * np.eye(m))

    kw = {}
    if constrained in ("state", "both"):
        C = np.zeros((1, m))
        C[0, 0], C[0, 1] = 1.0, -1.0
        kw.update(
            state_constraint=lambda x, n: C @ x,
            state_constraint_jacobian=lambda x, n: C,
            terminal_constraint=lambda x: C @ x,
            terminal_constraint_jacobian=lambda x: C,
        )
    if constrained in ("state_input", "both"):
        D = np.zeros((1, m))
        D[0, dims] = 1.0
        E = np.zeros((1, p))
        E[0, 0], E[0, 1] = 1.0, -1.0
        kw.update(
            state_input_constraint=lambda x, u, n: D @ x + E @ u,
            state_input_constraint_jacobian=lambda x, u, n: (D, E),
        )
    return OcpDefinition(
        dynamics=lambda x, u, n: A @ x + B @ u,
        dynamics_jacobian=lambda x, u, n: (A, B),
        stage_cost=stage,
        stage_cost_derivatives=stage_d,
        terminal_cost=term,
        terminal_cost_derivatives=term_d,
        horizon=N,
        x0=x0,
        input_dim=p,
        dt=dt,
        name=f"double_integrator[{constrained}{', euler' if euler else ''}]",
        metadata={"A": A, "B": B, "Q": Q, "R": R, "Qf": terminal_weight * np.eye(m)},
        **kw,
    )
