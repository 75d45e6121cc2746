"""3D point mass whose position must stay on ``y sin(2 pi x) - x cos(2 pi y) - z = 0``."""

import numpy as np

from projilqr.problem import OcpDefinition
from projilqr.rollout import ContinuousModelAdapter
from projilqr.systems.common import quadratic_cost

GRAVITY = 9.81
TWO_PI = 2.0 * np.pi


def surface(pos) -> float:
    x, y, z = pos[0], pos[1], pos[2]
    return y * np.sin(TWO_PI * x) - x * np.cos(TWO_PI * y) - z


def surface_gradient(pos) -> np.ndarray:
    x, y = pos[0], pos[1]
    return np.array([
        TWO_PI * y * np.cos(TWO_PI * x) - np.cos(TWO_PI * y),
        np.sin(TWO_PI * x) + TWO_PI * x * np.sin(TWO_PI * y),
        -1.0,
    ])


def project_to_surface(pos):
    """Move ``pos`` vertically onto the surface."""
    pos = np.array(pos, dtype=float)
    pos[2] += surface(pos)
    return pos


def point_mass_vector_field(mass=1.0, gravity=GRAVITY):
    g = np.array([0.0, 0.0, -gravity])

    def f(x, u):
        return np.concatenate([x[3:], u / mass + g])

    fx = np.zeros((6, 6))
    fx[:3, 3:] = np.eye(3)
    fu = np.vstack([np.zeros((3, 3)), np.eye(3) / mass])
    return f, lambda x, u: (fx, fu)


def make_point_mass_surface(N=300, dt=0.01, target=(0.3, 0.2, 0.3), start=(0.0, 0.0),
                            mass=1.0, position_weight=1.0, velocity_weight=0.1,
                            input_weight=0.01, terminal_position_weight=100.0,
                            terminal_velocity_weight=10.0) -> OcpDefinition:
    """Point mass under gravity tracking an off-surface target.

    The state is ``(position, velocity)`` and the input a 3D force. The surface
    constraint is imposed on every step and at the end of the horizon; the
    initial position is the point of the surface above ``start``.
    """
    f, jac = point_mass_vector_field(mass)
    adapter = ContinuousModelAdapter(f, dt, jac)
    x0 = np.concatenate([project_to_surface([start[0], start[1], 0.0]), np.zeros(3)])
    u_ss = np.array([0.0, 0.0, mass * GRAVITY])
    x_ref = np.concatenate([np.asarray(target, dtype=float), np.zeros(3)])
    Q = np.diag([position_weight] * 3 + [velocity_weight] * 3)
    R = input_weight * np.eye(3)
    Qf = np.diag([terminal_position_weight] * 3 + [terminal_velocity_weight] * 3)
    stage, stage_d, term, term_d = quadratic_cost(Q, R, Qf, x_ref, u_ss)

    def g(x, n=None):
        return np.array([surface(x[:3])])

    def g_jac(x, n=None):
        C = np.zeros((1, 6))
        C[0, :3] = surface_gradient(x[:3])
        return C

    return OcpDefinition(
        dynamics=adapter.step,
        dynamics_jacobian=adapter.step_jacobian,
        stage_cost=stage,
        stage_cost_derivatives=stage_d,
        terminal_cost=term,
        terminal_cost_derivatives=term_d,
        state_constraint=g,
        state_constraint_jacobian=g_jac,
        terminal_constraint=g,
        terminal_constraint_jacobian=g_jac,
        horizon=N,
        x0=x0,
        input_dim=3,
        dt=dt,
        name="point_mass_surface",
        metadata={"u_ss": u_ss, "target": np.asarray(target, dtype=float), "adapter": adapter,
                  "Q": Q, "R": R},
    )
