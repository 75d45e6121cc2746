"""Two-link planar arm whose end effector must stay on a straight line.

Point masses sit at the link tips. The line passes through the initial
end-effector position; the cost pulls the joints towards a target whose end
effector lies off the line, so the optimum slides along it.
"""

import math

import numpy as np

from projilqr.problem import OcpDefinition
from projilqr.rollout import ContinuousModelAdapter
from projilqr.systems.common import quadratic_cost

GRAVITY = 9.81


class ArmModel:
    """Manipulator equation ``M(q) qdd + c(q, qd) + G(q) + b qd = tau`` and its derivatives."""

    def __init__(self, l1=0.5, l2=0.5, m1=1.0, m2=1.0, gravity=GRAVITY, damping=0.1):
        self.l1, self.l2, self.m1, self.m2 = l1, l2, m1, m2
        self.gravity, self.damping = gravity, damping

    def mass_matrix(self, q2):
        return np.array(self._mass(q2)).reshape(2, 2)

    def _mass(self, q2):
        l1, l2, m2 = self.l1, self.l2, self.m2
        k = m2 * l1 * l2 * math.cos(q2)
        a = m2 * l2 * l2
        return (self.m1 + m2) * l1 * l1 + a + 2.0 * k, a + k, a + k, a

    def holding_torque(self, q):
        g, l1, l2, m2 = self.gravity, self.l1, self.l2, self.m2
        c12 = math.cos(q[0] + q[1])
        return np.array([(self.m1 + m2) * g * l1 * math.cos(q[0]) + m2 * g * l2 * c12,
                         m2 * g * l2 * c12])

    def _accel(self, x, u):
        """Joint accelerations, inverse mass matrix entries and sin(q2) term."""
        q1, q2, dq1, dq2 = np.asarray(x, dtype=float).tolist()
        u1, u2 = np.asarray(u, dtype=float).tolist()
        g, l1, l2, m2, b = self.gravity, self.l1, self.l2, self.m2, self.damping
        hs = m2 * l1 * l2 * math.sin(q2)
        gc12 = m2 * g * l2 * math.cos(q1 + q2)
        f1 = u1 - (-hs * (2.0 * dq1 * dq2 + dq2 * dq2) + (self.m1 + m2) * g * l1 * math.cos(q1)
                     + gc12 + b * dq1)
        f2 = u2 - (hs * dq1 * dq1 + gc12 + b * dq2)
        m11, m12, _, m22 = self._mass(q2)
        det = m11 * m22 - m12 * m12
        i11, i12, i22 = m22 / det, -m12 / det, m11 / det
        return (i11 * f1 + i12 * f2, i12 * f1 + i22 * f2), (i11, i12, i22), hs

    def vector_field(self, x, u):
        (a1, a2), _, _ = self._accel(x, u)
        return np.array([x[2], x[3], a1, a2])

    def jacobian(self, x, u):
        return self.linearize(x, u)[1:]

    def linearize(self, x, u):
        """``(f, fx, fu)`` at one point, sharing the mass matrix inverse."""
        q1, q2, dq1, dq2 = np.asarray(x, dtype=float).tolist()
        g, l1, l2, m2, b = self.gravity, self.l1, self.l2, self.m2, self.damping
        (a1, a2), (i11, i12, i22), hs = self._accel(x, u)
        hc = m2 * l1 * l2 * math.cos(q2)
        gs12 = m2 * g * l2 * math.sin(q1 + q2)
        # d(bias)/d(q1, q2, dq1, dq2); the q2 column also carries dM/dq2 @ qdd
        r1 = (-(self.m1 + m2) * g * l1 * math.sin(q1) - gs12,
              -hc * (2.0 * dq1 * dq2 + dq2 * dq2) - gs12 - hs * (2.0 * a1 + a2),
              -2.0 * hs * dq2 + b, -2.0 * hs * (dq1 + dq2))
        r2 = (-gs12, hc * dq1 * dq1 - gs12 - hs * a1, 2.0 * hs * dq1, b)
        fx = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0],
                       [-(i11 * a + i12 * c) for a, c in zip(r1, r2)],
                       [-(i12 * a + i22 * c) for a, c in zip(r1, r2)]])
        fu = np.array([[0.0, 0.0], [0.0, 0.0], [i11, i12], [i12, i22]])
        return np.array([dq1, dq2, a1, a2]), fx, fu

    def linearize_batch(self, X, U):
        """:meth:`linearize` over stacked points ``X`` (K, 4) and ``U`` (K, 2)."""
        q1, q2, dq1, dq2 = X.T
        g, l1, l2, m2, b = self.gravity, self.l1, self.l2, self.m2, self.damping
        m1g = (self.m1 + m2) * g * l1
        hs = m2 * l1 * l2 * np.sin(q2)
        hc = m2 * l1 * l2 * np.cos(q2)
        s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
        gc12, gs12 = m2 * g * l2 * c12, m2 * g * l2 * s12
        f1 = U[:, 0] - (-hs * (2.0 * dq1 * dq2 + dq2 * dq2) + m1g * np.cos(q1) + gc12 + b * dq1)
        f2 = U[:, 1] - (hs * dq1 * dq1 + gc12 + b * dq2)
        a = m2 * l2 * l2
        m11 = (self.m1 + m2) * l1 * l1 + a + 2.0 * hc
        m12 = a + hc
        det = m11 * a - m12 * m12
        i11, i12, i22 = a / det, -m12 / det, m11 / det
        a1 = i11 * f1 + i12 * f2
        a2 = i12 * f1 + i22 * f2
        zero = np.zeros_like(q1)
        r1 = np.stack([-m1g * np.sin(q1) - gs12,
                       -hc * (2.0 * dq1 * dq2 + dq2 * dq2) - gs12 - hs * (2.0 * a1 + a2),
                       -2.0 * hs * dq2 + b, -2.0 * hs * (dq1 + dq2)], axis=1)
        r2 = np.stack([-gs12, hc * dq1 * dq1 - gs12 - hs * a1, 2.0 * hs * dq1, b + zero], axis=1)
        K = X.shape[0]
        fx = np.zeros((K, 4, 4))
        fx[:, 0, 2] = fx[:, 1, 3] = 1.0
        fx[:, 2] = -(i11[:, None] * r1 + i12[:, None] * r2)
        fx[:, 3] = -(i12[:, None] * r1 + i22[:, None] * r2)
        fu = np.zeros((K, 4, 2))
        fu[:, 2, 0], fu[:, 2, 1], fu[:, 3, 0], fu[:, 3, 1] = i11, i12, i12, i22
        return np.stack([dq1, dq2, a1, a2], axis=1), fx, fu


def forward_kinematics(q, l1=0.5, l2=0.5):
    a = q[0] + q[1]
    return np.array([l1 * np.cos(q[0]) + l2 * np.cos(a), l1 * np.sin(q[0]) + l2 * np.sin(a)])


def kinematic_jacobian(q, l1=0.5, l2=0.5):
    a = q[0] + q[1]
    return np.array([
        [-l1 * np.sin(q[0]) - l2 * np.sin(a), -l2 * np.sin(a)],
        [l1 * np.cos(q[0]) + l2 * np.cos(a), l2 * np.cos(a)],
    ])


def make_planar_arm(N=300, dt=0.01, gravity=True, q0=(-0.4, 1.6), line_angle=0.0,
                    joint_offset=(1.0, 0.0), link_lengths=(0.5, 0.5), masses=(1.0, 1.0),
                    position_weight=1.0, velocity_weight=0.05, input_weight=0.01,
                    terminal_position_weight=50.0, terminal_velocity_weight=5.0) -> OcpDefinition:
    """Planar arm with an end-effector-on-line constraint.

    Args:
        q0: initial joint angles (rad); the arm starts at rest.
        line_angle: direction of the constraint line in the world frame (rad).
        joint_offset: target joint angles relative to ``q0``.
    """
    l1, l2 = link_lengths
    grav = GRAVITY if gravity else 0.0
    model = ArmModel(l1, l2, masses[0], masses[1], grav)
    adapter = ContinuousModelAdapter(model.vector_field, dt, model.jacobian,
                                     linearization=model.linearize,
                                     batch_linearization=model.linearize_batch)
    q0 = np.asarray(q0, dtype=float)
    x0 = np.concatenate([q0, np.zeros(2)])
    u_ss = model.holding_torque(q0)
    p0 = forward_kinematics(q0, l1, l2)
    normal = np.array([-np.sin(line_angle), np.cos(line_angle)])
    x_ref = np.concatenate([q0 + np.asarray(joint_offset, dtype=float), np.zeros(2)])
    Q = np.diag([position_weight] * 2 + [velocity_weight] * 2)
    R = input_weight * np.eye(2)
    Qf = np.diag([terminal_position_weight] * 2 + [terminal_velocity_weight] * 2)
    stage, stage_d, term, term_d = quadratic_cost(Q, R, Qf, x_ref, u_ss)

    def g(x, n=None):
        return np.array([normal @ (forward_kinematics(x[:2], l1, l2) - p0)])

    def g_jac(x, n=None):
        C = np.zeros((1, 4))
        C[0, :2] = normal @ kinematic_jacobian(x[:2], l1, l2)
        return C

    return OcpDefinition(
        dynamics=adapter.step,
        dynamics_jacobian=adapter.step_jacobian,
        trajectory_dynamics_jacobian=adapter.trajectory_jacobian,
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
        input_dim=2,
        dt=dt,
        name="planar_arm",
        metadata={"u_ss": u_ss, "adapter": adapter, "line_point": p0, "line_normal": normal,
                  "link_lengths": (l1, l2), "model": model, "Q": Q, "R": R},
    )
