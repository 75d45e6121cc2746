import dataclasses

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from projilqr.errors import DefinitionError, DivergenceError, NumericalError
from projilqr.problem import OcpDefinition, TrajectoryPair
from projilqr.riccati import Policy
from projilqr.rollout import (ContinuousModelAdapter, finite_difference_jacobian,
                              integrate_step_with_sensitivities, integrate_steps_with_sensitivities,
                              linearize_and_quadratize, rollout_policy)
from projilqr.solver import lqr_initial_policy, zero_policy
from projilqr.systems import make_double_integrator, make_point_mass_surface, make_random_constrained_lq
from projilqr.systems.planar_arm import make_planar_arm
from projilqr.systems.point_mass import surface


def pendulum(x, u):
    return np.array([x[1], -9.81 * np.sin(x[0]) - 0.1 * x[1] + u[0]])


def discrete_scalar(N=3):
    return OcpDefinition(
        dynamics=lambda x, u, n: x + u,
        stage_cost=lambda x, u, n: float(x @ x + u @ u),
        terminal_cost=lambda x: float(x @ x),
        horizon=N, x0=[1.0], input_dim=1,
    )


class TestRolloutPolicy:
    def test_identity_dynamics_constant(self):
        ocp = OcpDefinition(dynamics=lambda x, u, n: x, stage_cost=lambda x, u, n: 0.0,
                            terminal_cost=lambda x: 0.0, horizon=4, x0=[0.3, -2.0], input_dim=1)
        traj = rollout_policy(ocp, zero_policy(ocp))
        np.testing.assert_array_equal(traj.states, np.tile([0.3, -2.0], (5, 1)))

    def test_dead_beat(self):
        ocp = discrete_scalar()
        traj = rollout_policy(ocp, Policy.constant([0.0], [[-1.0]], [0.0], 3))
        np.testing.assert_array_equal(traj.states.ravel(), [1.0, 0.0, 0.0, 0.0])

    def test_double_integrator_lqr_matches_hand_recursion(self):
        ocp = make_double_integrator("none", N=5)
        pol = lqr_initial_policy(ocp)
        traj = rollout_policy(ocp, pol)
        A, B = ocp.metadata["A"], ocp.metadata["B"]
        K = pol.gains[0]
        x = ocp.x0.copy()
        for n in range(5):
            u = K @ (x - ocp.x0)
            np.testing.assert_allclose(traj.inputs[n], u, atol=1e-15)
            x = A @ x + B @ u
            np.testing.assert_allclose(traj.states[n + 1], x, atol=1e-15)
        assert np.all(np.abs(traj.states) < 10)

    def test_horizon_mismatch(self):
        with pytest.raises(DefinitionError):
            rollout_policy(discrete_scalar(3), Policy.constant([0.0], [[0.0]], [0.0], 2))

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_names_step(self):
        ocp = OcpDefinition(dynamics=lambda x, u, n: x * 1e200, stage_cost=lambda x, u, n: 0.0,
                            terminal_cost=lambda x: 0.0, horizon=5, x0=[1.0], input_dim=1)
        with pytest.raises(DivergenceError, match="step 2"):
            rollout_policy(ocp, zero_policy(ocp))


class TestRk4Sensitivities:
    @staticmethod
    def _scalar_errors(dt, a=-1.3, b=0.7):
        adapter = ContinuousModelAdapter(lambda x, u: a * x + b * u, dt,
                                         lambda x, u: (np.array([[a]]), np.array([[b]])))
        _, A, B = integrate_step_with_sensitivities(adapter, np.array([0.4]), np.array([0.2]))
        return abs(A[0, 0] - np.exp(a * dt)), abs(B[0, 0] - (np.exp(a * dt) - 1.0) * b / a)

    def test_scalar_linear_ode_order(self):
        errs = [self._scalar_errors(dt) for dt in (0.4, 0.2, 0.1)]
        for (ea0, eb0), (ea1, eb1) in zip(errs, errs[1:]):
            assert ea0 / ea1 >= 14
            assert eb0 / eb1 >= 14
        # one step of RK4 on a linear ODE is the degree-4 Taylor polynomial of exp
        z = -1.3 * 0.1
        taylor = 1 + z + z**2 / 2 + z**3 / 6 + z**4 / 24
        assert errs[-1][0] == pytest.approx(abs(taylor - np.exp(z)), rel=1e-6)

    def test_matrix_linear_ode_vs_expm(self, rng):
        Ac = rng.normal(size=(3, 3))
        Bc = rng.normal(size=(3, 2))
        dt = 0.01
        adapter = ContinuousModelAdapter(lambda x, u: Ac @ x + Bc @ u, dt, lambda x, u: (Ac, Bc))
        x = rng.normal(size=3)
        u = rng.normal(size=2)
        x_next, A, B = integrate_step_with_sensitivities(adapter, x, u)
        blk = np.zeros((5, 5))
        blk[:3, :3], blk[:3, 3:] = Ac, Bc
        Phi = scipy.linalg.expm(blk * dt)
        np.testing.assert_allclose(A, Phi[:3, :3], atol=1e-10)
        np.testing.assert_allclose(B, Phi[:3, 3:], atol=1e-10)
        np.testing.assert_allclose(x_next, Phi[:3, :3] @ x + Phi[:3, 3:] @ u, atol=1e-10)

    def test_zero_field(self):
        adapter = ContinuousModelAdapter(lambda x, u: np.zeros(2), 0.1)
        x = np.array([1.0, 2.0])
        x_next, A, B = integrate_step_with_sensitivities(adapter, x, np.ones(3))
        np.testing.assert_array_equal(x_next, x)
        np.testing.assert_allclose(A, np.eye(2))
        np.testing.assert_allclose(B, np.zeros((2, 3)))

    def test_pendulum_equilibrium(self):
        adapter = ContinuousModelAdapter(pendulum, 0.01)
        x = np.zeros(2)
        x_next, A, B = integrate_step_with_sensitivities(adapter, x, np.zeros(1))
        np.testing.assert_array_equal(x_next, x)
        A_fd = finite_difference_jacobian(lambda z: adapter.step(z, np.zeros(1)), x)
        assert np.linalg.norm(A - A_fd) <= 1e-6 * np.linalg.norm(A_fd)

    def test_sensitivities_are_jacobians_of_step(self, rng):
        adapter = ContinuousModelAdapter(pendulum, 0.05, substeps=3)
        x, u = rng.normal(size=2), rng.normal(size=1)
        x_next, A, B = integrate_step_with_sensitivities(adapter, x, u)
        np.testing.assert_allclose(x_next, adapter.step(x, u), atol=1e-15)
        np.testing.assert_allclose(A, finite_difference_jacobian(lambda z: adapter.step(z, u), x),
                                   atol=1e-8)
        np.testing.assert_allclose(B, finite_difference_jacobian(lambda w: adapter.step(x, w), u),
                                   atol=1e-8)

    def test_nonfinite(self):
        adapter = ContinuousModelAdapter(lambda x, u: np.full(1, np.inf), 0.1,
                                         lambda x, u: (np.zeros((1, 1)), np.zeros((1, 1))))
        with pytest.raises(NumericalError):
            integrate_step_with_sensitivities(adapter, np.zeros(1), np.zeros(1))

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(DefinitionError):
            ContinuousModelAdapter(pendulum, 0.0)


class TestBatchedSensitivities:
    def test_loop_fallback_matches_single_steps(self, rng):
        adapter = ContinuousModelAdapter(pendulum, 0.05)
        X, U = rng.normal(size=(4, 2)), rng.normal(size=(4, 1))
        x_next, A, B = integrate_steps_with_sensitivities(adapter, X, U)
        for n in range(4):
            xs, As, Bs = integrate_step_with_sensitivities(adapter, X[n], U[n])
            np.testing.assert_array_equal(x_next[n], xs)
            np.testing.assert_array_equal(A[n], As)
            np.testing.assert_array_equal(B[n], Bs)

    def test_empty_batch(self):
        adapter = ContinuousModelAdapter(pendulum, 0.05)
        x_next, A, B = integrate_steps_with_sensitivities(adapter, np.zeros((0, 2)),
                                                          np.zeros((0, 1)))
        assert x_next.shape == (0, 2) and A.shape == (0, 2, 2) and B.shape == (0, 2, 1)

    def test_vectorized_arm_matches_single_steps(self, rng):
        ocp = make_planar_arm(N=6)
        X = ocp.x0 + 0.3 * rng.normal(size=(6, 4))
        U = 0.5 * rng.normal(size=(6, 2))
        A, B = ocp.trajectory_dynamics_jacobian(X, U)
        for n in range(6):
            As, Bs = ocp.dynamics_jacobian(X[n], U[n], n)
            np.testing.assert_allclose(A[n], As, rtol=0, atol=1e-14)
            np.testing.assert_allclose(B[n], Bs, rtol=0, atol=1e-14)

    def test_vectorized_nonfinite_names_step(self):
        ocp = make_planar_arm(N=3)
        X = np.tile(ocp.x0, (3, 1))
        X[2, 2] = np.inf
        with pytest.raises(NumericalError) as info:
            ocp.trajectory_dynamics_jacobian(X, np.zeros((3, 2)))
        assert info.value.step == 2


class TestFiniteDifferences:
    def test_affine_exact(self, rng):
        M, c = rng.normal(size=(3, 4)), rng.normal(size=3)
        np.testing.assert_allclose(finite_difference_jacobian(lambda z: M @ z + c, rng.normal(size=4)),
                                   M, atol=1e-8)

    def test_quadratic_gradient(self, rng):
        W = rng.normal(size=(3, 3))
        W = W + W.T
        z = rng.normal(size=3)
        grad = finite_difference_jacobian(lambda v: 0.5 * v @ W @ v, z)[0]
        np.testing.assert_allclose(grad, W @ z, atol=1e-8)

    def test_pendulum_vs_analytic(self, rng):
        x = rng.normal(size=2)
        J = finite_difference_jacobian(lambda z: pendulum(z, np.zeros(1)), x)
        np.testing.assert_allclose(J, [[0, 1], [-9.81 * np.cos(x[0]), -0.1]], atol=1e-8)


class TestLinearize:
    def test_lq_recovers_matrices(self, rng):
        ocp = make_random_constrained_lq(3, m=4, p=3, N=5, n_state_input=1, n_state=1)
        meta = ocp.metadata
        traj = TrajectoryPair(rng.normal(size=(6, 4)), rng.normal(size=(5, 3)))
        approx = linearize_and_quadratize(ocp, traj)
        W = meta["W"]
        for st in approx.stages:
            np.testing.assert_allclose(st.A, meta["A"])
            np.testing.assert_allclose(st.B, meta["B"])
            np.testing.assert_allclose(st.Q, W[:4, :4], atol=1e-14)
            np.testing.assert_allclose(st.R, W[4:, 4:], atol=1e-14)
            np.testing.assert_allclose(st.P, W[4:, :4], atol=1e-14)
        assert approx.terminal.Q.shape == (4, 4)

    def test_residual_signs(self, rng):
        ocp = make_random_constrained_lq(4, m=4, p=3, N=3, n_state_input=1, n_state=1)
        traj = TrajectoryPair(rng.normal(size=(4, 4)), rng.normal(size=(3, 3)))
        approx = linearize_and_quadratize(ocp, traj)
        for n, cons in enumerate(approx.constraints):
            x, u = traj.states[n], traj.inputs[n]
            np.testing.assert_allclose(cons.e, -ocp.g1(x, u, n), atol=1e-12)
            np.testing.assert_allclose(cons.d, -ocp.g2(x, n), atol=1e-12)
        np.testing.assert_allclose(approx.terminal.d, -ocp.g3(traj.states[-1]), atol=1e-12)

    def test_fd_fallback_matches_analytic(self, rng):
        ocp = make_random_constrained_lq(5, m=3, p=2, N=2, n_state_input=1, n_state=1)
        bare = OcpDefinition(dynamics=ocp.dynamics, stage_cost=ocp.stage_cost,
                             terminal_cost=ocp.terminal_cost,
                             state_input_constraint=ocp.state_input_constraint,
                             state_constraint=ocp.state_constraint,
                             terminal_constraint=ocp.terminal_constraint,
                             horizon=2, x0=ocp.x0, input_dim=2)
        traj = TrajectoryPair(rng.normal(size=(3, 3)), rng.normal(size=(2, 2)))
        exact = linearize_and_quadratize(ocp, traj)
        approx = linearize_and_quadratize(bare, traj)
        for a, b in zip(exact.stages, approx.stages):
            for name in ("A", "B", "q_vec", "r"):
                np.testing.assert_allclose(getattr(b, name), getattr(a, name), atol=1e-7)
            for name in ("Q", "R", "P"):
                np.testing.assert_allclose(getattr(b, name), getattr(a, name), atol=1e-5)
        for a, b in zip(exact.constraints, approx.constraints):
            np.testing.assert_allclose(np.abs(b.E), np.abs(a.E), atol=1e-7)
            np.testing.assert_allclose(np.abs(b.C), np.abs(a.C), atol=1e-7)

    def test_surface_gradient_vs_fd(self, rng):
        ocp = make_point_mass_surface(N=3)
        for _ in range(5):
            x = np.concatenate([rng.uniform(-1, 1, 3), rng.normal(size=3)])
            C = ocp.state_constraint_jacobian(x, 0)
            C_fd = finite_difference_jacobian(lambda z: ocp.g2(z, 0), x)
            assert np.linalg.norm(C - C_fd) <= 1e-5 * np.linalg.norm(C_fd)
            assert ocp.g2(x, 0)[0] == pytest.approx(surface(x[:3]))

    def test_trajectory_hook_matches_per_step(self, rng):
        ocp = make_planar_arm(N=8)
        traj = rollout_policy(ocp, lqr_initial_policy(ocp, ocp.metadata["u_ss"]))
        batched = linearize_and_quadratize(ocp, traj)
        per_step = linearize_and_quadratize(
            dataclasses.replace(ocp, trajectory_dynamics_jacobian=None), traj)
        for a, b in zip(batched.stages, per_step.stages):
            np.testing.assert_allclose(a.A, b.A, rtol=0, atol=1e-14)
            np.testing.assert_allclose(a.B, b.B, rtol=0, atol=1e-14)

    def test_rejects_indefinite_input_weight(self):
        ocp = OcpDefinition(dynamics=lambda x, u, n: x + u,
                            stage_cost=lambda x, u, n: float(x @ x),
                            terminal_cost=lambda x: 0.0, horizon=1, x0=[1.0], input_dim=1)
        with pytest.raises(DefinitionError, match="positive definite"):
            linearize_and_quadratize(ocp, TrajectoryPair(np.ones((2, 1)), np.ones((1, 1))))

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_first_order_consistency(self, seed):
        rng = np.random.default_rng(seed)
        ocp = make_point_mass_surface(N=2)
        adapter = ocp.metadata["adapter"]
        x = ocp.x0 + 0.1 * rng.normal(size=6)
        u = ocp.metadata["u_ss"] + rng.normal(size=3)
        x_next, A, B = integrate_step_with_sensitivities(adapter, x, u)
        errs = []
        for scale in (1e-4, 5e-5):
            dx, du = scale * rng.normal(size=6), scale * rng.normal(size=3)
            resid = np.linalg.norm(adapter.step(x + dx, u + du) - x_next - A @ dx - B @ du)
            errs.append(resid / (np.linalg.norm(dx) + np.linalg.norm(du)) ** 2)
        # remainder is quadratic with a modest constant
        assert max(errs) < 10.0
