import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projilqr.errors import RelativeDegreeError
from projilqr.problem import TrajectoryPair
from projilqr.projection import (build_preview_stack, check_relative_degree, compute_projection,
                                 project_all, project_stage)
from projilqr.rollout import ConstraintStage, LqStage, linearize_and_quadratize
from projilqr.solver import zero_policy
from projilqr.rollout import rollout_policy
from projilqr.systems import make_double_integrator
from projilqr.systems.double_integrator import double_integrator_matrices
from projilqr.validation import projection_identity_errors


def random_stage(rng, m, p, c1, c2):
    A, B = rng.normal(size=(m, m)), rng.normal(size=(m, p))
    L = rng.normal(size=(m + p, m + p))
    W = L @ L.T + np.diag([0.0] * m + [0.1] * p)
    lq = LqStage(A, B, float(rng.uniform(0, 2)), rng.normal(size=m), W[:m, :m],
                 rng.normal(size=p), W[m:, m:], W[m:, :m])
    cons = ConstraintStage(rng.normal(size=(c1, m)), rng.normal(size=(c1, p)), rng.normal(size=c1),
                           np.zeros((0, m)), np.zeros(0))
    return lq, cons, rng.normal(size=(c2, m)), rng.normal(size=c2)


def no_constraint(m, p):
    return ConstraintStage(np.zeros((0, m)), np.zeros((0, p)), np.zeros(0), np.zeros((0, m)),
                           np.zeros(0))


class TestPreviewStack:
    def test_identity_preview(self, rng):
        lq, cons, _, _ = random_stage(rng, 3, 3, 0, 0)
        stack = build_preview_stack(lq, cons, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(stack.M, lq.B)
        np.testing.assert_array_equal(stack.N_mat, lq.A)

    def test_no_next_constraint(self, rng):
        lq, cons, _, _ = random_stage(rng, 3, 2, 1, 0)
        stack = build_preview_stack(lq, cons, np.zeros((0, 3)), np.zeros(0))
        np.testing.assert_array_equal(stack.E_stack, cons.E)
        np.testing.assert_array_equal(stack.D_stack, cons.D)
        np.testing.assert_array_equal(stack.rhs, cons.e)

    def test_euler_double_integrator_degenerate(self):
        dt = 0.1
        A, B = double_integrator_matrices(dt, 1, euler=True)
        lq = LqStage(A, B, 0.0, np.zeros(2), np.eye(2), np.zeros(1), np.eye(1), np.zeros((1, 2)))
        stack = build_preview_stack(lq, no_constraint(2, 1), np.array([[1.0, 0.0]]), np.zeros(1))
        np.testing.assert_array_equal(stack.M, [[0.0]])
        v = check_relative_degree(stack.M, stack.C_next, step=7)
        assert v is not None and v.matrix == "M" and v.step == 7


class TestRelativeDegree:
    def test_zero_row(self):
        M = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert check_relative_degree(M, np.eye(2)) is not None

    def test_square_nonsingular(self, rng):
        assert check_relative_degree(rng.normal(size=(2, 2)), rng.normal(size=(2, 4))) is None

    def test_exact_zoh_position_constraint(self):
        dt = 0.1
        A, B = double_integrator_matrices(dt, 1)
        M = np.array([[1.0, 0.0]]) @ B
        assert M[0, 0] == pytest.approx(dt**2 / 2)
        assert check_relative_degree(M, np.array([[1.0, 0.0]])) is None

    def test_deficient_next_constraint(self):
        C = np.array([[1.0, 0.0], [2.0, 0.0]])
        v = check_relative_degree(np.eye(2), C)
        assert v.matrix == "C_next" and v.rank == 1

    def test_tiny_preview_relative_to_gradient(self):
        assert check_relative_degree(np.array([[1e-14]]), np.array([[1.0, 0.0]])) is not None

    def test_project_all_raises_with_step(self):
        ocp = make_double_integrator("state", N=4, euler=True)
        traj = rollout_policy(ocp, zero_policy(ocp))
        with pytest.raises(RelativeDegreeError) as exc:
            project_all(linearize_and_quadratize(ocp, traj))
        assert exc.value.violation.step == 0


class TestComputeProjection:
    def test_zero_residual_gives_zero_eps(self, rng):
        lq, cons, C, _ = random_stage(rng, 4, 4, 1, 1)
        cons = ConstraintStage(cons.D, cons.E, np.zeros(1), cons.C, cons.d)
        ps = compute_projection(build_preview_stack(lq, cons, C, np.zeros(1)))
        np.testing.assert_array_equal(ps.eps, 0)

    def test_fully_input_constrained(self, rng):
        m, p = 3, 2
        D, e = rng.normal(size=(p, m)), rng.normal(size=p)
        lq, _, _, _ = random_stage(rng, m, p, 0, 0)
        cons = ConstraintStage(D, np.eye(p), e, np.zeros((0, m)), np.zeros(0))
        ps = compute_projection(build_preview_stack(lq, cons, np.zeros((0, m)), np.zeros(0)))
        np.testing.assert_allclose(ps.eps, e, atol=1e-14)
        np.testing.assert_allclose(ps.U, -D, atol=1e-14)
        np.testing.assert_allclose(ps.proj, 0, atol=1e-14)
        assert ps.nullity == 0

    def test_no_constraints_identity(self, rng):
        lq, _, _, _ = random_stage(rng, 3, 2, 0, 0)
        ps = compute_projection(build_preview_stack(lq, no_constraint(3, 2), np.zeros((0, 3)),
                                                    np.zeros(0)))
        np.testing.assert_array_equal(ps.proj, np.eye(2))
        np.testing.assert_array_equal(ps.eps, 0)
        np.testing.assert_array_equal(ps.U, 0)

    def test_parameterization_satisfies_stack(self, rng):
        lq, cons, C, d = random_stage(rng, 4, 4, 1, 1)
        ps = compute_projection(build_preview_stack(lq, cons, C, d))
        for _ in range(10):
            dx, w = rng.normal(size=4), rng.normal(size=4)
            du = ps.eps + ps.U @ dx + ps.proj @ w
            np.testing.assert_allclose(ps.E_stack @ du, ps.rhs - ps.D_stack @ dx, atol=1e-10)

    def test_stage_invariants(self, rng):
        lq, cons, C, d = random_stage(rng, 5, 4, 1, 2)
        ps = compute_projection(build_preview_stack(lq, cons, C, d))
        np.testing.assert_allclose(ps.E_stack @ ps.eps, ps.rhs, atol=1e-8 * (1 + np.linalg.norm(ps.rhs)))
        np.testing.assert_allclose(ps.E_stack @ ps.U, -ps.D_stack, atol=1e-8)
        np.testing.assert_allclose(ps.E_stack @ ps.proj, 0, atol=1e-9)
        assert ps.rank == 3 and ps.nullity == 1

    def test_inconsistent_stack_warns(self, rng, caplog):
        lq, _, _, _ = random_stage(rng, 3, 2, 0, 0)
        E = np.array([[1.0, 0.0], [1.0, 0.0]])
        cons = ConstraintStage(np.zeros((2, 3)), E, np.array([0.0, 1.0]), np.zeros((0, 3)), np.zeros(0))
        with caplog.at_level(logging.WARNING):
            ps = compute_projection(build_preview_stack(lq, cons, np.zeros((0, 3)), np.zeros(0)))
        assert ps.residual == pytest.approx(np.sqrt(0.5))
        np.testing.assert_allclose(ps.eps, [0.5, 0.0], atol=1e-14)
        assert "inconsistent" in caplog.text


class TestProjectStage:
    def test_identity_projection_is_noop(self, rng):
        lq, _, _, _ = random_stage(rng, 3, 2, 0, 0)
        ps = compute_projection(build_preview_stack(lq, no_constraint(3, 2), np.zeros((0, 3)),
                                                    np.zeros(0)))
        pr = project_stage(lq, ps)
        np.testing.assert_allclose(pr.A_t, lq.A)
        np.testing.assert_allclose(pr.B_t, lq.B)
        np.testing.assert_allclose(pr.g_t, 0)
        assert pr.q_t == lq.q
        np.testing.assert_allclose(pr.qv_t, lq.q_vec)
        np.testing.assert_allclose(pr.Q_t, lq.Q, atol=1e-15)
        np.testing.assert_allclose(pr.r_t, lq.r)
        np.testing.assert_allclose(pr.R_t, lq.R, atol=1e-15)
        np.testing.assert_allclose(pr.P_t, lq.P)

    def test_zero_eps_and_gain(self, rng):
        lq, _, _, _ = random_stage(rng, 3, 3, 0, 0)
        E = np.array([[1.0, 0.0, 0.0]])
        cons = ConstraintStage(np.zeros((1, 3)), E, np.zeros(1), np.zeros((0, 3)), np.zeros(0))
        ps = compute_projection(build_preview_stack(lq, cons, np.zeros((0, 3)), np.zeros(0)))
        pr = project_stage(lq, ps)
        proj = np.diag([0.0, 1.0, 1.0])
        np.testing.assert_allclose(ps.proj, proj, atol=1e-15)
        assert pr.q_t == lq.q
        np.testing.assert_allclose(pr.Q_t, lq.Q, atol=1e-15)
        np.testing.assert_allclose(pr.R_t, proj @ lq.R @ proj, atol=1e-15)

    @given(st.integers(0, 100_000), st.integers(2, 6), st.integers(1, 4), st.integers(0, 2),
           st.integers(0, 2))
    @settings(max_examples=60, deadline=None)
    def test_equivalence_identities(self, seed, m, p, c1, c2):
        rng = np.random.default_rng(seed)
        c1 = min(c1, p)
        c2 = min(c2, p - c1, m)
        lq, cons, C, d = random_stage(rng, m, p, c1, c2)
        ps = compute_projection(build_preview_stack(lq, cons, C, d))
        pr = project_stage(lq, ps)
        errs = projection_identity_errors(lq, ps, pr, rng)
        assert max(errs.values()) <= 1e-9, errs
        np.testing.assert_array_equal(pr.Q_t, pr.Q_t.T)
        np.testing.assert_array_equal(pr.R_t, pr.R_t.T)
        lam = np.linalg.eigvalsh(pr.R_t)
        assert lam[0] >= -1e-10 * max(1.0, lam[-1])
        assert np.sum(lam > 1e-9 * max(1.0, lam[-1])) == ps.nullity
        assert np.linalg.eigvalsh(pr.Q_t)[0] >= -1e-8 * max(1.0, np.abs(pr.Q_t).max())
