"""Seeded random constrained LQ problems and a dense KKT reference solver."""

import numpy as np

from projilqr.linalg import RANK_TOL
from projilqr.problem import OcpDefinition
from projilqr.systems.common import quadratic_cost

MAX_STACK_COND = 1e6


def _random_psd_joint(rng, m, p):
    """Joint ``(m+p)`` Hessian that is PSD with a positive definite input block."""
    L = rng.normal(size=(m + p, m + p)) / np.sqrt(m + p)
    W = L @ L.T
    W[m:, m:] += 0.1 * np.eye(p)
    return W


def make_random_constrained_lq(seed, m=4, p=3, N=20, n_state_input=None, n_state=None,
                               terminal=True) -> OcpDefinition:
    """Random time-invariant LQ problem with affine equality constraints.

    Constraints are ``D x + E u = e0`` and ``C x = c0`` at every step (and
    ``C x_N = c0`` when ``terminal``). Samples are rejected until ``C B`` has
    full row rank, ``[E; C B]`` has condition number at most 1e6 (so every
    stage has relative degree one) and the minimum-norm constraint-restoring
    feedback ``A + B U`` is Schur stable, which keeps the feasible trajectories
    bounded. ``x0`` satisfies the pure-state constraint.
    """
    rng = np.random.default_rng(seed)
    if n_state_input is None:
        n_state_input = int(rng.integers(0, p))
    if n_state is None:
        n_state = int(rng.integers(0, p - n_state_input + 1))
    if n_state_input + n_state > p:
        raise ValueError("problem would be over-constrained")
    if n_state > m:
        raise ValueError("more pure-state rows than states")
    c1, c2 = n_state_input, n_state
    while True:
        A = rng.normal(size=(m, m))
        A *= 0.95 / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
        B = rng.normal(size=(m, p))
        D = rng.normal(size=(c1, m))
        E = rng.normal(size=(c1, p))
        C = rng.normal(size=(c2, m))
        stack = np.vstack([E, C @ B])
        if stack.shape[0] == 0:
            break
        s = np.linalg.svd(stack, compute_uv=False)
        c_s = np.linalg.svd(C, compute_uv=False) if c2 else np.ones(1)
        if not (s[-1] > RANK_TOL * s[0] and s[0] / s[-1] <= MAX_STACK_COND and c_s[-1] > 1e-6):
            continue
        # the constraint-restoring feedback must not blow the state up
        U = -np.linalg.pinv(stack) @ np.vstack([D, C @ A])
        if np.abs(np.linalg.eigvals(A + B @ U)).max() < 1.0:
            break
    e0 = rng.normal(size=c1)
    c0 = rng.normal(size=c2)
    x0 = rng.normal(size=m)
    if c2:
        x0 = x0 + np.linalg.lstsq(C, c0 - C @ x0, rcond=None)[0]
    W = _random_psd_joint(rng, m, p)
    Qf_root = rng.normal(size=(m, m)) / np.sqrt(m)
    Qf = Qf_root @ Qf_root.T
    x_ref = rng.normal(size=m)
    u_ref = rng.normal(size=p)
    stage, stage_d, term, term_d = quadratic_cost(W[:m, :m], W[m:, m:], Qf, x_ref, u_ref,
                                                  P=W[m:, :m])
    kw = {}
    if c1:
        kw.update(state_input_constraint=lambda x, u, n: D @ x + E @ u - e0,
                  state_input_constraint_jacobian=lambda x, u, n: (D, E))
    if c2:
        kw.update(state_constraint=lambda x, n: C @ x - c0,
                  state_constraint_jacobian=lambda x, n: C)
        if terminal:
            kw.update(terminal_constraint=lambda x: C @ x - c0,
                      terminal_constraint_jacobian=lambda x: C)
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
        dt=1.0,
        name=f"random_lq[seed={seed}]",
        metadata={"A": A, "B": B, "D": D, "E": E, "C": C, "e0": e0, "c0": c0, "W": W, "Qf": Qf},
        **kw,
    )


def dense_kkt_oracle(stages, constraints, terminal, dx0=None):
    """Minimize the LQ cost subject to dynamics and previewed constraints by one dense solve.

    All states and inputs are decision variables; the constraints are
    ``dx_0 = dx0``, the linear dynamics, and
    ``[D; C' A] dx_n + [E; C' B] du_n = [e; d']`` at every step, where ``C', d'``
    belong to the next step (the terminal constraint after the last step).

    Returns:
        ``(dx, du)`` with shapes ``(N+1, m)`` and ``(N, p)``.
    """
    N = len(stages)
    m = terminal.Q.shape[0]
    p = stages[0].B.shape[1] if N else 0
    nx = (N + 1) * m
    nz = nx + N * p
    xi = lambda n: slice(n * m, (n + 1) * m)
    ui = lambda n: slice(nx + n * p, nx + (n + 1) * p)

    H = np.zeros((nz, nz))
    g = np.zeros(nz)
    for n, st in enumerate(stages):
        H[xi(n), xi(n)] += st.Q
        H[ui(n), ui(n)] += st.R
        H[ui(n), xi(n)] += st.P
        H[xi(n), ui(n)] += st.P.T
        g[xi(n)] += st.q_vec
        g[ui(n)] += st.r
    H[xi(N), xi(N)] += terminal.Q
    g[xi(N)] += terminal.q_vec

    rows, rhs = [], []

    def add(blocks, b):
        row = np.zeros((len(b), nz))
        for sl, mat in blocks:
            row[:, sl] += mat
        rows.append(row)
        rhs.append(b)

    add([(xi(0), np.eye(m))], np.zeros(m) if dx0 is None else np.asarray(dx0, dtype=float))
    for n, (st, cons) in enumerate(zip(stages, constraints)):
        add([(xi(n + 1), np.eye(m)), (xi(n), -st.A), (ui(n), -st.B)], np.zeros(m))
        if n + 1 == N:
            C_next, d_next = terminal.C, terminal.d
        else:
            C_next, d_next = constraints[n + 1].C, constraints[n + 1].d
        D_s = np.vstack([cons.D, C_next @ st.A])
        E_s = np.vstack([cons.E, C_next @ st.B])
        b = np.concatenate([cons.e, d_next])
        if b.size:
            add([(xi(n), D_s), (ui(n), E_s)], b)
    G = np.vstack(rows)
    b = np.concatenate(rhs)
    k = G.shape[0]
    kkt = np.block([[H, G.T], [G, np.zeros((k, k))]])
    sol_rhs = np.concatenate([-g, b])
    try:
        sol = np.linalg.solve(kkt, sol_rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, sol_rhs, rcond=None)[0]
    z = sol[:nz]
    return z[:nx].reshape(N + 1, m), z[nx:].reshape(N, p)
