import numpy as np


def quadratic_cost(Q, R, Qf, x_ref=None, u_ref=None, P=None):
    """Tracking cost ``1/2 |z - z_ref|^2_W`` with ``W = [[Q, P^T], [P, R]]``.

    Returns ``(stage, stage_derivatives, terminal, terminal_derivatives)``.
    """
    m, p = Q.shape[0], R.shape[0]
    x_ref = np.zeros(m) if x_ref is None else np.asarray(x_ref, dtype=float)
    u_ref = np.zeros(p) if u_ref is None else np.asarray(u_ref, dtype=float)
    P = np.zeros((p, m)) if P is None else P

    def stage(x, u, n):
        dx, du = x - x_ref, u - u_ref
        return 0.5 * dx @ Q @ dx + 0.5 * du @ R @ du + du @ P @ dx

    def stage_d(x, u, n):
        dx, du = x - x_ref, u - u_ref
        return Q @ dx + P.T @ du, R @ du + P @ dx, Q, R, P

    def terminal(x):
        dx = x - x_ref
        return 0.5 * dx @ Qf @ dx

    def terminal_d(x):
        return Qf @ (x - x_ref), Qf

    return stage, stage_d, terminal, terminal_d
