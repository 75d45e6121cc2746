"""Rank-revealing factorization, pseudo-inverse and nullspace projector."""

from dataclasses import dataclass

import numpy as np

from projilqr.errors import InfeasibleConstraintError, NumericalError

RANK_TOL = 1e-9


@dataclass(frozen=True)
class RankFactorization:
    """Thin wrapper around a full SVD ``A = U diag(s) Vt`` with a fixed numerical rank."""

    rank: int
    singular_values: np.ndarray
    left: np.ndarray
    right_t: np.ndarray

    @property
    def cols(self) -> int:
        return self.right_t.shape[0]

    @property
    def row_space_basis(self) -> np.ndarray:
        """Orthonormal rows spanning the row space of A."""
        return self.right_t[: self.rank]

    @property
    def null_space_basis(self) -> np.ndarray:
        """Orthonormal columns spanning the kernel of A."""
        return self.right_t[self.rank :].T

    def pinv(self) -> np.ndarray:
        r = self.rank
        return (self.right_t[:r].T / self.singular_values[:r]) @ self.left[:, :r].T

    def projector(self) -> np.ndarray:
        v = self.null_space_basis
        return v @ v.T


def _check_finite(a):
    if not np.isfinite(a).all():
        raise NumericalError("matrix has non-finite entries")


def rank_factorize(a, rank_tol: float = RANK_TOL) -> RankFactorization:
    """SVD with numerical rank ``#{s > rank_tol * s_max}``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _check_finite(a)
    rows, cols = a.shape
    if rows == 0 or cols == 0:
        return RankFactorization(0, np.zeros(0), np.eye(rows), np.eye(cols))
    u, s, vt = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(s > rank_tol * s[0])) if s[0] > 0 else 0
    return RankFactorization(rank, s, u, vt)


def pseudo_inverse(a, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Unweighted Moore-Penrose pseudo-inverse."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return np.zeros(a.shape[::-1])
    return rank_factorize(a, rank_tol).pinv()


def nullspace_projector(a, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Orthogonal projector ``V V^T`` onto the kernel of ``a``."""
    return rank_factorize(a, rank_tol).projector()


def _row_compress(mat, rank_tol):
    """Rotate rows so the first ``rank`` span the row space and the rest vanish."""
    fac = rank_factorize(mat, rank_tol)
    return fac.rank, fac.left.T


def split_rank_deficient_constraint(D, E, e, rank_tol: float = RANK_TOL):
    """Separate ``D dx + E du = e`` into a full-row-rank state-input part and a pure-state part.

    Rows are rotated by the left singular vectors of ``E``, which keeps the
    solution set unchanged. Rotated rows with a vanishing ``E`` component become
    pure-state rows ``C dx = d``; rows that vanish in both ``D`` and ``E`` are
    dropped if their right-hand side is zero.

    Returns:
        ``(D_r, E_r, e_r, C, d)``.

    Raises:
        InfeasibleConstraintError: a degenerate row has a nonzero right-hand side.
    """
    D = np.atleast_2d(np.asarray(D, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    e = np.asarray(e, dtype=float).reshape(-1)
    rows = e.shape[0]
    m, p = D.shape[1], E.shape[1]
    if rows == 0:
        return np.zeros((0, m)), np.zeros((0, p)), np.zeros(0), np.zeros((0, m)), np.zeros(0)
    rank, rot = _row_compress(E, rank_tol)
    if rank == rows:
        return D, E, e, np.zeros((0, m)), np.zeros(0)
    D_rot, E_rot, e_rot = rot @ D, rot @ E, rot @ e
    C, d = D_rot[rank:], e_rot[rank:]
    scale = max(np.abs(D).max(initial=0.0), np.abs(E).max(initial=0.0), 1.0)
    keep = np.linalg.norm(C, axis=1) > rank_tol * scale
    bad = ~keep & (np.abs(d) > np.sqrt(rank_tol) * max(1.0, np.abs(e).max()))
    if np.any(bad):
        raise InfeasibleConstraintError(
            f"degenerate state-input constraint row with residual {np.abs(d[bad]).max():.3e}"
        )
    return D_rot[:rank], E_rot[:rank], e_rot[:rank], C[keep], d[keep]


def remove_dependent_rows(C, d, rank_tol: float = RANK_TOL):
    """Reduce ``C dx = d`` to an equivalent full-row-rank system."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).reshape(-1)
    if d.shape[0] == 0:
        return C.reshape(0, C.shape[1]), d
    if d.shape[0] == 1 and np.abs(C).max() > 0:
        return C, d
    rank, rot = _row_compress(C, rank_tol)
    if rank == d.shape[0]:
        return C, d
    d_rot = rot @ d
    resid = d_rot[rank:]
    if np.any(np.abs(resid) > np.sqrt(rank_tol) * max(1.0, np.abs(d).max())):
        raise InfeasibleConstraintError(
            f"linearly dependent pure-state rows are inconsistent (residual {np.abs(resid).max():.3e})"
        )
    return (rot @ C)[:rank], d_rot[:rank]
