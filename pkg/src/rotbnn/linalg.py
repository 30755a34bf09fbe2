"""Small dense linear algebra for the rotation solver.

Matrices are plain 2-D ``float64`` numpy arrays. The SVD is a one-sided
Jacobi method (see :mod:`rotbnn._kernels`), which is accurate and simple
for the few-hundred-per-side matrices the alternating solver produces.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels

SVD_TOL = 1e-12
SVD_MAX_SWEEPS = 100


class ShapeError(ValueError):
    """Operands with incompatible or invalid shapes."""


class SvdConvergenceError(ArithmeticError):
    """Jacobi sweeps did not converge within the sweep cap."""

    def __init__(self, sweeps: int):
        super().__init__(f"one-sided Jacobi SVD did not converge after {sweeps} sweeps")
        self.sweeps = sweeps


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite, non-empty 2-D float64 array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains NaN or Inf")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def kronecker(a, b) -> np.ndarray:
    """Kronecker product. Verification only; never used on the training path."""
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def random_orthogonal(n: int, seed) -> np.ndarray:
    """Seeded Haar-distributed orthogonal ``n x n`` matrix (QR with sign fix)."""
    if n < 1:
        raise ShapeError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def _complete_basis(u: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace the columns of ``u`` not flagged in ``keep`` with an orthonormal
    complement of the kept ones. Deterministic: Gram-Schmidt over e_1, e_2, ..."""
    m = u.shape[0]
    basis = [u[:, j] for j in np.flatnonzero(keep)]
    fill = []
    need = int(np.count_nonzero(~keep))
    for i in range(m):
        if len(fill) == need:
            break
        e = np.zeros(m)
        e[i] = 1.0
        for _ in range(2):  # re-orthogonalize once for stability
            for b in basis:
                e -= (b @ e) * b
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            e /= nrm
            basis.append(e)
            fill.append(e)
    out = u.copy()
    for j, col in zip(np.flatnonzero(~keep), fill):
        out[:, j] = col
    return out


def svd(a, *, tol: float = SVD_TOL, max_sweeps: int = SVD_MAX_SWEEPS, jacobi=None) -> SvdResult:
    """Full SVD ``a = u @ diag(s) @ vt`` by one-sided Jacobi.

    ``u`` is m x m, ``vt`` is n x n, ``s`` has length min(m, n) and is sorted
    descending. Each left singular vector is sign-normalized so its first
    entry of non-negligible magnitude is positive.

    Raises
    ------
    SvdConvergenceError
        When the off-diagonal tolerance is not reached within ``max_sweeps``.
    """
    a = as_matrix(a, "a")
    m, n = a.shape
    if m < n:
        u, s, vt = svd(a.T, tol=tol, max_sweeps=max_sweeps, jacobi=jacobi)
        # transposing swaps the roles; re-normalize signs on the new left factor
        return _normalize_signs(vt.T, s, u.T)
    sweeps_fn = jacobi or _kernels.jacobi_sweeps
    x = np.array(a.T, dtype=np.float64, order="C", copy=True)
    v = np.eye(n)
    sweeps = sweeps_fn(x, v, tol, max_sweeps)
    if sweeps < 0:
        raise SvdConvergenceError(max_sweeps)

    s = np.sqrt(np.einsum("ij,ij->i", x, x))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    x = x[order]
    v = v[order]

    smax = s[0] if s.size else 0.0
    keep = s > max(m, n) * np.finfo(float).eps * smax if smax > 0 else np.zeros(n, dtype=bool)
    u = np.zeros((m, m))
    u[:, :n][:, keep] = (x[keep] / s[keep, None]).T
    full_keep = np.zeros(m, dtype=bool)
    full_keep[:n] = keep
    u = _complete_basis(u, full_keep)
    s = np.where(keep, s, 0.0)
    return _normalize_signs(u, s, v)


def _normalize_signs(u: np.ndarray, s: np.ndarray, vt: np.ndarray) -> SvdResult:
    u = u.copy()
    vt = vt.copy()
    k = s.shape[0]
    for j in range(u.shape[1]):
        col = u[:, j]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            u[:, j] = -col
            if j < k:
                vt[j] = -vt[j]
    return SvdResult(u, s, vt)


def polar_maximize_trace(g, *, jacobi=None) -> np.ndarray:
    """Orthogonal ``R`` maximizing ``trace(g @ R)``.

    With ``g = U S V^T`` the maximizer is ``R = V U^T`` and the maximum equals
    the sum of the singular values of ``g``.
    """
    g = as_matrix(g, "g")
    if g.shape[0] != g.shape[1]:
        raise ShapeError(f"g must be square, got {g.shape}")
    u, _, vt = svd(g, jacobi=jacobi)
    return vt.T @ u.T


def orthogonality_error(r: np.ndarray) -> float:
    """``max |R^T R - I|``."""
    return float(np.max(np.abs(r.T @ r - np.eye(r.shape[1]))))


def backend_name() -> str:
    return _kernels.BACKEND
