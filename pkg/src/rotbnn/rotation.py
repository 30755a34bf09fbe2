"""Bi-rotation alignment of a weight tensor with its binarization.

A layer's flat weight vector ``w`` (length ``n``) is reshaped row-major into
``W`` of shape ``(n1, n2)``. Two orthogonal matrices ``R1`` (n1 x n1) and
``R2`` (n2 x n2) rotate it to ``R1^T W R2``, which equals applying the
Kronecker rotation ``(R1 kron R2)^T`` to ``w`` without ever forming it.

The solver maximizes ``trace(B R2^T W^T R1)`` over sign matrices ``B`` and
both rotations by exact block-coordinate ascent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import ShapeError, as_matrix, polar_maximize_trace, random_orthogonal

DEFAULT_CYCLES = 3


def sign(x: np.ndarray) -> np.ndarray:
    """Sign with ``sign(0) = +1``."""
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def balanced_factorization(n: int) -> tuple[int, int]:
    """Factor pair ``n1 * n2 = n`` with ``n1 <= n2`` and ``n2 - n1`` minimal."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    n1 = math.isqrt(n)
    while n % n1:
        n1 -= 1
    return n1, n // n1


@dataclass(frozen=True)
class WeightBlock:
    matrix: np.ndarray
    original_shape: tuple[int, ...]
    layer_id: str = ""

    @property
    def degenerate(self) -> bool:
        """True when the factorization collapsed to a single full rotation (1, n)."""
        n1, n2 = self.matrix.shape
        return n1 == 1 and n2 > 1


@dataclass(frozen=True)
class RotationPair:
    r1: np.ndarray
    r2: np.ndarray

    @classmethod
    def identity(cls, n1: int, n2: int) -> "RotationPair":
        return cls(np.eye(n1), np.eye(n2))

    @classmethod
    def random(cls, n1: int, n2: int, rng: np.random.Generator) -> "RotationPair":
        return cls(random_orthogonal(n1, rng), random_orthogonal(n2, rng))

    @property
    def shape(self) -> tuple[int, int]:
        return self.r1.shape[0], self.r2.shape[0]


@dataclass
class AlignmentResult:
    rotation: RotationPair
    binary: np.ndarray
    objective_trace: list[float] = field(default_factory=list)
    cos_before: float = float("nan")
    cos_after: float = float("nan")
    skipped: bool = False


def reshape_to_block(weights, shape: Sequence[int] | None = None, layer_id: str = "") -> WeightBlock:
    w = np.asarray(weights, dtype=np.float64).ravel()
    shape = tuple(int(d) for d in (shape if shape is not None else (w.size,)))
    if w.size != int(np.prod(shape)) or w.size == 0:
        raise ShapeError(f"vector of length {w.size} does not match shape {shape}")
    n1, n2 = balanced_factorization(w.size)
    return WeightBlock(w.reshape(n1, n2).copy(), shape, layer_id)


def flatten_from_block(block: WeightBlock) -> np.ndarray:
    return block.matrix.ravel().copy()


def _as_matrix(w) -> np.ndarray:
    return w.matrix if isinstance(w, WeightBlock) else as_matrix(w, "w")


def rotate(w, rot: RotationPair) -> np.ndarray:
    """``R1^T W R2``."""
    return rot.r1.T @ _as_matrix(w) @ rot.r2


def rotate_flat(w: np.ndarray, rot: RotationPair) -> np.ndarray:
    """Bi-rotation of a flat weight vector: ``(R1 kron R2)^T w`` in row-major order."""
    n1, n2 = rot.shape
    return (rot.r1.T @ w.reshape(n1, n2) @ rot.r2).ravel()


def rotate_flat_adjoint(g: np.ndarray, rot: RotationPair) -> np.ndarray:
    """Adjoint of :func:`rotate_flat`: ``(R1 kron R2) g``."""
    n1, n2 = rot.shape
    return (rot.r1 @ g.reshape(n1, n2) @ rot.r2.T).ravel()


def objective(w, b: np.ndarray, rot: RotationPair) -> float:
    """``trace(B R2^T W^T R1)``, i.e. ``<B, R1^T W R2>``."""
    return float(np.sum(b * rotate(w, rot)))


def binarize_step(w, rot: RotationPair) -> np.ndarray:
    return sign(rotate(w, rot))


def r1_step(w, b: np.ndarray, r2: np.ndarray, *, jacobi=None) -> np.ndarray:
    g1 = b @ r2.T @ _as_matrix(w).T
    return polar_maximize_trace(g1, jacobi=jacobi)


def r2_step(w, b: np.ndarray, r1: np.ndarray, *, jacobi=None) -> np.ndarray:
    # max trace(R2^T G2) == max trace(G2^T R2); the maximizer is U2 V2^T
    g2 = _as_matrix(w).T @ r1 @ b
    return polar_maximize_trace(g2.T, jacobi=jacobi)


def cosine_of(v: np.ndarray) -> float:
    """Cosine between ``v`` and ``sign(v)``; NaN for the zero vector."""
    v = np.ravel(v)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        return float("nan")
    return float(np.abs(v).sum() / (math.sqrt(v.size) * nrm))


def align(
    w,
    cycles: int = DEFAULT_CYCLES,
    warm_start: RotationPair | None = None,
    *,
    jacobi=None,
) -> AlignmentResult:
    """Alternate binarization, R1 and R2 updates for ``cycles`` rounds.

    The objective is recorded after every sub-step, so ``objective_trace``
    holds ``3 * cycles`` values. Without ``warm_start`` both rotations start
    at the identity. An all-zero block is skipped: identity rotations, NaN
    cosines, ``skipped=True``.
    """
    if cycles < 1:
        raise ValueError(f"cycles must be >= 1, got {cycles}")
    mat = _as_matrix(w)
    n1, n2 = mat.shape
    if not np.any(mat):
        ident = RotationPair.identity(n1, n2)
        return AlignmentResult(ident, np.ones_like(mat), [], float("nan"), float("nan"), skipped=True)
    rot = warm_start if warm_start is not None else RotationPair.identity(n1, n2)
    if rot.shape != (n1, n2):
        raise ShapeError(f"warm start rotations {rot.shape} do not fit block {mat.shape}")

    r1, r2 = rot.r1, rot.r2
    history: list[float] = []
    b = None
    for _ in range(cycles):
        b = sign(r1.T @ mat @ r2)
        history.append(objective(mat, b, RotationPair(r1, r2)))
        r1 = r1_step(mat, b, r2, jacobi=jacobi)
        history.append(objective(mat, b, RotationPair(r1, r2)))
        r2 = r2_step(mat, b, r1, jacobi=jacobi)
        history.append(objective(mat, b, RotationPair(r1, r2)))

    final = RotationPair(r1, r2)
    rotated = rotate(mat, final)
    return AlignmentResult(
        rotation=final,
        binary=sign(rotated),
        objective_trace=history,
        cos_before=cosine_of(mat),
        cos_after=cosine_of(rotated),
    )
