"""Binarization semantics.

* the per-tensor scaled-sign baseline and its quantization error,
* the adjustable rotated weight ``w + (rotated - w) * |sin(beta)|``,
* the scheduled sign approximation ``F`` and its derivative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import ShapeError
from .rotation import sign

SQRT2 = math.sqrt(2.0)
T_MIN = -2.0
T_MAX = 1.0


@dataclass(frozen=True)
class ApproxSchedule:
    """Sharpness schedule for the sign approximation.

    ``t = 10 ** (t_min + (e / E) * (t_max - t_min))`` and ``k = max(1 / t, 1)``.
    """

    total_epochs: int
    current_epoch: int = 0
    t_min: float = T_MIN
    t_max: float = T_MAX

    def __post_init__(self):
        if self.total_epochs < 1:
            raise ValueError(f"total_epochs must be >= 1, got {self.total_epochs}")
        if not 0 <= self.current_epoch <= self.total_epochs:
            raise ValueError(f"current_epoch {self.current_epoch} outside [0, {self.total_epochs}]")

    @classmethod
    def at_progress(cls, progress: float, t_min: float = T_MIN, t_max: float = T_MAX,
                    resolution: int = 10**6) -> "ApproxSchedule":
        """Schedule at training progress ``e / E`` (rounded to ``1 / resolution``)."""
        return cls(resolution, int(round(progress * resolution)), t_min, t_max)

    @property
    def progress(self) -> float:
        return self.current_epoch / self.total_epochs

    @property
    def t(self) -> float:
        return 10.0 ** (self.t_min + self.progress * (self.t_max - self.t_min))

    @property
    def k(self) -> float:
        return max(1.0 / self.t, 1.0)

    @property
    def edge(self) -> float:
        """Half-width ``sqrt(2) / t`` of the non-saturated region."""
        return SQRT2 / self.t


def approx_forward(x, sched: ApproxSchedule) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t, k = sched.t, sched.k
    ax = np.abs(x)
    s = sign(x)
    inner = k * (-s * (t * t) * x * x / 2.0 + SQRT2 * t * x)
    return np.where(ax < SQRT2 / t, inner, s * k)


def approx_backward(x, sched: ApproxSchedule) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    t, k = sched.t, sched.k
    return np.maximum(k * (SQRT2 * t - np.abs(t * t * x)), 0.0)


def ste_backward(x) -> np.ndarray:
    """Clipped straight-through derivative of sign, used when the approximation is off."""
    return (np.abs(np.asarray(x)) <= 1.0).astype(np.float64)


@dataclass(frozen=True)
class ScaledBinary:
    binary: np.ndarray
    scale: float
    degenerate: bool = False


def xnor_binarize(w) -> ScaledBinary:
    """``b = sign(w)`` and ``lambda = mean |w|``, the minimizer of ``||lambda b - w||^2``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size == 0:
        raise ShapeError("empty weight vector")
    lam = float(np.mean(np.abs(w)))
    return ScaledBinary(sign(w), lam, degenerate=lam == 0.0)


@dataclass(frozen=True)
class QuantizationError:
    error: float
    lower_bound: float
    n: int = 1

    @property
    def per_weight(self) -> float:
        return self.error / self.n


def quantization_error(w) -> QuantizationError:
    """Optimal-scale residual ``||w||^2 - ||w||_1^2 / n`` and the angular bound
    ``||w||^2 sin^2(theta)`` with ``cos(theta) = ||w||_1 / (sqrt(n) ||w||_2)``."""
    w = np.asarray(w, dtype=np.float64).ravel()
    n = w.size
    if n == 0:
        raise ShapeError("empty weight vector")
    sq = float(w @ w)
    if sq == 0.0:
        return QuantizationError(0.0, 0.0, n)
    l1 = float(np.abs(w).sum())
    err = max(sq - l1 * l1 / n, 0.0)
    cos = min(l1 / (math.sqrt(n) * math.sqrt(sq)), 1.0)
    bound = sq * (1.0 - cos * cos)
    assert err >= bound - 1e-12 * max(sq, 1.0), (err, bound)
    return QuantizationError(err, max(bound, 0.0), n)


@dataclass
class AdjustState:
    """Per-layer interpolation weight ``alpha = |sin(beta)|``."""

    beta: float

    @property
    def alpha(self) -> float:
        return abs(math.sin(self.beta))

    @property
    def dalpha_dbeta(self) -> float:
        return math.copysign(1.0, math.sin(self.beta)) * math.cos(self.beta)


def adjusted_weights(w, rotated, adjust: AdjustState | float) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    rotated = np.asarray(rotated, dtype=np.float64)
    if w.shape != rotated.shape:
        raise ShapeError(f"length mismatch: {w.shape} vs {rotated.shape}")
    alpha = adjust.alpha if isinstance(adjust, AdjustState) else float(adjust)
    return w + (rotated - w) * alpha


def alpha_gradient(upstream, w, rotated) -> float:
    """``dL/dalpha`` given ``dL/dw~``; multiply by ``dalpha/dbeta`` for beta."""
    upstream = np.asarray(upstream, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    rotated = np.asarray(rotated, dtype=np.float64)
    if not upstream.shape == w.shape == rotated.shape:
        raise ShapeError("upstream, w and rotated must have equal shapes")
    return float(np.sum(upstream * (rotated - w)))
