"""Rotation-aligned binary neural networks.

Learned bi-rotations ``R1^T W R2`` shrink the angle between latent weights
and their binarization; an adjustable blend and a scheduled sign
approximation make the rotated weights trainable end to end.
"""
__version__ = "0.1.0"

from .linalg import backend_name, kronecker, polar_maximize_trace, random_orthogonal, svd
from .quantize import ApproxSchedule, approx_backward, approx_forward, quantization_error, xnor_binarize
from .rotation import RotationPair, align, balanced_factorization, rotate, rotate_flat

__all__ = [
    "__version__",
    "backend_name", "kronecker", "polar_maximize_trace", "random_orthogonal", "svd",
    "ApproxSchedule", "approx_backward", "approx_forward", "quantization_error", "xnor_binarize",
    "RotationPair", "align", "balanced_factorization", "rotate", "rotate_flat",
]
