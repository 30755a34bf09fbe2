"""Kernel selection.

The compiled Jacobi kernel is used when it was built; otherwise the
pure-Python twin. ``ROTBNN_BACKEND=python`` forces the fallback.
"""
import os

from . import _jacobi_py

python_jacobi_sweeps = _jacobi_py.jacobi_sweeps

try:
    from ._jacobi_ext import jacobi_sweeps as compiled_jacobi_sweeps
except ImportError:  # extension not built
    compiled_jacobi_sweeps = None

if compiled_jacobi_sweeps is not None and os.environ.get("ROTBNN_BACKEND", "").lower() != "python":
    jacobi_sweeps = compiled_jacobi_sweeps
    BACKEND = "compiled"
else:
    jacobi_sweeps = python_jacobi_sweeps
    BACKEND = "python"
