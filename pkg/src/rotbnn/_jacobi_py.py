"""Pure-Python one-sided Jacobi sweeps (fallback for ``_jacobi_ext``).

Same ordering, same rotation formula and same stopping rule as the
compiled kernel, so both paths agree to rounding.
"""
import math

import numpy as np


def jacobi_sweeps(x: np.ndarray, v: np.ndarray, tol: float, max_sweeps: int) -> int:
    n = x.shape[0]
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            xp = x[p]
            for q in range(p + 1, n):
                xq = x[q]
                alpha = float(xp @ xp)
                beta = float(xq @ xq)
                gamma = float(xp @ xq)
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha) * math.sqrt(beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                elif zeta >= 0.0:
                    t = 1.0 / (zeta + math.sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                x[p], x[q] = c * xp - s * xq, s * xp + c * xq
                v[p], v[q] = c * v[p] - s * v[q], s * v[p] + c * v[q]
        if not rotated:
            return sweep
    return -1
