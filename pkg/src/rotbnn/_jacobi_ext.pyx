# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled one-sided Jacobi sweeps.

Works on the transposed problem: row p of ``x`` is column p of the input
matrix and row p of ``v`` accumulates column p of the right factor.
"""
from libc.math cimport fabs, sqrt


cdef inline void _rotate_rows(double[:, ::1] a, Py_ssize_t p, Py_ssize_t q,
                              double c, double s) noexcept nogil:
    cdef Py_ssize_t k
    cdef double ap, aq
    for k in range(a.shape[1]):
        ap = a[p, k]
        aq = a[q, k]
        a[p, k] = c * ap - s * aq
        a[q, k] = s * ap + c * aq


def jacobi_sweeps(double[:, ::1] x, double[:, ::1] v, double tol, int max_sweeps):
    """Orthogonalize the rows of ``x`` in place, mirroring every rotation in ``v``.

    Returns the number of sweeps used, or -1 if ``max_sweeps`` ran out.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = x.shape[1]
    cdef Py_ssize_t p, q, k
    cdef int sweep, rotated
    cdef int used = -1
    cdef double alpha, beta, gamma, zeta, t, c, s
    with nogil:
        for sweep in range(1, max_sweeps + 1):
            rotated = 0
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for k in range(m):
                        alpha = alpha + x[p, k] * x[p, k]
                        beta = beta + x[q, k] * x[q, k]
                        gamma = gamma + x[p, k] * x[q, k]
                    if alpha == 0.0 or beta == 0.0:
                        continue
                    if fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                        continue
                    rotated = 1
                    zeta = (beta - alpha) / (2.0 * gamma)
                    if fabs(zeta) > 1e150:
                        t = 0.5 / zeta
                    elif zeta >= 0.0:
                        t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                    else:
                        t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    _rotate_rows(x, p, q, c, s)
                    _rotate_rows(v, p, q, c, s)
            if not rotated:
                used = sweep
                break
    return used
