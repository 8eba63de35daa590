# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled stepping kernels.

Products are direct truncated convolutions in coefficient space; inputs are
coefficient vectors of real fields, so only k >= 0 is computed and the
negative half is filled by conjugation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, M_PI

cnp.import_array()

DAMP_NONE, DAMP_FEEDBACK, DAMP_LOCALIZED = 0, 1, 2


cdef void _conv(const double complex[::1] u, const double complex[::1] v,
                double complex[::1] out, Py_ssize_t K) noexcept nogil:
    # out[m] = sum_j u[j] v[m-j], |j|,|m-j|,|m| <= K, stored with offset K
    cdef Py_ssize_t m, j, jlo, jhi
    cdef double complex acc
    for m in range(0, K + 1):
        jlo = m - K if m - K > -K else -K
        jhi = K if K < m + K else m + K
        acc = 0
        for j in range(jlo, jhi + 1):
            acc = acc + u[j + K] * v[m - j + K]
        out[m + K] = acc
    for m in range(1, K + 1):
        out[K - m] = out[K + m].conjugate()


def convolve(u, v, Py_ssize_t K_out):
    cdef const double complex[::1] uu = np.ascontiguousarray(u, dtype=complex)
    cdef const double complex[::1] vv = np.ascontiguousarray(v, dtype=complex)
    cdef Py_ssize_t K = (uu.shape[0] - 1) // 2
    if vv.shape[0] != uu.shape[0] or K_out != K:
        from ._fallback import convolve as slow
        return slow(u, v, K_out)
    out = np.empty(2 * K + 1, dtype=complex)
    cdef double complex[::1] o = out
    _conv(uu, vv, o, K)
    return out


cdef void _rhs(const double complex[::1] u, const double complex[::1] nl,
               const double complex[::1] a, int damp_kind, double gain,
               const double[::1] k2, double complex[::1] out,
               double complex[::1] w1, double complex[::1] w2, Py_ssize_t K) noexcept nogil:
    cdef Py_ssize_t i, n = 2 * K + 1
    _conv(u, u, out, K)
    for i in range(n):
        out[i] = nl[i] * out[i]
    if damp_kind == 1:
        _conv(a, u, w1, K)
        for i in range(n):
            w1[i] = w1[i] * k2[i]
        _conv(a, w1, w2, K)
        for i in range(n):
            out[i] = out[i] - gain * w2[i] / k2[i]
    elif damp_kind == 2:
        _conv(a, u, w1, K)
        for i in range(n):
            out[i] = out[i] - gain * w1[i] / k2[i]


def quadratic_rhs(u, nl_mult, a_hat, int damp_kind, double gain):
    cdef const double complex[::1] uu = np.ascontiguousarray(u, dtype=complex)
    cdef Py_ssize_t K = (uu.shape[0] - 1) // 2
    cdef const double complex[::1] nl = np.ascontiguousarray(nl_mult, dtype=complex)
    cdef const double complex[::1] a = np.ascontiguousarray(
        np.zeros(2 * K + 1) if a_hat is None else a_hat, dtype=complex)
    cdef double[::1] k2 = 1.0 + np.arange(-K, K + 1, dtype=float) ** 2
    out = np.empty(2 * K + 1, dtype=complex)
    cdef double complex[::1] w1 = np.empty(2 * K + 1, dtype=complex)
    cdef double complex[::1] w2 = np.empty(2 * K + 1, dtype=complex)
    _rhs(uu, nl, a, damp_kind, gain, k2, out, w1, w2, K)
    return out


def lawson_rk4(u0, double dt, Py_ssize_t n_samples, Py_ssize_t sample_every,
               omega, nl_mult, a_hat, int damp_kind, double gain, double guard_sq):
    cdef double complex[::1] u = np.array(u0, dtype=complex)
    cdef Py_ssize_t n = u.shape[0], K = (n - 1) // 2
    cdef const double[::1] om = np.ascontiguousarray(omega, dtype=float)
    cdef const double complex[::1] nl = np.ascontiguousarray(nl_mult, dtype=complex)
    cdef const double complex[::1] a = np.ascontiguousarray(
        np.zeros(n) if a_hat is None else a_hat, dtype=complex)
    cdef double[::1] k2 = 1.0 + np.arange(-K, K + 1, dtype=float) ** 2
    states_arr = np.zeros((n_samples + 1, n), dtype=complex)
    cdef double complex[:, ::1] states = states_arr
    cdef double complex[::1] E = np.empty(n, dtype=complex)
    cdef double complex[::1] E2 = np.empty(n, dtype=complex)
    cdef double complex[::1] N1 = np.empty(n, dtype=complex)
    cdef double complex[::1] N2 = np.empty(n, dtype=complex)
    cdef double complex[::1] N3 = np.empty(n, dtype=complex)
    cdef double complex[::1] N4 = np.empty(n, dtype=complex)
    cdef double complex[::1] st = np.empty(n, dtype=complex)
    cdef double complex[::1] w1 = np.empty(n, dtype=complex)
    cdef double complex[::1] w2 = np.empty(n, dtype=complex)
    cdef Py_ssize_t i, s, r
    cdef double h2 = 0.5 * dt, h6 = dt / 6.0, ph, nrm
    for i in range(n):
        ph = -0.5 * dt * om[i]
        E[i] = cos(ph) + 1j * sin(ph)
        E2[i] = E[i] * E[i]
        states[0, i] = u[i]
    with nogil:
        for s in range(1, n_samples + 1):
            for r in range(sample_every):
                _rhs(u, nl, a, damp_kind, gain, k2, N1, w1, w2, K)
                for i in range(n):
                    st[i] = E[i] * (u[i] + h2 * N1[i])
                _rhs(st, nl, a, damp_kind, gain, k2, N2, w1, w2, K)
                for i in range(n):
                    st[i] = E[i] * u[i] + h2 * N2[i]
                _rhs(st, nl, a, damp_kind, gain, k2, N3, w1, w2, K)
                for i in range(n):
                    st[i] = E2[i] * u[i] + dt * E[i] * N3[i]
                _rhs(st, nl, a, damp_kind, gain, k2, N4, w1, w2, K)
                for i in range(n):
                    u[i] = E2[i] * (u[i] + h6 * N1[i]) + h6 * (2.0 * E[i] * (N2[i] + N3[i]) + N4[i])
            nrm = 0.0
            for i in range(n):
                states[s, i] = u[i]
                nrm = nrm + 2.0 * M_PI * k2[i] * (u[i].real * u[i].real + u[i].imag * u[i].imag)
            if not nrm <= guard_sq:
                with gil:
                    return states_arr, s
    return states_arr, n_samples
