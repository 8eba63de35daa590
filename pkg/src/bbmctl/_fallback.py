"""Pure numpy implementation of the stepping kernels.

Mirrors ``_kernels.pyx`` call for call; selected when the compiled module
is missing or ``BBMCTL_PURE_PYTHON`` is set.
"""

import numpy as np

from .spectral import product_coeffs

DAMP_NONE, DAMP_FEEDBACK, DAMP_LOCALIZED = 0, 1, 2


def convolve(u, v, K_out):
    """Coefficients |k|<=K_out of the product of two real-field series."""
    return product_coeffs(u, v, K_out)


def quadratic_rhs(u, nl_mult, a_hat, damp_kind, gain):
    K = (u.shape[0] - 1) // 2
    k2 = 1.0 + np.arange(-K, K + 1) ** 2.0
    out = nl_mult * product_coeffs(u, u, K)
    if damp_kind == DAMP_FEEDBACK:
        au = product_coeffs(a_hat, u, K)
        out = out - gain * product_coeffs(a_hat, k2 * au, K) / k2
    elif damp_kind == DAMP_LOCALIZED:
        out = out - gain * product_coeffs(a_hat, u, K) / k2
    return out


def lawson_rk4(u0, dt, n_samples, sample_every, omega, nl_mult, a_hat, damp_kind, gain, guard_sq):
    """Integrating-factor RK4 for u' = -i omega u + N(u), N quadratic + damping.

    Returns ``(states, n_done)``: states has n_samples+1 rows; rows past
    ``n_done`` are left zero when the guard on the H^1 norm trips.
    """
    u = np.array(u0, dtype=complex)
    K = (u.shape[0] - 1) // 2
    w1 = 2.0 * np.pi * (1.0 + np.arange(-K, K + 1) ** 2.0)
    if a_hat is None:
        a_hat = np.zeros_like(u)
    E = np.exp(-0.5j * dt * omega)
    E2 = E * E
    states = np.zeros((n_samples + 1, u.shape[0]), dtype=complex)
    states[0] = u
    h2, h6 = 0.5 * dt, dt / 6.0
    for s in range(1, n_samples + 1):
        for _ in range(sample_every):
            N1 = quadratic_rhs(u, nl_mult, a_hat, damp_kind, gain)
            N2 = quadratic_rhs(E * (u + h2 * N1), nl_mult, a_hat, damp_kind, gain)
            N3 = quadratic_rhs(E * u + h2 * N2, nl_mult, a_hat, damp_kind, gain)
            N4 = quadratic_rhs(E2 * u + dt * E * N3, nl_mult, a_hat, damp_kind, gain)
            u = E2 * (u + h6 * N1) + h6 * (2.0 * E * (N2 + N3) + N4)
        states[s] = u
        if not np.sum(w1 * np.abs(u) ** 2) <= guard_sq:
            return states, s
    return states, n_samples
