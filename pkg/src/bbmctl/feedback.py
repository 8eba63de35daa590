"""Localized feedback damping for KdV-BBM and decay-rate measurement.

The closed loop is u_t - u_txx - c u_xxx + (c+1) u_x + u u_x = -a (1-d_xx)(a u),
i.e. u' = A u - B B^{*,1} u + nonlinearity with B = (1-d_xx)^{-1} a (1-d_xx).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as la
from scipy.integrate import simpson

from .dynamics import Trajectory, damping_density, energy_ledger_residual, integrate
from .spectral import (
    TWO_PI,
    ModelParams,
    SpectralField,
    frequencies,
    hs_norm,
    product_coeffs,
    wavenumbers,
)

log = logging.getLogger(__name__)


class DegenerateFit(ValueError):
    """Too few positive norm samples to fit a decay rate."""


class LedgerError(RuntimeError):
    """Energy identity failed to close for a closed-loop run."""


def _hpow(K: int, p: float) -> np.ndarray:
    return (1.0 + wavenumbers(K).astype(float) ** 2) ** p


def apply_B(u: SpectralField, a: SpectralField) -> SpectralField:
    """(1-d_xx)^{-1} [a (1-d_xx) u], truncated."""
    K = u.K
    return SpectralField(product_coeffs(a.coeffs, _hpow(K, 1) * u.coeffs, K) / _hpow(K, 1))


def bstar_s(u: SpectralField, s: float, a: SpectralField) -> SpectralField:
    """Adjoint of B in H^s: (1-d_xx)^{1-s} [a (1-d_xx)^{s-1} u]."""
    K = u.K
    return SpectralField(_hpow(K, 1 - s) * product_coeffs(a.coeffs, _hpow(K, s - 1) * u.coeffs, K))


def multiplication_matrix(a: SpectralField, K: int) -> np.ndarray:
    """M[k, j] = a_hat_{k-j}: truncated multiplication by a on |k| <= K."""
    k = wavenumbers(K)
    off = k[:, None] - k[None, :]
    out = np.zeros(off.shape, dtype=complex)
    ok = np.abs(off) <= a.K
    out[ok] = a.coeffs[off[ok] + a.K]
    return out


@dataclass(frozen=True, eq=False)
class DampedGenerator:
    """Dense matrix of A - B B^{*,1} acting on coefficient vectors."""

    K: int
    c: float
    matrix: np.ndarray

    def expm(self, t: float) -> np.ndarray:
        return _expm_cached(self, float(t))

    def spectral_abscissa(self) -> float:
        return float(np.max(np.linalg.eigvals(self.matrix).real))

    def hermitian_commutator_defect(self) -> float:
        """|| J M - conj(M) J || with J the reflection k -> -k."""
        J = np.eye(2 * self.K + 1)[::-1]
        return float(np.max(np.abs(J @ self.matrix - np.conj(self.matrix) @ J)))


@lru_cache(maxsize=64)
def _expm_cached(gen: DampedGenerator, t: float) -> np.ndarray:
    return la.expm(t * gen.matrix)


_GEN_CACHE: dict = {}


def damped_generator(a: SpectralField, c: float, K: int | None = None, drift: float = 1.0,
                     gain: float = 1.0) -> DampedGenerator:
    K = a.K if K is None else K
    key = (a.coeffs.tobytes(), a.K, float(c), K, float(drift), float(gain))
    gen = _GEN_CACHE.get(key)
    if gen is None:
        M = multiplication_matrix(a, K)
        D = _hpow(K, 1)
        BB = (M * D[None, :]) @ M / D[:, None]
        L = np.diag(-1j * frequencies(c, K, drift)) - gain * BB
        gen = DampedGenerator(K, float(c), L)
        if len(_GEN_CACHE) > 32:
            _GEN_CACHE.clear()
        _GEN_CACHE[key] = gen
    return gen


def damped_group(u0: SpectralField, t: float, generator: DampedGenerator) -> SpectralField:
    """W_a(t) u0 by dense matrix exponential."""
    if u0.K != generator.K:
        raise ValueError("truncation mismatch")
    return SpectralField(generator.expm(t) @ u0.coeffs)


def damped_group_trajectory(u0: SpectralField, times, generator: DampedGenerator) -> Trajectory:
    """Linear closed loop sampled at uniformly spaced ``times`` (one expm, repeated)."""
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    if steps.size and not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
        return Trajectory(times, np.array([damped_group(u0, t, generator).coeffs for t in times]))
    out = np.empty((times.size, 2 * u0.K + 1), dtype=complex)
    out[0] = generator.expm(times[0]) @ u0.coeffs if times[0] else u0.coeffs
    if steps.size:
        S = generator.expm(steps[0])
        for i in range(1, times.size):
            out[i] = S @ out[i - 1]
    return Trajectory(times, out)


@dataclass
class DecayFit:
    gamma: float
    prefactor: float
    r2: float
    n_samples: int

    def __iter__(self):
        return iter((self.gamma, self.prefactor, self.r2))


def decay_rate_fit(traj: Trajectory, s: float = 1.0, t_min: float = 1.0, floor: float = 1e-300) -> DecayFit:
    """Least-squares fit of log ||u(t)||_{H^s} = log C - gamma t over t >= t_min."""
    norms = traj.norms(s)
    sel = traj.times >= t_min
    t, n = traj.times[sel], norms[sel]
    bad = np.nonzero(~(n > floor))[0]
    if bad.size:
        t, n = t[: bad[0]], n[: bad[0]]
    if t.size < 3:
        raise DegenerateFit(f"only {t.size} usable samples after t_min={t_min}")
    y = np.log(n)
    slope, intercept = np.polyfit(t, y, 1)
    resid = y - (slope * t + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(np.exp(intercept)), r2, int(t.size))


def observability_ratio(u0: SpectralField, traj: Trajectory, a: SpectralField, T: float | None = None) -> float:
    """||u0||^2_{H^1} / int_0^T ||a u||^2_{H^1} dt (Simpson); +inf if the denominator vanishes."""
    num = hs_norm(u0, 1.0) ** 2
    if num == 0.0:
        return 0.0
    if T is not None and T > traj.times[-1] * (1 + 1e-12):
        raise ValueError("trajectory shorter than T")
    params = ModelParams(a=a, damping="feedback")
    sel = traj.times <= (traj.times[-1] if T is None else T) * (1 + 1e-12)
    den = float(simpson(damping_density(traj.coeffs[sel], params), x=traj.times[sel]))
    if den < 1e-30:
        log.warning("observability denominator %.3e for nonzero u0: unique continuation violated?", den)
        return float("inf")
    return num / den


def closed_loop_params(a: SpectralField, c: float, nonlinear: bool = True, gain: float = 1.0) -> ModelParams:
    return ModelParams(c=c, a=a, damping="feedback", gain=gain,
                       nonlinearity="bbm_quadratic" if nonlinear else "none")


def closed_loop_run(u0: SpectralField, params: ModelParams, T: float, dt: float = 1e-3,
                    sample_every: int = 1, ledger_tol: float | None = 1e-6) -> Trajectory:
    """Integrate the feedback closed loop and check the H^1 energy identity.

    The ledger is evaluated on every step so its time quadrature matches the
    integrator; the returned trajectory keeps every ``sample_every``-th state.
    """
    if params.damping != "feedback":
        raise ValueError("closed_loop_run needs damping='feedback'")
    n = max(1, int(round(T / dt)))
    n -= n % sample_every
    full = integrate(u0, params, T, T / n)
    e0 = hs_norm(u0, 1.0) ** 2
    res = energy_ledger_residual(full, params)
    rel = res / e0 if e0 > 0 else res
    if sample_every == 1:
        traj = full
    else:
        traj = Trajectory(full.times[::sample_every], full.coeffs[::sample_every],
                          {k: v[::sample_every] for k, v in full.diagnostics.items()})
    traj.diagnostics["energy_residual"] = np.array([rel])
    if ledger_tol is not None and rel > ledger_tol:
        raise LedgerError(f"energy ledger residual {rel:.3e} above {ledger_tol:.1e}")
    return traj
