"""Time integration of the BBM family in mild form.

The linear part (drift, dispersion, the -u_txx smoothing) is a diagonal
unitary group and is propagated exactly; the remainder goes through an
integrating-factor (Lawson) RK4 step. The autonomous quadratic models run
in the compiled kernel, everything with callbacks runs in numpy.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from . import kernels
from .spectral import (
    TWO_PI,
    ModelParams,
    SpectralField,
    frequencies,
    hs_norm,
    padded_size,
    product_coeffs,
    to_grid,
    from_grid,
    wavenumbers,
    write_field_csv,
)

Forcing = Callable[[float], np.ndarray]


class BlowUpError(RuntimeError):
    """A sampled H^1 norm exceeded the configured guard."""


@dataclass
class Trajectory:
    """Sampled solution: ``coeffs[i]`` is the state at ``times[i]``."""

    times: np.ndarray
    coeffs: np.ndarray
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape[0] != self.times.shape[0]:
            raise ValueError("one state per time is required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return self.times.size

    @property
    def K(self) -> int:
        return (self.coeffs.shape[1] - 1) // 2

    @property
    def states(self) -> list[SpectralField]:
        return [SpectralField(c) for c in self.coeffs]

    def state(self, i: int) -> SpectralField:
        return SpectralField(self.coeffs[i])

    @property
    def final(self) -> SpectralField:
        return self.state(-1)

    def norms(self, s: float = 1.0) -> np.ndarray:
        w = TWO_PI * (1.0 + wavenumbers(self.K) ** 2.0) ** s
        return np.sqrt(np.abs(self.coeffs) ** 2 @ w)

    def to_csv(self, target, hs_values: Sequence[float] = ()) -> None:
        d = self.diagnostics
        header = ["t", "I1", "I2", "I3", "h1_norm"]
        header += [f"hs_norm_{s:g}" for s in hs_values]
        header.append("damping_integral")
        cols = [self.times, d["I1"], d["I2"], d["I3"], d["h1_norm"]]
        cols += [self.norms(s) for s in hs_values]
        cols.append(d.get("damping_integral", np.zeros_like(self.times)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([f"{float(v):.17g}" for v in row])
        if hasattr(target, "write"):
            target.write(buf.getvalue())
        else:
            Path(target).write_text(buf.getvalue())

    def dump_states(self, directory, every: int = 1) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for i in range(0, len(self), every):
            p = directory / f"state_{i:06d}.csv"
            write_field_csv(self.state(i), p)
            out.append(p)
        return out


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------
def _weights(K):
    k = wavenumbers(K).astype(float)
    return k, 1.0 + k**2


def _damp_kind(params: ModelParams) -> int:
    return {
        None: kernels.DAMP_NONE,
        "feedback": kernels.DAMP_FEEDBACK,
        "localized": kernels.DAMP_LOCALIZED,
    }[params.damping]


def _nl_mult(params: ModelParams, K: int) -> np.ndarray:
    k, k2 = _weights(K)
    if params.nonlinearity == "bbm_quadratic":
        return -0.5j * k / k2
    return np.zeros(2 * K + 1, dtype=complex)


def _a_coeffs(params: ModelParams, K: int):
    if params.a is None:
        return None
    if params.a.K != K:
        raise ValueError(f"damping profile has K={params.a.K}, state has K={K}")
    return params.a.coeffs


def _rhs_array(u: np.ndarray, params: ModelParams, t: float = 0.0, forcing: Forcing | None = None) -> np.ndarray:
    K = (u.shape[0] - 1) // 2
    k, k2 = _weights(K)
    a = _a_coeffs(params, K)
    if params.nonlinearity in ("bbm_quadratic", "none"):
        out = kernels.quadratic_rhs(u, _nl_mult(params, K), a, _damp_kind(params), params.gain)
    else:
        out = kernels.quadratic_rhs(u, np.zeros(2 * K + 1), a, _damp_kind(params), params.gain)
        if params.nonlinearity == "generalized_f":
            N = padded_size(K, 3)
            fu = from_grid(np.asarray(params.f(to_grid(u, N)), dtype=float), K)
            out = out - 1j * k * fu / k2
        else:  # nonlocal_convolution; the linear u_x lives in the group
            out = out - 1j * k * (params.lam * TWO_PI * u * u) / k2
    if forcing is not None:
        out = out + np.asarray(forcing(t), dtype=complex) / k2
    return out


def rhs_mild(u: SpectralField, params: ModelParams, t: float = 0.0, forcing: Forcing | None = None) -> SpectralField:
    """Non-propagator part of du/dt in coefficient space."""
    if params.a is not None and params.a.K != u.K:
        raise ValueError(f"truncation mismatch: state K={u.K}, profile K={params.a.K}")
    return SpectralField(_rhs_array(u.coeffs, params, t, forcing))


def linear_frequencies(params: ModelParams, K: int) -> np.ndarray:
    return frequencies(params.c, K, params.drift)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------
def _lawson_python(u0, params, t0, dt, n_samples, sample_every, forcing, guard_sq):
    u = np.array(u0, dtype=complex)
    K = (u.shape[0] - 1) // 2
    E = np.exp(-0.5j * dt * linear_frequencies(params, K))
    E2 = E * E
    w1 = TWO_PI * (1.0 + wavenumbers(K) ** 2.0)
    states = np.zeros((n_samples + 1, u.shape[0]), dtype=complex)
    states[0] = u
    h2, h6 = 0.5 * dt, dt / 6.0
    step = 0
    for s in range(1, n_samples + 1):
        for _ in range(sample_every):
            t = t0 + step * dt
            N1 = _rhs_array(u, params, t, forcing)
            N2 = _rhs_array(E * (u + h2 * N1), params, t + h2, forcing)
            N3 = _rhs_array(E * u + h2 * N2, params, t + h2, forcing)
            N4 = _rhs_array(E2 * u + dt * E * N3, params, t + dt, forcing)
            u = E2 * (u + h6 * N1) + h6 * (2.0 * E * (N2 + N3) + N4)
            step += 1
        states[s] = u
        if not np.sum(w1 * np.abs(u) ** 2) <= guard_sq:
            return states, s
    return states, n_samples


def integrate(
    u0: SpectralField,
    params: ModelParams,
    t_span,
    dt: float,
    sample_every: int = 1,
    forcing: Forcing | None = None,
    hs_values: Sequence[float] = (),
    guard_factor: float = 1e6,
) -> Trajectory:
    """Integrate from ``u0`` over ``t_span`` (a float end time or ``(t0, t1)``).

    ``forcing(t)`` returns Fourier coefficients of a source term added to the
    right-hand side of the PDE (before the Helmholtz inverse).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0, t1 = (0.0, float(t_span)) if np.isscalar(t_span) else map(float, t_span)
    n_steps = int(round((t1 - t0) / dt))
    if n_steps < 1 or abs(n_steps * dt - (t1 - t0)) > 1e-9 * max(1.0, abs(t1 - t0)):
        raise ValueError(f"span {t1 - t0} is not a whole number of steps of {dt}")
    if n_steps % sample_every:
        raise ValueError("sample_every must divide the number of steps")
    n_samples = n_steps // sample_every
    K = u0.K
    guard = guard_factor * max(hs_norm(u0, 1.0), 1.0)
    fast = forcing is None and params.nonlinearity in ("bbm_quadratic", "none")
    if fast:
        coeffs, done = kernels.lawson_rk4(
            u0.coeffs, dt, n_samples, sample_every,
            linear_frequencies(params, K), _nl_mult(params, K), _a_coeffs(params, K),
            _damp_kind(params), params.gain, guard**2,
        )
    else:
        coeffs, done = _lawson_python(u0.coeffs, params, t0, dt, n_samples, sample_every, forcing, guard**2)
    times = t0 + dt * sample_every * np.arange(n_samples + 1)
    if done < n_samples:
        raise BlowUpError(
            f"H1 norm exceeded {guard:.3g} at t={times[done]:.6g}; reduce dt or check the model"
        )
    traj = Trajectory(times, coeffs)
    traj.diagnostics = diagnostics(traj, params, hs_values)
    return traj


def damping_density(coeffs: np.ndarray, params: ModelParams) -> np.ndarray:
    """Dissipation rate per sample: ||P_K(a u)||^2_{H^1} (feedback) or int a u^2 (localized)."""
    coeffs = np.atleast_2d(coeffs)
    if params.damping is None or params.a is None:
        return np.zeros(coeffs.shape[0])
    K = (coeffs.shape[1] - 1) // 2
    a = params.a.coeffs
    if params.damping == "feedback":
        au = product_coeffs(a, coeffs, K)
        w = TWO_PI * (1.0 + wavenumbers(K) ** 2.0)
        return params.gain * (np.abs(au) ** 2 @ w)
    N = padded_size(K, 3)
    g = to_grid(coeffs, N)
    return params.gain * TWO_PI * np.mean(to_grid(a, N) * g * g, axis=-1)


def _invariants_batch(coeffs: np.ndarray):
    coeffs = np.atleast_2d(coeffs)
    K = (coeffs.shape[1] - 1) // 2
    I1 = TWO_PI * coeffs[:, K].real
    w1 = TWO_PI * (1.0 + wavenumbers(K) ** 2.0)
    I2 = np.abs(coeffs) ** 2 @ w1
    N = padded_size(K, 4)
    g = to_grid(coeffs, N)
    I3 = TWO_PI * np.mean(g**3 + 3.0 * g**2, axis=-1)
    return I1, I2, I3


def invariants(u: SpectralField) -> tuple[float, float, float]:
    """(int u, int u^2 + u_x^2, int u^3 + 3u^2)."""
    I1, I2, I3 = _invariants_batch(u.coeffs)
    return float(I1[0]), float(I2[0]), float(I3[0])


def diagnostics(traj: Trajectory, params: ModelParams | None = None, hs_values: Sequence[float] = ()) -> dict:
    I1, I2, I3 = _invariants_batch(traj.coeffs)
    d = {"I1": I1, "I2": I2, "I3": I3, "h1_norm": np.sqrt(I2)}
    for s in hs_values:
        d[f"hs_norm_{s:g}"] = traj.norms(s)
    if params is not None and params.damping is not None:
        dens = damping_density(traj.coeffs, params)
        d["damping_density"] = dens
        d["damping_integral"] = _cumulative(dens, traj.times)
    return d


def _cumulative(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    if y.size < 3:
        return np.concatenate([[0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))])
    return cumulative_simpson(y, x=t, initial=0.0)


def energy_ledger_residual(traj: Trajectory, params: ModelParams, relative: bool = False) -> float:
    """max_t | ||u(t)||^2 - ||u0||^2 + 2 int_0^t D dtau | with Simpson in time."""
    e = traj.norms(1.0) ** 2
    dens = damping_density(traj.coeffs, params)
    ledger = e - e[0] + 2.0 * _cumulative(dens, traj.times)
    r = float(np.max(np.abs(ledger)))
    return r / e[0] if relative and e[0] > 0 else r


def moving_frame(u: SpectralField, t: float, c: float, direction: int = 1) -> SpectralField:
    """direction=+1: v(x) = u(x - ct); direction=-1 inverts it."""
    if direction not in (1, -1):
        raise ValueError("direction must be +1 or -1")
    return SpectralField(np.exp(-1j * direction * u.k * c * t) * u.coeffs)


def time_reflect(u: SpectralField) -> SpectralField:
    """State of the (x,t) -> (-x,-t) image; for real fields this is x -> -x."""
    return u.reflect()


# ---------------------------------------------------------------------------
# Taylor expansion in time
# ---------------------------------------------------------------------------
@dataclass
class TaylorSeries:
    coefficients: list[SpectralField]
    radius_estimate: float
    product_constant: float = float("nan")

    def __post_init__(self):
        if not self.radius_estimate > 0:
            raise ValueError("radius_estimate must be positive")

    def partial_sum(self, t: float, n: int | None = None) -> SpectralField:
        n = len(self.coefficients) - 1 if n is None else n
        acc = np.zeros_like(self.coefficients[0].coeffs)
        for v in reversed(self.coefficients[: n + 1]):
            acc = acc * t + v.coeffs
        return SpectralField(acc)


@lru_cache(maxsize=None)
def _product_constant_cached(K: int, n_pairs: int, seed: int, safety: float) -> float:
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        u = SpectralField.random(K, rng, decay=rng.uniform(0.5, 2.0))
        v = SpectralField.random(K, rng, decay=rng.uniform(0.5, 2.0))
        u = u * (1.0 / hs_norm(u, 1.0))
        v = v * (1.0 / hs_norm(v, 1.0))
        best = max(best, hs_norm(product_coeffs(u.coeffs, v.coeffs, 2 * K), 1.0))
    return safety * best


def product_constant(K: int, n_pairs: int = 1000, seed: int = 0, safety: float = 1.2) -> float:
    """Sampled bound C with ||uv||_{H^1} <= C ||u||_{H^1} ||v||_{H^1}."""
    return _product_constant_cached(K, n_pairs, seed, safety)


def taylor_flow(u0: SpectralField, n_max: int, n_pairs: int = 1000, seed: int = 0) -> TaylorSeries:
    """Time-Taylor coefficients of the BBM flow (no drift constant c).

    v_n = (1/n) A(v_{n-1} + 1/2 sum_l v_l v_{n-1-l}), truncated at the order of u0.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    K = u0.K
    k, k2 = _weights(K)
    A = -1j * k / k2
    v = [u0.coeffs.copy()]
    for n in range(1, n_max + 1):
        quad = sum(kernels.convolve(v[l], v[n - 1 - l], K) for l in range(n))
        v.append(A * (v[n - 1] + 0.5 * quad) / n)
    C1 = product_constant(K, n_pairs, seed)
    norm_A = 0.5
    radius = 1.0 / (2.0 * norm_A * (1.0 + 4.0 * C1 * hs_norm(u0, 1.0)))
    return TaylorSeries([SpectralField(c) for c in v], radius, C1)
