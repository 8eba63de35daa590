"""Fourier-side representation of real fields on the torus R/2piZ.

Coefficients follow ``u_hat[k] = (1/2pi) int u(x) exp(-ikx) dx`` and are
stored in ascending order ``k = -K..K``. Every operator here is diagonal in
that basis except the products, which go through a zero-padded grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Union

import numpy as np
import scipy.fft

TWO_PI = 2.0 * np.pi
HERMITIAN_TOL = 1e-12


class HermitianError(ValueError):
    """Coefficient vector does not describe a real field."""


def wavenumbers(K: int) -> np.ndarray:
    return np.arange(-K, K + 1)


def padded_size(K: int, factor: int = 3) -> int:
    """Smallest FFT-friendly grid length >= factor*K + 1."""
    return scipy.fft.next_fast_len(factor * K + 1)


def to_grid(coeffs: np.ndarray, N: int) -> np.ndarray:
    """Evaluate a (real) truncated series on the uniform grid x_j = 2pi j/N."""
    K = (coeffs.shape[-1] - 1) // 2
    if N < 2 * K + 1:
        raise ValueError(f"grid of {N} points cannot hold modes |k|<={K}")
    buf = np.zeros(coeffs.shape[:-1] + (N,), dtype=complex)
    buf[..., : K + 1] = coeffs[..., K:]
    if K:
        buf[..., N - K :] = coeffs[..., :K]
    return scipy.fft.ifft(buf, axis=-1, norm="forward").real


def from_grid(values: np.ndarray, K: int) -> np.ndarray:
    """Fourier coefficients |k|<=K of grid samples (exact for band-limited data)."""
    N = values.shape[-1]
    spec = scipy.fft.fft(values, axis=-1, norm="forward")
    out = np.empty(values.shape[:-1] + (2 * K + 1,), dtype=complex)
    out[..., K:] = spec[..., : K + 1]
    if K:
        out[..., :K] = spec[..., N - K :]
    return out


def product_coeffs(u: np.ndarray, v: np.ndarray, K_out: int | None = None) -> np.ndarray:
    """Exact coefficients |k|<=K_out of the pointwise product of two series.

    Inputs may have different truncations. The padded grid is long enough that
    no aliased mode reaches the retained band.
    """
    Ku = (u.shape[-1] - 1) // 2
    Kv = (v.shape[-1] - 1) // 2
    if K_out is None:
        K_out = max(Ku, Kv)
    N = scipy.fft.next_fast_len(Ku + Kv + K_out + 1)
    return from_grid(to_grid(u, N) * to_grid(v, N), K_out)


def _as_coeffs(x: Union["SpectralField", np.ndarray]) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=complex)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Truncated Fourier series of a real 2pi-periodic field."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size % 2 != 1 or c.size < 3:
            raise ValueError("coeffs must be a 1-D array of odd length 2K+1 with K >= 1")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return (self.coeffs.size - 1) // 2

    @property
    def k(self) -> np.ndarray:
        return wavenumbers(self.K)

    def __getitem__(self, k: int) -> complex:
        if abs(k) > self.K:
            return 0j
        return complex(self.coeffs[k + self.K])

    # construction -----------------------------------------------------------
    @classmethod
    def zeros(cls, K: int) -> "SpectralField":
        return cls(np.zeros(2 * K + 1, dtype=complex))

    @classmethod
    def from_modes(cls, K: int, modes: dict[int, complex]) -> "SpectralField":
        """Build from ``{k: u_hat_k}``; the conjugate mode -k is filled in."""
        c = np.zeros(2 * K + 1, dtype=complex)
        for k, val in modes.items():
            if abs(k) > K:
                raise ValueError(f"mode {k} outside truncation {K}")
            if k == 0:
                c[K] = complex(val).real
            else:
                c[K + k] = val
                c[K - k] = np.conj(val)
        return cls(c)

    @classmethod
    def from_function(cls, f: Callable[[np.ndarray], np.ndarray], K: int, N: int | None = None) -> "SpectralField":
        N = N or padded_size(K, 4)
        x = TWO_PI * np.arange(N) / N
        return cls(from_grid(np.asarray(f(x), dtype=float), K))

    @classmethod
    def random(cls, K: int, rng: np.random.Generator, decay: float = 1.0, scale: float = 1.0) -> "SpectralField":
        """Random real field with |u_hat_k| ~ (1+k^2)^(-decay)."""
        k = np.arange(1, K + 1)
        pos = (rng.standard_normal(K) + 1j * rng.standard_normal(K)) * (1.0 + k**2) ** (-decay)
        c = np.zeros(2 * K + 1, dtype=complex)
        c[K + 1 :] = pos
        c[:K] = np.conj(pos[::-1])
        c[K] = rng.standard_normal()
        return cls(scale * c)

    # views ------------------------------------------------------------------
    def grid(self, N: int | None = None) -> np.ndarray:
        return to_grid(self.coeffs, N or padded_size(self.K))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.real(np.exp(1j * np.multiply.outer(x, self.k)) @ self.coeffs)

    def hermitian_defect(self) -> float:
        return float(np.max(np.abs(self.coeffs - np.conj(self.coeffs[::-1]))))

    def is_real(self, tol: float = HERMITIAN_TOL) -> bool:
        return self.hermitian_defect() <= tol * max(1.0, float(np.max(np.abs(self.coeffs))))

    def resample(self, K: int) -> "SpectralField":
        """Truncate or zero-pad to a new order."""
        out = np.zeros(2 * K + 1, dtype=complex)
        m = min(K, self.K)
        out[K - m : K + m + 1] = self.coeffs[self.K - m : self.K + m + 1]
        return SpectralField(out)

    def reflect(self) -> "SpectralField":
        """x -> -x."""
        return SpectralField(self.coeffs[::-1])

    # arithmetic -------------------------------------------------------------
    def _check(self, other: "SpectralField") -> None:
        if other.K != self.K:
            raise ValueError(f"truncation mismatch: K={self.K} vs K={other.K}")

    def __add__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.coeffs + other.coeffs)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            self._check(other)
            return SpectralField(self.coeffs - other.coeffs)
        return NotImplemented

    def __neg__(self):
        return SpectralField(-self.coeffs)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SpectralField(self.coeffs * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"SpectralField(K={self.K}, h1={hs_norm(self, 1.0):.6g})"


@dataclass(frozen=True, eq=False)
class LinearSymbol:
    """Diagonal Fourier multiplier over k = -K..K."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def K(self) -> int:
        return (self.values.size - 1) // 2

    def apply(self, u: SpectralField) -> SpectralField:
        if u.K != self.K:
            raise ValueError(f"truncation mismatch: K={self.K} vs K={u.K}")
        return SpectralField(self.values * u.coeffs)

    def __matmul__(self, other: "LinearSymbol") -> "LinearSymbol":
        return LinearSymbol(self.values * other.values)


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the BBM family.

    ``drift`` multiplies the u_x term: 1 for BBM / KdV-BBM, 0 for the
    generalized equation without drift. ``damping`` selects the dissipative
    term: ``"feedback"`` is -a(1-dxx)(a u), ``"localized"`` is -a u.
    """

    c: float = 0.0
    a: SpectralField | None = None
    lam: float = 0.0
    nonlinearity: str = "bbm_quadratic"
    f: Callable[[np.ndarray], np.ndarray] | None = None
    drift: float = 1.0
    damping: str | None = None
    gain: float = 1.0

    NONLINEARITIES = ("bbm_quadratic", "generalized_f", "nonlocal_convolution", "none")
    DAMPINGS = (None, "feedback", "localized")

    def __post_init__(self):
        if self.nonlinearity not in self.NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.damping not in self.DAMPINGS:
            raise ValueError(f"unknown damping {self.damping!r}")
        if self.damping is not None and self.a is None:
            raise ValueError("damping requires a profile a")
        if self.a is not None and not self.a.is_real():
            raise HermitianError("damping profile a must be real")
        if self.nonlinearity == "generalized_f" and self.f is None:
            raise ValueError("generalized_f needs a callback f")

    def linear(self) -> "ModelParams":
        return replace(self, nonlinearity="none")


# ---------------------------------------------------------------------------
# diagonal operators
# ---------------------------------------------------------------------------
def hs_norm(u, s: float) -> float:
    c = _as_coeffs(u)
    K = (c.shape[-1] - 1) // 2
    w = (1.0 + wavenumbers(K) ** 2.0) ** s
    return float(np.sqrt(TWO_PI * np.sum(w * np.abs(c) ** 2)))


def hs_inner(u, v, s: float) -> complex:
    """<u, v>_{H^s} = 2pi sum (1+k^2)^s u_k conj(v_k)."""
    cu, cv = _as_coeffs(u), _as_coeffs(v)
    K = (cu.shape[-1] - 1) // 2
    w = (1.0 + wavenumbers(K) ** 2.0) ** s
    return complex(TWO_PI * np.sum(w * cu * np.conj(cv)))


def helmholtz_symbol(K: int, power: float = -1.0) -> LinearSymbol:
    """(1 - d_xx)^power."""
    return LinearSymbol((1.0 + wavenumbers(K) ** 2.0) ** power)


def apply_helmholtz_inv(u: SpectralField) -> SpectralField:
    return SpectralField(u.coeffs / (1.0 + u.k**2.0))


def a_symbol(K: int) -> LinearSymbol:
    k = wavenumbers(K)
    return LinearSymbol(-1j * k / (1.0 + k**2.0))


def apply_A(u: SpectralField) -> SpectralField:
    """-(1-d_xx)^{-1} d_x."""
    return a_symbol(u.K).apply(u)


def frequencies(c: float, K: int, drift: float = 1.0) -> np.ndarray:
    """Per-mode angular frequency (c k^3 + (c+drift) k)/(k^2+1)."""
    k = wavenumbers(K).astype(float)
    return (c * k**3 + (c + drift) * k) / (k**2 + 1.0)


def group_symbol(t: float, c: float, K: int, drift: float = 1.0) -> LinearSymbol:
    """Symbol of the free KdV-BBM group exp(-i t omega_k)."""
    return LinearSymbol(np.exp(-1j * t * frequencies(c, K, drift)))


def free_flow(u: SpectralField, t: float, c: float, drift: float = 1.0) -> SpectralField:
    return group_symbol(t, c, u.K, drift).apply(u)


def derivative(u: SpectralField, order: int = 1) -> SpectralField:
    return SpectralField((1j * u.k) ** order * u.coeffs)


def torus_convolution(u: SpectralField, v: SpectralField) -> SpectralField:
    """(u*v)(x) = int_T u(x-y) v(y) dy."""
    u._check(v)
    return SpectralField(TWO_PI * u.coeffs * v.coeffs)


def pointwise_product(u: SpectralField, v: SpectralField) -> SpectralField:
    """Dealiased product, truncated back to the common order."""
    u._check(v)
    return SpectralField(product_coeffs(u.coeffs, v.coeffs, u.K))


def mean(u: SpectralField) -> float:
    return float(u.coeffs[u.K].real)


# ---------------------------------------------------------------------------
# field files: CSV ``k,re,im`` ascending in k
# ---------------------------------------------------------------------------
def write_field_csv(u: SpectralField, target) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "re", "im"])
    for k, c in zip(u.k, u.coeffs):
        w.writerow([int(k), repr(float(c.real)), repr(float(c.imag))])
    if hasattr(target, "write"):
        target.write(buf.getvalue())
    else:
        Path(target).write_text(buf.getvalue())


def read_field_csv(source) -> SpectralField:
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or [h.strip() for h in rows[0]] != ["k", "re", "im"]:
        raise ValueError("field file must start with header 'k,re,im'")
    body = [r for r in rows[1:] if r]
    ks = np.array([int(r[0]) for r in body])
    K = (len(body) - 1) // 2
    if len(body) % 2 != 1 or not np.array_equal(ks, wavenumbers(K)):
        raise ValueError("rows must cover k=-K..K in ascending order")
    c = np.array([float(r[1]) + 1j * float(r[2]) for r in body])
    u = SpectralField(c)
    if u.hermitian_defect() > HERMITIAN_TOL:
        raise HermitianError(f"field is not Hermitian-symmetric (defect {u.hermitian_defect():.3e})")
    return u
