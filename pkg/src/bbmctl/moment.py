"""Exact controls for the linear KdV-BBM equation by the moment method.

The controlled equation is

    u_t - u_txx - c u_xxx + (c+1) u_x = a(x) h(x, t)

with controls of the form h = a(x) sum_j f_j q_j(t) e^{ijx}, where {q_j} is
biorthogonal to the exponentials p_k(t) = exp(-i omega_k t) on (0, T). Modes
sharing a frequency form a cluster and share one q; their coefficients are
found from a small positive-definite block.

The nonlinear equation (with + u u_x) is steered by iterating the map
Gamma to its fixed point.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import numpy as np
import scipy.linalg as la
from scipy.integrate import cumulative_simpson, simpson

from .dynamics import Trajectory, integrate
from .spectral import (
    TWO_PI,
    ModelParams,
    frequencies,
    SpectralField,
    hs_norm,
    product_coeffs,
    wavenumbers,
)

log = logging.getLogger(__name__)

GRAM_CONDITION_CAP = 1e12
CLUSTER_CONDITION_CAP = 1e12
COLLISION_RTOL = 1e-12


class ConditioningError(RuntimeError):
    """Gram matrix too ill-conditioned for a trustworthy dual basis."""


class DegenerateDamping(ValueError):
    """The control profile a has (numerically) zero mass."""


class SingularCluster(RuntimeError):
    """A collision block of the moment system is numerically singular."""


class NoContraction(RuntimeError):
    """The steering iteration stopped contracting."""


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------
def _exact_frequency(c: Fraction, k: int) -> Fraction:
    return Fraction(k) * (c * k * k + c + 1) / (k * k + 1)


def _representative_first(group):
    rep = min(group, key=lambda k: (abs(k), k < 0))
    return (rep,) + tuple(sorted(k for k in group if k != rep))


def eigenfrequencies(c, K: int):
    """Frequencies omega_k = k sigma(k) for |k| <= K and their collision clusters.

    ``c`` given as int, Fraction or a ``"p/q"`` string is compared exactly;
    floats use a relative tolerance. Each cluster is a tuple whose first entry
    is its representative (smallest |k|, nonnegative on ties).
    """
    if isinstance(c, str):
        c = Fraction(c)
    if c == 0:
        raise ValueError("c = 0 has no gap in the spectrum; the moment method needs c != 0")
    if K < 0:
        raise ValueError("K must be nonnegative")
    ks = list(range(-K, K + 1))
    groups: dict = {}
    if isinstance(c, Rational):
        c = Fraction(c)
        exact = [_exact_frequency(c, k) for k in ks]
        for k, w in zip(ks, exact):
            groups.setdefault(w, []).append(k)
        freqs = np.array([float(w) for w in exact])
        clusters = [_representative_first(g) for g in groups.values()]
    else:
        c = float(c)
        freqs = np.array([(c * k**3 + (c + 1) * k) / (k**2 + 1.0) for k in ks])
        order = np.argsort(freqs, kind="stable")
        clusters_l: list[list[int]] = []
        near = False
        for i in order:
            w = freqs[i]
            if clusters_l:
                w0 = freqs[clusters_l[-1][0] + K]
                if abs(w - w0) < COLLISION_RTOL * max(1.0, abs(w0)):
                    clusters_l[-1].append(ks[i])
                    near = True
                    continue
            clusters_l.append([ks[i]])
        if near:
            warnings.warn(
                f"frequency collisions for c={c!r} detected with floating-point tolerance; "
                "pass c as a Fraction for exact classification",
                RuntimeWarning,
                stacklevel=2,
            )
        clusters = [_representative_first(g) for g in clusters_l]
    clusters.sort(key=lambda g: g[0])
    return freqs, clusters


# ---------------------------------------------------------------------------
# Gram matrices of exponentials
# ---------------------------------------------------------------------------
def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with the removable singularity filled in."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-8
    out[big] = np.expm1(z[big]) / z[big]
    small = ~big
    out[small] = 1.0 + z[small] / 2.0 + z[small] ** 2 / 6.0
    return out


def exp_integral(alpha, t) -> np.ndarray:
    """int_0^t exp(i alpha tau) d tau, elementwise and broadcast."""
    alpha = np.asarray(alpha, dtype=float)
    t = np.asarray(t, dtype=float)
    return t * _phi1(1j * alpha * t)


def gram_exponentials(freqs, T: float) -> np.ndarray:
    """G[j, k] = int_0^T exp(-i w_j t) exp(+i w_k t) dt."""
    if T <= 0:
        raise ValueError("T must be positive")
    w = np.asarray(freqs, dtype=float)
    return exp_integral(w[None, :] - w[:, None], T)


@dataclass
class MomentSystem:
    c: object
    T: float
    K: int
    freqs: np.ndarray
    clusters: list[tuple[int, ...]]
    rep_modes: np.ndarray = field(default=None)
    rep_freqs: np.ndarray = field(default=None)
    rep_index: np.ndarray = field(default=None)
    gram_G: np.ndarray = field(default=None, repr=False)
    dual_coeffs: np.ndarray = field(default=None, repr=False)
    gram_condition: float = float("nan")
    biortho_residual: float = float("nan")

    @property
    def k(self) -> np.ndarray:
        return wavenumbers(self.K)

    @property
    def collisions(self) -> list[tuple[int, ...]]:
        return [g for g in self.clusters if len(g) > 1]

    def dual_functions(self, t) -> np.ndarray:
        """q_r(t) for every representative r; shape (len(t), n_rep)."""
        P = np.exp(-1j * np.multiply.outer(np.atleast_1d(t), self.rep_freqs))
        return P @ self.dual_coeffs


def dual_basis(ms: MomentSystem, condition_cap: float = GRAM_CONDITION_CAP, tol: float = 1e-8) -> np.ndarray:
    """Dual coefficients d with q_j = sum_m d[m, j] p_m and int q_j conj(p_k) = delta_jk."""
    G = ms.gram_G
    ev = np.linalg.eigvalsh(G)
    cond = float(ev[-1] / ev[0]) if ev[0] > 0 else float("inf")
    ms.gram_condition = cond
    if not cond <= condition_cap:
        raise ConditioningError(
            f"Gram condition {cond:.3e} exceeds cap {condition_cap:.1e} "
            f"(T={ms.T:.6g}, K={ms.K}); increase T or lower K"
        )
    # int q_j conj(p_k) = sum_m d[m, j] G[m, k], i.e. G^T d = I
    factor = la.cho_factor(np.conj(G), lower=True)
    d = la.cho_solve(factor, np.eye(G.shape[0], dtype=complex))
    ms.dual_coeffs = d
    ms.biortho_residual = biorthogonality_residual(ms)
    if not ms.biortho_residual <= tol:
        raise ConditioningError(f"biorthogonality residual {ms.biortho_residual:.3e} above {tol:.1e}")
    return d


def biorthogonality_residual(ms: MomentSystem) -> float:
    B = ms.gram_G.T @ ms.dual_coeffs
    return float(np.max(np.abs(B - np.eye(B.shape[0]))))


def moment_system(c, T: float, K: int, condition_cap: float = GRAM_CONDITION_CAP, tol: float = 1e-8) -> MomentSystem:
    """Spectrum, clusters, Gram matrix and dual basis for horizon T."""
    cf = float(c) if not isinstance(c, str) else float(Fraction(c))
    if cf == 0:
        raise ValueError("c must be nonzero")
    if not T > TWO_PI / abs(cf):
        raise ValueError(f"T={T:.6g} must exceed 2pi/|c| = {TWO_PI / abs(cf):.6g}")
    freqs, clusters = eigenfrequencies(c, K)
    reps = np.array([g[0] for g in clusters])
    rep_index = np.empty(2 * K + 1, dtype=int)
    for r, g in enumerate(clusters):
        for k in g:
            rep_index[k + K] = r
    rep_freqs = freqs[reps + K]
    ms = MomentSystem(
        c=c, T=float(T), K=K, freqs=freqs, clusters=clusters,
        rep_modes=reps, rep_freqs=rep_freqs, rep_index=rep_index,
        gram_G=gram_exponentials(rep_freqs, T),
    )
    dual_basis(ms, condition_cap, tol)
    return ms


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------
@dataclass
class MomentData:
    m: np.ndarray
    mu: float


def moment_data(a: SpectralField, K: int, tol: float = 1e-14) -> MomentData:
    """m[j, k] = (1/2pi) int a^2 e^{i(j-k)x} dx for |j|, |k| <= K (indexed j+K, k+K)."""
    a2 = product_coeffs(a.coeffs, a.coeffs, 2 * K)
    k = wavenumbers(K)
    m = a2[(k[None, :] - k[:, None]) + 2 * K]
    mu = float(a2[2 * K].real)
    if not mu > tol:
        raise DegenerateDamping(f"mean of a^2 is {mu:.3e}; the control profile vanishes")
    return MomentData(m, mu)


def moment_rhs(ms: MomentSystem, u0: SpectralField, uT: SpectralField) -> np.ndarray:
    """uT_k exp(i omega_k T) - u0_k."""
    if u0.K != ms.K or uT.K != ms.K:
        raise ValueError("u0 and uT must use the system truncation")
    return uT.coeffs * np.exp(1j * ms.freqs * ms.T) - u0.coeffs


def solve_cluster(md: MomentData, group, rhs_group, K: int) -> np.ndarray:
    """Solve sum_l f_l m[l, q] = (1 + q^2) rhs_q for q in the group."""
    g = np.asarray(group)
    block = md.m[np.ix_(g + K, g + K)].T  # block[q, l] = m[l, q]
    if len(g) > 1:
        cond = np.linalg.cond(block)
        if not cond <= CLUSTER_CONDITION_CAP:
            raise SingularCluster(f"cluster {tuple(group)} block has condition {cond:.3e}")
    b = (1.0 + g.astype(float) ** 2) * np.asarray(rhs_group)
    return la.solve(block, b, assume_a="her")


def solve_moments(ms: MomentSystem, md: MomentData, u0: SpectralField, uT: SpectralField) -> np.ndarray:
    """Control amplitudes f_j, j = -K..K."""
    K = ms.K
    rhs = moment_rhs(ms, u0, uT)
    k2 = 1.0 + wavenumbers(K).astype(float) ** 2
    f = k2 * rhs / md.mu
    for g in ms.collisions:
        idx = np.asarray(g) + K
        f[idx] = solve_cluster(md, g, rhs[idx], K)
    return f


# ---------------------------------------------------------------------------
# control signals
# ---------------------------------------------------------------------------
@dataclass
class ControlSignal:
    """h(x, t) = a(x) sum_j f_j q_j(t) e^{ijx}, exact in t."""

    a: SpectralField
    f: np.ndarray
    system: MomentSystem
    moments: MomentData

    @property
    def T(self) -> float:
        return self.system.T

    @property
    def dual_coeffs(self) -> np.ndarray:
        return self.system.dual_coeffs

    @property
    def K(self) -> int:
        return self.system.K

    def expansion(self) -> np.ndarray:
        """E[j, r]: f_j q_j(t) = sum_r E[j, r] exp(-i w_r t)."""
        d = self.system.dual_coeffs
        return self.f[:, None] * d[:, self.system.rep_index].T

    def amplitudes(self, t) -> np.ndarray:
        """f_j q_j(t); shape (len(t), 2K+1)."""
        P = np.exp(-1j * np.multiply.outer(np.atleast_1d(t), self.system.rep_freqs))
        return P @ self.expansion().T

    def _a_matrix(self) -> np.ndarray:
        # C[m, j] = a_hat_{m-j}, m over |m| <= K + K_a
        K, Ka = self.K, self.a.K
        m = np.arange(-(K + Ka), K + Ka + 1)
        j = wavenumbers(K)
        off = m[:, None] - j[None, :]
        out = np.zeros(off.shape, dtype=complex)
        ok = np.abs(off) <= Ka
        out[ok] = self.a.coeffs[off[ok] + Ka]
        return out

    def coefficients(self, t) -> np.ndarray:
        """Fourier coefficients of h(., t), modes |m| <= K + K_a; shape (len(t), n)."""
        return self.amplitudes(t) @ self._a_matrix().T

    def __call__(self, x, t) -> np.ndarray:
        """Pointwise h on the tensor grid; shape (len(t), len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        modes = np.exp(1j * np.multiply.outer(x, wavenumbers(self.K)))
        s = self.amplitudes(t) @ modes.T
        return np.real(self.a(x)[None, :] * s)

    def forcing_coefficients(self, t) -> np.ndarray:
        """Coefficients |k| <= K of a(x) h(x, t); 1-D for scalar t."""
        out = self.amplitudes(t) @ self.moments.m
        return out[0] if np.ndim(t) == 0 else out

    def forcing_expansion(self) -> np.ndarray:
        """F[k, r]: (a h)_k(t) = sum_r F[k, r] exp(-i w_r t)."""
        return self.moments.m.T @ self.expansion()

    def norm(self, s: float = 1.0) -> float:
        """||h||_{L^2(0,T; H^{s-2})} from the closed-form time Gram."""
        C = self._a_matrix() @ self.expansion()
        Gt = np.conj(self.system.gram_G)
        n = (C.shape[0] - 1) // 2
        w = TWO_PI * (1.0 + np.arange(-n, n + 1, dtype=float) ** 2) ** (s - 2.0)
        quad = np.einsum("mr,rs,ms->m", np.conj(C), Gt, C).real
        return float(np.sqrt(max(np.sum(w * quad), 0.0)))


def synthesize_control(ms: MomentSystem, md: MomentData, f: np.ndarray, a: SpectralField) -> ControlSignal:
    return ControlSignal(a=a, f=np.asarray(f, dtype=complex), system=ms, moments=md)


def phi_operator(u0: SpectralField, uT: SpectralField, ms: MomentSystem, a: SpectralField,
                 md: MomentData | None = None) -> ControlSignal:
    """Control steering the linear equation from u0 to uT in time T."""
    md = md or moment_data(a, ms.K)
    return synthesize_control(ms, md, solve_moments(ms, md, u0, uT), a)


# ---------------------------------------------------------------------------
# linear dynamics under a synthesized control
# ---------------------------------------------------------------------------
def linear_trajectory(u0: SpectralField, signal: ControlSignal, times) -> np.ndarray:
    """Closed-form Duhamel solution at each time; shape (len(times), 2K+1)."""
    ms = signal.system
    t = np.atleast_1d(np.asarray(times, dtype=float))
    w = ms.freqs
    k2 = 1.0 + wavenumbers(ms.K).astype(float) ** 2
    F = signal.forcing_expansion() / k2[:, None]
    alpha = w[:, None] - ms.rep_freqs[None, :]
    # sum_r F[k, r] int_0^t exp(i alpha_kr tau) d tau, split into a resonant
    # part (alpha ~ 0, evaluated termwise) and the rest via matrix products
    near = np.abs(alpha) * max(ms.T, float(np.max(np.abs(t)))) < 1e-3
    Fg = np.where(near, 0.0, F / np.where(near, 1.0, 1j * alpha))
    P = np.exp(-1j * np.multiply.outer(t, ms.rep_freqs))
    duh = np.exp(1j * np.multiply.outer(t, w)) * (P @ Fg.T) - Fg.sum(axis=1)[None, :]
    for k, r in zip(*np.nonzero(near)):
        duh[:, k] += F[k, r] * exp_integral(alpha[k, r], t)
    return np.exp(-1j * np.multiply.outer(t, w)) * (u0.coeffs[None, :] + duh)


def linear_drive(u0: SpectralField, signal: ControlSignal, T: float | None = None,
                 method: str = "analytic", dt: float = 1e-3) -> SpectralField:
    """State at time T of the linear equation driven by ``signal``."""
    T = signal.T if T is None else T
    if method == "analytic":
        return SpectralField(linear_trajectory(u0, signal, [T])[0])
    if method == "timestep":
        params = ModelParams(c=float(signal.system.c), nonlinearity="none")
        n = max(1, int(np.ceil(T / dt - 1e-9)))
        traj = integrate(u0, params, T, T / n, sample_every=n, forcing=signal.forcing_coefficients)
        return traj.final
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# nonlinear steering
# ---------------------------------------------------------------------------
def _uux_helmholtz(coeffs: np.ndarray) -> np.ndarray:
    """(1 - d_xx)^{-1}(u u_x) for each row; exact dealiased square."""
    K = (coeffs.shape[-1] - 1) // 2
    k = wavenumbers(K).astype(float)
    sq = product_coeffs(coeffs, coeffs, K)
    return 0.5j * k * sq / (1.0 + k**2)


def terminal_defect(traj: Trajectory, c, drift: float = 1.0) -> SpectralField:
    """omega(u) = -int_0^T W(T - tau)(1 - d_xx)^{-1}(u u_x)(tau) d tau by Simpson."""
    K = traj.K
    w = frequencies(float(c), K, drift)
    T = traj.times[-1]
    g = -np.exp(-1j * np.multiply.outer(T - traj.times, w)) * _uux_helmholtz(traj.coeffs)
    return SpectralField(simpson(g, x=traj.times, axis=0))


def _nonlinear_duhamel(coeffs: np.ndarray, times: np.ndarray, w: np.ndarray) -> np.ndarray:
    """-int_0^t W(t - tau)(1 - d_xx)^{-1}(u u_x) d tau at every sample time."""
    g = np.exp(1j * np.multiply.outer(times, w)) * _uux_helmholtz(coeffs)
    # cumulative_simpson drops imaginary parts
    cum = cumulative_simpson(g.real, x=times, axis=0, initial=0.0) + 1j * cumulative_simpson(
        g.imag, x=times, axis=0, initial=0.0
    )
    return -np.exp(-1j * np.multiply.outer(times, w)) * cum


@dataclass
class SteerReport:
    changes: list[float]
    ratios: list[float]
    iterations: int
    converged: bool
    fixed_point_residual: float
    terminal_residual: float = float("nan")
    control_norm: float = float("nan")

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "changes": list(map(float, self.changes)),
            "ratios": list(map(float, self.ratios)),
            "fixed_point_residual": self.fixed_point_residual,
            "terminal_residual": self.terminal_residual,
            "control_norm": self.control_norm,
        }


def nonlinear_steer(
    u0: SpectralField,
    uT: SpectralField,
    ms: MomentSystem,
    a: SpectralField,
    tol: float = 1e-12,
    max_iter: int = 30,
    n_time: int = 2048,
    s: float = 1.0,
    verify_dt: float | None = 1e-3,
):
    """Fixed-point iteration for the control of the nonlinear KdV-BBM equation.

    Returns ``(control, trajectory, report)``. ``trajectory`` is the fixed
    point on a uniform grid of ``n_time`` intervals. When ``verify_dt`` is
    set, the control is replayed through the time stepper and the terminal
    residual ||u(T) - uT||_{H^s} of that independent run is reported.
    """
    if n_time % 2:
        raise ValueError("n_time must be even for Simpson quadrature")
    K = ms.K
    md = moment_data(a, K)
    times = np.linspace(0.0, ms.T, n_time + 1)
    w = ms.freqs
    wts = TWO_PI * (1.0 + wavenumbers(K).astype(float) ** 2) ** s

    u = np.zeros((times.size, 2 * K + 1), dtype=complex)
    changes: list[float] = []
    ratios: list[float] = []
    streak = 0
    converged = False
    signal = None
    for it in range(1, max_iter + 1):
        traj = Trajectory(times, u)
        defect = terminal_defect(traj, ms.c)
        signal = phi_operator(u0, uT - defect, ms, a, md)
        new = linear_trajectory(u0, signal, times) + _nonlinear_duhamel(u, times, w)
        change = float(np.sqrt(np.max(np.abs(new - u) ** 2 @ wts)))
        changes.append(change)
        if len(changes) > 1 and changes[-2] > 0:
            ratios.append(change / changes[-2])
            streak = streak + 1 if ratios[-1] > 0.95 else 0
        u = new
        log.debug("steer iteration %d: change %.3e", it, change)
        if change <= tol * max(1.0, float(np.sqrt(np.max(np.abs(u) ** 2 @ wts)))) or change == 0.0:
            converged = True
            break
        if streak >= 3:
            raise NoContraction(
                f"successive-change ratio above 0.95 for 3 iterations (last {ratios[-1]:.3f}); "
                "data too large for local steering"
            )
    traj = Trajectory(times, u)
    signal = phi_operator(u0, uT - terminal_defect(traj, ms.c), ms, a, md)
    fp_res = hs_norm(SpectralField(u[-1]) - uT, s)
    report = SteerReport(changes, ratios, len(changes), converged, fp_res, control_norm=signal.norm(s))
    if verify_dt:
        params = ModelParams(c=float(ms.c))
        n = int(round(ms.T / verify_dt))
        run = integrate(u0, params, ms.T, ms.T / n, sample_every=n, forcing=signal.forcing_coefficients)
        report.terminal_residual = hs_norm(run.final - uT, s)
    return signal, traj, report
