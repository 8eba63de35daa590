"""Composite experiments built from the solver, control and feedback layers.

Each function here returns plain numbers and arrays; file output and
configuration live in :mod:`bbmctl.runner`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory, integrate
from .feedback import closed_loop_params
from .moment import MomentSystem, NoContraction, nonlinear_steer
from .spectral import TWO_PI, ModelParams, SpectralField, hs_norm, to_grid

log = logging.getLogger(__name__)

DEFAULT_DELTA_LOCAL = 1.0


def bump_profile(K: int, center: float = np.pi, width: float = 10.0, height: float = 1.0) -> SpectralField:
    """Periodized Gaussian height * sum_n exp(-width (x - center + 2 pi n)^2)."""
    def f(x):
        shifts = TWO_PI * np.arange(-3, 4)[:, None]
        return height * np.exp(-width * (x[None, :] - center + shifts) ** 2).sum(axis=0)

    return SpectralField.from_function(f, K)


def constant_profile(K: int, value: float = 1.0) -> SpectralField:
    return SpectralField.from_modes(K, {0: value})


def random_state(K: int, rng: np.random.Generator, norm: float, decay: float = 1.5, s: float = 1.0) -> SpectralField:
    """Random real field rescaled to the requested H^s norm."""
    u = SpectralField.random(K, rng, decay=decay)
    n = hs_norm(u, s)
    return u * (norm / n) if n > 0 else u


# ---------------------------------------------------------------------------
# damping to a ball
# ---------------------------------------------------------------------------
def damp_until(u0: SpectralField, params: ModelParams, radius: float, dt: float = 5e-3,
               chunk: float = 0.5, t_max: float = 500.0, s: float = 1.0) -> Trajectory:
    """Run the closed loop in chunks until ||u||_{H^s} < radius at a chunk end.

    The returned trajectory holds the chunk-end states only.
    """
    n = max(1, int(round(chunk / dt)))
    h = chunk / n
    times, states = [0.0], [u0.coeffs]
    u, t = u0, 0.0
    while hs_norm(u, s) >= radius:
        if t >= t_max:
            raise RuntimeError(f"norm {hs_norm(u, s):.3g} still above {radius} at t={t:g}")
        u = integrate(u, params, (t, t + chunk), h, sample_every=n).final
        t += chunk
        times.append(t)
        states.append(u.coeffs)
    return Trajectory(np.array(times), np.array(states))


# ---------------------------------------------------------------------------
# global steering
# ---------------------------------------------------------------------------
@dataclass
class GlobalSteerResult:
    end_state: SpectralField
    end_to_end_residual: float
    relative_residual: float
    t_damp_forward: float
    t_damp_backward: float
    T_steer: float
    delta_local: float
    stage_residuals: dict
    steer_report: dict
    control: object = field(repr=False, default=None)

    @property
    def total_time(self) -> float:
        return self.t_damp_forward + self.T_steer + self.t_damp_backward

    def as_dict(self) -> dict:
        return {
            "end_to_end_residual": self.end_to_end_residual,
            "relative_residual": self.relative_residual,
            "t_damp_forward": self.t_damp_forward,
            "t_damp_backward": self.t_damp_backward,
            "T_steer": self.T_steer,
            "total_time": self.total_time,
            "delta_local": self.delta_local,
            "stage_residuals": dict(self.stage_residuals),
            "steer": dict(self.steer_report),
        }


def global_steer(u0: SpectralField, uT: SpectralField, ms: MomentSystem, a: SpectralField,
                 delta_local: float = DEFAULT_DELTA_LOCAL, dt: float = 2e-3, chunk: float = 0.5,
                 s: float = 1.0, tol: float = 1e-12, max_iter: int = 30, n_time: int = 2048,
                 t_max: float = 500.0) -> GlobalSteerResult:
    """Steer the nonlinear KdV-BBM equation from u0 to uT in three stages.

    1. feedback damping of u0 with profile a until the H^s norm is below
       ``delta_local``;
    2. the same for the reflected target x -> -x with profile a(-x); by the
       (x, t) -> (-x, -t) symmetry this run, read backwards, is an
       anti-damped forward run with profile a ending at uT;
    3. local steering between the two small states.

    The whole chain is then replayed forward with the time stepper and the
    residual at uT is measured on that replay.
    """
    c = float(ms.c)
    K = ms.K
    n_chunk = max(1, int(round(chunk / dt)))
    h = chunk / n_chunk

    fwd = damp_until(u0, closed_loop_params(a, c), delta_local, h, chunk, t_max, s)
    w1 = fwd.final
    a_ref = a.reflect()
    bwd = damp_until(uT.reflect(), closed_loop_params(a_ref, c), delta_local, h, chunk, t_max, s)
    w2 = bwd.final.reflect()
    T1, T2 = float(fwd.times[-1]), float(bwd.times[-1])
    log.info("damping stages: T1=%g, T2=%g", T1, T2)

    signal, _, report = nonlinear_steer(w1, w2, ms, a, tol=tol, max_iter=max_iter,
                                        n_time=n_time, s=s, verify_dt=None)

    # forward replay: stage 1 is already a forward run, stage 3 is replayed
    # with the control as a source, stage 4 is the anti-damped loop
    n3 = max(1, int(round(ms.T / dt)))
    mid = integrate(w1, ModelParams(c=c), ms.T, ms.T / n3, sample_every=n3,
                    forcing=signal.forcing_coefficients).final
    anti = closed_loop_params(a, c, gain=-1.0)
    guard = 1e3
    if T2 > 0:
        n4 = n_chunk * int(round(T2 / chunk))
        end = integrate(mid, anti, T2, T2 / n4, sample_every=n4, guard_factor=guard).final
        exact = integrate(w2, anti, T2, T2 / n4, sample_every=n4, guard_factor=guard).final
    else:
        end, exact = mid, w2
    res = hs_norm(end - uT, s)
    stages = {
        "damp_forward_norm": hs_norm(w1, s),
        "damp_backward_norm": hs_norm(w2, s),
        "steer_terminal": hs_norm(mid - w2, s),
        "reversal": hs_norm(exact - uT, s),
    }
    nT = hs_norm(uT, s)
    return GlobalSteerResult(end, res, res / nT if nT > 0 else res, T1, T2, ms.T, delta_local,
                             stages, report.as_dict(), signal)


def calibrate_local_radius(ms: MomentSystem, a: SpectralField, amplitudes, seeds=(0,),
                           ratio_cap: float = 0.5, decay: float = 1.5, **steer_kw) -> dict:
    """Smallest tested H^1 amplitude at which local steering stops contracting.

    An amplitude counts as failing when the iteration raises NoContraction,
    does not converge, or shows a successive-change ratio above ``ratio_cap``.
    Returns the threshold (inf if every amplitude passes), the suggested
    delta_local = threshold / 2 and the per-run table.
    """
    K = ms.K
    rows = []
    threshold = np.inf
    for amp in sorted(amplitudes):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            u0 = random_state(K, rng, amp, decay)
            uT = random_state(K, rng, amp, decay)
            try:
                _, _, rep = nonlinear_steer(u0, uT, ms, a, verify_dt=None, **steer_kw)
                ratio = max(rep.ratios, default=0.0)
                ok = rep.converged and ratio <= ratio_cap
            except NoContraction:
                ratio, ok = np.inf, False
            rows.append({"amplitude": float(amp), "seed": int(seed), "max_ratio": float(ratio), "ok": ok})
            if not ok:
                threshold = min(threshold, float(amp))
    return {"threshold": threshold, "delta_local": threshold / 2, "runs": rows}


# ---------------------------------------------------------------------------
# unique-continuation probe
# ---------------------------------------------------------------------------
def ucp_ratio(traj: Trajectory, arc: tuple[float, float], N: int = 256) -> float:
    """||u||_{L^2(arc x (0,T))} / ||u||_{L^2(T x (0,T))} by grid quadrature."""
    from scipy.integrate import simpson

    x = TWO_PI * np.arange(N) / N
    vals = to_grid(traj.coeffs, N).real ** 2
    length = arc[1] - arc[0]
    if length <= 0:
        raise ValueError("arc must have positive length")
    inside = (x - arc[0]) % TWO_PI < length
    dx = TWO_PI / N
    local = vals[:, inside].sum(axis=1) * dx
    total = vals.sum(axis=1) * dx
    if traj.times.size >= 3:
        num, den = simpson(local, x=traj.times), simpson(total, x=traj.times)
    else:
        num, den = local.sum(), total.sum()
    return float(np.sqrt(num / den)) if den > 0 else 0.0


# ---------------------------------------------------------------------------
# moving frame
# ---------------------------------------------------------------------------
def moving_frame_discrepancy(v0: SpectralField, c: float, T: float, dt: float,
                             forcing=None, sample_every: int = 1, s: float = 1.0):
    """Compare KdV-BBM with a static-support source against BBM with a moving one.

    ``forcing(t)`` gives the coefficients of a(x) h(x, t) in the KdV-BBM
    frame. The BBM run uses exp(ikct) times it, i.e. the source translated
    with speed c, and its states are mapped back by the frame change. Returns
    ``(max_discrepancy, kdv_bbm_traj, bbm_traj)``.
    """
    n = int(round(T / dt))
    n -= n % sample_every
    h = T / n
    k = v0.k
    moving = None
    if forcing is not None:
        def moving(t):
            return np.exp(1j * k * c * t) * forcing(t)
    static = integrate(v0, ModelParams(c=c), T, h, sample_every=sample_every, forcing=forcing)
    bbm = integrate(v0, ModelParams(c=0.0), T, h, sample_every=sample_every, forcing=moving)
    shift = np.exp(-1j * np.multiply.outer(bbm.times, k) * c)
    diff = Trajectory(bbm.times, shift * bbm.coeffs - static.coeffs)
    return float(np.max(diff.norms(s))), static, bbm
