"""Acceptance criteria, one test each; every test also emits a PASS/FAIL line."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from bbmctl import (
    ModelParams,
    SpectralField,
    closed_loop_params,
    damped_generator,
    damped_group_trajectory,
    decay_rate_fit,
    energy_ledger_residual,
    free_flow,
    hs_norm,
    integrate,
    moment_system,
)
from bbmctl.config import parse_config
from bbmctl.moment import moment_data, moment_rhs, solve_cluster
from bbmctl.runner import run
from bbmctl.scenarios import bump_profile, constant_profile, random_state
from bbmctl.spectral import TWO_PI

T_CTRL = 1.2 * TWO_PI


def scenario(tmp_path, data):
    return run(parse_config(data), tmp_path / data["scenario"])


def test_c01_isometry_and_group_law(report):
    rng = np.random.default_rng(1)
    K = 64
    t0 = time.perf_counter()
    iso = group = 0.0
    for _ in range(100):
        u = SpectralField.random(K, rng, decay=rng.uniform(0.5, 2.0))
        s = rng.uniform(-1.0, 3.0)
        t1, t2 = rng.uniform(-50, 50, size=2)
        c = rng.uniform(-2, 2)
        n = hs_norm(u, s)
        iso = max(iso, abs(hs_norm(free_flow(u, t1, c), s) - n) / n)
        lhs = free_flow(free_flow(u, t2, c), t1, c)
        group = max(group, hs_norm(lhs - free_flow(u, t1 + t2, c), s) / n)
    elapsed = time.perf_counter() - t0
    ok = iso < 1e-12 and group < 1e-12 and elapsed < 1.0
    assert report(1, ok, f"isometry {iso:.1e}, group law {group:.1e} (< 1e-12), {elapsed:.2f} s (< 1 s)")


def test_c02_invariants(tmp_path, report):
    t0 = time.perf_counter()
    doc = scenario(tmp_path, {"scenario": "simulate", "model": {"c": 0.0},
                              "initial": {"kind": "cos", "amplitude": 0.5},
                              "numerics": {"K": 64, "dt": 1e-3, "t_end": 10.0, "samples": 100}})
    elapsed = time.perf_counter() - t0
    drift = doc["invariant_drift"]
    ok = all(v < 1e-6 for v in drift.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(drift.items()))
    assert report(2, ok, f"relative drift {detail} (< 1e-6), {elapsed:.1f} s (< 30 s)")


def test_c03_taylor_flow(tmp_path, report):
    doc = scenario(tmp_path, {"scenario": "taylor", "initial": {"kind": "cos", "amplitude": 1.0},
                              "numerics": {"K": 64, "dt": 1e-3}, "taylor": {"n_max": 20}})
    from bbmctl import taylor_flow

    ts = taylor_flow(SpectralField.from_modes(64, {1: 0.5}), 20)
    v1 = SpectralField.from_modes(64, {1: -0.25j, 2: -0.05j})  # sin x / 2 + sin 2x / 10
    v1_err = float(np.max(np.abs(ts.coefficients[1].coeffs - v1.coeffs)))
    ok = doc["h1_error"] < 1e-6 and v1_err < 1e-12
    assert report(3, ok, f"H1 error at t={doc['t_eval']:.3g}: {doc['h1_error']:.1e} (< 1e-6), "
                         f"v1 error {v1_err:.1e} (< 1e-12)")


def test_c04_biorthogonality(report):
    ms = moment_system(1.0, T_CTRL, 16)
    ok = ms.biortho_residual < 1e-8 and math.isfinite(ms.gram_condition)
    assert report(4, ok, f"biorthogonality {ms.biortho_residual:.1e} (< 1e-8), "
                         f"gram_condition {ms.gram_condition:.3e}")


def test_c05_linear_controllability(tmp_path, report):
    t0 = time.perf_counter()
    doc = scenario(tmp_path, {"scenario": "control_linear", "model": {"c": 1.0, "profile": {"kind": "bump"}},
                              "initial": {"kind": "random", "norm": 1.0}, "target": {"kind": "random", "norm": 1.0},
                              "numerics": {"K": 16, "dt": 1e-3}, "control": {"T": T_CTRL, "s": 1.0}})
    elapsed = time.perf_counter() - t0
    ra, rt = doc["terminal_residual"], doc["terminal_residual_timestep"]
    ok = ra < 1e-8 and rt < 1e-4 and elapsed < 10
    assert report(5, ok, f"analytic {ra:.1e} (< 1e-8), timestep {rt:.1e} (< 1e-4), {elapsed:.1f} s (< 10 s)")


def test_c06_nonlinear_local_control(tmp_path, report):
    doc = scenario(tmp_path, {"scenario": "control_nonlinear", "model": {"c": 1.0, "profile": {"kind": "bump"}},
                              "initial": {"kind": "random", "norm": 1e-2}, "target": {"kind": "random", "norm": 1e-2},
                              "numerics": {"K": 16, "dt": 1e-3}, "control": {"T": T_CTRL, "max_iter": 12}})
    late = max(doc["ratios"][1:], default=0.0)
    ok = doc["converged"] and doc["iterations"] <= 12 and late <= 0.5 and doc["terminal_residual"] < 1e-6
    assert report(6, ok, f"{doc['iterations']} iterations (<= 12), max ratio after 2: {late:.2e} (<= 0.5), "
                         f"terminal residual {doc['terminal_residual']:.1e} (< 1e-6)")


def test_c07_damped_linear_decay(report):
    rng = np.random.default_rng(7)
    K = 32
    u0 = SpectralField.random(K, rng)
    flat = damped_group_trajectory(u0, np.linspace(0, 10, 101), damped_generator(constant_profile(K), 1.0, K))
    g_one = decay_rate_fit(flat).gamma
    gen = damped_generator(bump_profile(K), 1.0, K)
    alpha = gen.spectral_abscissa()
    lin = damped_group_trajectory(random_state(K, rng, 1.0), np.linspace(0, 1500, 1001), gen)
    g_bump = decay_rate_fit(lin, t_min=500.0).gamma
    rel = abs(g_bump + alpha) / abs(alpha)
    ok = abs(g_one - 1) < 1e-6 and g_bump > 0 and rel < 0.02
    assert report(7, ok, f"a=1: gamma {g_one:.8f} (1 +- 1e-6); bump: gamma {g_bump:.4e} vs "
                         f"-abscissa {-alpha:.4e}, rel {rel:.1e} (< 0.02)")


def test_c08_energy_identity(report):
    K = 32
    a = bump_profile(K)
    u0 = random_state(K, np.random.default_rng(8), 2.0)
    closed = closed_loop_params(a, 1.0)
    gbbm = ModelParams(a=a, damping="localized", nonlinearity="generalized_f", f=lambda u: 0.5 * u**3)

    def ledger(params, dt):
        return energy_ledger_residual(integrate(u0, params, 5.0, dt), params, relative=True)

    r_cl, r_cl2 = ledger(closed, 1e-3), ledger(closed, 5e-4)
    r_g = ledger(gbbm, 1e-3)
    # at dt = 1e-3 the gBBM ledger is already at its rounding floor, so the
    # order is read off two coarse steps instead
    r_g1, r_g2 = ledger(gbbm, 0.1), ledger(gbbm, 0.05)
    ok = r_cl < 1e-7 and r_g < 1e-7 and r_cl / r_cl2 >= 8 and r_g1 / r_g2 >= 8
    assert report(8, ok, f"closed loop {r_cl:.1e}, gBBM {r_g:.1e} (< 1e-7); halving dt: closed loop "
                         f"x{r_cl / r_cl2:.1f}, gBBM (dt 0.1 -> 0.05) x{r_g1 / r_g2:.1f} (>= 8)")


def test_c09_semiglobal_stabilization(tmp_path, report):
    doc = scenario(tmp_path, {"scenario": "stabilize",
                              "model": {"c": 1.0, "damping": "feedback", "profile": {"kind": "bump"}},
                              "numerics": {"K": 32, "dt": 1e-3, "t_end": 20.0},
                              "stabilize": {"amplitudes": [1.0, 2.5, 5.0], "batch": 50}})
    runs = doc["nonlinear_runs"]
    ok = (all(r["strictly_decreasing"] and r["gamma_hat"] > 0 for r in runs)
          and len(doc["observability_ratios"]) == 50 and math.isfinite(doc["beta_empirical"]))
    rates = ", ".join(f"{r['amplitude']:g}: {r['gamma_hat']:.3e}" for r in runs)
    assert report(9, ok, f"gamma_hat by amplitude {{{rates}}} (> 0, monotone), "
                         f"beta over 50 samples {doc['beta_empirical']:.3e} (finite)")


def test_c10_moving_frame(tmp_path, report):
    doc = scenario(tmp_path, {"scenario": "moving_frame_check", "model": {"c": 1.0, "profile": {"kind": "bump"}},
                              "initial": {"kind": "random", "norm": 0.5}, "target": {"kind": "random", "norm": 0.5},
                              "numerics": {"K": 16, "dt": 1e-3}})
    z, f = doc["zero_control_discrepancy"], doc["control_discrepancy"]
    assert report(10, z < 1e-8 and f < 1e-6, f"zero control {z:.1e} (< 1e-8), with control {f:.1e} (< 1e-6)")


def test_c11_global_steering(tmp_path, report):
    doc = scenario(tmp_path, {"scenario": "global_steer", "model": {"c": 1.0, "profile": {"kind": "bump"}},
                              "initial": {"kind": "random", "norm": 2.0}, "target": {"kind": "random", "norm": 2.0},
                              "numerics": {"K": 32, "dt": 2e-3}})
    stages = doc["stage_residuals"]
    ok = doc["end_to_end_residual"] < 1e-3 and {"damp_forward_norm", "damp_backward_norm",
                                                "steer_terminal"} <= set(stages)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(stages.items()))
    assert report(11, ok, f"end-to-end {doc['end_to_end_residual']:.1e} (< 1e-3); stages: {detail}")


def test_c12_collision_algebra(report):
    half = moment_system(Fraction(-1, 2), 1.2 * TWO_PI / 0.5, 16).collisions
    one = moment_system(1.0, T_CTRL, 32).collisions
    ms = moment_system(1.0, T_CTRL, 32)
    md = moment_data(bump_profile(32), 32)
    rng = np.random.default_rng(12)
    rhs = moment_rhs(ms, SpectralField.random(32, rng), SpectralField.random(32, rng))
    gap = 0.0
    for k in range(-32, 33):
        got = solve_cluster(md, (k,), rhs[[k + 32]], 32)[0]
        closed = (1 + k * k) * rhs[k + 32] / md.mu
        gap = max(gap, abs(got - closed) / max(1.0, abs(closed)))
    ok = len(half) == 1 and set(half[0]) == {-1, 0, 1} and one == [] and gap < 1e-12
    assert report(12, ok, f"c=-1/2 clusters {half}, c=1 clusters {one}, singleton reduction {gap:.1e} (< 1e-12)")
