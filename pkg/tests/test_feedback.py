import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bbmctl.dynamics import Trajectory
from bbmctl.feedback import (
    DegenerateFit,
    LedgerError,
    apply_B,
    bstar_s,
    closed_loop_params,
    closed_loop_run,
    damped_generator,
    damped_group,
    damped_group_trajectory,
    decay_rate_fit,
    multiplication_matrix,
    observability_ratio,
)
from bbmctl.scenarios import bump_profile, random_state
from bbmctl.spectral import SpectralField, free_flow, hs_inner, hs_norm, pointwise_product


def one(K):
    return SpectralField.from_modes(K, {0: 1.0})


# operators ----------------------------------------------------------------
def test_bstar_one_is_multiplication(rng):
    a = SpectralField.random(6, rng).resample(16)
    u = SpectralField.random(8, rng).resample(16)
    assert np.allclose(bstar_s(u, 1.0, a).coeffs, pointwise_product(a, u).coeffs, atol=1e-15)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0, 2.0, -1.0])
def test_identity_profile(s, rng):
    u = SpectralField.random(10, rng)
    assert np.allclose(bstar_s(u, s, one(10)).coeffs, u.coeffs, atol=1e-15)
    assert np.allclose(apply_B(u, one(10)).coeffs, u.coeffs, atol=1e-15)


@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_adjointness(seed, s):
    rng = np.random.default_rng(seed)
    K = 12
    a = SpectralField.random(K, rng)
    u, v = SpectralField.random(K, rng), SpectralField.random(K, rng)
    lhs = hs_inner(apply_B(u, a), v, s)
    rhs = hs_inner(u, bstar_s(v, s, a), s)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1e-300) + 1e-14


def test_multiplication_matrix(rng):
    a = SpectralField.random(4, rng)
    u = SpectralField.random(9, rng)
    M = multiplication_matrix(a, 9)
    assert np.allclose(M @ u.coeffs, pointwise_product(a.resample(9), u).coeffs, atol=1e-14)


# damped group -------------------------------------------------------------
def test_generator_real_compatibility(bump16):
    gen = damped_generator(bump16, 1.0, 16)
    assert gen.hermitian_commutator_defect() < 1e-12
    assert damped_generator(bump16, 1.0, 16) is gen


def test_identity_profile_group(rng):
    K = 12
    gen = damped_generator(one(K), 1.0, K)
    u0 = SpectralField.random(K, rng)
    for t in (0.0, 0.5, 3.0):
        ref = free_flow(u0, t, 1.0) * np.exp(-t)
        assert hs_norm(damped_group(u0, t, gen) - ref, 1) <= 1e-10 * hs_norm(u0, 1)


def test_group_law(bump16, rng):
    gen = damped_generator(bump16, 1.0, 16)
    u0 = SpectralField.random(16, rng)
    lhs = damped_group(damped_group(u0, 0.7, gen), 1.9, gen)
    assert hs_norm(lhs - damped_group(u0, 2.6, gen), 1) <= 1e-10 * hs_norm(u0, 1)
    assert np.array_equal(damped_group(u0, 0.0, gen).coeffs, u0.coeffs)


def test_group_trajectory_uniform_and_not(bump16, rng):
    gen = damped_generator(bump16, 1.0, 16)
    u0 = SpectralField.random(16, rng)
    t = np.linspace(0, 2, 9)
    a = damped_group_trajectory(u0, t, gen)
    b = damped_group_trajectory(u0, t**2 / 2, gen)
    assert np.allclose(a.coeffs[-1], damped_group(u0, 2.0, gen).coeffs, atol=1e-12)
    assert np.allclose(b.coeffs[-1], damped_group(u0, 2.0, gen).coeffs, atol=1e-12)
    with pytest.raises(ValueError):
        damped_group(SpectralField.zeros(3), 1.0, gen)


def test_group_matches_linear_closed_loop(bump16, rng):
    u0 = random_state(16, rng, 1.0)
    gen = damped_generator(bump16, 1.0, 16)
    traj = closed_loop_run(u0, closed_loop_params(bump16, 1.0, nonlinear=False), 5.0, 1e-3, sample_every=500)
    ref = damped_group_trajectory(u0, traj.times, gen)
    assert np.max(np.abs(traj.coeffs - ref.coeffs)) < 1e-8


# decay fits ---------------------------------------------------------------
def test_fit_identity_profile(rng):
    K = 12
    u0 = SpectralField.random(K, rng)
    traj = damped_group_trajectory(u0, np.linspace(0, 10, 101), damped_generator(one(K), 1.0, K))
    fit = decay_rate_fit(traj)
    assert fit.gamma == pytest.approx(1.0, abs=1e-6)
    assert fit.r2 > 1 - 1e-10
    gamma, C, r2 = fit
    assert C == pytest.approx(hs_norm(u0, 1), rel=1e-6)


def test_fit_zero_profile(rng):
    K = 8
    traj = damped_group_trajectory(SpectralField.random(K, rng), np.linspace(0, 10, 51),
                                   damped_generator(SpectralField.zeros(K), 1.0, K))
    assert abs(decay_rate_fit(traj).gamma) < 1e-8


def test_fit_seed_independent(bump32):
    gen = damped_generator(bump32, 1.0, 32)
    times = np.linspace(0, 1500, 1001)
    rates = []
    for seed in range(20):
        u0 = SpectralField.random(32, np.random.default_rng(seed))
        rates.append(decay_rate_fit(damped_group_trajectory(u0, times, gen), t_min=500).gamma)
    rates = np.array(rates)
    assert np.all(rates > 0)
    assert (rates.max() - rates.min()) / rates.mean() < 0.1
    assert rates.mean() == pytest.approx(-gen.spectral_abscissa(), rel=0.02)


def test_fit_underflow_truncates():
    t = np.linspace(0, 10, 11)
    c = np.zeros((11, 3), complex)
    c[:, 1] = np.exp(-t)
    c[5:, 1] = 0
    fit = decay_rate_fit(Trajectory(t, c), t_min=0)
    assert fit.n_samples == 5 and fit.gamma == pytest.approx(1.0)
    c[2:, 1] = 0
    with pytest.raises(DegenerateFit):
        decay_rate_fit(Trajectory(t, c), t_min=0)


# observability ------------------------------------------------------------
def test_observability_identity_profile(rng):
    K, T = 10, 2.0
    u0 = SpectralField.random(K, rng)
    times = np.linspace(0, T, 401)
    traj = damped_group_trajectory(u0, times, damped_generator(one(K), 1.0, K))
    assert observability_ratio(u0, traj, one(K)) == pytest.approx(2 / (1 - np.exp(-2 * T)), rel=1e-9)


def test_observability_zero_and_degenerate(rng):
    K = 6
    z = SpectralField.zeros(K)
    t = np.linspace(0, 1, 11)
    assert observability_ratio(z, Trajectory(t, np.zeros((11, 13))), one(K)) == 0.0
    u0 = SpectralField.random(K, rng)
    assert observability_ratio(u0, Trajectory(t, np.zeros((11, 13))), one(K)) == np.inf
    with pytest.raises(ValueError):
        observability_ratio(u0, Trajectory(t, np.zeros((11, 13))), one(K), T=2.0)


# closed loop --------------------------------------------------------------
def test_closed_loop_zero(bump16):
    traj = closed_loop_run(SpectralField.zeros(16), closed_loop_params(bump16, 1.0), 1.0, 1e-2)
    assert np.all(traj.coeffs == 0)


def test_closed_loop_large_data_monotone(bump16, rng):
    u0 = random_state(16, rng, 5.0)
    traj = closed_loop_run(u0, closed_loop_params(bump16, 1.0), 5.0, 1e-3)
    assert np.all(np.diff(traj.norms(1.0)) < 0)
    assert traj.diagnostics["energy_residual"][0] < 1e-7


def test_closed_loop_rejects_bad_params(bump16):
    from bbmctl.spectral import ModelParams

    with pytest.raises(ValueError):
        closed_loop_run(SpectralField.zeros(16), ModelParams(c=1.0), 1.0)


def test_ledger_error_raised(bump16, rng):
    u0 = random_state(16, rng, 2.0)
    with pytest.raises(LedgerError):
        closed_loop_run(u0, closed_loop_params(bump16, 1.0), 2.0, 0.1, ledger_tol=1e-15)


def test_small_data_rate_matches_linear(bump16, rng):
    gen = damped_generator(bump16, 1.0, 16)
    u0 = random_state(16, rng, 1e-3)
    times = np.linspace(0, 60, 121)
    lin = decay_rate_fit(damped_group_trajectory(u0, times, gen)).gamma
    traj = closed_loop_run(u0, closed_loop_params(bump16, 1.0), 60.0, 5e-3, sample_every=100)
    assert decay_rate_fit(traj).gamma == pytest.approx(lin, rel=0.15)
