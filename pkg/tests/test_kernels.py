import os
import subprocess
import sys

import numpy as np
import pytest

from bbmctl import kernels
from bbmctl.dynamics import _a_coeffs, _damp_kind, _nl_mult, linear_frequencies
from bbmctl.scenarios import bump_profile, random_state
from bbmctl.spectral import ModelParams, SpectralField, product_coeffs

BACKENDS = kernels.backends()
needs_ext = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_fallback_always_available():
    assert "python" in BACKENDS
    assert kernels.BACKEND in BACKENDS


def test_env_var_forces_fallback():
    env = dict(os.environ, BBMCTL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from bbmctl import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_convolve_matches_product(name, rng):
    impl = BACKENDS[name]
    u, v = SpectralField.random(12, rng), SpectralField.random(12, rng)
    for K_out in (12, 20):
        got = impl.convolve(u.coeffs, v.coeffs, K_out)
        assert np.allclose(got, product_coeffs(u.coeffs, v.coeffs, K_out), atol=1e-15)


@needs_ext
@pytest.mark.parametrize("kind", ["none", "feedback", "localized"])
def test_rhs_backends_agree(kind, rng):
    K = 16
    a = bump_profile(K)
    p = ModelParams(c=1.0, a=a if kind != "none" else None, damping=None if kind == "none" else kind)
    u = random_state(K, rng, 1.0).coeffs
    args = (_nl_mult(p, K), _a_coeffs(p, K), _damp_kind(p), 0.8)
    fast = BACKENDS["cython"].quadratic_rhs(u, *args)
    slow = BACKENDS["python"].quadratic_rhs(u, *args)
    assert np.max(np.abs(fast - slow)) < 1e-15


@needs_ext
def test_stepper_backends_agree(rng):
    K = 16
    p = ModelParams(c=1.0, a=bump_profile(K), damping="feedback")
    u0 = random_state(K, rng, 2.0).coeffs
    args = (u0, 1e-2, 20, 5, linear_frequencies(p, K), _nl_mult(p, K), _a_coeffs(p, K), _damp_kind(p), 1.0, 1e12)
    s1, n1 = BACKENDS["cython"].lawson_rk4(*args)
    s2, n2 = BACKENDS["python"].lawson_rk4(*args)
    assert n1 == n2 == 20
    assert np.max(np.abs(s1 - s2)) < 1e-13


@needs_ext
def test_guard_agrees(rng):
    K = 8
    p = ModelParams()
    u0 = random_state(K, rng, 5.0).coeffs
    args = (u0, 1e-2, 10, 1, linear_frequencies(p, K), _nl_mult(p, K), None, 0, 1.0, 1.0)
    assert BACKENDS["cython"].lawson_rk4(*args)[1] == BACKENDS["python"].lawson_rk4(*args)[1] == 1
