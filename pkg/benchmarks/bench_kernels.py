"""Time the compiled and numpy stepping kernels on identical inputs.

    python3 benchmarks/bench_kernels.py --K 16 32 64 --steps 2000
"""

import argparse
import timeit

import numpy as np

from bbmctl import ModelParams, SpectralField, kernels
from bbmctl.dynamics import _a_coeffs, _damp_kind, _nl_mult, linear_frequencies
from bbmctl.feedback import closed_loop_params
from bbmctl.scenarios import bump_profile


def kernel_args(K: int, damped: bool, steps: int, dt: float):
    u0 = SpectralField.random(K, np.random.default_rng(0), decay=1.5)
    params = closed_loop_params(bump_profile(K), 1.0) if damped else ModelParams(c=1.0)
    return (u0.coeffs, dt, 1, steps, linear_frequencies(params, K), _nl_mult(params, K),
            _a_coeffs(params, K), _damp_kind(params), params.gain, 1e300)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--K", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled extension not built; timing the numpy kernels only")
    print(f"{'case':<10} {'K':>4} " + " ".join(f"{name + ' [s]':>12}" for name in impls)
          + f" {'speedup':>8} {'max diff':>10}")
    for damped in (False, True):
        for K in args.K:
            a = kernel_args(K, damped, args.steps, args.dt)
            times, outs = {}, {}
            for name, mod in impls.items():
                outs[name] = mod.lawson_rk4(*a)[0]
                times[name] = min(timeit.repeat(lambda: mod.lawson_rk4(*a), number=1, repeat=args.repeat))
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            diff = float(np.max(np.abs(outs["cython"] - outs["python"]))) if "cython" in outs else 0.0
            label = "feedback" if damped else "free"
            print(f"{label:<10} {K:>4} " + " ".join(f"{times[n]:>12.4f}" for n in impls)
                  + f" {speed:>8.1f} {diff:>10.1e}")


if __name__ == "__main__":
    main()
