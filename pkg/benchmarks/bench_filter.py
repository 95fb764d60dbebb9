#!/usr/bin/env python3
"""Benchmark the filter kernels: numba-compiled vs pure-numpy fallback.

The numpy lane is selected with STATCLIM_DISABLE_JIT=1; this script runs
itself once per lane in a subprocess so both share one terminal report.

Usage: python benchmarks/bench_filter.py [--n-years N] [--repeat R]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def run_lane(args) -> dict:
    import numpy as np

    from statclim import kernel_backend, presets, ssm
    from statclim.params import Constants
    from statclim.simulate import simulate_dataset

    consts = Constants()
    params = presets.fitted_params()
    cov = presets.synthetic_covariates(2022 - args.n_years + 1, 2022)
    x0 = presets.spinup_state(params, consts, end_year=int(cov.years[0]))
    rng = np.random.Generator(np.random.Philox(key=[12345, 0]))
    _, y = simulate_dataset(params, cov.e_total, cov.f_ex, x0, rng, consts)

    # warm-up triggers JIT compilation on the numba lane
    status, _, ll = ssm.log_likelihood_raw(params, y, cov.e_total, cov.f_ex,
                                           consts)
    assert status == 0
    t0 = time.perf_counter()
    for _ in range(args.repeat):
        ssm.log_likelihood_raw(params, y, cov.e_total, cov.f_ex, consts)
    per_loglik = (time.perf_counter() - t0) / args.repeat

    filt = ssm.ekf_filter(params, (cov.years, y), cov, consts)
    t0 = time.perf_counter()
    n_full = max(1, args.repeat // 4)
    for _ in range(n_full):
        ssm.ekf_filter(params, (cov.years, y), cov, consts)
    per_filter = (time.perf_counter() - t0) / n_full

    return {"backend": kernel_backend(), "loglik": ll,
            "filter_loglik": filt.loglik, "per_loglik_ms": per_loglik * 1e3,
            "per_filter_ms": per_filter * 1e3}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-years", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--lane", choices=["numba", "numpy"], default=None,
                        help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.lane is not None:
        print(json.dumps(run_lane(args)))
        return 0

    results = {}
    for lane in ("numba", "numpy"):
        env = dict(os.environ)
        env["STATCLIM_DISABLE_JIT"] = "0" if lane == "numba" else "1"
        out = subprocess.run(
            [sys.executable, __file__, "--lane", lane,
             "--n-years", str(args.n_years), "--repeat", str(args.repeat)],
            env=env, capture_output=True, text=True, check=True)
        results[lane] = json.loads(out.stdout.strip().splitlines()[-1])

    for lane, r in results.items():
        print(f"{lane:>6}: loglik pass {r['per_loglik_ms']:8.3f} ms   "
              f"full filter {r['per_filter_ms']:8.3f} ms   "
              f"(backend reported: {r['backend']})")
    dll = abs(results["numba"]["loglik"] - results["numpy"]["loglik"])
    rel = dll / abs(results["numpy"]["loglik"])
    speedup = (results["numpy"]["per_loglik_ms"]
               / results["numba"]["per_loglik_ms"])
    print(f"loglik agreement: |diff| = {dll:.3e} (rel {rel:.3e})")
    print(f"speedup (loglik pass): {speedup:.1f}x")
    if rel > 1e-9:
        print("WARNING: lanes disagree beyond 1e-9 relative", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
