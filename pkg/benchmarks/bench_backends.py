#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two hot paths of the toolkit -- the fixed-step plant integration
and the per-cycle box-QP solve -- plus one full closed-loop scenario per
backend.  Run after building the extension:

    python benchmarks/bench_backends.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, repeats=5):
    best = np.inf
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def bench_kernels(mod, label):
    mlink = np.array([1.0])
    b = np.array([0.598])
    k = np.array([362.0])
    gamp = np.array([0.0])
    x = np.array([0.0, 0.0, 0.1, 0.0])
    tau_m = np.array([10.0])
    tau_ext = np.array([0.0])
    steps = 50_000

    t_rk4 = time_call(lambda: mod.rk4_span(mlink, b, k, gamp, x, tau_m, tau_ext, 1e-4, steps))
    per_step = t_rk4 / steps * 1e9

    rng = np.random.default_rng(0)
    a = rng.normal(size=(20, 20))
    H = np.ascontiguousarray(a @ a.T + 0.5 * np.eye(20))
    f = rng.normal(size=20)
    lb, ub = -np.ones(20), np.ones(20)
    u0 = np.zeros(20)
    n_qp = 200

    def qp_loop():
        for _ in range(n_qp):
            mod.box_qp(H, f, lb, ub, u0, 1e-8, 500, 0.0)

    t_qp = time_call(qp_loop, repeats=3) / n_qp * 1e6

    print(f"{label:7s}  rk4: {per_step:8.1f} ns/step   box_qp(p=20): {t_qp:8.1f} us/solve")
    return per_step, t_qp


def bench_closed_loop(env_value, label):
    code = (
        "import time, flexmpc\n"
        "from flexmpc.scenarios import ScenarioConfig, run_scenario\n"
        "from flexmpc.simulate import SimConfig\n"
        "cfg = ScenarioConfig(kind='step', controller='mpc-fast',\n"
        "                     sim=SimConfig(T_end=3.0, record_decimation=10))\n"
        "tic = time.perf_counter(); run_scenario(cfg)\n"
        "print(f'{flexmpc.BACKEND}: {time.perf_counter()-tic:.2f} s for a 3 s mpc-fast step')\n"
    )
    env = dict(os.environ)
    if env_value is None:
        env.pop("FLEXMPC_PURE_PYTHON", None)
    else:
        env["FLEXMPC_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True)
    sys.stdout.write(f"{label:7s}  closed loop: {out.stdout.strip() or out.stderr.strip()}\n")


def main():
    from flexmpc import _kernels_py

    print("== kernel microbenchmarks ==")
    py_rk4, py_qp = bench_kernels(_kernels_py, "python")
    try:
        from flexmpc import _kernels
    except ImportError:
        print("compiled extension not built; fallback only")
        return
    cy_rk4, cy_qp = bench_kernels(_kernels, "cython")
    print(f"speedup  rk4: {py_rk4 / cy_rk4:6.1f}x          box_qp: {py_qp / cy_qp:6.1f}x")
    print("== end-to-end ==")
    bench_closed_loop("1", "python")
    bench_closed_loop(None, "cython")


if __name__ == "__main__":
    main()
