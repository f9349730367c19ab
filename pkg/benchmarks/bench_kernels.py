"""Wall time per RK4 step, numba versus numpy backend.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256 512] [--steps 200]
"""
import argparse
import math
import time

import numpy as np

from imcfcone import capgeom, graphsurf, kernels, warpfn


def case(warp, mode, n_theta, n_psi):
    mesh = capgeom.build_mesh(2, math.pi / 3, mode, n_theta, n_psi)
    theta, psi = mesh.coords()
    u0 = 1.0 + 0.05 * np.cos(np.pi * theta / mesh.theta0)
    return mesh, graphsurf.GraphState.from_u(mesh, warp, u0)


def time_steps(state, backend, steps):
    params = state.warp.kernel_params()
    dev = state.dev.copy()
    log = np.zeros(steps + 1)
    # warm-up covers compilation or cache loading
    kernels.advance(state.offset, dev.copy(), 0.0, 1e-6, state.mesh, params, kernels.RK4,
                    0.8, 1e-2, 10, np.zeros(16), 0, backend=backend)
    t0 = time.perf_counter()
    _, t, st, *_ = kernels.advance(state.offset, dev, 0.0, math.inf, state.mesh, params,
                                   kernels.RK4, 0.8, 1e-2, steps, log, 0, backend=backend)
    elapsed = time.perf_counter() - t0
    return elapsed / steps, dev


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args(argv)
    print(f"{'warp':14s} {'mode':7s} {'nodes':>7s} {'numba us':>10s} {'numpy us':>10s} "
          f"{'speedup':>8s} {'max diff':>10s}")
    for warp in (warpfn.euclidean(), warpfn.hyperboloidal()):
        for mode in (capgeom.AXISYM, capgeom.FULL2D):
            for n in args.sizes:
                n_theta, n_psi = (n, 1) if mode == capgeom.AXISYM else (n // 4, n // 8)
                _, state = case(warp, mode, n_theta, n_psi)
                t_nb, d_nb = time_steps(state, "numba", args.steps)
                t_np, d_np = time_steps(state, "numpy", args.steps)
                diff = float(np.max(np.abs(d_nb - d_np)))
                print(f"{warp.name:14s} {mode:7s} {state.mesh.node_count:7d} {t_nb * 1e6:10.1f} "
                      f"{t_np * 1e6:10.1f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
