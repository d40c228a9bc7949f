"""Compare the numba and pure-numpy hot kernels on identical inputs.

Times one evaluation of every step log-likelihood of a simulated track
(normal and gamma-radius kernels) and one chunk of simulated steps, after a
JIT warm-up, and checks that both paths return the same numbers.

Run:

    python benchmarks/bench_accel.py [--steps 500] [--repeats 3]
"""
import argparse
import statistics
import time

import numpy as np

from localgibbs import _hot
from localgibbs.habitat import RsfParams, synthetic_habitat
from localgibbs.kernels import GammaRadius, Normal
from localgibbs.likelihood import McConfig, StepSet
from localgibbs.simulator import simulate_track

if not _hot.HAVE_NUMBA:
    raise SystemExit("numba is not installed; only the numpy path is available")


def timed(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--steps", type=int, default=500)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    raster = synthetic_habitat(300, 300, seed=3)
    params = RsfParams([3, 2, 1, 0], {3})
    wm = raster.weight_map(params)
    rows = []

    track = simulate_track(args.steps, (15.0, 15.0), Normal(0.2), raster, params, seed=1)
    ss = StepSet([track], "normal", McConfig(50, 50))
    smp = ss._cache
    call = lambda f: f(wm.W, wm.x0, wm.y0, wm.cs, ss.xs, ss.ys, 0.2, smp["e_mu"], smp["e_z"])  # noqa: E731
    call(_hot.normal_loglik_nb)
    (a, _), t_nb = timed(lambda: call(_hot.normal_loglik_nb), args.repeats)
    (b, _), t_np = timed(lambda: call(_hot.normal_loglik_np), args.repeats)
    rows.append(("normal loglik, n_c=n_z=50", t_nb, t_np, np.max(np.abs(a - b))))

    kern = GammaRadius(0.7, 3.0)
    track = simulate_track(args.steps, (15.0, 15.0), kern, raster, params, seed=1)
    ss = StepSet([track], "radius", McConfig(30, 30, 30))
    smp = ss._cache
    radii, log_trunc = ss._radii(kern, 0, ss.n_steps, smp["u_r"])
    call = lambda f: f(wm.W, wm.x0, wm.y0, wm.cs, ss.xs, ss.ys, radii, log_trunc,  # noqa: E731
                       smp["u_lens"], smp["e_disc"])
    call(_hot.radius_loglik_nb)
    (a, _), t_nb = timed(lambda: call(_hot.radius_loglik_nb), args.repeats)
    (b, _), t_np = timed(lambda: call(_hot.radius_loglik_np), args.repeats)
    rows.append(("gamma-radius loglik, n_r=n_c=n_z=30", t_nb, t_np, np.max(np.abs(a - b))))

    rng = np.random.default_rng(0)
    S, K = 1024, 200
    e_mu = rng.standard_normal((S, 2))
    e_z = rng.standard_normal((S, K, 2))
    scales = np.full(S, 0.2)
    u = rng.random(S)
    start = np.array([15.0, 15.0])
    call = lambda f: f(wm.W, wm.x0, wm.y0, wm.cs, start, e_mu, e_z, scales, u)  # noqa: E731
    call(_hot.simulate_chunk_nb)
    (a, fa), t_nb = timed(lambda: call(_hot.simulate_chunk_nb), args.repeats)
    (b, fb), t_np = timed(lambda: call(_hot.simulate_chunk_np), args.repeats)
    # rows after a failed step (track left the map) are not written
    n = S if fa < 0 else fa
    diff = np.max(np.abs(a[:n] - b[:n])) if fa == fb else np.inf
    rows.append((f"simulate {S} steps, K={K}", t_nb, t_np, diff))

    print(f"{'kernel':40s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s} {'max |diff|':>11s}")
    for name, t_nb, t_np, diff in rows:
        print(f"{name:40s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:9.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
