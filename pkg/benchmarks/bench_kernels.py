"""Compare the compiled kernels with the numpy fallback.

Times backward characteristics in the bump field and one retarded-cone
evaluation with each backend, and checks that both give the same numbers.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from vmscatter import _backend
from vmscatter.fields import BumpField, BumpSource, QuadConfig, eval_T
from vmscatter.flow import default_initial_data, evaluate_g


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000, help="number of characteristics")
    ap.add_argument("--t", type=float, default=50.0, help="characteristic length")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "compiled" not in _backend.available():
        raise SystemExit("compiled kernels are not built; run pip install -e . --no-build-isolation")

    data = default_initial_data()
    sd = data.species[0]
    field = BumpField(0.05)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.2, 1.2, size=(args.n, 3))
    v = np.array([0.3, 0.0, 0.0]) + rng.uniform(-0.6, 0.6, size=(args.n, 3))
    src = BumpSource(data, "free")
    t_cone, x_cone = 25.0, np.array([5.0, 2.0, 0.0])
    quad = QuadConfig(rtol=1.0, max_levels=2)

    rows = []
    res = {}
    for name in ("compiled", "python"):
        tg, g = best_of(lambda: evaluate_g(args.t, x, v, field, sd, backend=name), args.repeat)
        tc, c = best_of(lambda: eval_T(src, t_cone, x_cone, quad, backend=name), args.repeat)
        res[name] = (g, c.E)
        rows.append((name, tg, tc))
    print(f"{'backend':10s} {'characteristics (s)':>20s} {'cone quadrature (s)':>20s}")
    for name, tg, tc in rows:
        print(f"{name:10s} {tg:20.4f} {tc:20.4f}")
    print(f"speedup    {rows[1][1] / rows[0][1]:20.1f} {rows[1][2] / rows[0][2]:20.1f}")
    dg = float(np.max(np.abs(res["compiled"][0] - res["python"][0])))
    dc = float(np.max(np.abs(res["compiled"][1] - res["python"][1])))
    print(f"max |g_compiled - g_python| = {dg:.2e}, max |E_T difference| = {dc:.2e}")


if __name__ == "__main__":
    main()
