"""Time the compiled kernels against the pure-Python fallback.

Each backend runs in its own interpreter because the choice is made at
import time from ``JUMPLDP_DISABLE_NUMBA``. Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from jumpldp import _accel
from jumpldp.exactdist import build_chain, transient_distribution
from jumpldp.experiments import get_builtin
from jumpldp.network import fluid_limit
from jumpldp.pathlab import log_rates_at
from jumpldp.ratefn import lagrangian_rows
from jumpldp.simulator import ssa_simulate

repeat = int(sys.argv[1])
iso = get_builtin("ex2_3").net
e53 = get_builtin("ex5_3").net
gamma = e53.gamma_matrix.T.astype(float)
X = np.random.default_rng(0).uniform(0.05, 1.0, size=(2000, 2))
chain = build_chain(iso, 200, [1.0, 0.0])

cases = {
    "ssa ex2_3 v=1000 T=1": lambda: ssa_simulate(iso, 1000, [1.0, 0.0], 1.0, 3),
    "uniformization ex2_3 v=200 t=1": lambda: transient_distribution(chain, 1.0),
    "log rates ex5_3 2000 points": lambda: log_rates_at(e53, X),
    "lagrangian rows ex5_3 200 points": lambda: lagrangian_rows(gamma, log_rates_at(e53, X[:200]), np.array([0.1, 0.3])),
    "fluid ex2_3 5000 steps": lambda: fluid_limit(iso, [1.0, 0.0], 1.0, 5000),
}
out = {"backend": _accel.backend(), "times": {}}
for name, fn in cases.items():
    fn()  # warm-up, includes compilation
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    out["times"][name] = best
print(json.dumps(out))
"""


def run_backend(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env.pop("JUMPLDP_DISABLE_NUMBA", None)
    if disable:
        env["JUMPLDP_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions per case (best is kept)")
    args = ap.parse_args()
    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    width = max(len(k) for k in fast["times"])
    print(f"{'kernel':<{width}}  {fast['backend']:>10}  {slow['backend']:>10}  speedup")
    for name, t_fast in fast["times"].items():
        t_slow = slow["times"][name]
        print(f"{name:<{width}}  {t_fast:10.4f}  {t_slow:10.4f}  {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
