"""The ten acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line with the measured
numbers and runtime; the lines are repeated in the terminal summary.
"""

import functools
import math
import time

import numpy as np

from conftest import ACCEPTANCE, ex, make
from jumpldp.exactdist import log_yule_tail
from jumpldp.experiments import (
    BUILTINS,
    divergence_probe,
    get_builtin,
    ldp_marginal_study,
    minimize_endpoint_action,
    random_path,
    threshold_event,
)
from jumpldp.network import fluid_limit, macro_rates
from jumpldp.paths import MacroPath
from jumpldp.pathlab import box_region, build_shifted_path, cone_obstruction, decay_exponent, escape_cost, fast_set, verify_breakup
from jumpldp.ratefn import InducedFlux, dual_objective, duality_check, flux_action, path_action
from jumpldp.simulator import fluid_gap, tube_probability_mc
from test_ratefn import random_instance

EX11_LIMIT = 0.5 * math.log(1 - math.exp(-1.0))


def criterion(n: int, title: str, budget: float = math.inf):
    """Run the check, record a PASS/FAIL line, fail the test on FAIL."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper():
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:
                ok, detail = False, f"raised {type(exc).__name__}: {exc}"
                raise_it = exc
            else:
                raise_it = None
            elapsed = time.perf_counter() - t0
            if elapsed >= budget:
                ok = False
                detail += f"; over the {budget:g} s budget"
            line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}: {detail} [{elapsed:.1f} s]"
            print(line)
            ACCEPTANCE.append(line)
            if raise_it is not None:
                raise raise_it
            assert ok, line

        return wrapper

    return deco


def _ex11_ladder():
    return ldp_marginal_study("ex1_1", threshold_event(0.5), 1.0, [50, 100, 200, 400], cap_factor=20)


@criterion(1, "ex1_1 marginal ladder", budget=30)
def test_criterion_01_marginal_limit():
    res = _ex11_ladder()
    worst = max(abs(r["log_p_over_v"] - log_yule_tail(1.0, math.ceil(0.5 * r["v"])) / r["v"]) for r in res.rows)
    limit = res.summary["limit"]
    ok = worst <= 1e-9 and abs(limit - EX11_LIMIT) <= 3e-3
    return ok, f"identity error {worst:.2e}, limit {limit:.7f} vs {EX11_LIMIT:.7f}"


@criterion(2, "variational match", budget=60)
def test_criterion_02_minimizer():
    res = minimize_endpoint_action("ex1_1", [0.0], [0.5], 1.0, grid_n=100)
    limit = _ex11_ladder().summary["limit"]
    ok = abs(res.value + limit) <= 1e-2 and math.isfinite(res.value)
    return ok, f"min action {res.value:.6f} vs -limit {-limit:.6f}"


@criterion(3, "duality suite", budget=120)
def test_criterion_03_duality():
    rng = np.random.default_rng(20240601)
    worst_gap, worst_grad = 0.0, 0.0
    for _ in range(100):
        net, x = random_instance(rng)
        assert net.dim <= 2 and net.n_reactions <= 3
        y = net.gamma_matrix @ rng.uniform(0, 2, net.n_reactions)
        worst_gap = max(worst_gap, duality_check(net, x, y).gap)
        G = net.gamma_matrix.T.astype(float)
        lam = macro_rates(net, x)
        theta = rng.normal(0, 1, net.dim)
        _, g = dual_objective(G, lam, y, theta)
        h = 1e-6
        fd = np.array(
            [(dual_objective(G, lam, y, theta + h * e)[0] - dual_objective(G, lam, y, theta - h * e)[0]) / (2 * h) for e in np.eye(net.dim)]
        )
        worst_grad = max(worst_grad, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-300)))
    ok = worst_gap < 1e-4 and worst_grad < 1e-5
    return ok, f"worst gap {worst_gap:.2e}, worst gradient rel. error {worst_grad:.2e}"


@criterion(4, "fluid limit")
def test_criterion_04_fluid_limit():
    net = get_builtin("ex2_3").net
    small = fluid_gap(net, 100, [1.0, 0.0], 1.0, range(50))
    large = fluid_gap(net, 10_000, [1.0, 0.0], 1.0, range(50))
    v = 200
    z = fluid_limit(net, [1.0, 0.0], 1.0, 2000)
    est = tube_probability_mc(net, v, [1.0, 0.0], z, 0.15, 2000, 7)
    rate = est.log_estimate
    ok = large.median < small.median and rate is not None and abs(rate) < 0.05
    return ok, f"median gap {small.median:.4f} (v=1e2) -> {large.median:.4f} (v=1e4), tube (1/v) log p = {rate}"


@criterion(5, "shifted-path geometry")
def test_criterion_05_breakup_suite():
    rng = np.random.default_rng(5)
    checked, failures = 0, []
    for name in sorted(BUILTINS):
        m = get_builtin(name)
        for _ in range(20):
            z = random_path(m, rng)
            for delta in (1e-1, 1e-2, 1e-3):
                plan, zd = build_shifted_path(z, m.cover, delta)
                rep = verify_breakup(z, zd, plan, m.cover)
                checked += 1
                if not (rep.sup_ok and rep.clearance_ok):
                    failures.append((name, delta))
    return not failures, f"{checked} path/delta pairs, {len(failures)} failures {failures[:3]}"


@criterion(6, "escape-cost limit")
def test_criterion_06_escape_cost():
    ladder = (1e-1, 1e-2, 1e-3, 1e-4)
    a = [escape_cost(get_builtin("ex1_1").net, [0.0], [1.0], td).value for td in ladder]
    b = [escape_cost(get_builtin("ex2_4").net, [0.0], [1.0], td).value for td in ladder]
    dec = all(q < p for p, q in zip(a, a[1:]))
    inc = all(q > p for p, q in zip(b, b[1:]))
    ok = dec and a[-1] < 1e-2 and inc and b[-1] > 10
    return ok, f"ex1_1 {a[0]:.4f} -> {a[-1]:.2e}, ex2_4 {b[0]:.3f} -> {b[-1]:.3f}"


@criterion(7, "decay/FAST consistency")
def test_criterion_07_decay_fast():
    reg = box_region(0, [0.0], [2.0], [(0, "lo")], w=[1.0])
    lin = decay_exponent(get_builtin("ex1_1").net, 0, reg)
    e2 = make(["A"], [ex({"A": 1}, {"A": 2}, "exp(-2/x[A])")])
    exp_rep = decay_exponent(e2, 0, reg)
    fast = fast_set(e2, reg)
    limit = fast.limits[0]
    ok = lin.condition[0.5] and not any(exp_rep.condition[a] for a in (0.25, 0.5, 0.9)) and fast.fast == (0,)
    ok = ok and abs(limit + 2.0) <= 0.1
    return ok, f"linear holds at 0.5: {lin.condition[0.5]}, exp fails all: {not any(exp_rep.condition.values())}, FAST limit {limit:.4f}"


@criterion(8, "divergence probe")
def test_criterion_08_divergence():
    z = MacroPath.linear([0.0], [1.0], 1.0)
    eps = tuple(2.0**-k for k in range(4, 13))
    d = divergence_probe("ex2_4", z, eps, k_model=1.0)
    c = divergence_probe("ex1_1", z, eps)
    ok = abs(d.summary["slope"] - 1.0) <= 0.15 and c.summary["spread"] < 0.5
    return ok, f"ex2_4 slope {d.summary['slope']:.4f}, ex1_1 spread {c.summary['spread']:.4f}"


@criterion(9, "cone obstruction")
def test_criterion_09_cone():
    m53, m24, m52 = get_builtin("ex5_3"), get_builtin("ex2_4"), get_builtin("ex5_2")
    a = cone_obstruction(m53.net, m53.cover.regions[0], [0.5, 0.0], fast=[0]).obstructed
    b = cone_obstruction(m24.net, m24.cover.regions[0], [0.0], fast=[0]).obstructed
    c = cone_obstruction(m52.net, m52.cover.regions[0], [0.0, 0.0], fast=[0]).obstructed
    ok = (not a) and b and (not c)
    return ok, f"ex5_3 obstructed={a}, ex2_4 obstructed={b}, ex5_2 obstructed={c}"


@criterion(10, "flux contraction")
def test_criterion_10_flux_contraction():
    m = get_builtin("ex2_3")
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(20):
        z = random_path(m, rng)
        a = path_action(m.net, z).value
        b = flux_action(m.net, z, InducedFlux(m.net, z)).value
        assert math.isfinite(a)
        worst = max(worst, abs(a - b))
    return worst <= 1e-6, f"worst |J - I| = {worst:.2e} over 20 paths"
