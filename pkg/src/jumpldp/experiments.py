"""Built-in example models and the end-to-end studies run on them.

Each builtin carries its network, the lattice starting state used at every
volume, a hand-authored cover, and a sampler for random test paths. The
studies compare exact or simulated probabilities, minimised actions and
truncated actions against each other and against closed forms.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import NumericError, ValidationError
from .exactdist import build_chain, event_probability, poisson_weights, uniformization_kernel
from .network import MassAction, ReactionNetwork, ScaledState, log_macro_rates, micro_rate, model_from_dict, model_to_dict
from .pathlab import Cover, CoverRegion, box_region, escape_lower_bound, log_rates_at
from .paths import MacroPath, fmt
from .quadrature import gauss_legendre
from .ratefn import lagrangian_rows, path_action
from .simulator import _simulate, parallel_map, trial_rng, wilson_interval

SQ2 = 1.0 / math.sqrt(2.0)
SQ5 = 1.0 / math.sqrt(5.0)


# ---------------------------------------------------------------- builtins


@dataclass(frozen=True, eq=False)
class BuiltinModel:
    id: str
    description: str
    net: ReactionNetwork
    x0: tuple  # macroscopic starting point
    start_counts: Callable[[int], tuple]  # lattice start at volume v
    cover: Optional[Cover] = None
    sample_lo: tuple = ()
    sample_hi: tuple = ()
    line: Optional[tuple] = None  # (base, direction, s_max): states confined to base + s*direction

    def start(self, v: int) -> ScaledState:
        return ScaledState(v, self.start_counts(v))

    def sample_point(self, rng: np.random.Generator) -> np.ndarray:
        if self.line is not None:
            base, direction, s_max = self.line
            return np.asarray(base, float) + rng.uniform(0.0, s_max) * np.asarray(direction, float)
        lo, hi = np.asarray(self.sample_lo, float), np.asarray(self.sample_hi, float)
        p = rng.uniform(lo, hi)
        if rng.random() < 0.25:
            p[rng.integers(len(p))] = lo[0]  # land on a face now and then
        return p

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "model": model_to_dict(self.net),
            "x0": list(self.x0),
            "cover": self.cover.to_dict() if self.cover else None,
        }


def _ma(i: dict, o: dict, k: float = 1.0) -> dict:
    return {"in": i, "out": o, "rate": {"type": "mass_action", "k": k}}


def _ex(i: dict, o: dict, formula: str) -> dict:
    return {"in": i, "out": o, "rate": {"type": "expr", "formula": formula}}


def _cover(*regions: CoverRegion) -> Cover:
    return Cover(tuple(regions), eps=0.1, eps_prime=0.1, eps_dblprime=0.25, kappa_dblprime=0.1)


def _build() -> dict:
    models = {}

    def add(m: BuiltinModel):
        models[m.id] = m

    one_d = _cover(box_region(0, [0.0], [2.0], [(0, "lo")], w=[1.0], escape=[0]))
    add(
        BuiltinModel(
            "ex1_1",
            "A -> 2A with linear rate x; starts from a single particle",
            model_from_dict({"name": "ex1_1", "species": ["A"], "reactions": [_ma({"A": 1}, {"A": 2})]}),
            (0.0,),
            lambda v: (1,),
            one_d,
            (0.0,),
            (1.5,),
        )
    )
    add(
        BuiltinModel(
            "ex2_4",
            "A -> 2A with rate exp(-1/x), vanishing faster than any power at 0",
            model_from_dict(
                {"name": "ex2_4", "species": ["A"], "reactions": [_ex({"A": 1}, {"A": 2}, "exp(-1/x[A])")]}
            ),
            (0.0,),
            lambda v: (1,),
            one_d,
            (0.0,),
            (1.5,),
        )
    )
    add(
        BuiltinModel(
            "ex2_1_dimer",
            "dimerisation 2A -> B with mass-action rate x_A^2",
            model_from_dict(
                {"name": "ex2_1_dimer", "species": ["A", "B"], "reactions": [_ma({"A": 2}, {"B": 1})]}
            ),
            (1.0, 0.0),
            lambda v: (v, 0),
            _cover(
                box_region(0, [0.0, 0.0], [0.6, 1.0], [(0, "lo")], w=[2 * SQ5, -SQ5]),
                box_region(1, [0.4, 0.0], [1.2, 1.0]),
            ),
            line=((1.0, 0.0), (-2.0, 1.0), 0.5),
        )
    )
    add(
        BuiltinModel(
            "ex2_2",
            "B <-> 2B and A <-> 2A + B",
            model_from_dict(
                {
                    "name": "ex2_2",
                    "species": ["A", "B"],
                    "reactions": [
                        _ma({"B": 1}, {"B": 2}),
                        _ma({"B": 2}, {"B": 1}),
                        _ma({"A": 1}, {"A": 2, "B": 1}),
                        _ma({"A": 2, "B": 1}, {"A": 1}),
                    ],
                }
            ),
            (0.0, 0.0),
            lambda v: (1, 0),
            _cover(
                box_region(0, [0.0, 0.0], [0.6, 3.0], [(0, "lo"), (1, "lo")], w=[SQ2, SQ2], escape=[2]),
                box_region(1, [0.0, 0.0], [3.0, 0.6], [(0, "lo"), (1, "lo")], w=[SQ2, SQ2], escape=[2]),
                box_region(2, [0.4, 0.4], [3.0, 3.0]),
            ),
            (0.0, 0.0),
            (2.0, 2.0),
        )
    )
    add(
        BuiltinModel(
            "ex2_3",
            "isomerisation A <-> B with unit rates",
            model_from_dict(
                {
                    "name": "ex2_3",
                    "species": ["A", "B"],
                    "reactions": [_ma({"A": 1}, {"B": 1}), _ma({"B": 1}, {"A": 1})],
                }
            ),
            (1.0, 0.0),
            lambda v: (v, 0),
            _cover(
                box_region(0, [0.0, 0.0], [0.6, 1.5], [(0, "lo")], w=[SQ2, -SQ2], escape=[1]),
                box_region(1, [0.0, 0.0], [1.5, 0.6], [(1, "lo")], w=[-SQ2, SQ2], escape=[0]),
            ),
            line=((1.0, 0.0), (-1.0, 1.0), 1.0),
        )
    )
    add(
        BuiltinModel(
            "ex5_2",
            "X2 produced at rate step(x1 - 1)(x1 - 1), X1 produced at rate 1",
            model_from_dict(
                {
                    "name": "ex5_2",
                    "species": ["X1", "X2"],
                    "reactions": [_ex({}, {"X2": 1}, "step(x[X1]-1)*(x[X1]-1)"), _ma({}, {"X1": 1})],
                }
            ),
            (0.0, 0.0),
            lambda v: (0, 0),
            _cover(
                box_region(0, [0.0, 0.0], [1.0, 2.0], [(1, "lo")], w=[0.0, 1.0]),
                box_region(1, [0.9, 0.0], [3.0, 3.0]),
                box_region(2, [0.0, 1.5], [3.0, 3.0]),
            ),
            (0.0, 0.0),
            (2.0, 2.0),
        )
    )
    add(
        BuiltinModel(
            "ex5_3",
            "X1 -> X2 at rate x1 exp(-1/x2), and 0 -> X1 + X2 at rate 1",
            model_from_dict(
                {
                    "name": "ex5_3",
                    "species": ["X1", "X2"],
                    "reactions": [_ex({"X1": 1}, {"X2": 1}, "x[X1]*exp(-1/x[X2])"), _ma({}, {"X1": 1, "X2": 1})],
                }
            ),
            (0.5, 0.0),
            lambda v: (v // 2, 0),
            _cover(box_region(0, [0.0, 0.0], [2.0, 2.0], [(1, "lo")], w=[SQ2, SQ2], escape=[1])),
            (0.0, 0.0),
            (1.5, 1.5),
        )
    )
    return models


BUILTINS = _build()


def get_builtin(name: str) -> BuiltinModel:
    try:
        return BUILTINS[name]
    except KeyError:
        raise ValidationError(f"unknown builtin model {name!r}; choose from {', '.join(sorted(BUILTINS))}") from None


ModelLike = Union[BuiltinModel, ReactionNetwork, str]


def as_model(model: ModelLike, x0=None) -> BuiltinModel:
    """Builtin id, builtin, or a bare network with an explicit macroscopic start."""
    if isinstance(model, str):
        m = get_builtin(model)
    elif isinstance(model, BuiltinModel):
        m = model
    else:
        if x0 is None:
            raise ValidationError("a bare network needs an initial point")
        xs = tuple(float(c) for c in np.atleast_1d(x0))
        return BuiltinModel(
            model.name,
            "user model",
            model,
            xs,
            lambda v, xs=xs: tuple(int(round(c * v)) for c in xs),
        )
    if x0 is not None:
        xs = tuple(float(c) for c in np.atleast_1d(x0))
        return BuiltinModel(
            m.id, m.description, m.net, xs, lambda v: tuple(int(round(c * v)) for c in xs), m.cover, m.sample_lo, m.sample_hi, m.line
        )
    return m


def random_path(model: BuiltinModel, rng: np.random.Generator, n_points: int = 5, T: float = 1.0) -> MacroPath:
    """Piecewise-linear path from the model's start through random points."""
    pts = [np.asarray(model.x0, float)] + [model.sample_point(rng) for _ in range(n_points - 1)]
    times = np.sort(rng.uniform(0.0, T, n_points - 2))
    return MacroPath(np.concatenate([[0.0], times, [T]]), np.array(pts))


# ---------------------------------------------------------------- results


@dataclass
class StudyResult:
    kind: str
    params: dict
    rows: list
    summary: dict = field(default_factory=dict)
    passed: Optional[bool] = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "rows": self.rows, "summary": self.summary, "passed": self.passed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=_jsonable)

    def columns(self) -> list:
        cols: list = []
        for row in self.rows:
            for c in row:
                if c not in cols:
                    cols.append(c)
        return cols

    def to_csv(self) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow([_cell(row.get(c)) for c in cols])
        return buf.getvalue()


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return fmt(float(x))
    return str(x)


def richardson(vs: Sequence[float], values: Sequence[float]) -> float:
    """Order-one extrapolation in 1/v from the last two rungs."""
    if len(vs) < 2:
        raise ValidationError("extrapolation needs at least two rungs")
    v1, v2 = float(vs[-2]), float(vs[-1])
    f1, f2 = float(values[-2]), float(values[-1])
    if v1 == v2:
        raise ValidationError("extrapolation rungs must differ")
    return (v2 * f2 - v1 * f1) / (v2 - v1)


def threshold_event(delta: float, coord: int = 0) -> Callable[[np.ndarray], bool]:
    """{x : x[coord] >= delta}, tolerant to the rounding of n/v."""
    return lambda x: bool(x[coord] >= delta - 1e-12 * max(1.0, abs(delta)))


# ---------------------------------------------------------------- marginal LDP ladder


def ldp_marginal_study(
    model: ModelLike,
    predicate: Callable[[np.ndarray], bool],
    t: float,
    v_ladder: Sequence[int],
    mode: str = "exact",
    trials: int = 10_000,
    seed: int = 0,
    cap_factor: int = 20,
    tol: float = 1e-100,
    expected: Optional[float] = None,
    expected_tol: float = 3e-3,
    jobs: Optional[int] = None,
    x0=None,
) -> StudyResult:
    """(1/v) log P[X(t) in event] along a v-ladder, extrapolated to v = infinity."""
    m = as_model(model, x0)
    if mode not in ("exact", "mc"):
        raise ValidationError("mode must be 'exact' or 'mc'")
    if not t > 0:
        raise ValidationError("t must be positive")
    vs = [int(v) for v in v_ladder]
    if not vs or any(v < 1 for v in vs):
        raise ValidationError("v ladder must contain positive integers")

    def exact_rung(v: int) -> dict:
        chain = build_chain(m.net, v, m.start(v), cap_factor * v)
        ev = event_probability(chain, t, predicate, tol=tol, bracket=True)
        p = ev.value
        return {
            "v": v,
            "p": p,
            "log_p_over_v": math.log(p) / v if p > 0 else -math.inf,
            "p_upper": ev.upper,
            "states": chain.n_live,
            "truncated": chain.truncated,
        }

    def mc_rung(v: int) -> dict:
        s = m.start(v)
        hits = 0
        for i in range(trials):
            path = _simulate(m.net, v, s, t, trial_rng(seed + v, i), 10_000_000)
            hits += bool(predicate(path(t)))
        lo, hi = wilson_interval(hits, trials)
        p = hits / trials
        return {
            "v": v,
            "p": p,
            "log_p_over_v": math.log(p) / v if hits else -math.inf,
            "hits": hits,
            "trials": trials,
            "wilson_lo": lo,
            "wilson_hi": hi,
            "zero_hits": hits == 0,
        }

    rows = parallel_map(exact_rung if mode == "exact" else mc_rung, vs, jobs)
    usable = [r for r in rows if math.isfinite(r["log_p_over_v"])]
    summary: dict = {"zero_rungs": [r["v"] for r in rows if not math.isfinite(r["log_p_over_v"])]}
    limit = None
    if len(usable) >= 2:
        limit = richardson([r["v"] for r in usable], [r["log_p_over_v"] for r in usable])
    summary["limit"] = limit
    passed = None
    if expected is not None:
        summary["expected"] = expected
        passed = limit is not None and abs(limit - expected) <= expected_tol
    params = {"model": m.id, "t": t, "v_ladder": vs, "mode": mode}
    if mode == "mc":
        params.update(trials=trials, seed=seed)
    else:
        params.update(cap_factor=cap_factor, tol=tol)
    return StudyResult("marginal", params, rows, summary, passed)


# ---------------------------------------------------------------- endpoint-pinned action minimisation


@dataclass
class MinimizeResult:
    path: MacroPath
    value: float  # discretised action with fixed quadrature, the minimised objective
    adaptive_value: float  # adaptive-quadrature action of the same path
    converged: bool
    divergent: bool
    iterations: int
    message: str

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "adaptive_value": self.adaptive_value,
            "converged": self.converged,
            "divergent": self.divergent,
            "iterations": self.iterations,
            "message": self.message,
        }


def _grad_log_rates(net: ReactionNetwork, x: np.ndarray, loglam: np.ndarray) -> np.ndarray:
    """R x d gradient of the log-rates; analytic for mass action, differences otherwise."""
    R, d = net.n_reactions, net.dim
    out = np.zeros((R, d))
    numeric = []
    for r, rx in enumerate(net.reactions):
        if not loglam[r] > -math.inf:
            continue
        if isinstance(rx.rate_law, MassAction):
            for i, g in enumerate(rx.gamma_in):
                if g:
                    out[r, i] = g / x[i]
        else:
            numeric.append(r)
    if numeric:
        for i in range(d):
            h = 1e-7 * max(1.0, abs(x[i]))
            lo = x.copy()
            hi = x.copy()
            hi[i] += h
            if x[i] - h >= 0.0:
                lo[i] -= h
                span = 2 * h
            else:
                span = h
            a = log_macro_rates(net, hi)
            b = log_macro_rates(net, lo)
            for r in numeric:
                diff = a[r] - b[r]
                out[r, i] = diff / span if math.isfinite(diff) else 0.0
    return out


def minimize_endpoint_action(
    model: ModelLike,
    x0,
    target,
    T: float = 1.0,
    grid_n: int = 100,
    quad: int = 8,
    max_iter: int = 2000,
    tol: float = 1e-10,
) -> MinimizeResult:
    """Minimise the action over piecewise-linear paths on a uniform grid with both ends pinned.

    The objective integrates l with a fixed Gauss-Legendre rule per segment.
    Its gradient comes from the envelope identities dl/dy = theta* and
    dl/dx = sum_r (lambda_r - mu*_r) grad log lambda_r, so each evaluation
    costs one Lagrangian solve per node.
    """
    m = as_model(model, x0)
    net = m.net
    if grid_n < 8:
        raise ValidationError("grid_n must be at least 8")
    if not T > 0:
        raise ValidationError("T must be positive")
    xa = np.atleast_1d(np.asarray(x0, dtype=float))
    xb = np.atleast_1d(np.asarray(target, dtype=float))
    d = net.dim
    if xa.shape != (d,) or xb.shape != (d,):
        raise ValidationError(f"endpoints must have {d} coordinates")
    gamma = net.gamma_matrix.T.astype(float)
    xi, wq = gauss_legendre(quad)
    dt = T / grid_n
    PENALTY = math.inf

    # interior nodes move in xa + span(Gamma); other directions have infinite action
    B = _stoich_basis(net)
    k = B.shape[1]
    full = k == d

    def unpack(u):
        Z = np.empty((grid_n + 1, d))
        Z[0], Z[-1] = xa, xb
        c = u.reshape(grid_n - 1, k)
        Z[1:-1] = c + xa if full else xa + c @ B.T
        return Z

    def pack(Zi):
        return (Zi - xa).ravel() if full else ((Zi - xa) @ B).ravel()

    def objective(u):
        Z = unpack(u)
        G = np.zeros_like(Z)
        total = 0.0
        for i in range(grid_n):
            y = (Z[i + 1] - Z[i]) / dt
            P = Z[i] + xi[:, None] * (Z[i + 1] - Z[i])
            if np.any(P < 0):
                return PENALTY, np.zeros_like(u)
            LL = log_rates_at(net, P)
            if np.isnan(LL).any():
                log_macro_rates(net, P[np.isnan(LL).any(axis=1)][0])  # raises the domain error
            for s, wt, p, ll, res in zip(xi, wq, P, LL, lagrangian_rows(gamma, LL, y, tol)):
                if not res.feasible or not math.isfinite(res.value):
                    return PENALTY, np.zeros_like(u)
                total += dt * wt * res.value
                dx = (np.exp(ll) - res.mu_star) @ _grad_log_rates(net, p, ll)
                th = res.theta_star
                G[i] += dt * wt * ((1 - s) * dx - th / dt)
                G[i + 1] += dt * wt * (s * dx + th / dt)
        return total, (G[1:-1] if full else G[1:-1] @ B).ravel()

    u0 = pack(np.linspace(xa, xb, grid_n + 1)[1:-1])
    coarse_iters = 0
    if grid_n >= 32:
        # coarse-to-fine start: most of the descent happens on a quarter grid
        coarse = minimize_endpoint_action(m, xa, xb, T, grid_n // 4, quad, max_iter, tol)
        coarse_iters = coarse.iterations
        t_fine = np.linspace(0.0, T, grid_n + 1)[1:-1]
        guess = np.column_stack([np.interp(t_fine, coarse.path.times, coarse.path.points[:, j]) for j in range(d)])
        if math.isfinite(objective(pack(guess))[0]):
            u0 = pack(guess)
    if not math.isfinite(objective(u0)[0]):
        raise NumericError("the straight line between the endpoints has infinite action")
    lower = np.tile(-xa, grid_n - 1) if full else None
    u, value, iters, converged, message = _descend(objective, u0, max_iter, lower)
    iters += coarse_iters
    path = MacroPath(np.linspace(0.0, T, grid_n + 1), unpack(u))
    adaptive = path_action(net, path, quad, tol)
    divergent = bool(adaptive.flags.get("growing") or adaptive.flags.get("infeasible"))
    return MinimizeResult(path, value, adaptive.value, converged, divergent, iters, message)


def _stoich_basis(net: ReactionNetwork) -> np.ndarray:
    """Orthonormal basis of the span of the jump vectors; the identity when it is everything."""
    G = net.gamma_matrix.astype(float)
    U, sv, _ = np.linalg.svd(G, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max(initial=0.0))))
    if rank == net.dim:
        return np.eye(net.dim)
    return U[:, :rank]


def _descend(
    fg, u0: np.ndarray, max_iter: int, lower: Optional[np.ndarray] = None, memory: int = 10, gtol: float = 1e-9, ftol: float = 1e-10
):
    """Limited-memory BFGS on u >= lower with a backtracking line search.

    Trial points with infinite objective (outside the feasible cone) just
    shrink the step, which the line search of L-BFGS-B does not tolerate.
    """
    lo = np.full(len(u0), -np.inf) if lower is None else np.asarray(lower, dtype=float)
    u = u0.copy()
    f, g = fg(u)
    S, Y = [], []
    for it in range(1, max_iter + 1):
        free = (u > lo) | (g < 0)
        pg = np.where(free, g, 0.0)
        if np.linalg.norm(pg, np.inf) <= gtol * (1.0 + abs(f)):
            return u, f, it - 1, True, "projected gradient below tolerance"
        q = pg.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            q += (a - (y @ q) / (y @ s)) * s
        d = np.where(free, -q, 0.0)
        if d @ pg >= 0:  # not a descent direction: restart from steepest descent
            S, Y = [], []
            d = -pg
        step = 1.0 if S else min(1.0, 1.0 / max(np.linalg.norm(d, np.inf), 1e-300) * 1e-2)
        while True:
            un = np.maximum(u + step * d, lo)
            fn, gn = fg(un)
            if math.isfinite(fn) and fn <= f + 1e-4 * (g @ (un - u)):
                break
            step *= 0.5
            if step * np.linalg.norm(d, np.inf) < 1e-16 * (1.0 + np.linalg.norm(u, np.inf)):
                return u, f, it, True, "line search reached rounding level"
        s, y = un - u, gn - g
        if y @ s > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            if len(S) > memory:
                S.pop(0)
                Y.pop(0)
        stalled = f - fn <= ftol * max(1.0, abs(f))
        u, f, g = un, fn, gn
        if stalled:
            return u, f, it, True, "no further decrease"
    return u, f, max_iter, False, "iteration cap reached"


# ---------------------------------------------------------------- divergence probe


def first_clearance_time(z: MacroPath, cover: Cover, eps: float) -> Optional[float]:
    """First t with distance to the boundary hyperplanes >= eps; exact on linear segments."""
    facets = []
    for r in cover.regions:
        for i in r.boundary:
            n = r.A[i] / np.linalg.norm(r.A[i])
            facets.append((n, r.b[i] / np.linalg.norm(r.A[i])))
    if not facets:
        return z.t0
    for k in range(z.n_segments):
        t0, t1 = float(z.times[k]), float(z.times[k + 1])
        p0, p1 = z.points[k], z.points[k + 1]
        lo, hi = 0.0, 1.0
        for n, c in facets:
            a0 = c - n @ p0
            a1 = c - n @ p1
            # need a0 + s (a1 - a0) >= eps
            if a1 == a0:
                if a0 < eps:
                    lo, hi = 1.0, 0.0
                continue
            s = (eps - a0) / (a1 - a0)
            if a1 > a0:
                lo = max(lo, s)
            else:
                hi = min(hi, s)
        if lo <= hi:
            return t0 + lo * (t1 - t0)
    return None


def divergence_probe(
    model: ModelLike,
    z: MacroPath,
    eps_ladder: Sequence[float] = tuple(2.0**-k for k in range(4, 13)),
    k_model: float = 1.0,
    quad: int = 8,
    cover: Optional[Cover] = None,
) -> StudyResult:
    """Action of z after it first clears the boundary by eps, against log(1/eps)."""
    m = as_model(model, z(z.t0))
    cover = cover or m.cover
    if cover is None:
        raise ValidationError("divergence probe needs a cover to measure boundary distance")
    eps = sorted((float(e) for e in eps_ladder), reverse=True)
    if len(eps) < 2 or eps[-1] <= 0:
        raise ValidationError("need at least two positive eps values")
    rows = []
    for e in eps:
        te = first_clearance_time(z, cover, e)
        if te is None:
            raise ValidationError(f"path never reaches distance {e} from the boundary")
        val = path_action(m.net, z.restrict(te, z.T), quad).value if te < z.T else 0.0
        rows.append({"eps": e, "log_inv_eps": -math.log(e), "t_eps": te, "action": val})
    xs = np.array([r["log_inv_eps"] for r in rows])
    ys = np.array([r["action"] for r in rows])
    finite = np.isfinite(ys)
    slope = float(np.polyfit(xs[finite], ys[finite], 1)[0]) if finite.sum() >= 2 else math.inf
    spread = float(ys[finite].max() - ys[finite].min()) if finite.any() else math.inf
    divergent = bool(not finite.all() or slope >= 0.5 * k_model)
    summary = {"slope": slope, "spread": spread, "divergent": divergent, "k_model": k_model}
    return StudyResult("diverge", {"model": m.id, "eps_ladder": eps, "quad": quad}, rows, summary, None)


# ---------------------------------------------------------------- escape events


def _pattern_probability(net: ReactionNetwork, v: int, counts, pattern: Sequence[int], t: float) -> float:
    """P[the first jumps follow ``pattern`` exactly and no other jump happens by time t].

    States 0..n walk along the pattern; any other jump falls into the sink,
    so the answer is the mass of state n at time t, found by uniformization.
    """
    n = len(pattern)
    states = [np.array(counts, dtype=np.int64)]
    for r in pattern:
        states.append(states[-1] + np.array(net.reactions[r].gamma, dtype=np.int64))
    if np.any(np.array(states) < 0):
        return 0.0
    indptr, indices, rates = [0], [], []
    for k, st in enumerate(states):
        s = ScaledState(v, tuple(int(c) for c in st))
        micro = v * np.array([micro_rate(net, r, s) for r in range(net.n_reactions)])
        total = float(micro.sum())
        good = float(micro[pattern[k]]) if k < n else 0.0
        if good > 0:
            indices.append(k + 1)
            rates.append(good)
        if total - good > 0:
            indices.append(n + 1)
            rates.append(total - good)
        indptr.append(len(indices))
    indptr_a = np.array(indptr, dtype=np.int64)
    rates_a = np.array(rates, dtype=float)
    outflow = np.bincount(np.repeat(np.arange(n + 1), np.diff(indptr_a)), rates_a, minlength=n + 1)
    q = float(outflow.max(initial=0.0))
    if q == 0.0:
        return 1.0 if n == 0 else 0.0
    p0 = np.zeros(n + 2)
    p0[0] = 1.0
    w = poisson_weights(q * t, 1e-100)
    p = uniformization_kernel(indptr_a, np.array(indices, dtype=np.int64), rates_a, q, p0, w)
    return float(p[n])


def escape_event_study(
    model: ModelLike,
    region: int,
    v_ladder: Sequence[int],
    delta: float,
    mode: str = "exact",
    trials: int = 20_000,
    seed: int = 0,
    jobs: Optional[int] = None,
) -> StudyResult:
    """Probability of running the escape sequence n_+ times and landing next to x0 + t w.

    The escape time is t = delta / 2, n_+ = floor(v t / alpha), and the landing
    ball has radius kappa'' t / 2 around the lattice start plus t w. The
    observed (1/v) log P is compared with the jump-count lower bound at the
    same t.
    """
    m = as_model(model)
    if m.cover is None:
        raise ValidationError("model has no cover")
    if not 0 <= region < len(m.cover.regions):
        raise ValidationError("region index out of range")
    reg = m.cover.regions[region]
    if not reg.escape_seq:
        raise ValidationError(f"region {region} has no escape sequence")
    if mode not in ("exact", "mc"):
        raise ValidationError("mode must be 'exact' or 'mc'")
    if not delta > 0:
        raise ValidationError("delta must be positive")
    alpha = reg.alpha(m.net)
    t_esc = delta / 2.0
    radius = m.cover.kappa_dblprime * t_esc / 2.0

    def rung(v: int) -> dict:
        s = m.start(v)
        n_plus = int(math.floor(v * t_esc / alpha))
        pattern = list(reg.escape_seq) * n_plus
        centre = s.x + t_esc * reg.w
        final = np.array(s.counts, dtype=np.int64)
        for r in pattern:
            final = final + np.array(m.net.reactions[r].gamma, dtype=np.int64)
        lands = bool(np.linalg.norm(final / v - centre) <= radius)
        bound = escape_lower_bound(m.net, reg, m.cover, m.x0, v, delta, t_delta=t_esc).value
        row = {"v": v, "n_plus": n_plus, "lands": lands, "bound": bound}
        if mode == "exact":
            p = _pattern_probability(m.net, v, s.counts, pattern, t_esc) if lands else 0.0
            row["p"] = p
        else:
            hits = 0
            for i in range(trials):
                path = _simulate(m.net, v, s, t_esc, trial_rng(seed + v, i), 10_000_000)
                ok = lands and path.n_jumps == len(pattern) and list(path.jump_reactions) == pattern
                hits += bool(ok)
            p = hits / trials
            lo, hi = wilson_interval(hits, trials)
            row.update(hits=hits, trials=trials, wilson_lo=lo, wilson_hi=hi, zero_hits=hits == 0)
            row["p"] = p
        row["log_p_over_v"] = math.log(p) / v if p > 0 else -math.inf
        row["above_bound"] = bool(row["log_p_over_v"] >= bound) if p > 0 else bool(bound == -math.inf)
        return row

    vs = [int(v) for v in v_ladder]
    rows = parallel_map(rung, vs, jobs)
    checked = [r for r in rows if r["p"] > 0 or r["bound"] == -math.inf]
    summary = {
        "t_escape": t_esc,
        "radius": radius,
        "alpha": alpha,
        "flagged_zero": [r["v"] for r in rows if r["p"] == 0 and r["bound"] > -math.inf],
        "all_above_bound": all(r["above_bound"] for r in checked),
    }
    params = {"model": m.id, "region": region, "v_ladder": vs, "delta": delta, "mode": mode}
    if mode == "mc":
        params.update(trials=trials, seed=seed)
    return StudyResult("escape-event", params, rows, summary, summary["all_above_bound"] if checked else None)
