"""Boundary-escape geometry and the auditors for escape and decay conditions.

Regions are convex polytopes ``{x : A x <= b}``; some of their facets are
declared to be boundary facets, and distances to the degenerate set are
measured to those facets' hyperplanes. Path computations are exact on
piecewise-linear paths: every quantity checked here is convex or concave
between breakpoints, so extrema sit at breakpoints.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._accel import njit
from .errors import ValidationError
from .lp import feasible_nonneg
from .network import (
    MassAction,
    ReactionNetwork,
    ScaledState,
    audit_aleph,
    log_macro_rates,
    log_macro_rates_into,
    micro_rate,
)
from .paths import MacroPath
from .quadrature import integrate
from .ratefn import ActionReport, path_action

TOL = 1e-12
DEFAULT_RHO = tuple(2.0**-k for k in range(4, 21))
MAX_LOG2 = 14


# ---------------------------------------------------------------- cover


@dataclass(frozen=True, eq=False)
class CoverRegion:
    id: int
    A: np.ndarray  # m x d, region is A x <= b
    b: np.ndarray
    boundary: tuple = ()  # indices of half-spaces lying on the degenerate set
    w: np.ndarray = None  # unit escape direction, zero for interior regions
    kappa: float = 0.5
    escape_seq: tuple = ()

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape[0] != b.shape[0]:
            raise ValidationError(f"region {self.id}: half-space count mismatch")
        w = np.zeros(A.shape[1]) if self.w is None else np.atleast_1d(np.asarray(self.w, dtype=float))
        if w.shape != (A.shape[1],):
            raise ValidationError(f"region {self.id}: w has the wrong dimension")
        nw = float(np.linalg.norm(w))
        if nw != 0.0 and abs(nw - 1.0) > 1e-12:
            raise ValidationError(f"region {self.id}: w must be a unit vector or zero")
        if not 0.0 < self.kappa < 1.0:
            raise ValidationError(f"region {self.id}: kappa must lie in (0, 1)")
        bd = tuple(int(i) for i in self.boundary)
        if any(i < 0 or i >= A.shape[0] for i in bd):
            raise ValidationError(f"region {self.id}: boundary index out of range")
        if bd and nw == 0.0:
            raise ValidationError(f"region {self.id}: boundary regions need an escape direction")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "boundary", bd)
        object.__setattr__(self, "escape_seq", tuple(int(r) for r in self.escape_seq))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    @property
    def is_boundary(self) -> bool:
        return bool(self.boundary)

    def contains(self, x, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all(X @ self.A.T <= self.b + tol * (1.0 + np.abs(self.b)), axis=1)

    def facet_distances(self, x) -> np.ndarray:
        """Signed distances to the hyperplanes of the boundary facets, one column each."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        if not self.boundary:
            return np.full((len(X), 0), np.inf)
        Ab = self.A[list(self.boundary)]
        nrm = np.linalg.norm(Ab, axis=1)
        return (self.b[list(self.boundary)] - X @ Ab.T) / nrm

    def boundary_distance(self, x) -> np.ndarray:
        D = self.facet_distances(x)
        return D.min(axis=1) if D.shape[1] else np.full(len(D), np.inf)

    def alpha(self, net: ReactionNetwork) -> float:
        """alpha with sum of the escape jumps = alpha * w; 0 without an escape sequence."""
        if not self.escape_seq:
            return 0.0
        total = np.sum([net.reactions[r].gamma for r in self.escape_seq], axis=0).astype(float)
        a = float(total @ self.w)
        if a <= 0 or np.linalg.norm(total - a * self.w) > 1e-12 * max(1.0, float(np.linalg.norm(total))):
            raise ValidationError(f"region {self.id}: escape jumps do not add up to a positive multiple of w")
        return a

    @functools.cached_property
    def bbox(self) -> np.ndarray:
        from scipy.optimize import linprog

        d = self.dim
        box = np.empty((d, 2))
        for i in range(d):
            for j, sign in enumerate((1.0, -1.0)):
                c = np.zeros(d)
                c[i] = sign
                res = linprog(c, A_ub=self.A, b_ub=self.b, bounds=[(None, None)] * d, method="highs")
                if res.status != 0:
                    raise ValidationError(f"region {self.id} is empty or unbounded")
                box[i, j] = sign * res.fun
        return box

    def to_dict(self) -> dict:
        return {
            "halfspaces": [{"a": a.tolist(), "b": float(b)} for a, b in zip(self.A, self.b)],
            "boundary": list(self.boundary),
            "w": self.w.tolist(),
            "kappa": self.kappa,
            "escape": list(self.escape_seq),
        }


@dataclass(frozen=True, eq=False)
class Cover:
    regions: tuple
    eps: float = 0.1
    eps_prime: float = 0.1
    eps_dblprime: float = 0.1
    kappa_dblprime: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        if not self.regions:
            raise ValidationError("cover needs at least one region")
        if len({r.dim for r in self.regions}) != 1:
            raise ValidationError("cover regions have different dimensions")
        for name in ("eps", "eps_prime", "eps_dblprime", "kappa_dblprime"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not self.kappa_dblprime < self.kappa_minus / 3.0:
            raise ValidationError("kappa_dblprime must be below kappa_minus / 3")

    @property
    def dim(self) -> int:
        return self.regions[0].dim

    @property
    def kappa_minus(self) -> float:
        bd = [r.kappa for r in self.regions if r.is_boundary]
        return min(bd) if bd else min(r.kappa for r in self.regions)

    def boundary_distance(self, x) -> np.ndarray:
        """Distance to the union of all boundary hyperplanes (conservative for facets)."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        cols = [r.facet_distances(X) for r in self.regions if r.is_boundary]
        if not cols:
            return np.full(len(X), np.inf)
        return np.hstack(cols).min(axis=1)

    def covered(self, x, tol: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return np.any([r.contains(X, tol) for r in self.regions], axis=0)

    def validate_for(self, net: ReactionNetwork) -> None:
        if self.dim != net.dim:
            raise ValidationError("cover dimension differs from the network")
        for r in self.regions:
            if any(i >= net.n_reactions for i in r.escape_seq):
                raise ValidationError(f"region {r.id}: escape reaction index out of range")
            r.alpha(net)

    def to_dict(self) -> dict:
        return {
            "regions": [r.to_dict() for r in self.regions],
            "eps": self.eps,
            "eps_prime": self.eps_prime,
            "eps_dblprime": self.eps_dblprime,
            "kappa_dblprime": self.kappa_dblprime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def cover_from_dict(doc: dict) -> Cover:
    try:
        regions = []
        for i, rd in enumerate(doc["regions"]):
            hs = rd["halfspaces"]
            regions.append(
                CoverRegion(
                    i,
                    [h["a"] for h in hs],
                    [h["b"] for h in hs],
                    tuple(rd.get("boundary", ())),
                    rd.get("w"),
                    float(rd.get("kappa", 0.5)),
                    tuple(rd.get("escape", ())),
                )
            )
        return Cover(
            tuple(regions),
            float(doc.get("eps", 0.1)),
            float(doc.get("eps_prime", 0.1)),
            float(doc.get("eps_dblprime", 0.1)),
            float(doc.get("kappa_dblprime", 0.1)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed cover document: {exc}") from None


def parse_cover(text: str) -> Cover:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"cover is not valid JSON (line {exc.lineno}, column {exc.colno})") from None
    return cover_from_dict(doc)


def box_region(id: int, lo, hi, boundary_faces: Sequence[tuple] = (), w=None, kappa: float = 0.5, escape=()) -> CoverRegion:
    """Axis-aligned box; ``boundary_faces`` lists ``(axis, "lo"|"hi")`` pairs."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = len(lo)
    A, b, names = [], [], {}
    for i in range(d):
        e = np.zeros(d)
        e[i] = -1.0
        names[(i, "lo")] = len(A)
        A.append(e)
        b.append(-lo[i])
        names[(i, "hi")] = len(A)
        A.append(-e)
        b.append(hi[i])
    bd = tuple(names[f] for f in boundary_faces)
    return CoverRegion(id, np.array(A), np.array(b), bd, w, kappa, tuple(escape))


# ---------------------------------------------------------------- modulus of continuity


@dataclass(frozen=True)
class Modulus:
    """Sampled modulus of continuity of a piecewise-linear path."""

    z: MacroPath
    h: np.ndarray
    omega: np.ndarray

    def gap(self, h: float) -> float:
        """max over s of ||z(s + h) - z(s)||; exact for piecewise-linear z."""
        z = self.z
        span = z.T - z.t0
        if h <= 0:
            return 0.0
        if h >= span:
            h = span
        s = np.concatenate([z.times, z.times - h])
        s = s[(s >= z.t0) & (s <= z.T - h)]
        s = np.append(s, [z.t0, z.T - h])
        return float(np.linalg.norm(z(s + h) - z(s), axis=1).max())

    def __call__(self, h: float) -> float:
        """omega(h) on the sampling grid (monotone envelope of :meth:`gap`)."""
        j = int(np.searchsorted(self.h, h, side="right")) - 1
        base = float(self.omega[j]) if j >= 0 else 0.0
        return max(base, self.gap(h))

    def inverse(self, delta: float) -> float:
        """sup{h : omega(h) <= delta}."""
        span = self.z.T - self.z.t0
        if self.omega[-1] <= delta:
            return span
        j = int(np.argmax(self.omega > delta))
        lo = float(self.h[j - 1]) if j > 0 else 0.0
        hi = float(self.h[j])
        floor = float(self.omega[j - 1]) if j > 0 else 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if max(floor, self.gap(mid)) <= delta:
                lo = mid
            else:
                hi = mid
        return lo


def modulus_of_continuity(z: MacroPath, resolution: int = 1024) -> Modulus:
    if resolution < 1:
        raise ValidationError("resolution must be positive")
    span = z.T - z.t0
    if span <= 0:
        return Modulus(z, np.array([0.0]), np.array([0.0]))
    h = span * np.arange(1, resolution + 1) / resolution
    m = Modulus(z, h, np.zeros(resolution))
    g = np.array([m.gap(x) for x in h])
    return Modulus(z, h, np.maximum.accumulate(g))


# ---------------------------------------------------------------- segmentation


@dataclass(frozen=True)
class Segmentation:
    taus: np.ndarray  # tau_0 < ... < tau_J
    region_ids: tuple

    @property
    def J(self) -> int:
        return len(self.region_ids)


def _reach(region: CoverRegion, z: MacroPath, tau: float) -> Optional[float]:
    """Largest t >= tau with z([tau, t]) inside ``region``; None if z(tau) is outside."""
    if not region.contains(z(tau), TOL)[0]:
        return None
    times, pts, slopes = z.times, z.points, z.slopes()
    i = max(0, int(np.searchsorted(times, tau, side="right")) - 1)
    tol = TOL * (1.0 + np.abs(region.b))
    for seg in range(i, z.n_segments):
        t_a = max(tau, times[seg])
        t_b = times[seg + 1]
        if t_b <= t_a:
            continue
        p = pts[seg] + (t_a - times[seg]) * slopes[seg]
        f = region.A @ p - region.b
        g = region.A @ slopes[seg]
        exit_t = t_b
        for fi, gi, ti in zip(f, g, tol):
            if gi > 0 and fi + gi * (t_b - t_a) > ti:
                exit_t = min(exit_t, t_a + max(0.0, -fi) / gi)
        if exit_t < t_b:
            return float(exit_t)
    return float(z.T)


def segment_path(z: MacroPath, cover: Cover) -> Segmentation:
    """Fewest consecutive regions covering z, greedily taking the furthest reach (ties: lowest id)."""
    if z.dim != cover.dim:
        raise ValidationError("path dimension differs from the cover")
    taus = [z.t0]
    ids = []
    tau = z.t0
    while True:
        best, best_id = None, None
        for reg in cover.regions:
            r = _reach(reg, z, tau)
            if r is not None and (best is None or r > best):
                best, best_id = r, reg.id
        if best is None or (best <= tau and tau < z.T):
            raise ValidationError(f"path leaves the cover at t={tau!r}, x={z(tau).tolist()}")
        ids.append(best_id)
        taus.append(best)
        tau = best
        if tau >= z.T:
            break
    taus[-1] = z.T
    return Segmentation(np.array(taus), tuple(ids))


# ---------------------------------------------------------------- shifted path


class ShiftExitError(ValidationError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True, eq=False)
class ShiftPlan:
    delta: float
    xi: float
    beta: float
    t_delta: float
    transition_times: np.ndarray
    region_ids: tuple
    cum_shifts: np.ndarray  # Delta_0 = 0, ..., Delta_J
    delta_prime: float
    delta_dblprime: float
    omega_inv: float
    displacements: np.ndarray  # S_0 = 0, ..., S_J: accumulated spatial shift
    extended: MacroPath  # the shifted path before truncation to [t0, T]

    @property
    def J(self) -> int:
        return len(self.region_ids)

    @property
    def truncated(self) -> bool:
        return bool(self.extended.T > self.transition_times[-1])

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "xi": self.xi,
            "beta": self.beta,
            "t_delta": self.t_delta,
            "transition_times": self.transition_times.tolist(),
            "region_ids": list(self.region_ids),
            "cum_shifts": self.cum_shifts.tolist(),
            "delta_prime": self.delta_prime,
            "delta_dblprime": self.delta_dblprime,
            "omega_inv": self.omega_inv,
            "J": self.J,
            "horizon_truncated": self.truncated,
        }


def shift_constants(cover: Cover, J: int, delta: float, omega_inv: float) -> tuple[float, float, float]:
    """(xi, t_delta, beta) for a path split into J pieces."""
    kpp = cover.kappa_dblprime
    xi = min(1.0, (kpp / 3.0) ** (J + 1) / 3.0, cover.eps)
    t_delta = xi * min(delta, omega_inv) / 6.0
    return xi, t_delta, 3.0 / kpp


def build_shifted_path(z: MacroPath, cover: Cover, delta: float, resolution: int = 1024) -> tuple[ShiftPlan, MacroPath]:
    """Shift ``z`` away from the boundary: an initial escape of length t_delta along
    the first region's direction, then at each region change a further shift of
    length beta^k t_delta along that region's direction, the remaining path
    being carried along. The result is truncated back to the horizon of ``z``.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    seg = segment_path(z, cover)
    J = seg.J
    omega_inv = modulus_of_continuity(z, resolution).inverse(delta)
    xi, t_delta, beta = shift_constants(cover, J, delta, omega_inv)
    lengths = [beta**k * t_delta for k in range(J)]
    cum = np.zeros(J + 1)
    for k in range(J):
        cum[k + 1] = cum[k] + lengths[k]
    taus = seg.taus
    S = np.zeros((J + 1, z.dim))
    times, pts = [], []

    def add(t, p):
        if times and t == times[-1] and np.array_equal(p, pts[-1]):
            return
        times.append(float(t))
        pts.append(np.asarray(p, dtype=float))

    for k in range(J):
        w = cover.regions[seg.region_ids[k]].w
        base = z(taus[k])
        add(taus[k] + cum[k], base + S[k])
        S[k + 1] = S[k] + lengths[k] * w
        add(taus[k] + cum[k + 1], base + S[k + 1])
        inner = z.times[(z.times > taus[k]) & (z.times < taus[k + 1])]
        for t in inner:
            add(t + cum[k + 1], z(t) + S[k + 1])
        add(taus[k + 1] + cum[k + 1], z(taus[k + 1]) + S[k + 1])
    extended = MacroPath(np.array(times), np.array(pts))
    inside = cover.covered(extended.points)
    if not np.all(inside):
        t_bad = float(extended.times[int(np.argmin(inside))])
        raise ShiftExitError(f"shifted path leaves the cover at t={t_bad!r}; reduce delta", t_bad)
    T = z.T
    zd = extended.restrict(z.t0, T) if extended.T > T else extended
    plan = ShiftPlan(
        float(delta),
        xi,
        beta,
        t_delta,
        taus.copy(),
        seg.region_ids,
        cum,
        cover.kappa_minus * t_delta / 3.0,
        t_delta * cover.kappa_dblprime,
        omega_inv,
        S,
        extended,
    )
    return plan, zd


@dataclass
class BreakupReport:
    sup_distance: float
    sup_bound: float
    sup_ok: bool
    clearance: float
    clearance_bound: float
    clearance_ok: bool
    first_violation_time: Optional[float]
    shift_checks: list = field(default_factory=list)
    shift_ok: bool = True
    horizon_truncated: bool = False

    @property
    def passed(self) -> bool:
        return self.sup_ok and self.clearance_ok and self.shift_ok

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def verify_breakup(z: MacroPath, zd: MacroPath, plan: ShiftPlan, cover: Cover) -> BreakupReport:
    """Check the sup-distance bound, the clearance after t_delta and the shift decomposition."""
    t0, T = z.t0, z.T
    grid = np.union1d(z.times, zd.times)
    grid = grid[(grid >= t0) & (grid <= T)]
    sup = float(np.linalg.norm(z(grid) - zd(grid), axis=1).max())
    sup_bound = 2.0 * plan.delta / 3.0

    start = t0 + plan.t_delta
    bound = cover.kappa_minus * plan.t_delta
    clear, first_bad = np.inf, None
    if start <= T:
        tg = np.union1d(zd.times[(zd.times > start) & (zd.times <= T)], [start])
        dist = cover.boundary_distance(zd(tg))
        clear = float(dist.min())
        bad = dist < bound * (1.0 - 1e-12)
        if np.any(bad):
            j = int(np.argmax(bad))
            first_bad = float(tg[j])
            if j > 0:  # locate the crossing on the incoming segment
                a, b = tg[j - 1], tg[j]
                for _ in range(100):
                    m = 0.5 * (a + b)
                    if cover.boundary_distance(zd(m))[0] < bound * (1.0 - 1e-12):
                        b = m
                    else:
                        a = m
                first_bad = float(b)

    checks = []
    kpp = cover.kappa_dblprime
    ext = plan.extended
    for k in range(plan.J):
        step = plan.beta**k * plan.t_delta
        w_k = cover.regions[plan.region_ids[k]].w
        tau = plan.transition_times[k]
        w_eff = (ext(tau + plan.cum_shifts[k + 1]) - z(tau)) / step
        worst = float(np.linalg.norm(w_eff - w_k)) + (plan.t_delta * kpp / 2.0) / step
        s_norm = float(np.linalg.norm(plan.displacements[k]))
        checks.append(
            {
                "k": k,
                "shift_norm": s_norm,
                "lhs": s_norm + plan.t_delta * kpp / 2.0,
                "rhs": kpp * step,
                "cone_radius": worst,
                "ok": bool(worst < kpp),
            }
        )
    return BreakupReport(
        sup,
        sup_bound,
        bool(sup < sup_bound),
        clear,
        bound,
        first_bad is None,
        first_bad,
        checks,
        all(c["ok"] for c in checks),
        plan.truncated,
    )


# ---------------------------------------------------------------- escape cost


def escape_cost(net: ReactionNetwork, x0, w, t_delta: float, quad: int = 8) -> ActionReport:
    """Action of the straight segment x0 + t w, t in [0, t_delta]."""
    if not t_delta > 0:
        raise ValidationError("t_delta must be positive")
    return path_action(net, MacroPath.linear(x0, w, t_delta), quad_pts=quad)


# ---------------------------------------------------------------- sampling helpers


@functools.lru_cache(maxsize=16)
def _sobol(dim: int, log2n: int) -> np.ndarray:
    from scipy.stats import qmc

    pts = qmc.Sobol(dim, scramble=False).random_base2(log2n)
    pts.setflags(write=False)
    return pts


@njit
def _log_rates_rows(X, kind, k, gin, ops, args, consts, cstart, cstop, ss, sl):
    n = X.shape[0]
    R = kind.shape[0]
    out = np.empty((n, R))
    row = np.empty(R)
    ok = True
    for i in range(n):
        if not log_macro_rates_into(X[i], kind, k, gin, ops, args, consts, cstart, cstop, ss, sl, row):
            ok = False
        for r in range(R):
            out[i, r] = row[r]
    return out, ok


def log_rates_at(net: ReactionNetwork, X: np.ndarray) -> np.ndarray:
    """Matrix of log lambda_r at the rows of X; undefined values are NaN."""
    p = net.program
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    out, _ = _log_rates_rows(X, *p.kernel_args(), p.stack(), p.stack())
    return out


def _facet_samples(region: CoverRegion, u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Points at distance in [lo, hi] from each boundary facet, kept if inside the region."""
    d = region.dim
    box = region.bbox
    base = box[:, 0] + u[:, :d] * (box[:, 1] - box[:, 0])
    s = lo + (hi - lo) * u[:, d]
    out = []
    for i in region.boundary:
        a, b = region.A[i], region.b[i]
        na = float(np.linalg.norm(a))
        proj = base - ((base @ a - b) / na**2)[:, None] * a
        out.append(proj - (s / na)[:, None] * a)
    X = np.vstack(out) if out else np.zeros((0, d))
    X = X[region.contains(X, 1e-12)]
    dist = region.boundary_distance(X)
    keep = (dist >= lo - 1e-12 * (1 + lo)) & (dist <= hi + 1e-12 * (1 + hi))
    return X[keep]


def _stable_stat(net: ReactionNetwork, region: CoverRegion, r: int, lo: float, hi: float, use_max: bool) -> tuple[float, int]:
    """min (or max) of log lambda_r over a shell, doubling Sobol samples until stable to 1%."""
    prev = None
    n_used = 0
    for m in range(4, MAX_LOG2 + 1):
        X = _facet_samples(region, _sobol(region.dim + 1, m), lo, hi)
        if len(X) == 0:
            continue
        vals = log_rates_at(net, X)[:, r]
        vals = vals[~np.isnan(vals)]
        if len(vals) == 0:
            continue
        cur = float(vals.max() if use_max else vals.min())
        n_used = len(vals)
        if prev is not None and m >= 6:
            if cur == prev or (math.isfinite(cur) and math.isfinite(prev) and abs(cur - prev) <= 0.01 * max(abs(cur), 1e-300)):
                return cur, n_used
        prev = cur
    if prev is None:
        raise ValidationError(f"region {region.id}: no sample points in the shell [{lo}, {hi}]")
    return prev, n_used


def _check_rho(rho_ladder) -> np.ndarray:
    rho = np.asarray(rho_ladder, dtype=float)
    if len(rho) < 3 or np.any(rho <= 0) or np.any(np.diff(rho) >= 0):
        raise ValidationError("rho ladder must be decreasing, positive, with at least three rungs")
    return rho


# ---------------------------------------------------------------- decay and FAST


@dataclass
class DecayReport:
    reaction: int
    rows: list  # {rho, inf_log_rate, samples, scaled: {alpha: rho^alpha * inf}}
    alpha_hat: float
    condition: dict  # alpha -> bool

    def to_dict(self) -> dict:
        return {
            "reaction": self.reaction,
            "rows": self.rows,
            "alpha_hat": self.alpha_hat,
            "condition": {str(a): v for a, v in self.condition.items()},
        }


def _log_slope(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.polyfit(x, y, 1)[0])


def decay_exponent(
    net: ReactionNetwork, r: int, region: CoverRegion, rho_ladder=DEFAULT_RHO, alphas=(0.25, 0.5, 0.9)
) -> DecayReport:
    """rho^alpha times the infimum of log lambda_r over the shell dist in [rho, 2 rho].

    The condition holds for ``alpha`` when the scaled values tend to zero,
    judged by a positive log-log slope over the last three rungs. The
    fitted exponent is the slope of log|inf log lambda| against log(1/rho).
    """
    if not region.is_boundary:
        raise ValidationError("decay_exponent needs a region with boundary facets")
    rho = _check_rho(rho_ladder)
    infs, rows = [], []
    for p in rho:
        val, n = _stable_stat(net, region, r, p, 2 * p, use_max=False)
        infs.append(val)
        rows.append({"rho": float(p), "inf_log_rate": val, "samples": n, "scaled": {str(a): p**a * val for a in alphas}})
    infs = np.array(infs)
    cond = {}
    if np.any(np.isneginf(infs)):
        return DecayReport(r, rows, math.inf, {a: False for a in alphas})
    mag = np.abs(infs)
    if np.all(mag[-3:] <= 1e-12):
        return DecayReport(r, rows, 0.0, {a: True for a in alphas})
    ok = mag > 0
    alpha_hat = _log_slope(np.log(1.0 / rho[ok]), np.log(mag[ok])) if ok.sum() >= 2 else 0.0
    for a in alphas:
        tail = rho[-3:] ** a * mag[-3:]
        if np.all(tail <= 1e-12):
            cond[a] = True
        elif np.any(tail <= 0):
            cond[a] = False
        else:
            cond[a] = bool(_log_slope(np.log(rho[-3:]), np.log(tail)) > 0.05)
    return DecayReport(r, rows, alpha_hat, cond)


@dataclass
class FastReport:
    fast: tuple
    limits: dict  # r -> last rho * sup log lambda_r
    rows: list

    def to_dict(self) -> dict:
        return {"fast": list(self.fast), "limits": {str(k): v for k, v in self.limits.items()}, "rows": self.rows}


def fast_set(net: ReactionNetwork, region: CoverRegion, rho_ladder=DEFAULT_RHO, threshold: float = -1e-3) -> FastReport:
    """Reactions whose rho * sup_{dist < rho} log lambda_r settles below ``threshold``.

    Settling means the last three rungs are all below the threshold and agree
    to 5%. Rates vanishing near the boundary give -inf and count as FAST.
    """
    if not region.is_boundary:
        raise ValidationError("fast_set needs a region with boundary facets")
    rho = _check_rho(rho_ladder)
    fast, limits, rows = [], {}, []
    for r in range(net.n_reactions):
        vals = []
        for p in rho:
            sup, n = _stable_stat(net, region, r, 0.0, p, use_max=True)
            vals.append(p * sup if math.isfinite(sup) else sup)
            rows.append({"reaction": r, "rho": float(p), "scaled_sup": vals[-1], "samples": n})
        tail = np.array(vals[-3:])
        if np.all(np.isneginf(tail)):
            is_fast = True
        elif np.all(np.isfinite(tail)) and np.all(tail < threshold):
            is_fast = bool(tail.max() - tail.min() <= 0.05 * abs(tail[-1]))
        else:
            is_fast = False
        limits[r] = float(vals[-1])
        if is_fast:
            fast.append(r)
    return FastReport(tuple(fast), limits, rows)


# ---------------------------------------------------------------- cone obstruction


@dataclass
class ConeReport:
    obstructed: bool
    slow: tuple
    active_facets: tuple
    per_facet: dict  # facet index -> obstructed considering that facet alone
    witness: Optional[list]  # convex weights on the slow jumps reaching the tangent cone

    def to_dict(self) -> dict:
        return {
            "obstructed": self.obstructed,
            "slow": list(self.slow),
            "active_facets": list(self.active_facets),
            "per_facet": {str(k): v for k, v in self.per_facet.items()},
            "witness": self.witness,
        }


def _hull_meets_cone(G: np.ndarray, normals: np.ndarray):
    """Is some convex combination y of the rows of G with n.y >= 0 for every normal?"""
    m, k = G.shape[0], normals.shape[0]
    # variables: mu (m), slacks (k); rows: n_i . G^T mu - s_i = 0, sum mu = 1
    A = np.zeros((k + 1, m + k))
    A[:k, :m] = normals @ G.T
    A[:k, m:] = -np.eye(k)
    A[k, :m] = 1.0
    b = np.zeros(k + 1)
    b[k] = 1.0
    res = feasible_nonneg(A, b)
    return res.status == "optimal", (res.x[:m].tolist() if res.status == "optimal" else None)


def cone_obstruction(net: ReactionNetwork, region: CoverRegion, x, fast: Sequence[int], tol: float = 1e-9) -> ConeReport:
    """True when no convex combination of the slow jumps lies in the tangent cone at ``x``.

    The tangent cone of the region at a boundary point is the set of y with
    n.y >= 0 for the inward normal n of every active boundary facet, so a
    tangent slow jump is admitted.
    """
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if xa.shape != (region.dim,):
        raise ValidationError("point dimension differs from the region")
    D = region.facet_distances(xa)[0]
    active = tuple(region.boundary[i] for i in range(len(region.boundary)) if abs(D[i]) <= tol)
    if not active:
        raise ValidationError("point is not on a boundary facet of the region")
    fast = set(int(r) for r in fast)
    slow = tuple(r for r in range(net.n_reactions) if r not in fast)
    normals = np.array([-region.A[i] / np.linalg.norm(region.A[i]) for i in active])
    if not slow:
        return ConeReport(True, slow, active, {i: True for i in active}, None)
    G = np.array([net.reactions[r].gamma for r in slow], dtype=float)
    meets, mu = _hull_meets_cone(G, normals)
    per = {i: not _hull_meets_cone(G, normals[j : j + 1])[0] for j, i in enumerate(active)}
    return ConeReport(not meets, slow, active, per, mu)


# ---------------------------------------------------------------- escape sequence audit


@dataclass
class EscapeAudit:
    prefix_rows: list
    prefix_slope: float
    prefix_holds: bool
    integral_rows: list
    integral_holds: bool
    monotone_checked: int
    monotone_violations: int
    monotone_witness: Optional[dict]

    @property
    def monotone_holds(self) -> bool:
        return self.monotone_violations == 0

    @property
    def holds(self) -> bool:
        return self.prefix_holds and self.integral_holds and self.monotone_holds

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d.update(monotone_holds=self.monotone_holds, holds=self.holds)
        return d


def prefix_log_rates(net: ReactionNetwork, escape_seq: Sequence[int], s: ScaledState) -> float:
    """max over k of (1/v)|log Lambda^v_{r_k}| at the states visited by the escape sequence."""
    counts = np.array(s.counts, dtype=np.int64)
    worst = 0.0
    for r in escape_seq:
        st = ScaledState(s.v, tuple(counts))
        if isinstance(net.reactions[r].rate_law, MassAction):
            lam = micro_rate(net, r, st)
            log_lam = math.log(lam) if lam > 0 else -math.inf
        else:
            log_lam = float(log_macro_rates(net, st.x)[r])  # expression laws: Lambda = lambda, kept in log space
        worst = max(worst, abs(log_lam) / s.v)
        counts = counts + np.array(net.reactions[r].gamma, dtype=np.int64)
    return worst


def escape_sequence_audit(
    net: ReactionNetwork,
    region: CoverRegion,
    cover: Cover,
    x0_ladder: Sequence[ScaledState],
    rho_ladder=tuple(2.0**-k for k in range(2, 13)),
    n_points: int = 16,
) -> EscapeAudit:
    """Evidence for the three escape conditions of a boundary region.

    Prefix rates: (1/v)|log Lambda| along the escape sequence must vanish as
    v grows; judged by a log-log slope in v of at most -1/2. Integrability:
    the sup over sampled boundary points of int_0^rho |log lambda_r(x + s w)| ds
    must tend to zero without divergent quadrature. Monotonicity: rates
    below eps'' must not decrease along directions within kappa'' of w.
    """
    if not region.escape_seq:
        raise ValidationError("region has no escape sequence")
    cover.validate_for(net)
    if len(x0_ladder) < 2:
        raise ValidationError("need at least two rungs in the x0 ladder")
    prow, vs, vals = [], [], []
    for s in x0_ladder:
        val = prefix_log_rates(net, region.escape_seq, s)
        prow.append({"v": s.v, "value": val})
        vs.append(s.v)
        vals.append(val)
    vals_a = np.array(vals)
    if np.all(np.isfinite(vals_a)) and np.all(vals_a > 0):
        slope = _log_slope(np.log(vs), np.log(vals_a))
    elif np.all(vals_a == 0):
        slope = -math.inf
    else:
        slope = math.inf if not np.all(np.isfinite(vals_a)) else 0.0
    prefix_holds = bool(slope <= -0.5)

    rho = _check_rho(rho_ladder)
    u = _sobol(region.dim + 1, max(1, int(math.ceil(math.log2(max(n_points, 2))))))[:n_points]
    starts = _facet_samples(region, u, 0.0, 0.0)
    if len(starts) == 0:
        raise ValidationError("no sample points on the region's boundary facets")
    p = net.program
    ss, sl = p.stack(), p.stack()
    buf = np.empty(net.n_reactions)
    irows, growing = [], False
    for r in sorted(set(region.escape_seq)):
        for rh in rho:
            worst = 0.0
            for x in starts:

                def f(svals, x=x, r=r):
                    out = np.empty(len(svals))
                    for j, sv in enumerate(svals):
                        log_macro_rates_into(np.ascontiguousarray(x + sv * region.w), *p.kernel_args(), ss, sl, buf)
                        out[j] = abs(buf[r])
                    return out

                q = integrate(f, 0.0, float(rh))
                growing |= q.growing
                worst = max(worst, q.value)
            irows.append({"reaction": r, "rho": float(rh), "sup_integral": worst})
    integral_holds = not growing
    for r in set(region.escape_seq):
        seq = [row["sup_integral"] for row in irows if row["reaction"] == r]
        vanishing = seq[-1] == 0.0 or (math.isfinite(seq[-1]) and seq[-1] <= 0.1 * seq[0])
        if not vanishing:
            integral_holds = False

    checked, violations, witness = 0, 0, None
    pts = region.bbox[:, 0] + _sobol(2 * region.dim, 8)[:, : region.dim] * (region.bbox[:, 1] - region.bbox[:, 0])
    pts = pts[region.contains(pts, 0.0)]
    dirs_u = _sobol(2 * region.dim, 8)[:, region.dim :]
    tgrid = cover.eps * np.arange(1, 33) / 33.0
    for r in sorted(set(region.escape_seq)):
        lam0 = np.exp(log_rates_at(net, pts)[:, r])
        for x, l0, du in zip(pts, lam0, dirs_u):
            if not l0 < cover.eps_dblprime:
                continue
            g = 2.0 * du - 1.0
            nrm = float(np.linalg.norm(g))
            wdir = region.w + (0.99 * cover.kappa_dblprime * g / nrm if nrm > 0 else 0.0)
            line = x + tgrid[:, None] * wdir
            line = line[region.contains(line, 0.0)]
            if len(line) == 0:
                continue
            lam = np.concatenate([[l0], np.exp(log_rates_at(net, line)[:, r])])
            checked += 1
            drops = np.diff(lam) < -1e-12 * np.maximum(lam[:-1], 1e-300)
            if np.any(drops):
                violations += 1
                if witness is None:
                    witness = {"reaction": r, "x": x.tolist(), "direction": wdir.tolist()}
    return EscapeAudit(prow, slope, prefix_holds, irows, integral_holds, checked, violations, witness)


# ---------------------------------------------------------------- jump-count lower bound


@dataclass
class EscapeLowerBound:
    value: float  # -inf when the log-rate integral diverges
    truncated_value: float
    t_delta: float
    lambda_bar: float
    aleph: float
    terms: dict
    divergent: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _lipschitz(net: ReactionNetwork, region: CoverRegion, h: float = 1e-6) -> float:
    pts = region.bbox[:, 0] + _sobol(region.dim, 8) * (region.bbox[:, 1] - region.bbox[:, 0])
    pts = pts[region.contains(pts, 0.0)]
    best = 0.0
    for i in range(region.dim):
        e = np.zeros(region.dim)
        e[i] = h
        lo, hi = pts - e, pts + e
        ok = region.contains(lo, 0.0) & region.contains(hi, 0.0)
        if not np.any(ok):
            continue
        diff = (np.exp(log_rates_at(net, hi[ok])) - np.exp(log_rates_at(net, lo[ok]))) / (2 * h)
        best = max(best, float(np.nanmax(np.abs(diff))))
    return best * math.sqrt(region.dim)


def escape_lower_bound(
    net: ReactionNetwork,
    region: CoverRegion,
    cover: Cover,
    x0,
    v: int,
    delta: float,
    T: float = 1.0,
    quad: int = 8,
    t_delta: Optional[float] = None,
) -> EscapeLowerBound:
    """Lower bound on (1/v) log P of completing the escape pattern, evaluated at x0.

    By default t_delta is the one for the constant path at x0 on [0, T];
    pass ``t_delta`` to evaluate at another escape time. lambda_bar is
    max(1, sampled sup of the total rate on the 2 t_delta ball) and aleph
    the sampled Lambda/lambda ratio there, capped at 1.
    """
    if not region.escape_seq:
        raise ValidationError("region has no escape sequence")
    cover.validate_for(net)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = len(region.escape_seq)
    alpha = region.alpha(net)
    if t_delta is None:
        _, t_delta, _ = shift_constants(cover, 1, delta, T)
    elif not t_delta > 0:
        raise ValidationError("t_delta must be positive")
    lip = _lipschitz(net, region)
    t_bar = min(alpha / n, cover.eps_dblprime / lip if lip > 0 else math.inf)
    if not t_delta < t_bar:
        raise ValidationError(f"t_delta={t_delta!r} violates the bound t_delta < {t_bar!r}")
    u = _sobol(region.dim, 8)
    g = 2.0 * u - 1.0
    nrm = np.linalg.norm(g, axis=1)
    nrm[nrm == 0] = 1.0
    radius = np.sqrt(u[:, 0]) if region.dim == 1 else u[:, 0] ** (1.0 / region.dim)
    ball = x0 + 2 * t_delta * (g / nrm[:, None]) * radius[:, None]
    ball = np.vstack([x0, ball[region.contains(ball, 0.0)]])
    lam_bar = max(1.0, float(np.nanmax(np.exp(log_rates_at(net, ball)).sum(axis=1))))
    aleph = min(1.0, audit_aleph(net, v, ball))
    na = n / alpha
    term1 = -t_delta * (na * math.log(na / lam_bar) - na + lam_bar)
    term2 = 0.0
    divergent = False
    for r in region.escape_seq:

        def f(s, r=r):
            return log_rates_at(net, x0 + np.outer(s * alpha, region.w))[:, r]

        q = integrate(lambda s: -f(s), 0.0, t_delta / alpha, q=quad)
        divergent |= q.growing or q.value == math.inf
        term2 -= q.value
    term3 = t_delta * na * math.log(aleph)
    total = term1 + term2 + term3
    return EscapeLowerBound(
        -math.inf if divergent else total,
        total,
        t_delta,
        lam_bar,
        aleph,
        {"entropy": term1, "log_rate_integral": term2, "aleph": term3},
        divergent,
    )
