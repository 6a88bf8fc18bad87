"""Entropy, the local Lagrangian, path actions and the flux functional.

The Lagrangian is computed as the Legendre transform

    l(x, y) = sup_theta  theta.y - sum_r lambda_r(x) (exp(theta.gamma_r) - 1)

restricted to the span of the jump vectors that can carry flux, with the
equivalent entropy form ``inf {H(mu | lambda(x)) : mu >= 0, Gamma mu = y}``
available for cross-checking.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._accel import njit
from .errors import NumericError, ValidationError
from .lp import feasible_nonneg, simplex
from .network import ReactionNetwork, log_macro_rates, log_macro_rates_into, macro_rates
from .paths import MacroPath
from .quadrature import integrate

LP_TOL = 1e-9
ARMIJO = 1e-4
MAX_NEWTON = 200
MAX_STEP = 20.0


# ---------------------------------------------------------------- entropy


def entropy(mu, lam) -> float:
    """H(mu | lam) = sum lam - mu + mu log(mu / lam), with 0 log 0 = 0."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    if mu.shape != lam.shape:
        raise ValidationError("mu and lambda must have equal length")
    if np.any(mu < 0) or np.any(lam < 0):
        raise ValidationError("entropy arguments must be nonnegative")
    total = 0.0
    for m, l in zip(mu, lam):
        if m == 0.0:
            total += l
        elif l == 0.0:
            return math.inf
        else:
            total += l - m + m * math.log(m / l)
    return total


def entropy_log(mu, loglam) -> float:
    """H(mu | exp(loglam)); finite even where the rates underflow."""
    total = 0.0
    for m, L in zip(np.atleast_1d(mu), np.atleast_1d(loglam)):
        if m < 0:
            raise ValidationError("entropy arguments must be nonnegative")
        lam = math.exp(L) if L > -np.inf else 0.0
        if m == 0.0:
            total += lam
        elif L == -np.inf:
            return math.inf
        else:
            total += lam - m + m * (math.log(m) - L)
    return total


# ---------------------------------------------------------------- Newton kernel


@njit
def _objective(u, loglam, G, y, e):
    """Dual objective; fills ``e`` with the fluxes lambda_r exp(u.G_r)."""
    k = u.shape[0]
    val = 0.0
    for j in range(k):
        val += u[j] * y[j]
    for r in range(loglam.shape[0]):
        s = loglam[r]
        for j in range(k):
            s += G[r, j] * u[j]
        if s > 700.0:
            return -np.inf
        e[r] = math.exp(s)
        val -= e[r] - math.exp(loglam[r])
    return val


@njit
def _solve_spd(H, g):
    """Gaussian elimination with partial pivoting; None-free status flag."""
    k = g.shape[0]
    A = H.copy()
    b = g.copy()
    for c in range(k):
        p = c
        for i in range(c + 1, k):
            if abs(A[i, c]) > abs(A[p, c]):
                p = i
        if A[p, c] == 0.0:
            return b, False
        if p != c:
            for j in range(k):
                A[c, j], A[p, j] = A[p, j], A[c, j]
            b[c], b[p] = b[p], b[c]
        for i in range(c + 1, k):
            f = A[i, c] / A[c, c]
            for j in range(c, k):
                A[i, j] -= f * A[c, j]
            b[i] -= f * b[c]
    x = np.zeros(k)
    for i in range(k - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, k):
            s -= A[i, j] * x[j]
        x[i] = s / A[i, i]
    return x, True


@njit
def _ascent_direction(H, g):
    """Newton direction, flagged unusable when the solve fails or loses its sign."""
    d, ok = _solve_spd(H, g)
    dn = 0.0
    ascent = 0.0
    for j in range(g.shape[0]):
        dn += d[j] * d[j]
        ascent += g[j] * d[j]
    return d, ok and math.isfinite(dn) and ascent > 0.0


@njit
def newton_kernel(loglam, G, y, u0, tol, max_iter):
    """Maximise the dual objective in span coordinates, starting from ``u0``.

    Damped Newton with Armijo backtracking inside a trust radius that
    grows tenfold after every accepted full-radius step, so that maximisers far
    from the origin (tiny rates) are reached in logarithmically many steps.
    Returns ``(u, value, iterations, status)`` with status 0 converged,
    1 iteration cap, 2 singular Hessian or stalled line search.
    """
    R, k = G.shape
    radius = MAX_STEP
    u = u0.copy()
    e = np.empty(R)
    trial_e = np.empty(R)
    trial = np.empty(k)
    g = np.empty(k)
    H = np.empty((k, k))
    f0 = _objective(u, loglam, G, y, e)
    for it in range(max_iter + 1):
        for j in range(k):
            g[j] = y[j]
        for r in range(R):
            m = e[r]
            for j in range(k):
                g[j] -= m * G[r, j]
        gn = 0.0
        for j in range(k):
            gn += g[j] * g[j]
        if math.sqrt(gn) <= tol:
            return u, f0, it, 0
        if it == max_iter:
            break
        for a in range(k):
            for b in range(k):
                s = 0.0
                for r in range(R):
                    s += e[r] * G[r, a] * G[r, b]
                H[a, b] = s
        d, finite = _ascent_direction(H, g)
        if not finite:
            # near-singular curvature: regularise with a small multiple of the trace
            tr = 0.0
            for j in range(k):
                tr += H[j, j]
            if tr > 0.0 and math.isfinite(tr):
                for j in range(k):
                    H[j, j] += 1e-10 * tr / k
                d, finite = _ascent_direction(H, g)
        if not finite:
            # curvature underflowed or the solve lost its sign: gradient step of trust-radius length
            gl = math.sqrt(gn)
            for j in range(k):
                d[j] = g[j] * (radius / gl)
        dn = 0.0
        slope = 0.0
        for j in range(k):
            dn += d[j] * d[j]
            slope += g[j] * d[j]
        dn = math.sqrt(dn)
        un = 0.0
        for j in range(k):
            un += u[j] * u[j]
        if dn <= 4e-16 * (1.0 + math.sqrt(un)):
            return u, f0, it, 0  # converged to rounding level
        capped = dn >= radius
        s = radius / dn if dn > radius else 1.0
        # rounding level of f: its terms can be much larger than f itself
        noise = 0.0
        for j in range(k):
            noise += abs(u[j] * y[j])
        for r in range(R):
            noise += e[r] + math.exp(loglam[r])
        noise *= 8e-16
        # a full Newton step whose predicted gain is below rounding is taken as is
        polish = finite and not capped and slope <= noise
        accepted = False
        for _ in range(200):
            for j in range(k):
                trial[j] = u[j] + s * d[j]
            ft = _objective(trial, loglam, G, y, trial_e)
            if ft >= f0 + ARMIJO * s * slope or (polish and s == 1.0 and ft >= f0 - noise):
                accepted = True
                break
            s *= 0.5
            capped = False
        if not accepted:
            if dn * s <= 1e-14 * (1.0 + math.sqrt(un)):
                return u, f0, it, 0
            return u, f0, it, 2
        if capped:
            radius *= 10.0
        elif s < 1.0:
            radius = max(MAX_STEP, s * dn)
        for j in range(k):
            u[j] = trial[j]
        for r in range(R):
            e[r] = trial_e[r]
        f0 = ft
    return u, f0, max_iter, 1


# ---------------------------------------------------------------- support / feasibility


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    mu: Optional[np.ndarray] = None  # feasible flux when feasible
    certificate: Optional[np.ndarray] = None  # theta with theta.gamma_r <= 0 < theta.y otherwise


@dataclass(frozen=True)
class _Support:
    feasible: bool
    certificate: Optional[np.ndarray]
    mu: Optional[np.ndarray]
    support: tuple  # reaction indices that can carry positive flux
    basis: Optional[np.ndarray]  # d x k orthonormal basis of span{gamma_r : r in support}


def _basis(gs: np.ndarray) -> np.ndarray:
    _, sv, vt = np.linalg.svd(gs, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv.max(initial=0.0))))
    return vt[:rank].T.copy()


def _support_direct(gamma: np.ndarray, idx: list, y: np.ndarray, scale: float) -> Optional[_Support]:
    """Closed-form support for one dimension or independent jumps; None otherwise."""
    d = gamma.shape[1]
    R = gamma.shape[0]
    A = gamma[idx].T
    if d == 1:
        g = A[0]
        pos = [r for r, c in zip(idx, g) if c > 0]
        neg = [r for r, c in zip(idx, g) if c < 0]
        idle = [r for r, c in zip(idx, g) if c == 0]  # zero jumps carry flux freely
        yv = float(y[0])
        mu = np.zeros(R)
        if abs(yv) <= LP_TOL * scale:
            support = sorted(pos + neg + idle) if pos and neg else idle
        elif pos and neg:
            support = sorted(pos + neg + idle)
        elif (yv > 0 and pos) or (yv < 0 and neg):
            support = sorted((pos if yv > 0 else neg) + idle)
        else:
            return _Support(False, np.array([math.copysign(1.0, yv)]), None, (), None)
        if support and abs(yv) > LP_TOL * scale:
            r0 = (pos if yv > 0 else neg)[0]
            mu[r0] = yv / gamma[r0, 0]
        basis = _basis(gamma[support]) if support else np.zeros((1, 0))
        return _Support(True, None, mu, tuple(support), basis)
    if len(idx) <= d and np.linalg.matrix_rank(A) == len(idx):
        m, *_ = np.linalg.lstsq(A, y, rcond=None)
        if np.linalg.norm(A @ m - y) > 1e-10 * scale or np.any(m < -LP_TOL * scale):
            return None  # infeasible: let the LP produce the certificate
        mu = np.zeros(R)
        mu[idx] = np.maximum(m, 0.0)
        support = [r for r, mr in zip(idx, m) if mr > LP_TOL * scale]
        return _Support(True, None, mu, tuple(support), _basis(gamma[support]) if support else np.zeros((d, 0)))
    return None


@functools.lru_cache(maxsize=65536)
def _support_cached(gamma_bytes: bytes, d: int, active: tuple, y_bytes: bytes) -> _Support:
    gamma = np.frombuffer(gamma_bytes, dtype=np.float64).reshape(-1, d)
    y = np.frombuffer(y_bytes, dtype=np.float64)
    idx = list(active)
    scale = 1.0 + float(np.linalg.norm(y))
    if not idx:
        if np.linalg.norm(y) <= LP_TOL * scale:
            return _Support(True, None, np.zeros(gamma.shape[0]), (), np.zeros((d, 0)))
        return _Support(False, y / np.linalg.norm(y), None, (), None)
    fast = _support_direct(gamma, idx, y, scale)
    if fast is not None:
        return fast
    return _support_lp(gamma, idx, y)


def _support_lp(gamma: np.ndarray, idx: list, y: np.ndarray) -> _Support:
    """Support by linear programming: phase 1, then one LP per undecided reaction."""
    d = gamma.shape[1]
    A = gamma[idx].T  # d x Ra
    res = feasible_nonneg(A, y, tol=LP_TOL)
    if res.status != "optimal":
        cert = res.farkas
        return _Support(False, cert, None, (), None)
    mu = np.zeros(gamma.shape[0])
    mu[idx] = res.x
    # reactions that can carry positive flux: maximise each coordinate
    ra = len(idx)
    support = []
    for j in range(ra):
        if res.x[j] > LP_TOL:
            support.append(idx[j])
            continue
        Aeq = np.zeros((d + 1, ra + 1))
        Aeq[:d, :ra] = A
        Aeq[d, j] = 1.0
        Aeq[d, ra] = 1.0
        beq = np.concatenate([y, [1.0]])
        c = np.zeros(ra + 1)
        c[j] = -1.0
        sol = simplex(c, Aeq, beq, tol=LP_TOL)
        if sol.status == "optimal" and -sol.value > LP_TOL:
            support.append(idx[j])
    support.sort()
    if support:
        basis = _basis(gamma[support])
    else:
        basis = np.zeros((d, 0))
    return _Support(True, None, mu, tuple(support), basis)


def _support(gamma: np.ndarray, loglam: np.ndarray, y: np.ndarray) -> _Support:
    active = tuple(int(r) for r in np.flatnonzero(loglam > -np.inf))
    g = np.ascontiguousarray(gamma, dtype=np.float64)
    yy = np.ascontiguousarray(y, dtype=np.float64) + 0.0  # normalise -0.0
    return _support_cached(g.tobytes(), g.shape[1], active, yy.tobytes())


def feasibility(net: ReactionNetwork, x, y) -> Feasibility:
    """Is ``y`` a nonnegative combination of the jumps active at ``x``?"""
    loglam = log_macro_rates(net, x)
    y = _vec(net, y)
    s = _support(net.gamma_matrix.T, loglam, y)
    if s.feasible:
        return Feasibility(True, mu=s.mu.copy())
    return Feasibility(False, certificate=np.asarray(s.certificate, dtype=float).copy())


# ---------------------------------------------------------------- Lagrangian


@dataclass(frozen=True)
class LagrangianResult:
    value: float
    theta_star: np.ndarray
    mu_star: Optional[np.ndarray]
    feasible: bool
    newton_iters: int


def _vec(net: ReactionNetwork, y) -> np.ndarray:
    ya = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if ya.shape != (net.dim,):
        raise ValidationError(f"vector must have {net.dim} coordinates")
    return ya


def _warm_start(G: np.ndarray, loglam: np.ndarray, mu_lp: np.ndarray) -> np.ndarray:
    """Least-squares fit of log fluxes to a feasible flux.

    Rates spread over hundreds of orders of magnitude make the Hessian at
    zero nearly singular; starting where every flux has the right scale avoids that.
    """
    top = float(mu_lp.max()) if len(mu_lp) else 0.0
    if not top > 0:
        return np.zeros(G.shape[1])
    target = np.log(np.maximum(mu_lp, 1e-3 * top))
    u, *_ = np.linalg.lstsq(G, target - loglam, rcond=None)
    return np.where(np.isfinite(u), u, 0.0)


def _solve_on_support(gamma: np.ndarray, loglam: np.ndarray, y: np.ndarray, sup: _Support, tol: float) -> LagrangianResult:
    d = gamma.shape[1]
    R = gamma.shape[0]
    supp = list(sup.support)
    forced = float(sum(math.exp(loglam[r]) for r in range(R) if loglam[r] > -np.inf and r not in sup.support))
    k = sup.basis.shape[1]
    theta = np.zeros(d)
    iters = 0
    val = 0.0
    if supp and k > 0:
        G = np.ascontiguousarray(gamma[supp] @ sup.basis)
        yc = np.ascontiguousarray(sup.basis.T @ y)
        ll_s = np.ascontiguousarray(loglam[supp])
        gtol = tol * (1.0 + float(np.linalg.norm(y)))
        if float(ll_s.max()) - float(ll_s.min()) > 30.0 or abs(float(ll_s.max())) > 30.0:
            u0 = _warm_start(G, ll_s, sup.mu[supp])
        else:
            u0 = np.zeros(k)
        u, val, iters, status = newton_kernel(ll_s, G, yc, u0, gtol, MAX_NEWTON)
        if status != 0:
            u, val, iters, status = newton_kernel(ll_s, G, yc, np.zeros(k), gtol, MAX_NEWTON)
        if status != 0:
            raise NumericError(f"Newton did not converge (status {status}) at y={y.tolist()}")
        theta = sup.basis @ u
    mu = np.zeros(R)
    for r in supp:
        mu[r] = math.exp(min(loglam[r] + float(theta @ gamma[r]), 709.0))
    return LagrangianResult(float(val) + forced, theta, mu, True, int(iters))


def lagrangian_from_logrates(gamma: np.ndarray, loglam: np.ndarray, y: np.ndarray, tol: float = 1e-10) -> LagrangianResult:
    """Core solver given jump vectors (R x d), log-rates and velocity."""
    sup = _support(gamma, loglam, y)
    if not sup.feasible:
        return LagrangianResult(math.inf, np.asarray(sup.certificate, dtype=float), None, False, 0)
    return _solve_on_support(gamma, loglam, y, sup, tol)


def lagrangian_rows(gamma: np.ndarray, LL: np.ndarray, y: np.ndarray, tol: float = 1e-10) -> list:
    """l at one velocity for many log-rate rows; the support is found once per active set."""
    out = []
    seen: dict = {}
    for loglam in LL:
        key = tuple(np.isfinite(loglam))
        sup = seen.get(key)
        if sup is None:
            sup = seen[key] = _support(gamma, loglam, y)
        if not sup.feasible:
            out.append(LagrangianResult(math.inf, np.asarray(sup.certificate, dtype=float), None, False, 0))
        else:
            out.append(_solve_on_support(gamma, loglam, y, sup, tol))
    return out


def lagrangian(net: ReactionNetwork, x, y, tol: float = 1e-10) -> LagrangianResult:
    """l(x, y) with maximiser theta* and optimal flux mu*."""
    if tol <= 0:
        raise ValidationError("tol must be positive")
    loglam = log_macro_rates(net, x)
    return lagrangian_from_logrates(net.gamma_matrix.T.astype(float), loglam, _vec(net, y), tol)


def dual_objective(gamma: np.ndarray, lam, y, theta) -> tuple[float, np.ndarray]:
    """theta.y - sum lam (exp(theta.gamma) - 1) and its gradient in theta."""
    lam = np.asarray(lam, dtype=float)
    e = np.exp(gamma @ theta)
    val = float(theta @ y - lam @ (e - 1.0))
    grad = y - gamma.T @ (lam * e)
    return val, grad


# ---------------------------------------------------------------- path functionals


@dataclass
class ActionReport:
    value: float
    per_segment: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"value": self.value, "per_segment": list(self.per_segment), "flags": dict(self.flags)}


class _LogRateEval:
    """Evaluates log-rates at many points without the Python-level checks."""

    def __init__(self, net: ReactionNetwork):
        self.net = net
        self.p = net.program
        self.ss = self.p.stack()
        self.sl = self.p.stack()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(self.net.n_reactions)
        xa = np.ascontiguousarray(x, dtype=np.float64)
        if not log_macro_rates_into(xa, *self.p.kernel_args(), self.ss, self.sl, out):
            return log_macro_rates(self.net, x)  # raises with a message
        return out


def _segment_integral(f_point: Callable[[np.ndarray], float], z0, slope, dt, quad_pts) -> tuple:
    def fv(s):
        return np.array([f_point(z0 + si * slope) for si in s])

    res = integrate(fv, 0.0, dt, q=quad_pts)
    return res


def path_action(net: ReactionNetwork, z: MacroPath, quad_pts: int = 8, tol: float = 1e-10) -> ActionReport:
    """I(z) = integral of l(z(t), z'(t)), segment by segment."""
    if z.dim != net.dim:
        raise ValidationError("path dimension differs from the network")
    gamma = net.gamma_matrix.T.astype(float)
    rates = _LogRateEval(net)
    slopes = z.slopes()
    per = []
    flags = {"infeasible": False, "refined": False, "growing": False}
    total = 0.0
    for i in range(z.n_segments):
        dt = float(z.times[i + 1] - z.times[i])
        if dt == 0.0:
            per.append(0.0)
            continue
        y = slopes[i]
        res = _segment_integral(
            lambda p: lagrangian_from_logrates(gamma, rates(p), y, tol).value, z.points[i], y, dt, quad_pts
        )
        per.append(res.value)
        flags["refined"] |= res.refined
        flags["growing"] |= res.growing
        if res.value == math.inf:
            flags["infeasible"] = True
        total += res.value
    return ActionReport(total, per, flags)


class InducedFlux:
    """Flux path whose rate on each segment of ``z`` is mu*(z(t), z'(t))."""

    def __init__(self, net: ReactionNetwork, z: MacroPath, tol: float = 1e-10):
        self.net = net
        self.z = z
        self.tol = tol
        self._gamma = net.gamma_matrix.T.astype(float)
        self._rates = _LogRateEval(net)

    def rate(self, segment: int, point: np.ndarray) -> np.ndarray:
        y = self.z.slopes()[segment]
        res = lagrangian_from_logrates(self._gamma, self._rates(point), y, self.tol)
        if not res.feasible:
            raise ValidationError("induced flux requested along an infeasible segment")
        return res.mu_star


def flux_action(net: ReactionNetwork, z: MacroPath, w, quad_pts: int = 8, tol: float = 1e-8) -> ActionReport:
    """J(z, w) = integral of H(w'(t) | lambda(z(t))).

    ``w`` is either a piecewise-linear :class:`MacroPath` in reaction space
    or an :class:`InducedFlux`. Returns +inf when ``z' != Gamma w'`` on some
    piece (relative tolerance ``tol``) or when ``w`` decreases.
    """
    rates = _LogRateEval(net)
    Gam = net.gamma_matrix.astype(float)
    flags = {"constraint_violated": False, "decreasing": False, "refined": False, "growing": False}
    per = []
    if isinstance(w, InducedFlux):
        slopes = z.slopes()
        total = 0.0
        for i in range(z.n_segments):
            dt = float(z.times[i + 1] - z.times[i])
            if dt == 0.0:
                per.append(0.0)
                continue
            res = _segment_integral(
                lambda p, i=i: entropy_log(w.rate(i, p), rates(p)), z.points[i], slopes[i], dt, quad_pts
            )
            flags["refined"] |= res.refined
            flags["growing"] |= res.growing
            per.append(res.value)
            total += res.value
        return ActionReport(total, per, flags)
    if not isinstance(w, MacroPath) or w.dim != net.n_reactions:
        raise ValidationError("flux path must live in reaction space")
    times = np.union1d(z.times, w.times)
    times = times[(times >= max(z.t0, w.t0)) & (times <= min(z.T, w.T))]
    zp, wp = z(times), w(times)
    total = 0.0
    for i in range(len(times) - 1):
        dt = float(times[i + 1] - times[i])
        if dt == 0.0:
            continue
        zd = (zp[i + 1] - zp[i]) / dt
        wd = (wp[i + 1] - wp[i]) / dt
        if np.any(wd < -tol * (1.0 + np.abs(wd).max())):
            flags["decreasing"] = True
            return ActionReport(math.inf, per, flags)
        wd = np.maximum(wd, 0.0)
        if np.linalg.norm(zd - Gam @ wd) > tol * (1.0 + np.linalg.norm(zd)):
            flags["constraint_violated"] = True
            return ActionReport(math.inf, per, flags)
        res = _segment_integral(lambda p, wd=wd: entropy_log(wd, rates(p)), zp[i], zd, dt, quad_pts)
        flags["refined"] |= res.refined
        flags["growing"] |= res.growing
        per.append(res.value)
        total += res.value
    return ActionReport(total, per, flags)


# ---------------------------------------------------------------- duality oracle


@dataclass(frozen=True)
class DualityReport:
    lagrangian: float
    grid_min: float
    gap: float
    mu_grid: Optional[np.ndarray]


def _golden(f: Callable[[float], float], lo: float, hi: float, iters: int = 90) -> tuple[float, float]:
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    cands = [(f(a), a), (fc, c), (fd, d), (f(b), b)]
    best = min(cands)
    return best[1], best[0]


def _interval(mu_p, N_col, lo_bounds, hi_bounds, extra_offset=None):
    """Range of s with lo <= mu_p + s * N_col <= hi."""
    lo, hi = -math.inf, math.inf
    base = mu_p if extra_offset is None else extra_offset
    for b0, n, l, h in zip(base, N_col, lo_bounds, hi_bounds):
        if abs(n) < 1e-14:
            if b0 < l - 1e-12 or b0 > h + 1e-12:
                return 1.0, 0.0
            continue
        a1, a2 = (l - b0) / n, (h - b0) / n
        lo = max(lo, min(a1, a2))
        hi = min(hi, max(a1, a2))
    return lo, hi


def duality_check(net: ReactionNetwork, x, y, grid_n: int = 10_000) -> DualityReport:
    """Compare l(x, y) with a brute-force minimum of H over {mu >= 0, Gamma mu = y}.

    The feasible polytope (dimension at most two for three reactions) is
    scanned on a uniform grid, and the best grid cell is polished by
    golden-section search, which is exact for this convex objective.
    """
    from scipy.optimize import linprog

    lam = macro_rates(net, x)
    y = _vec(net, y)
    lag = lagrangian(net, x, y).value
    Gam = net.gamma_matrix.astype(float)
    R = net.n_reactions
    if R > 3:
        raise ValidationError("duality_check supports at most three reactions")
    ub = [(0, 0) if lam[r] == 0 else (0, None) for r in range(R)]
    lp = linprog(np.zeros(R), A_eq=Gam, b_eq=y, bounds=ub, method="highs")
    if lp.status != 0:
        return DualityReport(lag, math.inf, 0.0 if lag == math.inf else math.inf, None)
    mu0 = np.asarray(lp.x, dtype=float)
    H0 = entropy(mu0, lam)
    # cap each coordinate: h(m) = lam - m + m log(m/lam) <= H0 at the minimiser
    cap = np.zeros(R)
    for r in range(R):
        if lam[r] == 0:
            continue
        m = max(lam[r], mu0[r], 1e-300)
        while lam[r] - m + m * math.log(m / lam[r]) <= H0:
            m *= 2.0
        cap[r] = m
    # parametrise the affine feasible set mu = mu0 + N s
    _, sv, vt = np.linalg.svd(Gam)
    rank = int(np.sum(sv > 1e-12))
    N = vt[rank:].T  # R x k
    k = N.shape[1]

    def H_of(s):
        mu = mu0 + N @ np.atleast_1d(s)
        mu = np.where(np.abs(mu) < 1e-13, 0.0, mu)
        if np.any(mu < 0) or np.any(mu > cap * (1 + 1e-12) + 1e-300):
            return math.inf
        return entropy(mu, lam)

    zeros, caps = np.zeros(R), cap
    if k == 0:
        best, mu_best = H_of(np.zeros(0)), mu0
    elif k == 1:
        lo, hi = _interval(mu0, N[:, 0], zeros, caps)
        grid = np.linspace(lo, hi, grid_n)
        vals = np.array([H_of(s) for s in grid])
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_n - 1)]
        s_best, best = _golden(lambda s: H_of(s), a, b)
        if vals[i] < best:
            s_best, best = grid[i], vals[i]
        mu_best = mu0 + N[:, 0] * s_best
    else:
        n1 = max(16, int(math.sqrt(grid_n)))

        def inner(s1):
            off = mu0 + N[:, 0] * s1
            lo2, hi2 = _interval(mu0, N[:, 1], zeros, caps, extra_offset=off)
            if lo2 > hi2:
                return math.inf, 0.0
            g2 = np.linspace(lo2, hi2, n1)
            v2 = [H_of(np.array([s1, s])) for s in g2]
            j = int(np.argmin(v2))
            a, b = g2[max(j - 1, 0)], g2[min(j + 1, n1 - 1)]
            s2, val = _golden(lambda s: H_of(np.array([s1, s])), a, b)
            if v2[j] < val:
                s2, val = g2[j], v2[j]
            return val, s2

        # s1 range from the polytope vertices (LP over each direction)
        bounds1 = []
        for sign in (1.0, -1.0):
            res = linprog(
                np.array([sign, 0.0]),
                A_ub=np.vstack([-N, N]),
                b_ub=np.concatenate([mu0, caps - mu0]),
                bounds=[(None, None)] * 2,
                method="highs",
            )
            bounds1.append(sign * res.fun)
        lo1, hi1 = bounds1[0], bounds1[1]
        g1 = np.linspace(lo1, hi1, n1)
        v1 = [inner(s)[0] for s in g1]
        i = int(np.argmin(v1))
        a, b = g1[max(i - 1, 0)], g1[min(i + 1, n1 - 1)]
        s1, best = _golden(lambda s: inner(s)[0], a, b, iters=60)
        if v1[i] < best:
            s1, best = g1[i], v1[i]
        s2 = inner(s1)[1]
        mu_best = mu0 + N @ np.array([s1, s2])
    gap = abs(lag - best) if math.isfinite(lag) and math.isfinite(best) else (0.0 if lag == best else math.inf)
    return DualityReport(lag, best, gap, mu_best)


# ---------------------------------------------------------------- potential bound


def potential_lower_bound(net: ReactionNetwork, y: MacroPath, x0, n, kappa: float, eps: float, quad_pts: int = 8) -> float:
    """Lower bound for the action of ``y`` on the window after it leaves the boundary.

    With Phi(y) = log(n.(y - x0)) and theta = kappa grad Phi, the bound is
    kappa Phi(y(t1)) - kappa Phi(y(t_eps)) - sum_r int lambda_r(y) exp(kappa gamma_r.grad Phi) dt,
    where t_eps is the first time n.(y - x0) reaches ``eps`` and t1 = T.
    An empty window gives the trivial bound 0.
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    x0 = _vec(net, x0)
    n = _vec(net, n)
    h = (y.points - x0) @ n
    t_eps = None
    for i in range(len(h)):
        if h[i] >= eps:
            if i == 0:
                t_eps = y.times[0]
            else:
                frac = (eps - h[i - 1]) / (h[i] - h[i - 1])
                t_eps = y.times[i - 1] + frac * (y.times[i] - y.times[i - 1])
            break
    t1 = y.T
    if t_eps is None or t_eps >= t1 or float((y(t1) - x0) @ n) < eps:
        return 0.0
    gamma = net.gamma_matrix.T.astype(float)
    gn = gamma @ n
    rates = _LogRateEval(net)
    sub = y.restrict(t_eps, t1)
    slopes = sub.slopes()
    integral = 0.0
    for i in range(sub.n_segments):
        dt = float(sub.times[i + 1] - sub.times[i])
        if dt == 0.0:
            continue

        def fv(s, i=i):
            out = np.empty(len(s))
            for j, si in enumerate(s):
                p = sub.points[i] + si * slopes[i]
                hp = float((p - x0) @ n)
                expo = rates(p) + kappa * gn / hp
                out[j] = float(np.sum(np.exp(np.minimum(expo, 700.0))))
            return out

        integral += integrate(fv, 0.0, dt, q=quad_pts).value
    phi1 = math.log(float((y(t1) - x0) @ n))
    phi0 = math.log(eps)
    return kappa * (phi1 - phi0) - integral
