"""Reaction networks, their microscopic and macroscopic rates, and the fluid limit.

A network has species ``1..d`` and reactions ``r`` with stoichiometry
``gamma_in``/``gamma_out``. Each reaction carries either a mass-action rate
constant or a parsed rate expression. Rates are evaluated by numba kernels
driven by a flat :class:`RateProgram`, so the simulators can call them
without returning to Python.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np

from ._accel import njit
from .errors import BlowUpError, DomainError, ParseError, ValidationError
from .expr import compile_expression, eval_code, eval_code_log, format_expression, max_stack_depth, parse_expression
from .paths import MacroPath

KIND_MASS_ACTION = 0
KIND_EXPR = 1


@dataclass(frozen=True)
class MassAction:
    k: float

    def __post_init__(self):
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise ValidationError(f"rate constant must be finite and nonnegative, got {self.k}")


@dataclass(frozen=True)
class Expression:
    ast: tuple
    formula: str = ""

    @property
    def canonical(self) -> str:
        return format_expression(self.ast)


RateLaw = Union[MassAction, Expression]


@dataclass(frozen=True)
class Reaction:
    gamma_in: tuple
    gamma_out: tuple
    rate_law: RateLaw
    placeholder: bool = False

    def __post_init__(self):
        gi = tuple(int(v) for v in self.gamma_in)
        go = tuple(int(v) for v in self.gamma_out)
        if len(gi) != len(go):
            raise ValidationError("gamma_in and gamma_out differ in length")
        if min(gi + go, default=0) < 0:
            raise ValidationError("stoichiometric coefficients must be nonnegative")
        object.__setattr__(self, "gamma_in", gi)
        object.__setattr__(self, "gamma_out", go)
        if not self.placeholder and gi == go:
            raise ValidationError("reaction has zero jump vector; mark it as a placeholder")

    @property
    def gamma(self) -> tuple:
        return tuple(o - i for i, o in zip(self.gamma_in, self.gamma_out))


@dataclass(frozen=True)
class RateProgram:
    """Flat array encoding of all rate laws, consumed by the kernels."""

    kind: np.ndarray
    k: np.ndarray
    gin: np.ndarray
    gamma: np.ndarray
    cstart: np.ndarray
    cstop: np.ndarray
    ops: np.ndarray
    args: np.ndarray
    consts: np.ndarray
    stack_size: int

    def stack(self) -> np.ndarray:
        return np.zeros(self.stack_size, dtype=np.float64)

    def kernel_args(self):
        return (self.kind, self.k, self.gin, self.ops, self.args, self.consts, self.cstart, self.cstop)


@dataclass(frozen=True)
class ReactionNetwork:
    name: str
    species: tuple
    reactions: tuple
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "reactions", tuple(self.reactions))
        if not self.species:
            raise ValidationError("network needs at least one species")
        if len(set(self.species)) != len(self.species):
            raise ValidationError("species names must be unique")
        if not self.reactions:
            raise ValidationError("network needs at least one reaction")
        for r in self.reactions:
            if len(r.gamma_in) != self.dim:
                raise ValidationError("reaction stoichiometry length differs from species count")

    @property
    def dim(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def gamma_matrix(self) -> np.ndarray:
        """``d x R`` matrix with the jump vectors as columns."""
        if "Gamma" not in self._cache:
            g = np.array([r.gamma for r in self.reactions], dtype=np.int64).T
            g.setflags(write=False)
            self._cache["Gamma"] = g
        return self._cache["Gamma"]

    @property
    def program(self) -> RateProgram:
        if "program" not in self._cache:
            self._cache["program"] = _build_program(self)
        return self._cache["program"]

    def macro_rates(self, x) -> np.ndarray:
        return macro_rates(self, x)


def _build_program(net: ReactionNetwork) -> RateProgram:
    R, d = net.n_reactions, net.dim
    kind = np.zeros(R, dtype=np.int64)
    k = np.zeros(R, dtype=np.float64)
    gin = np.array([r.gamma_in for r in net.reactions], dtype=np.int64).reshape(R, d)
    gamma = np.array([r.gamma for r in net.reactions], dtype=np.int64).reshape(R, d)
    cstart = np.zeros(R, dtype=np.int64)
    cstop = np.zeros(R, dtype=np.int64)
    code: list[tuple[int, int]] = []
    consts: list[float] = []
    depth = 1
    for j, r in enumerate(net.reactions):
        if isinstance(r.rate_law, MassAction):
            k[j] = r.rate_law.k
        else:
            kind[j] = KIND_EXPR
            c = compile_expression(r.rate_law.ast, consts)
            depth = max(depth, max_stack_depth(c))
            cstart[j] = len(code)
            code.extend(c)
            cstop[j] = len(code)
    ops = np.array([c[0] for c in code] or [0], dtype=np.int64)
    args = np.array([c[1] for c in code] or [0], dtype=np.int64)
    consts_a = np.array(consts or [0.0], dtype=np.float64)
    return RateProgram(kind, k, gin, gamma, cstart, cstop, ops, args, consts_a, depth)


# ---------------------------------------------------------------- kernels


@njit
def macro_rate_one(r, x, kind, k, gin, ops, args, consts, cstart, cstop, stack):
    """lambda_r(x); NaN flags a domain error."""
    if kind[r] == KIND_MASS_ACTION:
        val = k[r]
        for i in range(x.shape[0]):
            g = gin[r, i]
            if g > 0:
                xi = x[i]
                if xi < 0.0 or xi != xi:
                    return np.nan
                for _ in range(g):
                    val *= xi
        return val
    val = eval_code(ops, args, consts, cstart[r], cstop[r], x, stack)
    if val != val or val < 0.0 or val == np.inf:
        return np.nan
    return val


@njit
def macro_rates_into(x, kind, k, gin, ops, args, consts, cstart, cstop, stack, out):
    """Fill ``out`` with all lambda_r(x); returns False on a domain error."""
    ok = True
    for r in range(kind.shape[0]):
        val = macro_rate_one(r, x, kind, k, gin, ops, args, consts, cstart, cstop, stack)
        if val != val:
            ok = False
        out[r] = val
    return ok


@njit
def log_macro_rate_one(r, x, kind, k, gin, ops, args, consts, cstart, cstop, ss, sL):
    """log lambda_r(x), computed without underflow; NaN flags a domain error."""
    if kind[r] == KIND_MASS_ACTION:
        if k[r] == 0.0:
            return -np.inf
        L = math.log(k[r])
        for i in range(x.shape[0]):
            g = gin[r, i]
            if g > 0:
                xi = x[i]
                if xi < 0.0 or xi != xi:
                    return np.nan
                if xi == 0.0:
                    return -np.inf
                L += g * math.log(xi)
        return L
    s, L = eval_code_log(ops, args, consts, cstart[r], cstop[r], x, ss, sL)
    if L != L or s < 0.0 or (s > 0.0 and L == np.inf):
        return np.nan
    if s == 0.0:
        return -np.inf
    return L


@njit
def log_macro_rates_into(x, kind, k, gin, ops, args, consts, cstart, cstop, ss, sL, out):
    ok = True
    for r in range(kind.shape[0]):
        val = log_macro_rate_one(r, x, kind, k, gin, ops, args, consts, cstart, cstop, ss, sL)
        if val != val:
            ok = False
        out[r] = val
    return ok


@njit
def micro_rates_into(counts, v, xbuf, kind, k, gin, ops, args, consts, cstart, cstop, stack, out):
    """Fill ``out`` with Lambda^v_r at lattice state ``counts / v``."""
    d = counts.shape[0]
    for i in range(d):
        xbuf[i] = counts[i] / v
    ok = True
    for r in range(kind.shape[0]):
        if kind[r] == KIND_MASS_ACTION:
            ff = 1.0
            tot = 0
            for i in range(d):
                g = gin[r, i]
                n = counts[i]
                if n < g:
                    ff = 0.0
                for j in range(g):
                    ff *= n - j
                tot += g
            val = k[r] * (ff / float(v) ** tot) if ff > 0.0 else 0.0
        else:
            val = eval_code(ops, args, consts, cstart[r], cstop[r], xbuf, stack)
            if val != val or val < 0.0 or val == np.inf:
                val = np.nan
                ok = False
        out[r] = val
    return ok


@njit
def _drift_into(x, gamma, rates, kind, k, gin, ops, args, consts, cstart, cstop, stack, out):
    ok = macro_rates_into(x, kind, k, gin, ops, args, consts, cstart, cstop, stack, rates)
    for i in range(out.shape[0]):
        s = 0.0
        for r in range(rates.shape[0]):
            if gamma[r, i] != 0:
                s += rates[r] * gamma[r, i]
        out[i] = s
    return ok


@njit
def rk4_kernel(x0, T, steps, bound, gamma, kind, k, gin, ops, args, consts, cstart, cstop, stack):
    """Classical RK4; status 0 ok, 1 domain error, 2 blow-up."""
    d = x0.shape[0]
    R = kind.shape[0]
    h = T / steps
    out = np.empty((steps + 1, d))
    out[0] = x0
    rates = np.empty(R)
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    x = x0.copy()
    for s in range(steps):
        ok = _drift_into(x, gamma, rates, kind, k, gin, ops, args, consts, cstart, cstop, stack, k1)
        for i in range(d):
            tmp[i] = x[i] + 0.5 * h * k1[i]
        ok = ok and _drift_into(tmp, gamma, rates, kind, k, gin, ops, args, consts, cstart, cstop, stack, k2)
        for i in range(d):
            tmp[i] = x[i] + 0.5 * h * k2[i]
        ok = ok and _drift_into(tmp, gamma, rates, kind, k, gin, ops, args, consts, cstart, cstop, stack, k3)
        for i in range(d):
            tmp[i] = x[i] + h * k3[i]
        ok = ok and _drift_into(tmp, gamma, rates, kind, k, gin, ops, args, consts, cstart, cstop, stack, k4)
        if not ok:
            return out[: s + 1], 1
        nrm = 0.0
        for i in range(d):
            x[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            nrm += x[i] * x[i]
        out[s + 1] = x
        if not (math.sqrt(nrm) <= bound):
            return out[: s + 2], 2
    return out, 0


# ---------------------------------------------------------------- parsing


def model_from_dict(doc: dict) -> ReactionNetwork:
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object")
    name = str(doc.get("name", "model"))
    species = doc.get("species")
    if not isinstance(species, list) or not all(isinstance(s, str) for s in species):
        raise ValidationError("'species' must be a list of names")
    index = {s: i for i, s in enumerate(species)}
    reactions = []
    for j, rdoc in enumerate(doc.get("reactions") or []):
        where = f"reaction {j}"
        vecs = []
        for key in ("in", "out"):
            vec = [0] * len(species)
            for sp, n in (rdoc.get(key) or {}).items():
                if sp not in index:
                    raise ValidationError(f"{where}: unknown species {sp!r} in '{key}'")
                if not isinstance(n, int) or isinstance(n, bool) or n < 0:
                    raise ValidationError(f"{where}: coefficient of {sp!r} must be a nonnegative integer")
                vec[index[sp]] = n
            vecs.append(vec)
        rate = rdoc.get("rate")
        if not isinstance(rate, dict):
            raise ValidationError(f"{where}: missing 'rate'")
        if rate.get("type") == "mass_action":
            kval = rate.get("k")
            if not isinstance(kval, (int, float)) or isinstance(kval, bool):
                raise ValidationError(f"{where}: 'k' must be a number")
            if kval < 0:
                raise ValidationError(f"{where}: negative rate constant {kval}")
            law: RateLaw = MassAction(float(kval))
        elif rate.get("type") == "expr":
            formula = rate.get("formula")
            if not isinstance(formula, str):
                raise ValidationError(f"{where}: 'formula' must be a string")
            try:
                ast = parse_expression(formula, species)
            except ParseError as exc:
                raise ParseError(exc.reason, exc.line, exc.column, where) from None
            law = Expression(ast, formula)
        else:
            raise ValidationError(f"{where}: rate type must be 'mass_action' or 'expr'")
        reactions.append(Reaction(tuple(vecs[0]), tuple(vecs[1]), law, bool(rdoc.get("placeholder", False))))
    return ReactionNetwork(name, tuple(species), tuple(reactions))


def parse_model(text: str) -> ReactionNetwork:
    """Parse a JSON model document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return model_from_dict(doc)


def model_to_dict(net: ReactionNetwork) -> dict:
    out = []
    for r in net.reactions:
        entry: dict = {
            "in": {s: n for s, n in zip(net.species, r.gamma_in) if n},
            "out": {s: n for s, n in zip(net.species, r.gamma_out) if n},
        }
        if isinstance(r.rate_law, MassAction):
            entry["rate"] = {"type": "mass_action", "k": r.rate_law.k}
        else:
            entry["rate"] = {"type": "expr", "formula": r.rate_law.canonical}
        if r.placeholder:
            entry["placeholder"] = True
        out.append(entry)
    return {"name": net.name, "species": list(net.species), "reactions": out}


def dump_model(net: ReactionNetwork) -> str:
    """Canonical JSON text; ``parse_model(dump_model(net))`` evaluates identically."""
    return json.dumps(model_to_dict(net), indent=2)


# ---------------------------------------------------------------- rates


@dataclass(frozen=True)
class ScaledState:
    v: int
    counts: tuple

    def __post_init__(self):
        if int(self.v) != self.v or self.v < 1:
            raise ValidationError("v must be a positive integer")
        object.__setattr__(self, "v", int(self.v))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))

    @property
    def x(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.float64) / self.v

    @classmethod
    def from_x(cls, v: int, x, tol: float = 1e-9) -> "ScaledState":
        """Lattice state nearest to ``x``; rejects points off the lattice."""
        vx = np.atleast_1d(np.asarray(x, dtype=float)) * v
        n = np.rint(vx)
        if np.any(np.abs(vx - n) > tol * np.maximum(1.0, np.abs(vx))):
            raise ValidationError(f"x={list(np.atleast_1d(x))} is not on the lattice of spacing 1/{v}")
        return cls(v, tuple(int(c) for c in n))


def _as_x(net: ReactionNetwork, x) -> np.ndarray:
    xa = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    if xa.shape != (net.dim,):
        raise ValidationError(f"state must have {net.dim} coordinates")
    return xa


def macro_rates(net: ReactionNetwork, x) -> np.ndarray:
    xa = _as_x(net, x)
    p = net.program
    out = np.empty(net.n_reactions)
    if not macro_rates_into(xa, *p.kernel_args(), p.stack(), out):
        bad = int(np.flatnonzero(np.isnan(out))[0])
        raise DomainError(f"rate of reaction {bad} undefined at x={xa.tolist()}")
    return out


def log_macro_rates(net: ReactionNetwork, x) -> np.ndarray:
    """log lambda_r(x) for all r; stays finite where lambda underflows."""
    xa = _as_x(net, x)
    p = net.program
    out = np.empty(net.n_reactions)
    if not log_macro_rates_into(xa, *p.kernel_args(), p.stack(), p.stack(), out):
        bad = int(np.flatnonzero(np.isnan(out))[0])
        raise DomainError(f"rate of reaction {bad} undefined at x={xa.tolist()}")
    return out


def macro_rate(net: ReactionNetwork, r: int, x) -> float:
    """lambda_r(x)."""
    xa = _as_x(net, x)
    p = net.program
    val = macro_rate_one(int(r), xa, *p.kernel_args(), p.stack())
    if val != val:
        raise DomainError(f"rate of reaction {r} undefined at x={xa.tolist()}")
    return float(val)


def micro_rate(net: ReactionNetwork, r: int, s: ScaledState) -> float:
    """Lambda^v_r at lattice state ``s``; binomials in exact integer arithmetic."""
    rx = net.reactions[r]
    if isinstance(rx.rate_law, Expression):
        return macro_rate(net, r, s.x)
    ff = 1
    for n, g in zip(s.counts, rx.gamma_in):
        if n < g:
            return 0.0
        ff *= math.comb(n, g) * math.factorial(g)
    return rx.rate_law.k * float(Fraction(ff, s.v ** sum(rx.gamma_in)))


def micro_rates(net: ReactionNetwork, s: ScaledState) -> np.ndarray:
    return np.array([micro_rate(net, r, s) for r in range(net.n_reactions)])


def drift(net: ReactionNetwork, x) -> np.ndarray:
    """sum_r lambda_r(x) gamma^r."""
    lam = macro_rates(net, x)
    return net.gamma_matrix.astype(float) @ lam


def fluid_limit(net: ReactionNetwork, x0, T: float, steps: int = 1000, bound: float = 1e8) -> MacroPath:
    """RK4 solution on a uniform grid, as a piecewise-linear path."""
    if T < 0 or steps < 1:
        raise ValidationError("need T >= 0 and steps >= 1")
    xa = _as_x(net, x0)
    p = net.program
    pts, status = rk4_kernel(xa, float(T), int(steps), float(bound), p.gamma, *p.kernel_args(), p.stack())
    if status == 1:
        raise DomainError(f"rate undefined along the fluid path near x={pts[-1].tolist()}")
    if status == 2:
        raise BlowUpError(f"fluid path exceeded norm {bound} before t={T}")
    return MacroPath(np.linspace(0.0, T, steps + 1), pts)


# ---------------------------------------------------------------- audits


@dataclass(frozen=True)
class ConvergenceAudit:
    v_ladder: tuple
    sups: tuple
    monotone: bool

    def rows(self):
        return [{"v": v, "sup": s} for v, s in zip(self.v_ladder, self.sups)]


def _grid(net: ReactionNetwork, grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None] if net.dim == 1 else g[None, :]
    if g.size == 0 or g.shape[1] != net.dim:
        raise ValidationError("grid must be a nonempty list of states")
    return g


def _snap(v: int, x: np.ndarray) -> ScaledState:
    return ScaledState(v, tuple(int(c) for c in np.rint(x * v)))


def audit_rate_convergence(net: ReactionNetwork, v_ladder: Sequence[int], grid) -> ConvergenceAudit:
    """sup over the grid (snapped to each lattice) of sum_r |Lambda^v_r - lambda_r|."""
    g = _grid(net, grid)
    sups = []
    for v in v_ladder:
        best = 0.0
        for x in g:
            s = _snap(int(v), x)
            diff = np.abs(micro_rates(net, s) - macro_rates(net, s.x)).sum()
            best = max(best, float(diff))
        sups.append(best)
    mono = all(b <= a for a, b in zip(sups, sups[1:]))
    return ConvergenceAudit(tuple(int(v) for v in v_ladder), tuple(sups), mono)


def audit_aleph(net: ReactionNetwork, v: int, grid) -> float:
    """min of Lambda^v_r / lambda_r over grid points with Lambda^v_r > 0."""
    g = _grid(net, grid)
    best = np.inf
    for x in g:
        s = _snap(int(v), x)
        mic = micro_rates(net, s)
        mac = macro_rates(net, s.x)
        for a, b in zip(mic, mac):
            if a > 0 and b > 0:
                best = min(best, a / b)
    return float(best)
