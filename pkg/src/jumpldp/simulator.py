"""Stochastic simulation of the scaled jump process and its flux counters.

Sample paths are produced by the direct method. Each trial draws its
uniforms from its own PCG64 stream, seeded by mixing the base seed with the
trial index, so results do not depend on how trials are scheduled.
"""

from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ._accel import njit
from .errors import DomainError, JumpCapExceeded, ValidationError
from .network import ReactionNetwork, ScaledState, fluid_limit, micro_rates, micro_rates_into
from .paths import MacroPath, fmt

MAX_JUMPS = 10_000_000
CHUNK = 4096
WILSON_Z = 1.959963984540054
_MASK = (1 << 64) - 1


def mix_seed(seed: int, index: int) -> int:
    """64-bit avalanche mix (splitmix64 finaliser) of a base seed and an index."""
    z = (int(seed) * 0x9E3779B97F4A7C15 + int(index) + 0x632BE59BD9B4E019) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def trial_rng(seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(seed, index)))


def parallel_map(fn: Callable, items: Sequence, jobs: Optional[int] = None) -> list:
    """Ordered map over a thread pool; ``jobs=1`` runs inline."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- kernel


@njit(nogil=True)
def ssa_kernel(counts, t, T, v, uni, gamma, xbuf, rates, out_t, out_r, kind, k, gin, ops, args, consts, cstart, cstop, stack):
    """Advance the direct method in place.

    Returns ``(jumps, t, used, status)``: status 0 reached ``T`` or an
    absorbing state, 1 uniforms exhausted, 2 output buffer full, 3 rate
    undefined.
    """
    R, d = gamma.shape
    n = 0
    used = 0
    while True:
        if n == out_t.shape[0]:
            return n, t, used, 2
        if used + 2 > uni.shape[0]:
            return n, t, used, 1
        if not micro_rates_into(counts, v, xbuf, kind, k, gin, ops, args, consts, cstart, cstop, stack, rates):
            return n, t, used, 3
        a0 = 0.0
        for r in range(R):
            a0 += rates[r]
        if a0 <= 0.0:
            return n, T, used, 0
        u1 = uni[used]
        u2 = uni[used + 1]
        used += 2
        tau = -math.log1p(-u1) / (v * a0)
        if t + tau > T:
            return n, T, used, 0
        t += tau
        target = u2 * a0
        acc = 0.0
        pick = -1
        for r in range(R):
            if rates[r] > 0.0:
                pick = r
                acc += rates[r]
                if target < acc:
                    break
        for i in range(d):
            counts[i] += gamma[pick, i]
        out_t[n] = t
        out_r[n] = pick
        n += 1


# ---------------------------------------------------------------- paths


@dataclass(frozen=True)
class JumpPath:
    """Piecewise-constant path started at ``x0`` with jumps at ``jump_times``."""

    net: ReactionNetwork
    v: int
    x0: ScaledState
    jump_times: np.ndarray
    jump_reactions: np.ndarray
    T: float

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def count_states(self) -> np.ndarray:
        """Integer states: row 0 is x0, row k the state after jump k."""
        G = self.net.gamma_matrix.T
        steps = G[self.jump_reactions] if self.n_jumps else np.zeros((0, self.net.dim), dtype=np.int64)
        return np.vstack([np.array(self.x0.counts, dtype=np.int64), np.array(self.x0.counts, dtype=np.int64) + np.cumsum(steps, axis=0)])

    def states(self) -> np.ndarray:
        return self.count_states() / self.v

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.jump_times, np.asarray(t, dtype=float), side="right")
        return self.states()[idx]

    def reaction_counts(self) -> np.ndarray:
        """Cumulative per-reaction counts; row k after jump k."""
        R = self.net.n_reactions
        onehot = np.zeros((self.n_jumps + 1, R), dtype=np.int64)
        if self.n_jumps:
            onehot[np.arange(1, self.n_jumps + 1), self.jump_reactions] = 1
        return np.cumsum(onehot, axis=0)

    def _rows(self, with_flux: bool) -> list[list[str]]:
        X = self.states()
        W = self.reaction_counts() / self.v if with_flux else None
        rows = []

        def row(t, r, i):
            cells = [fmt(t), str(r)] + [fmt(c) for c in X[i]]
            if with_flux:
                cells += [fmt(c) for c in W[i]]
            return cells

        rows.append(row(0.0, -1, 0))
        for j in range(self.n_jumps):
            rows.append(row(self.jump_times[j], int(self.jump_reactions[j]), j + 1))
        rows.append(row(self.T, -1, self.n_jumps))
        return rows

    def header(self, with_flux: bool = False) -> list[str]:
        h = ["t", "reaction"] + [f"x_{i + 1}" for i in range(self.net.dim)]
        if with_flux:
            h += [f"w_{r + 1}" for r in range(self.net.n_reactions)]
        return h

    def to_rows(self, with_flux: bool = False) -> list[list[str]]:
        return self._rows(with_flux)

    def to_csv(self, with_flux: bool = False) -> str:
        lines = [",".join(self.header(with_flux))] + [",".join(r) for r in self._rows(with_flux)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class FluxPath:
    """A jump path together with its scaled per-reaction counters W."""

    path: JumpPath

    def W(self, t) -> np.ndarray:
        idx = np.searchsorted(self.path.jump_times, np.asarray(t, dtype=float), side="right")
        return self.path.reaction_counts()[idx] / self.path.v

    def X(self, t) -> np.ndarray:
        return self.path(t)

    def identity_residual(self) -> int:
        """max |n(t) - n(0) - Gamma N(t)| over jump times, in integer counts."""
        C = self.path.count_states()
        N = self.path.reaction_counts()
        res = C - C[0] - N @ self.path.net.gamma_matrix.T
        return int(np.abs(res).max(initial=0))

    def to_csv(self) -> str:
        return self.path.to_csv(with_flux=True)


def _state(net: ReactionNetwork, v: int, x0) -> ScaledState:
    if isinstance(x0, ScaledState):
        if x0.v != v:
            raise ValidationError("initial state has a different v")
        s = x0
    else:
        s = ScaledState.from_x(v, x0)
    if len(s.counts) != net.dim:
        raise ValidationError(f"initial state must have {net.dim} coordinates")
    return s


def _simulate(net: ReactionNetwork, v: int, s: ScaledState, T: float, rng: np.random.Generator, max_jumps: int) -> JumpPath:
    if T < 0:
        raise ValidationError("T must be nonnegative")
    p = net.program
    counts = np.array(s.counts, dtype=np.int64)
    xbuf = np.empty(net.dim)
    rates = np.empty(net.n_reactions)
    stack = p.stack()
    out_t = np.empty(CHUNK)
    out_r = np.empty(CHUNK, dtype=np.int64)
    times, rxs = [], []
    total = 0
    t = 0.0
    uni = rng.random(2 * CHUNK)
    while True:
        n, t, used, status = ssa_kernel(
            counts, t, float(T), v, uni, p.gamma, xbuf, rates, out_t, out_r, *p.kernel_args(), stack
        )
        if n:
            times.append(out_t[:n].copy())
            rxs.append(out_r[:n].copy())
            total += n
        if total > max_jumps:
            raise JumpCapExceeded(f"more than {max_jumps} jumps before t={T}")
        if status == 0:
            break
        if status == 3:
            raise DomainError(f"rate undefined at counts={counts.tolist()}")
        uni = np.concatenate([uni[used:], rng.random(2 * CHUNK)])
    jt = np.concatenate(times) if times else np.zeros(0)
    jr = np.concatenate(rxs) if rxs else np.zeros(0, dtype=np.int64)
    return JumpPath(net, v, s, jt, jr, float(T))


def ssa_simulate(net: ReactionNetwork, v: int, x0, T: float, seed: int, max_jumps: int = MAX_JUMPS) -> JumpPath:
    """One exact sample path of the scaled process on [0, T]."""
    v = _check_v(v)
    return _simulate(net, v, _state(net, v, x0), T, trial_rng(seed), max_jumps)


def simulate_with_flux(net: ReactionNetwork, v: int, x0, T: float, seed: int, max_jumps: int = MAX_JUMPS) -> FluxPath:
    """Same sample path as :func:`ssa_simulate` with per-reaction counters."""
    return FluxPath(ssa_simulate(net, v, x0, T, seed, max_jumps))


def _check_v(v) -> int:
    if int(v) != v or v < 1:
        raise ValidationError("v must be a positive integer")
    return int(v)


# ---------------------------------------------------------------- reachable set


@dataclass(frozen=True)
class StateGraph:
    """Breadth-first exploration of lattice states with transition rates v*Lambda."""

    v: int
    states: list  # count tuples, BFS order
    transitions: list  # per state: list of (target index or -1 for outside, rate)
    truncated: bool

    def x(self) -> np.ndarray:
        return np.array(self.states, dtype=float).reshape(len(self.states), -1) / self.v


def explore(net: ReactionNetwork, v: int, x0, state_cap: int) -> StateGraph:
    if state_cap < 1:
        raise ValidationError("state_cap must be at least 1")
    v = _check_v(v)
    s0 = _state(net, v, x0).counts
    gamma = [tuple(r.gamma) for r in net.reactions]
    index = {s0: 0}
    states = [s0]
    trans: list = []
    queue = deque([s0])
    truncated = False
    while queue:
        s = queue.popleft()
        rates = micro_rates(net, ScaledState(v, s))
        out = []
        for r, lam in enumerate(rates):
            if lam <= 0.0 or not any(gamma[r]):
                continue
            t = tuple(a + b for a, b in zip(s, gamma[r]))
            j = index.get(t)
            if j is None:
                if len(states) >= state_cap:
                    truncated = True
                    out.append((-1, v * lam))
                    continue
                j = len(states)
                index[t] = j
                states.append(t)
                queue.append(t)
            out.append((j, v * lam))
        trans.append(out)
    return StateGraph(v, states, trans, truncated)


@dataclass(frozen=True)
class ReachableSet:
    v: int
    states: np.ndarray  # rows x = n / v
    truncated: bool

    def __len__(self) -> int:
        return len(self.states)


def reachable_set(net: ReactionNetwork, v: int, x0, state_cap: int = 10_000) -> ReachableSet:
    """States reachable from ``x0`` through jumps of positive rate, BFS order."""
    g = explore(net, v, x0, state_cap)
    return ReachableSet(g.v, g.x(), g.truncated)


# ---------------------------------------------------------------- tubes


def sup_distance(path: JumpPath, z: MacroPath) -> float:
    """Exact sup over [0, T] of the Euclidean distance between a jump path and ``z``.

    Between consecutive event times the jump path is constant and ``z`` is
    linear, so the distance is convex there and peaks at an endpoint; both
    one-sided limits are checked at every event.
    """
    T = path.T
    if z.t0 > 0 or z.T < T:
        raise ValidationError("reference path must cover [0, T]")
    zt = z.times[(z.times > 0) & (z.times < T)]
    events = np.union1d(np.union1d(path.jump_times, zt), [0.0, T])
    X = path.states()
    left_idx = np.searchsorted(path.jump_times, events, side="left")  # state just before each event
    right_idx = np.searchsorted(path.jump_times, events, side="right")
    Z = z(events)
    d_right = np.linalg.norm(X[right_idx] - Z, axis=1)
    d_left = np.linalg.norm(X[left_idx] - Z, axis=1)
    return float(max(d_right.max(), d_left.max()))


@dataclass(frozen=True)
class TubeEstimate:
    v: int
    trials: int
    hits: int
    p_hat: float
    wilson: tuple
    log_estimate: Optional[float]  # (1/v) log p_hat, None when there are no hits

    @property
    def zero_hits(self) -> bool:
        return self.hits == 0

    def to_dict(self) -> dict:
        return {
            "v": self.v,
            "trials": self.trials,
            "hits": self.hits,
            "p_hat": self.p_hat,
            "wilson_lo": self.wilson[0],
            "wilson_hi": self.wilson[1],
            "log_estimate": self.log_estimate,
            "zero_hits": self.zero_hits,
        }


def wilson_interval(hits: int, trials: int, z: float = WILSON_Z) -> tuple[float, float]:
    if trials <= 0:
        raise ValidationError("need at least one trial")
    p = hits / trials
    den = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if hits == 0 else max(0.0, centre - half)
    hi = 1.0 if hits == trials else min(1.0, centre + half)
    return lo, hi


def tube_probability_mc(
    net: ReactionNetwork,
    v: int,
    x0,
    z: MacroPath,
    delta: float,
    trials: int,
    seed: int,
    jobs: Optional[int] = None,
    max_jumps: int = MAX_JUMPS,
) -> TubeEstimate:
    """Monte Carlo estimate of P[sup_t ||X(t) - z(t)|| <= delta]."""
    if delta < 0:
        raise ValidationError("delta must be nonnegative")
    if trials < 1:
        raise ValidationError("trials must be positive")
    v = _check_v(v)
    s = _state(net, v, x0)
    T = z.T

    def one(i: int) -> bool:
        path = _simulate(net, v, s, T, trial_rng(seed, i), max_jumps)
        return sup_distance(path, z) <= delta

    hits = int(sum(parallel_map(one, range(trials), jobs)))
    p = hits / trials
    return TubeEstimate(v, trials, hits, p, wilson_interval(hits, trials), math.log(p) / v if hits else None)


@dataclass(frozen=True)
class FluidGap:
    gaps: tuple
    median: float


def fluid_gap(
    net: ReactionNetwork, v: int, x0, T: float, seeds: Iterable[int], steps: int = 2000, jobs: Optional[int] = None
) -> FluidGap:
    """Per-seed sup distance between a sample path and the fluid limit."""
    v = _check_v(v)
    s = _state(net, v, x0)
    z = fluid_limit(net, s.x, T, steps)
    seeds = list(seeds)
    gaps = parallel_map(lambda sd: sup_distance(_simulate(net, v, s, T, trial_rng(sd), MAX_JUMPS), z), seeds, jobs)
    return FluidGap(tuple(gaps), float(np.median(gaps)) if gaps else 0.0)
