"""Exact transient laws of the jump process on a truncated state space.

Uniformization turns the generator Q into the stochastic matrix
P = I + Q/q and writes exp(tQ) as a Poisson(qt) mixture of powers of P.
All terms are nonnegative, so entries keep their relative accuracy even
when they are astronomically small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from ._accel import njit
from .errors import NumericError, ValidationError
from .network import ReactionNetwork
from .paths import fmt
from .simulator import explore

MAX_TERMS = 5_000_000


@dataclass(frozen=True)
class TruncatedChain:
    """Chain on explored states; index ``n_live`` is the absorbing sink."""

    v: int
    states: np.ndarray  # integer counts, one row per live state
    indptr: np.ndarray  # CSR of off-diagonal rates, rows = source
    indices: np.ndarray
    rates: np.ndarray
    q: float
    truncated: bool

    @property
    def n_live(self) -> int:
        return len(self.states)

    @property
    def x(self) -> np.ndarray:
        return self.states / self.v

    def outflow(self) -> np.ndarray:
        out = np.zeros(self.n_live + 1)
        np.add.at(out, np.repeat(np.arange(self.n_live), np.diff(self.indptr)), self.rates)
        return out


def build_chain(net: ReactionNetwork, v: int, x0, state_cap: int = 100_000) -> TruncatedChain:
    """Generator over the reachable states; exits from the truncation go to a sink."""
    g = explore(net, v, x0, state_cap)
    n = len(g.states)
    indptr = [0]
    indices, rates = [], []
    for row in g.transitions:
        for j, rate in row:
            indices.append(n if j < 0 else j)
            rates.append(rate)
        indptr.append(len(indices))
    chain = TruncatedChain(
        g.v,
        np.array(g.states, dtype=np.int64).reshape(n, net.dim),
        np.array(indptr, dtype=np.int64),
        np.array(indices, dtype=np.int64),
        np.array(rates, dtype=np.float64),
        0.0,
        g.truncated,
    )
    q = float(chain.outflow().max(initial=0.0))
    object.__setattr__(chain, "q", q)
    return chain


@njit
def uniformization_kernel(indptr, indices, rates, q, p0, weights):
    """sum_k weights[k] * p0 P^k with P = I + Q/q, Q given row-wise in CSR."""
    m = p0.shape[0]
    n_live = indptr.shape[0] - 1
    cur = p0.copy()
    nxt = np.empty(m)
    acc = weights[0] * cur
    for kk in range(1, weights.shape[0]):
        for i in range(m):
            nxt[i] = cur[i]
        for i in range(n_live):
            ci = cur[i]
            if ci == 0.0:
                continue
            for e in range(indptr[i], indptr[i + 1]):
                f = ci * (rates[e] / q)
                nxt[indices[e]] += f
                nxt[i] -= f
        for i in range(m):
            if nxt[i] < 0.0:
                nxt[i] = 0.0  # rounding in the diagonal
            cur[i] = nxt[i]
        w = weights[kk]
        if w > 0.0:
            for i in range(m):
                acc[i] += w * cur[i]
    return acc


@dataclass(frozen=True)
class Distribution:
    chain: TruncatedChain
    t: float
    probs: np.ndarray  # live states
    sink: float
    terms: int

    def total(self) -> float:
        return float(self.probs.sum() + self.sink)

    def to_csv(self) -> str:
        d = self.chain.states.shape[1]
        lines = ["state_index," + ",".join(f"x_{i + 1}" for i in range(d)) + ",prob"]
        for i, (x, p) in enumerate(zip(self.chain.x, self.probs)):
            lines.append(f"{i}," + ",".join(fmt(c) for c in x) + f",{fmt(p)}")
        if self.chain.truncated:
            lines.append("sink," + "," * (d - 1) + f",{fmt(self.sink)}")
        return "\n".join(lines) + "\n"


def _log_pmf(k, mean: float):
    return k * math.log(mean) - mean - gammaln(k + 1)


def poisson_weights(mean: float, tol: float) -> np.ndarray:
    """Poisson(mean) weights up to a point where the right tail is below ``tol``.

    Past the mode the terms decay at least geometrically with ratio
    mean/(K+1), which bounds the tail by w_K / (1 - mean/(K+1)).
    """
    if mean == 0.0:
        return np.ones(1)
    log_tol = math.log(tol)
    K = int(math.floor(mean)) + 1
    while True:
        ratio = mean / (K + 1)
        if ratio < 1.0 and _log_pmf(K, mean) - math.log1p(-ratio) < log_tol:
            break
        K += 1 + K // 64
        if K > MAX_TERMS:
            raise NumericError(f"uniformization needs more than {MAX_TERMS} terms; reduce t or the state cap")
    return np.exp(_log_pmf(np.arange(K + 1), mean))


def transient_distribution(chain: TruncatedChain, t: float, tol: float = 1e-12) -> Distribution:
    """Law at time ``t`` of the chain started in its first state."""
    if t < 0:
        raise ValidationError("t must be nonnegative")
    if not 0 < tol < 1:
        raise ValidationError("tol must lie in (0, 1)")
    m = chain.n_live + 1
    p0 = np.zeros(m)
    p0[0] = 1.0
    if t == 0.0 or chain.q == 0.0:
        return Distribution(chain, float(t), p0[:-1], 0.0, 1)
    w = poisson_weights(chain.q * t, tol)
    p = uniformization_kernel(chain.indptr, chain.indices, chain.rates, chain.q, p0, w)
    return Distribution(chain, float(t), p[:-1].copy(), float(p[-1]), len(w))


@dataclass(frozen=True)
class EventProbability:
    value: float  # sink-exclusive
    lower: float
    upper: float  # sink mass and truncation loss added


def event_probability(
    chain: TruncatedChain, t: float, predicate: Callable[[np.ndarray], bool], tol: float = 1e-12, bracket: bool = False
):
    """P[X(t) satisfies predicate]; with ``bracket`` also the sink-inclusive upper value."""
    dist = transient_distribution(chain, t, tol)
    mask = np.array([bool(predicate(x)) for x in chain.x], dtype=bool)
    val = float(dist.probs[mask].sum())
    if not bracket:
        return val
    lost = max(0.0, 1.0 - dist.total())
    return EventProbability(val, val, min(1.0, val + dist.sink + lost))


def yule_tail(t: float, k: int) -> float:
    """P[N(t) >= k] for the unit-rate Yule process started from one individual."""
    if k < 1 or int(k) != k:
        raise ValidationError("k must be a positive integer")
    if not t > 0:
        raise ValidationError("t must be positive")
    if k == 1 or math.isinf(t):
        return 1.0
    return math.exp((k - 1) * math.log1p(-math.exp(-t)))


def log_yule_tail(t: float, k: int) -> float:
    """log of :func:`yule_tail`, finite where the tail underflows."""
    yule_tail(t, k)
    if k == 1 or math.isinf(t):
        return 0.0
    return (k - 1) * math.log1p(-math.exp(-t))
