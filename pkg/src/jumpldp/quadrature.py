"""Adaptive composite Gauss-Legendre quadrature with dyadic refinement."""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np

MAX_DEPTH = 12


@functools.lru_cache(maxsize=None)
def gauss_legendre(q: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0


@dataclass
class QuadResult:
    value: float
    refined: bool = False  # maximum depth reached somewhere
    growing: bool = False  # still growing at maximum depth (likely divergent)
    panels: int = 0


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    q: int = 8,
    rtol: float = 1e-10,
    atol: float = 1e-14,
    max_depth: int = MAX_DEPTH,
) -> QuadResult:
    """Integrate ``f`` (vectorised over nodes) on ``[a, b]``.

    Panels are bisected until two halves agree with the whole panel; after
    ``max_depth`` bisections the finest estimate is kept. A panel whose
    refinement gain stopped shrinking is reported as ``growing``. An
    infinite node value short-circuits to ``+inf``.
    """
    if b <= a:
        return QuadResult(0.0)
    xs, ws = gauss_legendre(q)
    width = b - a

    def panel(lo: float, hi: float) -> float:
        h = hi - lo
        vals = f(lo + h * xs)
        if np.any(np.isposinf(vals)):
            return np.inf
        return float(h * (ws @ vals))

    res = QuadResult(0.0)
    total = 0.0
    stack = [(a, b, panel(a, b), 0, np.inf)]
    while stack:
        lo, hi, whole, depth, prev_gain = stack.pop()
        if whole == np.inf:
            return QuadResult(np.inf, res.refined, res.growing, res.panels)
        mid = 0.5 * (lo + hi)
        left, right = panel(lo, mid), panel(mid, hi)
        if left == np.inf or right == np.inf:
            return QuadResult(np.inf, res.refined, res.growing, res.panels)
        both = left + right
        gain = abs(both - whole)
        if gain <= max(rtol * abs(both), atol * (hi - lo) / width):
            total += both
            res.panels += 2
            continue
        if depth + 1 >= max_depth:
            total += both
            res.panels += 2
            res.refined = True
            if gain > 0.75 * prev_gain:
                res.growing = True
            continue
        stack.append((mid, hi, right, depth + 1, gain))
        stack.append((lo, mid, left, depth + 1, gain))
    res.value = total
    return res
