"""Piecewise-linear macroscopic paths."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class MacroPath:
    """Piecewise-linear path through breakpoints ``(times[i], points[i])``."""

    times: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        p = np.ascontiguousarray(self.points, dtype=np.float64)
        if p.ndim == 1:
            p = p[:, None]
        if t.ndim != 1 or len(t) < 1 or p.shape[0] != len(t):
            raise ValidationError("path needs matching 1-d times and (m, d) points")
        if np.any(np.diff(t) < 0):
            raise ValidationError("path breakpoint times must be nondecreasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(p))):
            raise ValidationError("path breakpoints must be finite")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "points", p)

    @classmethod
    def constant(cls, x, T: float) -> "MacroPath":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(np.array([0.0, T]), np.vstack([x, x]))

    @classmethod
    def linear(cls, x0, w, T: float, t0: float = 0.0) -> "MacroPath":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        w = np.atleast_1d(np.asarray(w, dtype=float))
        return cls(np.array([t0, t0 + T]), np.vstack([x0, x0 + T * w]))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_segments(self) -> int:
        return len(self.times) - 1

    def slopes(self) -> np.ndarray:
        """Per-segment derivative; zero-length segments get slope 0."""
        dt = np.diff(self.times)
        dz = np.diff(self.points, axis=0)
        out = np.zeros_like(dz)
        nz = dt > 0
        out[nz] = dz[nz] / dt[nz, None]
        return out

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.times, self.points[:, j]) for j in range(self.dim)]
        return np.stack(cols, axis=-1)

    def shifted(self, c: float) -> "MacroPath":
        return MacroPath(self.times + c, self.points)

    def restrict(self, a: float, b: float) -> "MacroPath":
        """Sub-path on ``[a, b]`` with interpolated end breakpoints."""
        inner = (self.times > a) & (self.times < b)
        t = np.concatenate([[a], self.times[inner], [b]])
        return MacroPath(t, self(t))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(self.dim)])
        for t, p in zip(self.times, self.points):
            w.writerow([fmt(t)] + [fmt(v) for v in p])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MacroPath":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0].strip() != "t":
            raise ValidationError("path CSV must start with header t,x_1,...")
        try:
            data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        except ValueError as exc:
            raise ValidationError(f"bad number in path CSV: {exc}") from None
        if data.ndim != 2 or data.shape[1] != len(rows[0]):
            raise ValidationError("ragged path CSV")
        return cls(data[:, 0], data[:, 1:])


def fmt(x: float) -> str:
    """17 significant digits, the shortest width that always round-trips."""
    x = float(x)
    if x == np.inf:
        return "inf"
    if x == -np.inf:
        return "-inf"
    if x != x:
        return "nan"
    return format(x, ".17g")
