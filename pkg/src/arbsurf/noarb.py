"""Discrete no-arbitrage checks on call price grids.

Conventions: a slice is ``(strikes, calls)`` with strictly increasing strikes.
When the first strike is 0 it is the ``K^0`` row (price 1, slope -1) and the
unit-expectation and zero-unattainable conditions are checked too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

TOL = 1e-10

VIOLATION_KINDS = (
    "unit_expectation",
    "zero_attainable",
    "tail_nonzero",
    "nonconvex",
    "calendar",
    "slope_bounds",
)


@dataclass(frozen=True)
class Violation:
    kind: str
    expiry: int | None
    strike: int | None
    magnitude: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "expiry": self.expiry, "strike": self.strike,
                "magnitude": float(self.magnitude)}


@dataclass
class ArbReport:
    violations: list[Violation] = field(default_factory=list)

    def __bool__(self) -> bool:
        # Truthy when clean, so ``if report:`` reads as "passes".
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind, expiry, strike, magnitude):
        self.violations.append(Violation(kind, expiry, strike, float(magnitude)))

    def extend(self, other: "ArbReport"):
        self.violations.extend(other.violations)
        return self

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def of_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    def to_dict(self) -> dict:
        return {"violations": [v.to_dict() for v in self.violations]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict) -> "ArbReport":
        return cls([Violation(v["kind"], v.get("expiry"), v.get("strike"), v["magnitude"])
                    for v in doc["violations"]])


def _as_slice(strikes, calls):
    k = np.asarray(strikes, dtype=float)
    c = np.asarray(calls, dtype=float)
    if k.shape != c.shape or k.ndim != 1:
        raise InputError("strikes and calls must be 1-d arrays of equal length")
    if len(k) < 2:
        raise InputError("need at least two strikes")
    if np.any(np.diff(k) <= 0):
        raise InputError("strikes must be strictly increasing")
    return k, c


def slopes(strikes, calls) -> np.ndarray:
    """Interval slopes ``dC^i`` for ``i = 0..N-1`` followed by ``dC^N = 0``."""
    k, c = _as_slice(strikes, calls)
    return np.append(np.diff(c) / np.diff(k), 0.0)


@dataclass(frozen=True)
class DiscreteDensity:
    strikes: np.ndarray
    masses: np.ndarray
    negative: tuple[int, ...] = ()

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    @property
    def mean(self) -> float:
        return float(self.strikes @ self.masses)

    def price(self, K):
        """``sum_i p_i (K_i - K)+``, i.e. the call price under this density."""
        K = np.asarray(K, dtype=float)
        out = np.maximum(self.strikes - K[..., None], 0.0) @ self.masses
        return out if out.ndim else float(out)


def density_from_calls(strikes, calls, tol: float = TOL) -> DiscreteDensity:
    """Masses ``p^i = dC^i - dC^{i-1}`` at ``strikes[1:]``.

    Negative masses beyond ``tol`` are kept as-is and their indices (into the
    input strikes) listed in ``negative``.
    """
    k, c = _as_slice(strikes, calls)
    dc = slopes(k, c)
    p = np.diff(dc)
    neg = tuple(int(i) + 1 for i in np.nonzero(p < -tol)[0])
    return DiscreteDensity(strikes=k[1:].copy(), masses=p, negative=neg)


def check_slice(strikes, calls, expiry: int | None = None, tol: float = TOL) -> ArbReport:
    """All single-expiry conditions; strike indices refer to the input arrays.

    ``nonconvex`` at index ``i`` means ``dC^i > dC^{i+1}``.
    """
    k, c = _as_slice(strikes, calls)
    rep = ArbReport()
    dc = slopes(k, c)
    if k[0] == 0.0:
        if abs(c[0] - 1.0) > tol:
            rep.add("unit_expectation", expiry, 0, abs(c[0] - 1.0))
        if abs(dc[0] + 1.0) > tol:
            rep.add("zero_attainable", expiry, 0, abs(dc[0] + 1.0))
    if abs(c[-1]) > tol:
        rep.add("tail_nonzero", expiry, len(k) - 1, abs(c[-1]))
    for i in range(len(k) - 1):
        if dc[i] < -1.0 - tol:
            rep.add("slope_bounds", expiry, i, -1.0 - dc[i])
        elif dc[i] > tol:
            rep.add("slope_bounds", expiry, i, dc[i])
    for i in range(len(k) - 1):
        if dc[i] > dc[i + 1] + tol:
            rep.add("nonconvex", expiry, i, dc[i] - dc[i + 1])
    return rep


def linear_interp_calls(strikes, calls, at) -> np.ndarray:
    """Piecewise-linear interpolant of a call slice, extended the expensive way.

    Left of the first node the line runs to ``(0, 1)``; right of the last node
    the price stays flat. Both are upper bounds for any convex, decreasing
    extension, which is what a sufficient calendar test needs.
    """
    k, c = _as_slice(strikes, calls)
    at = np.asarray(at, dtype=float)
    if k[0] > 0:
        k = np.concatenate([[0.0], k])
        c = np.concatenate([[1.0], c])
    return np.interp(at, k, c, right=c[-1])


def check_calendar(slices, tol: float = TOL) -> ArbReport:
    """Later slices must dominate the earlier slice's linear interpolant.

    ``slices`` is a sequence of ``(strikes, calls)`` in expiry order; the
    violation's ``expiry`` is the index of the later slice.
    """
    rep = ArbReport()
    for j in range(1, len(slices)):
        k0, c0 = slices[j - 1]
        k1, c1 = _as_slice(*slices[j])
        ref = linear_interp_calls(k0, c0, k1)
        for i in np.nonzero(c1 < ref - tol)[0]:
            rep.add("calendar", j, int(i), ref[i] - c1[i])
    return rep


def check_surface(surface, T_grid, K_grid, tol: float = TOL, zero_eps: float = 1e-6,
                  slope_tol: float = 1e-6, tail_strike: float | None = None) -> ArbReport:
    """Grid-sampled conditions on any surface with ``price(T, K)``.

    Convexity via slope differences along each ``T``, calendar monotonicity
    at each fixed ``K``, ``C(T, 0) = 1``, slope ``-1`` at ``0+`` (finite
    difference over ``zero_eps``) and a tail check at ``tail_strike`` (default:
    the largest grid strike). Violation ``expiry``/``strike`` fields index the
    supplied grids.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    K_grid = np.unique(np.asarray(K_grid, dtype=float))
    rep = ArbReport()
    tail_k = float(K_grid[-1] if tail_strike is None else tail_strike)
    prev = None
    for a, T in enumerate(T_grid):
        row = np.asarray(surface.price(T, K_grid), dtype=float)
        dc = np.diff(row) / np.diff(K_grid)
        for i in np.nonzero(dc[:-1] > dc[1:] + tol)[0]:
            rep.add("nonconvex", a, int(i) + 1, dc[i] - dc[i + 1])
        for i in np.nonzero((dc < -1.0 - tol) | (dc > tol))[0]:
            rep.add("slope_bounds", a, int(i), max(-1.0 - dc[i], dc[i]))
        c0 = float(surface.price(T, 0.0))
        if abs(c0 - 1.0) > tol:
            rep.add("unit_expectation", a, None, abs(c0 - 1.0))
        ce = float(surface.price(T, zero_eps))
        slope0 = (ce - c0) / zero_eps
        if abs(slope0 + 1.0) > slope_tol:
            rep.add("zero_attainable", a, None, abs(slope0 + 1.0))
        ct = float(surface.price(T, tail_k))
        if ct > tol:
            rep.add("tail_nonzero", a, None, ct)
        if prev is not None:
            for i in np.nonzero(row < prev - tol)[0]:
                rep.add("calendar", a, int(i), prev[i] - row[i])
        prev = row
    return rep
