"""Piecewise-linear arbitrage-free baseline and the shared time interpolation.

Any surface defined by per-expiry slices ``C_j(K)`` becomes a full surface by
blending adjacent slices along fixed strikes with an increasing weight
``alpha_j(T)``. Before the first expiry the left bracket is the trivial slice
``C_0(K) = (1 - K)+``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import blackscholes as bs
from . import noarb
from .errors import ArbitrageError, ExtrapolationError, InputError

ALPHA_MODES = ("linear_T", "atm_variance")


def alpha_linear(T: float, T_lo: float, T_hi: float) -> float:
    if not T_lo < T_hi:
        raise InputError("bracket must satisfy T_lo < T_hi")
    if not T_lo <= T <= T_hi:
        raise InputError(f"T={T} outside bracket [{T_lo}, {T_hi}]")
    return (T - T_lo) / (T_hi - T_lo)


def atm_total_variance(atm_price: float) -> float:
    """Total variance ``W`` with ``call(1, 1, W) == atm_price``."""
    if atm_price <= 0.0:
        return 0.0
    if atm_price >= 1.0:
        raise InputError("at-the-money price must be below 1")
    return (2.0 * ndtri(0.5 * (1.0 + atm_price))) ** 2


def alpha_atm_variance(T: float, T_lo: float, T_hi: float, W_lo: float, W_hi: float,
                       C_lo: float, C_hi: float) -> float:
    """Weight from linear interpolation of ATM total variance.

    ``alpha = (call(1, 1, W(T)) - C_lo) / (C_hi - C_lo)``. Falls back to
    :func:`alpha_linear` when the ATM prices do not increase across the bracket.
    """
    a = alpha_linear(T, T_lo, T_hi)
    if not C_hi > C_lo or a in (0.0, 1.0):
        return a
    w = W_lo + (W_hi - W_lo) * a
    return min(max((bs.call(1.0, 1.0, w) - C_lo) / (C_hi - C_lo), 0.0), 1.0)


class TimeInterpolatedSurface:
    """Blends slices along fixed strikes; subclasses provide ``slice_price``.

    Subclasses set ``expiries`` (strictly increasing, positive) and
    ``alpha_mode`` and implement ``slice_price(j, K)`` for ``j = 1..M``.
    """

    expiries: np.ndarray
    alpha_mode: str = "linear_T"

    def slice_price(self, j: int, K):  # pragma: no cover - abstract
        raise NotImplementedError

    def _slice(self, j, K):
        if j == 0:
            return np.maximum(1.0 - np.asarray(K, dtype=float), 0.0)
        return self.slice_price(j, K)

    def _atm_table(self):
        # ATM prices and implied total variances, index 0 is the trivial slice.
        cache = getattr(self, "_atm_cache", None)
        if cache is None:
            c = [0.0] + [float(self.slice_price(j, 1.0)) for j in range(1, len(self.expiries) + 1)]
            w = [atm_total_variance(x) for x in c]
            cache = (np.array(c), np.array(w))
            object.__setattr__(self, "_atm_cache", cache)
        return cache

    def degenerate_brackets(self) -> list[int]:
        """Brackets where ATM prices do not increase, so ``atm_variance`` uses linear weights."""
        c, _ = self._atm_table()
        return [j for j in range(len(c) - 1) if not c[j + 1] > c[j]]

    def alpha(self, T: float, j: int) -> float:
        """Weight of slice ``j + 1`` for ``T`` in ``[T_j, T_{j+1}]``."""
        ts = np.concatenate([[0.0], self.expiries])
        if self.alpha_mode == "linear_T":
            return alpha_linear(T, ts[j], ts[j + 1])
        if self.alpha_mode == "atm_variance":
            c, w = self._atm_table()
            return alpha_atm_variance(T, ts[j], ts[j + 1], w[j], w[j + 1], c[j], c[j + 1])
        raise InputError(f"unknown alpha mode {self.alpha_mode!r}")

    def price(self, T: float, K, extrapolate: bool = False):
        """Call price at a single ``T`` for scalar or array ``K``."""
        T = float(T)
        ts = self.expiries
        if T < 0:
            raise InputError("T must be non-negative")
        if T > ts[-1]:
            if not extrapolate:
                raise ExtrapolationError(f"T={T} beyond last expiry {ts[-1]}")
            return self._slice(len(ts), K)
        if T == 0.0:
            return self._slice(0, K)
        j = int(np.searchsorted(ts, T, side="left"))  # T in (T_j, T_{j+1}] with T_0 = 0
        if T == ts[j]:
            return self._slice(j + 1, K)
        a = self.alpha(T, j)
        return a * self._slice(j + 1, K) + (1.0 - a) * self._slice(j, K)

    def eval_call(self, T, K, extrapolate: bool = False):
        return self.price(T, K, extrapolate=extrapolate)


@dataclass(frozen=True, eq=False)
class LinearSurface(TimeInterpolatedSurface):
    """Linear interpolation of arbitrage-free call grids.

    ``strikes[j]`` starts with the ``K^0 = 0`` row; ``densities[j]`` sits on
    ``strikes[j][1:]``.
    """

    expiries: np.ndarray
    strikes: tuple
    calls: tuple
    densities: tuple = ()
    alpha_mode: str = "linear_T"
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.alpha_mode not in ALPHA_MODES:
            raise InputError(f"unknown alpha mode {self.alpha_mode!r}")
        if not self.densities:
            dens = tuple(noarb.density_from_calls(k, c) for k, c in zip(self.strikes, self.calls))
            object.__setattr__(self, "densities", dens)
        if self.alpha_mode == "atm_variance":
            for j in self.degenerate_brackets():
                self.notes.append(f"bracket {j}: flat ATM price, alpha falls back to linear_T")

    @classmethod
    def from_grid(cls, expiries, strikes, calls, alpha_mode: str = "linear_T", check: bool = True):
        """Build from per-expiry call grids (a single strike vector is shared).

        A missing ``K^0 = 0`` row is added with price 1. With ``check`` the
        slices and their calendar order are verified and
        :class:`ArbitrageError` is raised on the first violation.
        """
        expiries = np.asarray(expiries, dtype=float)
        if np.ndim(strikes[0]) == 0:
            strikes = [strikes] * len(expiries)
        ks, cs = [], []
        for k, c in zip(strikes, calls):
            k, c = np.asarray(k, dtype=float), np.asarray(c, dtype=float)
            if k[0] > 0:
                k, c = np.concatenate([[0.0], k]), np.concatenate([[1.0], c])
            ks.append(k)
            cs.append(c)
        if len(ks) != len(expiries) or np.any(np.diff(expiries) <= 0) or expiries[0] <= 0:
            raise InputError("need one slice per strictly increasing positive expiry")
        if check:
            rep = noarb.ArbReport()
            for j, (k, c) in enumerate(zip(ks, cs)):
                rep.extend(noarb.check_slice(k, c, expiry=j))
            rep.extend(noarb.check_calendar(list(zip(ks, cs))))
            if not rep.ok:
                v = rep.violations[0]
                raise ArbitrageError(f"input grid has arbitrage: {v.kind} at expiry {v.expiry}, "
                                     f"strike {v.strike} (magnitude {v.magnitude:.3g})",
                                     expiry=v.expiry, strike=v.strike)
        return cls(expiries=expiries, strikes=tuple(ks), calls=tuple(cs), alpha_mode=alpha_mode)

    def slice_price(self, j: int, K):
        return self.densities[j - 1].price(K)

    def eval_slice(self, j: int, K):
        return self._slice(j, K)


def linear_from_snapshot(snapshot, alpha_mode: str = "linear_T", check: bool = True) -> LinearSurface:
    """Linear baseline through market mids with the boundary rows added.

    Each slice is ``(0, 1), (K_min, 1 - K_min)``, the usable mids, ``(K_max, 0)``.
    """
    k_min, k_max = snapshot.bounds
    strikes, calls = [], []
    for s in snapshot.slices:
        use = s.usable
        strikes.append(np.concatenate([[0.0, k_min], s.market_strikes[use], [k_max]]))
        calls.append(np.concatenate([[1.0, 1.0 - k_min], s.mids[use], [0.0]]))
    return LinearSurface.from_grid(snapshot.expiries, strikes, calls, alpha_mode=alpha_mode, check=check)


def bracket_index(expiries, T: float) -> int:
    """``j`` with ``T_j < T <= T_{j+1}`` (``T_0 = 0``)."""
    if T <= 0 or T > expiries[-1] or math.isnan(T):
        raise InputError(f"T={T} outside (0, {expiries[-1]}]")
    return int(np.searchsorted(expiries, T, side="left"))
