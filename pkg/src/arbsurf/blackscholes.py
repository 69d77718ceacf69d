"""Black-Scholes analytics on pure (forward-normalised, undiscounted) prices.

Everything here is written in terms of total variance ``v = sigma**2 * T`` so the
kernel ``call(s, k, v)`` can be reused directly as the mixture component of the
smooth surface.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, InputError

# Below this total variance the kernel is the intrinsic payoff.
ZERO_VARIANCE = 1e-16

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def norm_cdf(x):
    """Standard normal distribution function.

    ``scipy.special.ndtr`` evaluates through ``erfc`` in the tails, which keeps
    relative accuracy for large negative arguments (``norm_cdf(-8) ~ 6.2e-16``).
    """
    return ndtr(x)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):  # x*x overflows to inf and exp(-inf) is 0
        return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def call(s, k, v):
    """Undiscounted Black-Scholes call ``s N(d+) - k N(d-)``.

    Broadcasts over numpy arrays. ``v == 0`` gives ``(s - k)+`` and ``k == 0``
    gives ``s``. In-the-money prices are assembled as ``(s - k) + put`` so the
    small time-value part is not lost to cancellation.
    """
    s, k, v = np.broadcast_arrays(
        np.asarray(s, dtype=float), np.asarray(k, dtype=float), np.asarray(v, dtype=float)
    )
    if np.any(s <= 0) or np.any(k < 0) or np.any(v < 0):
        raise InputError("call requires s > 0, k >= 0, v >= 0")

    out = np.maximum(s - k, 0.0)
    live = (v >= ZERO_VARIANCE) & (k > 0)
    out = np.where(k == 0, s, out)
    if np.any(live):
        sl, kl, vl = s[live], k[live], v[live]
        sv = np.sqrt(vl)
        d_plus = (np.log(sl / kl) + 0.5 * vl) / sv
        d_minus = d_plus - sv
        otm = sl * ndtr(d_plus) - kl * ndtr(d_minus)
        itm = (sl - kl) + kl * ndtr(-d_minus) - sl * ndtr(-d_plus)
        price = np.where(kl < sl, itm, otm)
        out[live] = np.clip(price, np.maximum(sl - kl, 0.0), sl)
    return out if out.ndim else float(out)


def vega(s, k, v, T):
    """Sensitivity of :func:`call` to volatility ``sigma = sqrt(v / T)``.

    Returns 0 where ``v == 0`` or ``k == 0``.
    """
    s, k, v, T = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (s, k, v, T)))
    out = np.zeros(s.shape)
    live = (v > 0) & (k > 0)
    if np.any(live):
        sv = np.sqrt(v[live])
        d_plus = (np.log(s[live] / k[live]) + 0.5 * v[live]) / sv
        out[live] = s[live] * norm_pdf(d_plus) * np.sqrt(T[live])
    return out if out.ndim else float(out)


def implied_vol(price: float, s: float, k: float, T: float, tol: float = 1e-12,
                max_iter: int = 100) -> float:
    """Invert :func:`call` for the volatility.

    Newton steps in sigma, safeguarded by a bracket that is bisected whenever a
    Newton step leaves it or stalls. Raises :class:`DomainError` if ``price`` is
    outside ``[(s - k)+, s)``.
    """
    if T <= 0 or k <= 0 or s <= 0:
        raise InputError("implied_vol requires s > 0, k > 0, T > 0")
    lower = max(s - k, 0.0)
    if price < lower - tol * s:
        raise DomainError(f"price {price!r} below intrinsic lower bound {lower!r}")
    if price >= s:
        raise DomainError(f"price {price!r} at or above upper bound s={s!r}")
    if price <= lower:
        return 0.0

    target = tol * s

    def f(sig):
        return call(s, k, sig * sig * T) - price

    lo, hi = 0.0, 1.0
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e4:
            raise DomainError("implied volatility not bracketed")

    # At-the-money approximation as a starting point, kept inside the bracket.
    sig = math.sqrt(2.0 * math.pi / T) * price / s
    if not lo < sig < hi:
        sig = 0.5 * (lo + hi)
    for _ in range(max_iter):
        diff = f(sig)
        if diff > 0:
            hi = sig
        elif diff < 0:
            lo = sig
        vg = vega(s, k, sig * sig * T, T) if sig > 0 else 0.0
        # Keep refining after the price matches so sigma itself is accurate where vega is small.
        if abs(diff) <= target and (vg <= 0 or abs(diff) <= 1e-14 * max(sig, 1e-3) * vg or diff == 0):
            return sig
        step_ok = False
        if vg > 0:
            cand = sig - diff / vg
            if lo < cand < hi:
                sig, step_ok = cand, True
            elif abs(diff) <= target:
                return sig
        if not step_ok:
            sig = 0.5 * (lo + hi)
        if hi - lo < 1e-15 * max(1.0, hi):
            return sig
    return sig


def implied_vols(prices, s, k, T) -> np.ndarray:
    """Vectorised :func:`implied_vol`; entries that fail domain checks are NaN."""
    prices, s, k, T = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (prices, s, k, T)))
    out = np.full(prices.shape, np.nan)
    for idx in np.ndindex(prices.shape):
        try:
            out[idx] = implied_vol(prices[idx], s[idx], k[idx], T[idx])
        except DomainError:
            pass
    return out
