"""Synthetic arbitrage-free markets generated from a known smooth surface.

Densities come from a discrete-local-volatility chain, so they are in convex
order by construction. The backbone is set self-consistently: ``V_j`` equals
the ATM implied total variance of the generated surface at ``T_j``.
Quotes are the generated prices bumped by a fixed number of volatility
points on either side.
"""

from __future__ import annotations

import numpy as np

from . import blackscholes as bs
from . import dlv
from .linear_surface import atm_total_variance
from .market_data import ExpirySlice, MarketSnapshot, PureQuote, RawQuote, fit_weights
from .smooth_surface import SmoothSurface


def random_sigma(rng: np.random.Generator, strikes, n_expiries: int, level: float = 0.2,
                 jitter: float = 0.3, support=(0.4, 2.2)) -> np.ndarray:
    """DLVs around ``level`` with multiplicative noise; zero outside ``support``.

    Zero volatility outside the support keeps the generated densities away
    from the grid boundaries.
    """
    K = np.asarray(strikes, dtype=float)
    sig = level * (1.0 + jitter * rng.uniform(-1.0, 1.0, size=(n_expiries, len(K))))
    sig[:, (K < support[0]) | (K > support[1])] = 0.0
    return sig


def self_consistent_backbone(expiries, strikes, densities, eta: float, iters: int = 50) -> np.ndarray:
    """Fixed point of ``V_j = W(C_j(1; eta V_j))`` with ``W`` the ATM implied total variance."""
    K = np.asarray(strikes, dtype=float)
    V = np.array([atm_total_variance(float(np.maximum(K - 1.0, 0.0) @ q)) for q in densities])
    for _ in range(iters):
        new = np.array([atm_total_variance(float(bs.call(K, 1.0, eta * v) @ q)) for v, q in zip(V, densities)])
        if np.max(np.abs(new - V)) < 1e-15:
            break
        V = new
    for j in range(1, len(V)):
        V[j] = max(V[j], V[j - 1] + 1e-8)
    return V


def dlv_surface(expiries, strikes, sigma, eta: float, alpha_mode: str = "linear_T") -> SmoothSurface:
    K = np.asarray(strikes, dtype=float)
    T = np.asarray(expiries, dtype=float)
    chain = dlv.DlvSurface(strikes=K, expiries=T, sigma=sigma, variances=np.arange(1.0, len(T) + 1))
    dens = dlv.densities_from_dlv(chain)
    V = self_consistent_backbone(T, K, dens, eta)
    return SmoothSurface(expiries=T, grids=tuple(K for _ in T), densities=tuple(dens), variances=V,
                         eta=eta, alpha_mode=alpha_mode)


def vol_quotes(surface: SmoothSurface, j: int, strikes, half_spread_vol: float):
    """Bid/ask from the generated implied vol minus/plus ``half_spread_vol``."""
    T = float(surface.expiries[j - 1])
    prices = np.asarray(surface.slice_price(j, strikes))
    sig = np.array([bs.implied_vol(p, 1.0, k, T) for p, k in zip(prices, strikes)])
    bid = np.asarray(bs.call(1.0, strikes, np.maximum(sig - half_spread_vol, 0.0) ** 2 * T))
    ask = np.asarray(bs.call(1.0, strikes, (sig + half_spread_vol) ** 2 * T))
    return bid, ask, prices


def market_from_surface(surface: SmoothSurface, market_strikes, half_spread_vol: float = 0.005,
                        weight_mode: str = "inv_spread", grid=None, bounds=None) -> MarketSnapshot:
    """Quotes at ``market_strikes[j]`` per expiry on the model grid ``grid`` (default: the surface's)."""
    grid = surface.grids[0] if grid is None else np.asarray(grid, dtype=float)
    bounds = (float(grid[0]), float(grid[-1])) if bounds is None else bounds
    slices = []
    for j, ks in enumerate(market_strikes, 1):
        ks = np.asarray(ks, dtype=float)
        T = float(surface.expiries[j - 1])
        if half_spread_vol > 0:
            bid, ask, _ = vol_quotes(surface, j, ks, half_spread_vol)
        else:
            bid = ask = np.asarray(surface.slice_price(j, ks))
        quotes = [PureQuote(T=T, k=float(k), bid=float(b), ask=float(a)) for k, b, a in zip(ks, bid, ask)]
        if half_spread_vol > 0:
            w = fit_weights(quotes, weight_mode)
        else:
            w = np.ones(len(quotes))
        quotes = [PureQuote(T=q.T, k=q.k, bid=q.bid, ask=q.ask, weight=float(x)) for q, x in zip(quotes, w)]
        slices.append(ExpirySlice(T=T, quotes=tuple(quotes), model_strikes=grid))
    return MarketSnapshot(slices=tuple(slices), bounds=bounds)


def quoted_strikes(surface: SmoothSurface, j: int, candidates, min_vega_over_sqrt_t: float = 1e-3,
                   stride: int = 2):
    """Every ``stride``-th candidate strike passing the vega filter at expiry ``j``."""
    T = float(surface.expiries[j - 1])
    cand = np.asarray(candidates, dtype=float)
    prices = np.asarray(surface.slice_price(j, cand))
    keep = []
    for k, p in zip(cand, prices):
        if not max(1.0 - k, 0.0) < p < 1.0:
            continue
        sig = bs.implied_vol(float(p), 1.0, float(k), T)
        if bs.vega(1.0, k, sig * sig * T, T) / np.sqrt(T) >= min_vega_over_sqrt_t:
            keep.append(k)
    return np.array(keep[::stride])


def standard_case(n_expiries: int = 8, n_strikes: int = 40, eta: float = 0.25, seed: int = 0,
                  half_spread_vol: float = 0.005, k_range=(0.2, 3.5), t_range=(0.1, 2.0),
                  stride: int = 2):
    """``(true_surface, snapshot)`` on a homogeneous grid containing 1."""
    rng = np.random.default_rng(seed)
    K = np.linspace(*k_range, n_strikes)
    K[np.argmin(np.abs(K - 1.0))] = 1.0
    T = np.linspace(*t_range, n_expiries)
    sigma = random_sigma(rng, K, n_expiries)
    surface = dlv_surface(T, K, sigma, eta)
    inner = K[1:-1]
    strikes = [quoted_strikes(surface, j, inner, stride=stride) for j in range(1, n_expiries + 1)]
    return surface, market_from_surface(surface, strikes, half_spread_vol)


COUNTER_STRIKES = (0.5, 1.0, 1.5)
COUNTER_VOLS = (0.05, 1.2, 0.05)
COUNTER_DENSITIES = ((0.0, 1.0, 0.0), (0.5, 0.0, 0.5))
COUNTER_EXPIRIES = (0.02, 0.04)


def per_strike_vol_prices(strikes, vols, density, T: float, K):
    """Mixture price with kernel variance ``vols[i]^2 T`` attached to atom ``i``."""
    g = np.asarray(strikes, dtype=float)
    v = np.asarray(vols, dtype=float) ** 2 * T
    K = np.atleast_1d(np.asarray(K, dtype=float))
    return np.asarray(bs.call(g[None, :], K[:, None], v[None, :])) @ np.asarray(density, dtype=float)


def counterexample_grid(K=None):
    """``(expiries, strikes, calls)`` of the two-expiry example with atom-dependent vols.

    Both densities are in convex order and share strikes, yet the later slice
    is cheaper far out of the money.
    """
    K = np.round(np.arange(0.5, 2.5001, 0.1), 10) if K is None else np.asarray(K, dtype=float)
    calls = np.array([per_strike_vol_prices(COUNTER_STRIKES, COUNTER_VOLS, q, T, K)
                      for q, T in zip(COUNTER_DENSITIES, COUNTER_EXPIRIES)])
    return np.array(COUNTER_EXPIRIES), K, calls


def raw_quotes(snapshot: MarketSnapshot, spot: float = 100.0, rate: float = 0.02, carry: float = 0.01):
    """Dollar quotes behind a pure snapshot: puts below the forward, calls above."""
    out = []
    for s in snapshot.slices:
        F = spot * np.exp((rate - carry) * s.T)
        D = float(np.exp(-rate * s.T))
        for q in s.quotes:
            bid, ask, kind = q.bid, q.ask, "C"
            if q.k < 1.0:
                bid, ask, kind = bid - 1.0 + q.k, ask - 1.0 + q.k, "P"
            out.append(RawQuote(expiry=s.T, strike=q.k * F, kind=kind, bid=max(bid, 0.0) * D * F,
                                ask=ask * D * F, forward=F, discount=D))
    return out
