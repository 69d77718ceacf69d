"""Quote ingestion: cash quotes to pure call quotes, strike grids, fit weights.

Pure prices live on the unit-mean martingale ``Z = S / F``: a cash call
``C(T, K_cash)`` becomes ``C(T, K_cash / F) / (DF * F)``. Puts are mapped to
calls through parity ``C = P + 1 - k`` on the pure scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import blackscholes as bs
from .errors import DomainError, InputError

RAW_COLUMNS = ("expiry_years", "strike", "kind", "bid", "ask", "forward", "discount")
PURE_COLUMNS = RAW_COLUMNS + ("pure_strike", "pure_bid", "pure_ask", "weight")

DEFAULT_WEIGHT_CAP = 1e6
DEFAULT_VEGA_FLOOR = 1e-8
# Relative tolerance under which two strikes count as the same grid point.
DEDUP_RTOL = 1e-12


@dataclass(frozen=True)
class RawQuote:
    expiry: float
    strike: float
    kind: str  # "C" or "P"
    bid: float
    ask: float
    forward: float
    discount: float

    def __post_init__(self):
        kind = self.kind.upper()[:1]
        if kind not in ("C", "P"):
            raise InputError(f"kind must be C or P, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.expiry <= 0:
            raise InputError(f"expiry must be positive, got {self.expiry}")
        if self.strike <= 0:
            raise InputError(f"strike must be positive, got {self.strike}")
        if self.forward <= 0:
            raise InputError(f"forward must be positive, got {self.forward}")
        if not 0 < self.discount <= 1:
            raise InputError(f"discount must lie in (0, 1], got {self.discount}")
        if self.bid < 0 or self.ask < self.bid:
            raise InputError(f"need 0 <= bid <= ask, got bid={self.bid} ask={self.ask}")


@dataclass(frozen=True)
class PureQuote:
    T: float
    k: float
    bid: float
    ask: float
    weight: float = 1.0
    flags: tuple[str, ...] = ()

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def spread(self) -> float:
        return self.ask - self.bid

    @property
    def usable(self) -> bool:
        """Flagged quotes stay in reports but are left out of the objective."""
        return not self.flags


@dataclass(frozen=True)
class ExpirySlice:
    T: float
    quotes: tuple[PureQuote, ...]
    model_strikes: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        if not self.quotes:
            raise InputError(f"expiry {self.T} has no quotes")
        ks = np.array([q.k for q in self.quotes])
        if np.any(np.diff(ks) <= 0):
            raise InputError(f"market strikes at expiry {self.T} must be strictly increasing")

    @property
    def market_strikes(self) -> np.ndarray:
        return np.array([q.k for q in self.quotes])

    @property
    def bids(self) -> np.ndarray:
        return np.array([q.bid for q in self.quotes])

    @property
    def asks(self) -> np.ndarray:
        return np.array([q.ask for q in self.quotes])

    @property
    def mids(self) -> np.ndarray:
        return 0.5 * (self.bids + self.asks)

    @property
    def weights(self) -> np.ndarray:
        return np.array([q.weight for q in self.quotes])

    @property
    def usable(self) -> np.ndarray:
        return np.array([q.usable for q in self.quotes], dtype=bool)


@dataclass(frozen=True)
class MarketSnapshot:
    slices: tuple[ExpirySlice, ...]
    bounds: tuple[float, float]

    def __post_init__(self):
        if not self.slices:
            raise InputError("snapshot has no expiries")
        ts = np.array([s.T for s in self.slices])
        if np.any(np.diff(ts) <= 0):
            raise InputError("expiries must be strictly increasing")
        lo, hi = self.bounds
        if not 0 < lo < hi:
            raise InputError(f"invalid strike bounds {self.bounds}")
        for s in self.slices:
            ks = s.market_strikes
            if ks[0] <= lo or ks[-1] >= hi:
                raise InputError(
                    f"market strikes at expiry {s.T} must lie strictly inside {self.bounds}"
                )

    @property
    def expiries(self) -> np.ndarray:
        return np.array([s.T for s in self.slices])

    @property
    def is_homogeneous(self) -> bool:
        first = self.slices[0]
        return all(
            len(s.model_strikes) == len(first.model_strikes)
            and np.array_equal(s.model_strikes, first.model_strikes)
            and np.array_equal(s.market_strikes, first.market_strikes)
            for s in self.slices
        )


def to_pure(raw: RawQuote) -> PureQuote:
    scale = raw.discount * raw.forward
    k = raw.strike / raw.forward
    bid, ask = raw.bid / scale, raw.ask / scale
    if raw.kind == "P":
        bid, ask = bid + 1.0 - k, ask + 1.0 - k
    flags = ()
    if ask < max(1.0 - k, 0.0):
        flags = ("crossed-intrinsic",)
    return PureQuote(T=raw.expiry, k=k, bid=bid, ask=ask, flags=flags)


def from_pure_price(price: float, raw: RawQuote) -> float:
    """Inverse of the price part of :func:`to_pure` for a quote's own contract."""
    k = raw.strike / raw.forward
    if raw.kind == "P":
        price = price - 1.0 + k
    return price * raw.discount * raw.forward


def _wing_lower(ks, mids):
    # Line through the two left-most quotes, intersected with the intrinsic 1 - K.
    slope = (mids[1] - mids[0]) / (ks[1] - ks[0])
    if slope <= -1.0 or slope >= 0.0:
        return None
    k_star = (1.0 - mids[0] + slope * ks[0]) / (1.0 + slope)
    if not 0.0 < k_star <= ks[0]:
        return None
    return k_star


def _wing_upper(ks, mids):
    # Line through the two right-most quotes, intersected with zero.
    slope = (mids[-1] - mids[-2]) / (ks[-1] - ks[-2])
    if slope >= 0.0 or slope <= -1.0:
        return None
    k_hash = ks[-1] - mids[-1] / slope
    if k_hash < ks[-1]:
        return None
    return k_hash


def boundary_strikes(slices: Sequence, lower_factor: float = 0.1, upper_factor: float = 1.5,
                     lower_fallback: float = 0.5, upper_fallback: float = 2.0) -> tuple[float, float]:
    """Boundary strikes ``(K_min, K_max)`` shared by all expiries.

    ``slices`` holds ``(strikes, mids)`` pairs or :class:`ExpirySlice` objects.
    Per expiry, ``K*`` is where the line through the two lowest quotes meets the
    intrinsic value and ``K#`` where the line through the two highest quotes
    meets zero. ``K_min = lower_factor * min K*`` and
    ``K_max = upper_factor * max K#``; degenerate wings fall back to
    ``lower_fallback * k_min`` and ``upper_fallback * k_max`` for that expiry.
    """
    lows, highs, k_lo, k_hi = [], [], math.inf, -math.inf
    for s in slices:
        if isinstance(s, ExpirySlice):
            ks, mids = s.market_strikes, s.mids
        else:
            ks, mids = (np.asarray(a, dtype=float) for a in s)
        k_lo, k_hi = min(k_lo, ks[0]), max(k_hi, ks[-1])
        k_star = _wing_lower(ks, mids) if len(ks) >= 2 else None
        k_hash = _wing_upper(ks, mids) if len(ks) >= 2 else None
        lows.append(lower_factor * k_star if k_star is not None else lower_fallback * ks[0])
        highs.append(upper_factor * k_hash if k_hash is not None else upper_fallback * ks[-1])
    k_min, k_max = min(lows), max(highs)
    if not k_min < k_lo:
        k_min = lower_fallback * k_lo
    if not k_max > k_hi:
        k_max = upper_fallback * k_hi
    # The unit-mean martingale needs K_min < 1 < K_max.
    if k_min >= 1.0:
        k_min = lower_fallback
    if k_max <= 1.0:
        k_max = upper_fallback
    return float(k_min), float(k_max)


def dedup_sorted(values: Iterable[float], rtol: float = DEDUP_RTOL) -> np.ndarray:
    vals = np.sort(np.asarray(list(values), dtype=float))
    keep = [vals[0]]
    for v in vals[1:]:
        if abs(v - keep[-1]) > rtol * max(abs(v), abs(keep[-1])):
            keep.append(v)
    return np.array(keep)


def build_model_grid(market_strikes, bounds: tuple[float, float], dk_max: float = math.inf) -> np.ndarray:
    """Model strikes: bounds, market strikes, and fillers so every gap is ``<= dk_max``."""
    if not dk_max > 0:
        raise InputError("dk_max must be positive")
    base = dedup_sorted([bounds[0], *market_strikes, bounds[1]])
    out = [base[0]]
    for a, b in zip(base[:-1], base[1:]):
        if math.isfinite(dk_max):
            n_gaps = max(1, math.ceil((b - a) / dk_max - 1e-9))
            out.extend(a + (b - a) * np.arange(1, n_gaps) / n_gaps)
        out.append(b)
    return dedup_sorted(out)


def fit_weights(quotes: Sequence[PureQuote], mode: str = "inv_spread", cap: float | None = DEFAULT_WEIGHT_CAP,
                vega_floor: float = DEFAULT_VEGA_FLOOR) -> np.ndarray:
    """Objective weights per quote.

    ``inv_spread``: ``1 / (ask - bid)`` capped at ``cap``.
    ``inv_vega``: ``1 / max(vega, vega_floor)`` with vega at the mid implied vol.
    """
    w = np.empty(len(quotes))
    for i, q in enumerate(quotes):
        if mode == "inv_spread":
            spread = q.ask - q.bid
            if spread <= 0:
                if cap is None:
                    raise InputError("zero spread requires cap")
                w[i] = cap
            else:
                w[i] = 1.0 / spread if cap is None else min(1.0 / spread, cap)
        elif mode == "inv_vega":
            try:
                sig = bs.implied_vol(q.mid, 1.0, q.k, q.T)
                vg = bs.vega(1.0, q.k, sig * sig * q.T, q.T)
            except DomainError:
                vg = 0.0
            w[i] = 1.0 / max(vg, vega_floor)
        else:
            raise InputError(f"unknown weight mode {mode!r}")
    return w


def passes_vega_filter(q: PureQuote, min_vega_over_sqrt_t: float = 1e-3) -> bool:
    """Drop quotes whose ``vega / sqrt(T)`` at the mid implied vol is below the floor."""
    if min_vega_over_sqrt_t > 0:
        try:
            sig = bs.implied_vol(q.mid, 1.0, q.k, q.T)
        except DomainError:
            return False
        if sig <= 0:
            return False
        if bs.vega(1.0, q.k, sig * sig * q.T, q.T) / math.sqrt(q.T) < min_vega_over_sqrt_t:
            return False
    return True


def filter_quotes(raws: Sequence[RawQuote], otm_only: bool = True,
                  min_vega_over_sqrt_t: float = 1e-3) -> list[RawQuote]:
    """Keep out-of-the-money quotes above the vega floor (thresholds configurable)."""
    keep = []
    for r in raws:
        k = r.strike / r.forward
        if otm_only and ((r.kind == "C" and k < 1.0) or (r.kind == "P" and k > 1.0)):
            continue
        if not passes_vega_filter(to_pure(r), min_vega_over_sqrt_t):
            continue
        keep.append(r)
    return keep


def build_snapshot(quotes: Sequence[PureQuote], dk_max: float = math.inf, weight_mode: str = "inv_spread",
                   weight_cap: float | None = DEFAULT_WEIGHT_CAP, bounds: tuple[float, float] | None = None,
                   expiry_rtol: float = 1e-9) -> MarketSnapshot:
    """Group pure quotes by expiry, attach weights and model grids.

    When several quotes share an expiry and strike, the one with the narrowest
    spread is kept.
    """
    if not quotes:
        raise InputError("no quotes")
    by_t: dict[float, dict[float, PureQuote]] = {}
    ts: list[float] = []
    for q in sorted(quotes, key=lambda q: (q.T, q.k)):
        t = next((t for t in ts if abs(t - q.T) <= expiry_rtol * max(t, q.T)), None)
        if t is None:
            ts.append(q.T)
            t = q.T
        bucket = by_t.setdefault(t, {})
        key = next((k for k in bucket if abs(k - q.k) <= DEDUP_RTOL * max(k, q.k)), q.k)
        if key not in bucket or q.spread < bucket[key].spread:
            bucket[key] = q

    raw_slices = []
    for t in sorted(by_t):
        qs = [by_t[t][k] for k in sorted(by_t[t])]
        ws = fit_weights(qs, weight_mode, cap=weight_cap)
        qs = [replace(q, weight=float(w)) for q, w in zip(qs, ws)]
        raw_slices.append(ExpirySlice(T=t, quotes=tuple(qs)))

    if bounds is None:
        usable = []
        for s in raw_slices:
            idx = s.usable
            if idx.sum() >= 2:
                usable.append((s.market_strikes[idx], s.mids[idx]))
            else:
                usable.append((s.market_strikes, s.mids))
        bounds = boundary_strikes(usable)
    slices = tuple(
        replace(s, model_strikes=build_model_grid(s.market_strikes, bounds, dk_max)) for s in raw_slices
    )
    return MarketSnapshot(slices=slices, bounds=bounds)


def with_homogeneous_grid(snapshot: MarketSnapshot, strikes=None) -> MarketSnapshot:
    """Copy of ``snapshot`` whose expiries all share one model grid (the union by default)."""
    if strikes is None:
        strikes = dedup_sorted(np.concatenate([s.model_strikes for s in snapshot.slices]))
    strikes = np.asarray(strikes, dtype=float)
    return replace(snapshot, slices=tuple(replace(s, model_strikes=strikes) for s in snapshot.slices))


# ---------------------------------------------------------------------------
# CSV


def _parse_float(row, name, line):
    try:
        return float(row[name])
    except (KeyError, TypeError, ValueError):
        raise InputError(f"line {line}: bad or missing value for {name!r}") from None


def read_raw_csv(path) -> list[RawQuote]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: missing header")
        missing = [c for c in RAW_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        out = []
        for line, row in enumerate(reader, start=2):
            try:
                out.append(RawQuote(
                    expiry=_parse_float(row, "expiry_years", line),
                    strike=_parse_float(row, "strike", line),
                    kind=(row.get("kind") or "").strip(),
                    bid=_parse_float(row, "bid", line),
                    ask=_parse_float(row, "ask", line),
                    forward=_parse_float(row, "forward", line),
                    discount=_parse_float(row, "discount", line),
                ))
            except InputError as exc:
                msg = str(exc)
                raise InputError(msg if msg.startswith("line") else f"line {line}: {msg}") from None
        return out


def write_raw_csv(path, raws: Sequence[RawQuote]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_COLUMNS)
        for r in raws:
            values = (r.expiry, r.strike, r.kind, r.bid, r.ask, r.forward, r.discount)
            writer.writerow([x if i == 2 else repr(float(x)) for i, x in enumerate(values)])


def write_pure_csv(path, raws: Sequence[RawQuote], weight_mode: str = "inv_spread",
                   weight_cap: float | None = DEFAULT_WEIGHT_CAP) -> list[PureQuote]:
    pures = [to_pure(r) for r in raws]
    weights = fit_weights(pures, weight_mode, cap=weight_cap) if pures else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PURE_COLUMNS)
        for r, p, w in zip(raws, pures, weights):
            values = (r.expiry, r.strike, r.kind, r.bid, r.ask, r.forward, r.discount, p.k, p.bid, p.ask, w)
            writer.writerow([x if i == 2 else repr(float(x)) for i, x in enumerate(values)])
    return [replace(p, weight=float(w)) for p, w in zip(pures, weights)]


def read_pure_csv(path) -> list[PureQuote]:
    """Read a converted quote file (the output of :func:`write_pure_csv`)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: missing header")
        need = ("expiry_years", "pure_strike", "pure_bid", "pure_ask")
        missing = [c for c in need if c not in reader.fieldnames]
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        out = []
        for line, row in enumerate(reader, start=2):
            T = _parse_float(row, "expiry_years", line)
            k = _parse_float(row, "pure_strike", line)
            bid = _parse_float(row, "pure_bid", line)
            ask = _parse_float(row, "pure_ask", line)
            if T <= 0 or k <= 0 or bid < 0 or ask < bid:
                raise InputError(f"line {line}: invalid pure quote")
            w = float(row["weight"]) if row.get("weight") not in (None, "") else 1.0
            flags = ("crossed-intrinsic",) if ask < max(1.0 - k, 0.0) else ()
            out.append(PureQuote(T=T, k=k, bid=bid, ask=ask, weight=w, flags=flags))
        return out
