import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbsurf import blackscholes as bs
from arbsurf.errors import InputError
from arbsurf.market_data import (ExpirySlice, MarketSnapshot, PureQuote, RawQuote, boundary_strikes,
                                 build_model_grid, build_snapshot, filter_quotes, fit_weights, from_pure_price,
                                 read_pure_csv, read_raw_csv, to_pure, with_homogeneous_grid, write_pure_csv,
                                 write_raw_csv)


def raw(kind="C", strike=100.0, bid=1.0, ask=1.2, forward=100.0, discount=1.0, expiry=0.5):
    return RawQuote(expiry=expiry, strike=strike, kind=kind, bid=bid, ask=ask, forward=forward, discount=discount)


def test_to_pure_examples():
    p = to_pure(raw(bid=0.0, ask=0.0))
    assert (p.k, p.bid, p.ask) == (1.0, 0.0, 0.0)
    put = to_pure(raw(kind="P", strike=90.0, bid=10.0, ask=10.0))
    assert put.k == pytest.approx(0.9) and put.bid == pytest.approx(0.2)
    c = to_pure(raw(strike=4000.0, forward=4000.0, discount=0.99, bid=118.8, ask=118.8))
    assert c.mid == pytest.approx(118.8 / (0.99 * 4000.0), rel=1e-15)
    assert c.mid == pytest.approx(0.03, rel=1e-12)


def test_to_pure_flags_sub_intrinsic():
    q = to_pure(raw(strike=80.0, bid=5.0, ask=6.0))
    assert q.flags == ("crossed-intrinsic",) and not q.usable


@pytest.mark.parametrize("kwargs", [dict(forward=0.0), dict(discount=0.0), dict(discount=1.2),
                                    dict(bid=2.0, ask=1.0), dict(kind="X"), dict(strike=-1.0)])
def test_raw_quote_validation(kwargs):
    with pytest.raises(InputError):
        raw(**kwargs)


@given(st.sampled_from("CP"), st.floats(50, 150), st.floats(0.0, 20.0), st.floats(0.0, 1.0),
       st.floats(80, 120), st.floats(0.8, 1.0))
@settings(max_examples=100, deadline=None)
def test_round_trip_cash_price(kind, strike, bid, extra, forward, discount):
    r = raw(kind=kind, strike=strike, bid=bid, ask=bid + extra, forward=forward, discount=discount)
    p = to_pure(r)
    assert from_pure_price(p.bid, r) == pytest.approx(r.bid, rel=1e-12, abs=1e-12 * forward)
    assert from_pure_price(p.ask, r) == pytest.approx(r.ask, rel=1e-12, abs=1e-12 * forward)


def test_put_call_parity_consistency():
    F, D, T, K, sig = 100.0, 0.97, 0.5, 105.0, 0.25
    c = D * F * bs.call(1.0, K / F, sig * sig * T)
    p = c - D * (F - K)
    half = 0.02
    qc = to_pure(raw(kind="C", strike=K, bid=c - half, ask=c + half, forward=F, discount=D, expiry=T))
    qp = to_pure(raw(kind="P", strike=K, bid=p - half, ask=p + half, forward=F, discount=D, expiry=T))
    assert abs(qc.mid - qp.mid) < qc.spread


def test_boundary_strikes_example():
    k_min, k_max = boundary_strikes([((0.8, 1.0, 1.2), (0.21, 0.05, 0.01))])
    # Independent solve of the two wing lines: slope -0.8 through (0.8, 0.21) meets 1 - K,
    # slope -0.2 through (1.2, 0.01) meets 0.
    a = np.array([[1.0 - 0.8]])
    k_star = np.linalg.solve(a, [1.0 - 0.21 - 0.8 * 0.8])[0]
    k_hash = 1.2 + 0.01 / 0.2
    assert k_min == pytest.approx(0.1 * k_star) and k_min == pytest.approx(0.075)
    assert k_max == pytest.approx(1.5 * k_hash) and k_max == pytest.approx(1.875)


def test_boundary_strikes_flat_upper_wing_falls_back():
    _, k_max = boundary_strikes([((0.8, 1.0, 1.2), (0.21, 0.05, 0.05))])
    assert k_max == pytest.approx(2.4)


def test_boundary_strikes_reduces_over_slices():
    a = boundary_strikes([((0.8, 1.0, 1.2), (0.21, 0.05, 0.01))])
    b = boundary_strikes([((0.7, 1.0, 1.4), (0.31, 0.08, 0.02))])
    both = boundary_strikes([((0.8, 1.0, 1.2), (0.21, 0.05, 0.01)), ((0.7, 1.0, 1.4), (0.31, 0.08, 0.02))])
    assert both == (min(a[0], b[0]), max(a[1], b[1]))


def test_build_model_grid_examples():
    g = build_model_grid([0.9, 1.1], (0.5, 2.0), dk_max=0.1)
    assert np.allclose(g[:5], [0.5, 0.6, 0.7, 0.8, 0.9])
    assert np.sum((g > 1.1) & (g < 2.0)) == 8
    assert np.max(np.diff(g)) <= 0.1 + 1e-12
    assert list(build_model_grid([0.9, 1.1], (0.5, 2.0))) == [0.5, 0.9, 1.1, 2.0]
    assert list(build_model_grid([0.5, 1.1], (0.5, 2.0))) == [0.5, 1.1, 2.0]


@given(st.lists(st.floats(0.2, 2.9), min_size=1, max_size=10), st.floats(0.01, 1.0))
@settings(max_examples=100, deadline=None)
def test_build_model_grid_properties(strikes, dk):
    g = build_model_grid(strikes, (0.1, 3.0), dk)
    assert np.all(np.diff(g) > 0)
    assert np.max(np.diff(g)) <= dk * (1 + 1e-9)
    for k in strikes:
        assert np.min(np.abs(g - k)) <= 1e-12 * k


def test_fit_weights():
    q = [PureQuote(T=1.0, k=1.0, bid=0.07, ask=0.08), PureQuote(T=1.0, k=1.0, bid=0.05, ask=0.05)]
    w = fit_weights(q)
    assert w[0] == pytest.approx(100.0) and w[1] == 1e6
    with pytest.raises(InputError, match="zero spread requires cap"):
        fit_weights(q[1:], cap=None)
    with pytest.raises(InputError):
        fit_weights(q, mode="other")


def test_fit_weights_inverse_vega():
    p = bs.call(1.0, 1.0, 0.04)
    w = fit_weights([PureQuote(T=1.0, k=1.0, bid=p, ask=p)], mode="inv_vega")[0]
    assert w == pytest.approx(1.0 / bs.vega(1.0, 1.0, 0.04, 1.0), rel=1e-9)


def test_filter_quotes_otm_and_vega():
    quotes = [raw(kind="C", strike=90.0, bid=10.5, ask=10.7), raw(kind="C", strike=110.0, bid=1.0, ask=1.1),
              raw(kind="P", strike=90.0, bid=1.0, ask=1.1), raw(kind="C", strike=400.0, bid=0.0, ask=0.0)]
    kept = filter_quotes(quotes)
    assert [(r.kind, r.strike) for r in kept] == [("C", 110.0), ("P", 90.0)]
    assert len(filter_quotes(quotes, otm_only=False, min_vega_over_sqrt_t=0.0)) == 4


def test_build_snapshot_groups_and_dedups():
    qs = [PureQuote(T=0.5, k=1.1, bid=0.02, ask=0.03), PureQuote(T=0.5, k=0.9, bid=0.12, ask=0.13),
          PureQuote(T=0.5, k=0.9, bid=0.121, ask=0.125), PureQuote(T=1.0, k=1.0, bid=0.07, ask=0.08),
          PureQuote(T=1.0, k=1.2, bid=0.02, ask=0.025)]
    snap = build_snapshot(qs, dk_max=0.2)
    assert list(snap.expiries) == [0.5, 1.0]
    assert snap.slices[0].quotes[0].bid == 0.121
    lo, hi = snap.bounds
    for s in snap.slices:
        assert s.model_strikes[0] == lo and s.model_strikes[-1] == hi
        assert np.max(np.diff(s.model_strikes)) <= 0.2 + 1e-12
    homo = with_homogeneous_grid(snap)
    assert np.array_equal(homo.slices[0].model_strikes, homo.slices[1].model_strikes)


def test_snapshot_validation():
    s = ExpirySlice(T=1.0, quotes=(PureQuote(T=1.0, k=1.0, bid=0.07, ask=0.08),))
    with pytest.raises(InputError):
        MarketSnapshot(slices=(s, s), bounds=(0.1, 2.0))
    with pytest.raises(InputError):
        MarketSnapshot(slices=(s,), bounds=(0.1, 1.0))
    with pytest.raises(InputError):
        ExpirySlice(T=1.0, quotes=())
    with pytest.raises(InputError):
        build_snapshot([])


def test_csv_round_trip(tmp_path):
    raws = [raw(kind="C", strike=110.0, bid=1.0, ask=1.1), raw(kind="P", strike=90.0, bid=1.0 / 3.0, ask=0.4)]
    path = tmp_path / "raw.csv"
    write_raw_csv(path, raws)
    assert read_raw_csv(path) == raws
    pure_path = tmp_path / "pure.csv"
    pures = write_pure_csv(pure_path, raws)
    back = read_pure_csv(pure_path)
    assert [(p.T, p.k, p.bid, p.ask, p.weight) for p in back] == [(p.T, p.k, p.bid, p.ask, p.weight) for p in pures]


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("expiry_years,strike,kind,bid,ask,forward,discount\n0.5,100,C,1,1.1,100,1\n0.5,x,C,1,1,100,1\n")
    with pytest.raises(InputError, match="line 3"):
        read_raw_csv(path)
    path.write_text("expiry_years,strike\n")
    with pytest.raises(InputError, match="missing columns"):
        read_raw_csv(path)
    path.write_text("")
    with pytest.raises(InputError, match="header"):
        read_raw_csv(path)


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "h.csv"
    write_raw_csv(path, [])
    assert read_raw_csv(path) == []
    assert math.isfinite(len(write_pure_csv(tmp_path / "p.csv", [])))
