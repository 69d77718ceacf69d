import math

import numpy as np
import pytest

from arbsurf import blackscholes as bs
from arbsurf import noarb
from arbsurf.calibration import (CalibConfig, backbone, build_matrices, calibrate, calibrate_smp,
                                 fitted_prices, repair_backbone)
from arbsurf.errors import CalibrationError, InputError
from arbsurf.market_data import ExpirySlice, MarketSnapshot, PureQuote


def flat_vol_snapshot(vol=0.2, expiries=(0.5, 1.0), strikes=(0.8, 0.95, 1.05, 1.2), half=0.0):
    slices = []
    for T in expiries:
        qs = []
        for k in strikes:
            p = bs.call(1.0, k, vol * vol * T)
            qs.append(PureQuote(T=T, k=k, bid=p - half, ask=p + half, weight=1.0))
        slices.append(ExpirySlice(T=T, quotes=tuple(qs), model_strikes=np.array((0.3,) + strikes + (2.5,))))
    return MarketSnapshot(slices=tuple(slices), bounds=(0.3, 2.5))


def test_backbone_flat_vol():
    bb = backbone(flat_vol_snapshot())
    assert bb.V == pytest.approx([0.02, 0.04], rel=1e-9) and bb.repairs == 0


def test_backbone_repair():
    bb = repair_backbone([0.04, 0.03])
    assert bb.V[0] == 0.04 and bb.V[1] == pytest.approx(0.04 + 1e-8, abs=0) and bb.repairs == 1


def test_backbone_interpolates_in_strike():
    # Quotes at 0.95 and 1.05 with vols 0.2 and 0.3: variance is linear in strike at k = 1.
    T = 1.0
    qs = tuple(PureQuote(T=T, k=k, bid=bs.call(1.0, k, s * s * T), ask=bs.call(1.0, k, s * s * T))
               for k, s in ((0.95, 0.2), (1.05, 0.3)))
    snap = MarketSnapshot(slices=(ExpirySlice(T=T, quotes=qs, model_strikes=np.array([0.5, 0.95, 1.05, 2.0])),),
                          bounds=(0.5, 2.0))
    assert backbone(snap, "atm_mid").V[0] == pytest.approx(0.5 * (0.04 + 0.09), rel=1e-9)


def test_backbone_missing_atm_quote():
    T = 1.0
    qs = (PureQuote(T=T, k=1.1, bid=0.0, ask=0.0),)
    snap = MarketSnapshot(slices=(ExpirySlice(T=T, quotes=qs, model_strikes=np.array([0.5, 1.1, 2.0])),),
                          bounds=(0.5, 2.0))
    with pytest.raises(CalibrationError, match="expiry 0"):
        backbone(snap)


def test_matrices():
    snap = flat_vol_snapshot()
    mats = build_matrices(snap, [0.02, 0.04], eta=0.0)
    K = snap.slices[0].model_strikes
    k = snap.slices[0].market_strikes
    assert np.array_equal(mats[0].C, np.maximum(K[None, :] - k[:, None], 0.0))
    mats = build_matrices(snap, [0.02, 0.04], eta=0.5, omega=0)
    assert np.array_equal(mats[1].U, np.maximum(K[None, :] - K[:, None], 0.0))
    assert np.array_equal(mats[1].R, np.maximum(K[None, :] - K[:, None], 0.0))
    assert np.array_equal(mats[0].R[:, 0], np.maximum(1.0 - K, 0.0))
    # One entry against the kernel: atom 1, strike 1, eta V = 0.04.
    snap1 = MarketSnapshot(slices=(ExpirySlice(T=1.0, quotes=(PureQuote(T=1.0, k=1.0, bid=0.07, ask=0.09),),
                                               model_strikes=np.array([0.5, 1.0, 2.0])),), bounds=(0.5, 2.0))
    C = build_matrices(snap1, [0.08], eta=0.5)[0].C
    assert C[0, 1] == pytest.approx(math.erf(0.1 / math.sqrt(2.0)), abs=1e-15)


def test_config_validation_and_text_round_trip():
    for kw in (dict(eta=1.0), dict(omega=2), dict(objective_mode="x"), dict(epsilon=-1.0),
               dict(variance_source="x"), dict(dk_max=0.0)):
        with pytest.raises(InputError):
            CalibConfig(**kw)
    cfg = CalibConfig(eta=0.1, objective_mode="mid_fit", dk_max=0.05)
    assert CalibConfig.from_text(cfg.to_text()) == cfg
    assert CalibConfig.from_text("eta = 0.3  # comment\n\n").eta == 0.3
    assert CalibConfig.from_text(CalibConfig().to_text()) == CalibConfig()
    with pytest.raises(InputError, match="unknown key"):
        CalibConfig.from_text("speed = 3")


def density_invariants(s):
    for g, q in zip(s.grids, s.densities):
        assert np.all(q >= -1e-12)
        assert abs(q.sum() - 1.0) <= 1e-9 and abs(g @ q - 1.0) <= 1e-9


def convex_order_chain(s):
    for j in range(1, len(s.grids)):
        K = s.grids[j]
        now = np.maximum(K[None, :] - K[:, None], 0.0) @ s.densities[j]
        before = np.maximum(s.grids[j - 1][None, :] - K[:, None], 0.0) @ s.densities[j - 1]
        assert np.all(now >= before - 1e-9)


def test_penalty_fit_on_synthetic_market(small):
    _, snap, s = small
    density_invariants(s)
    convex_order_chain(s)
    for sl, fit in zip(snap.slices, fitted_prices(s, snap)):
        assert np.all(fit >= sl.bids - 1e-12) and np.all(fit <= sl.asks + 1e-12)
    kmax = max(g[-1] for g in s.grids)
    assert noarb.check_surface(s, np.linspace(0, s.expiries[-1], 30), np.linspace(0, 1.5 * kmax, 150),
                               tail_strike=1.5 * kmax).ok


@pytest.mark.parametrize("mode", ["mid_fit", "hard_bid_ask"])
def test_other_objective_modes(small, mode):
    _, snap, _ = small
    s = calibrate(snap, CalibConfig(objective_mode=mode))
    density_invariants(s)
    convex_order_chain(s)
    if mode == "hard_bid_ask":
        for sl, fit in zip(snap.slices, fitted_prices(s, snap)):
            assert np.all(fit >= sl.bids - 1e-9) and np.all(fit <= sl.asks + 1e-9)


def test_hard_mode_infeasible_on_calendar_arbitrage():
    snap = flat_vol_snapshot()
    later = snap.slices[1]
    cheap = tuple(PureQuote(T=q.T, k=q.k, bid=q.bid * 0.5, ask=q.ask * 0.5) for q in later.quotes)
    bad = MarketSnapshot(slices=(snap.slices[0], ExpirySlice(T=later.T, quotes=cheap,
                                                             model_strikes=later.model_strikes)),
                         bounds=snap.bounds)
    with pytest.raises(CalibrationError) as exc:
        calibrate(bad, CalibConfig(objective_mode="hard_bid_ask", eta=0.0), V=[0.02, 0.04])
    assert exc.value.status == "infeasible" and exc.value.expiry == 1


def test_highs_backend_agrees(small):
    _, snap, s = small
    h = calibrate(snap, CalibConfig(backend="highs"))
    # HiGHS stops within its own feasibility tolerance, so compare at the fit scale.
    assert s.metadata["objective"] <= h.metadata["objective"] + 1e-12
    assert h.metadata["objective"] <= s.metadata["objective"] + 1e-8
    for sl, a, b in zip(snap.slices, fitted_prices(s, snap), fitted_prices(h, snap)):
        for fit in (a, b):
            assert np.all(fit >= sl.bids - 1e-9) and np.all(fit <= sl.asks + 1e-9)


def test_smp_single_expiry_zero_spread_recovers_p():
    K = np.array([0.4, 0.7, 1.0, 1.3, 1.9])
    # Masses x at 1.0 and y at 1.9 solve x + y = 0.5 and x + 1.9 y = 0.56 for unit total and mean.
    y = 0.06 / 0.9
    p = np.array([0.1, 0.2, 0.5 - y, 0.2, y])
    inner = K[1:-1]
    c = np.maximum(K[None, :] - inner[:, None], 0.0) @ p
    quotes = tuple(PureQuote(T=1.0, k=k, bid=x, ask=x) for k, x in zip(inner, c))
    snap = MarketSnapshot(slices=(ExpirySlice(T=1.0, quotes=quotes, model_strikes=K),), bounds=(0.4, 1.9))
    q = calibrate_smp(snap, [0.04], eta=0.0)[0]
    assert np.max(np.abs(q - p)) <= 1e-10


def test_smp_identical_slices():
    snap = flat_vol_snapshot(expiries=(0.5, 0.5000001), half=0.002)
    q1, q2 = calibrate_smp(snap, [0.02, 0.02], eta=0.0, objective_mode="mid_fit")
    s = calibrate(snap, CalibConfig(objective_mode="mid_fit", eta=0.0, tail_cap=math.inf), V=[0.02, 0.0200001])
    assert np.allclose(q1, q2, atol=1e-9)
    assert s.metadata["objective"] == pytest.approx(2 * calibrate(
        MarketSnapshot(slices=snap.slices[:1], bounds=snap.bounds),
        CalibConfig(objective_mode="mid_fit", eta=0.0, tail_cap=math.inf), V=[0.02]).metadata["objective"],
        rel=1e-9, abs=1e-12)


def test_tighter_spreads_never_lower_objective():
    objs = []
    for half in (0.01, 0.005, 0.002, 0.0):
        snap = flat_vol_snapshot(half=half)
        snap = MarketSnapshot(slices=tuple(
            ExpirySlice(T=sl.T, quotes=tuple(PureQuote(T=q.T, k=q.k, bid=q.bid, ask=q.ask) for q in sl.quotes),
                        model_strikes=sl.model_strikes) for sl in snap.slices), bounds=snap.bounds)
        s = calibrate(snap, CalibConfig(objective_mode="penalty", eta=0.5), V=[0.02, 0.04])
        objs.append(s.metadata["objective"])
    # Narrower bands only shrink the feasible set of the penalty-free fit.
    assert all(b >= a - 1e-12 for a, b in zip(objs, objs[1:]))


def test_omega_one_warns(small):
    _, snap, _ = small
    s = calibrate(snap, CalibConfig(omega=1))
    assert "warning" in s.metadata


def test_calibrate_smp_requires_homogeneous(small):
    _, snap, _ = small
    with pytest.raises(InputError):
        calibrate_smp(snap, [0.01, 0.02, 0.03, 0.04], eta=0.25)
