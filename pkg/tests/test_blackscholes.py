import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbsurf import blackscholes as bs
from arbsurf.errors import DomainError, InputError

mp.mp.dps = 40


def mp_call(s, k, v):
    """Black-Scholes call in 40-digit arithmetic."""
    s, k, v = mp.mpf(s), mp.mpf(k), mp.mpf(v)
    sv = mp.sqrt(v)
    dp = (mp.log(s / k) + v / 2) / sv
    return s * mp.ncdf(dp) - k * mp.ncdf(dp - sv)


@pytest.mark.parametrize("x", [-8.0, -5.0, -1.0, 0.0, 0.3, 1.959964, 4.0])
def test_norm_cdf_against_mpmath(x):
    assert bs.norm_cdf(x) == pytest.approx(float(mp.ncdf(x)), rel=1e-13, abs=1e-16)


def test_norm_cdf_examples():
    assert bs.norm_cdf(0.0) == 0.5
    assert round(float(bs.norm_cdf(1.959964)), 6) == 0.975
    assert bs.norm_cdf(-8.0) == pytest.approx(6.22096e-16, rel=1e-5)


def test_norm_cdf_symmetry():
    x = np.linspace(-10, 10, 2001)
    assert np.max(np.abs(bs.norm_cdf(x) + bs.norm_cdf(-x) - 1.0)) <= 1e-15
    assert np.all(np.diff(bs.norm_cdf(x)) >= 0)


def test_norm_pdf_no_overflow_warning():
    with np.errstate(all="raise"):
        assert bs.norm_pdf(1e200) == 0.0


def test_call_limits():
    assert bs.call(1.0, 0.0, 0.1) == 1.0
    assert bs.call(1.0, 1.0, 0.0) == 0.0
    assert bs.call(1.3, 1.0, 0.0) == pytest.approx(0.3)
    assert bs.call(1.0, 1.0, 1e-17) == 0.0


def test_call_atm_identity():
    # At s = k = 1 the price is 2 N(sqrt(v)/2) - 1.
    expected = math.erf(0.1 / math.sqrt(2.0))
    assert bs.call(1.0, 1.0, 0.04) == pytest.approx(expected, abs=1e-15)
    assert round(bs.call(1.0, 1.0, 0.04), 7) == 0.0796557


@pytest.mark.parametrize("s,k,v", [(1.0, 0.1, 1e-4), (0.5, 3.0, 4.0), (2.0, 0.1, 4.0), (1.0, 1.5, 0.01),
                                   (1.0, 0.2, 0.0004)])
def test_call_against_mpmath(s, k, v):
    assert bs.call(s, k, v) == pytest.approx(float(mp_call(s, k, v)), abs=1e-15)


def test_call_rejects_negative_inputs():
    for args in [(-1.0, 1.0, 0.1), (1.0, -1.0, 0.1), (1.0, 1.0, -0.1)]:
        with pytest.raises(InputError):
            bs.call(*args)


def test_call_broadcasts():
    out = bs.call(1.0, np.array([0.5, 1.0, 1.5]), np.array([[0.01], [0.04]]))
    assert out.shape == (2, 3)


@given(st.floats(0.05, 0.5), st.floats(1e-4, 2.0))
@settings(max_examples=50, deadline=None)
def test_call_convex_decreasing_in_strike(step, v):
    k = np.linspace(0.01, 0.01 + 40 * step * 0.1, 41)
    c = bs.call(1.0, k, v)
    d = np.diff(c) / np.diff(k)
    assert np.all(d <= 1e-10)
    assert np.all(np.diff(d) >= -1e-10)


@given(st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_call_increasing_in_variance(k):
    c = bs.call(1.0, k, np.linspace(0.0, 4.0, 200))
    assert np.all(np.diff(c) >= -1e-15)


def test_call_bounds():
    k = np.linspace(0.0, 3.0, 31)[:, None]
    v = np.geomspace(1e-6, 10.0, 40)[None, :]
    c = bs.call(1.0, k, v)
    assert np.all(c >= np.maximum(1.0 - k, 0.0)) and np.all(c <= 1.0)


def test_vega_examples():
    assert bs.vega(1.0, 1.0, 0.04, 1.0) == pytest.approx(0.39695, abs=5e-6)
    assert bs.vega(1.0, 0.0, 0.04, 1.0) == 0.0
    assert bs.vega(1.0, 1.0, 0.0, 1.0) == 0.0


def test_vega_matches_finite_difference():
    s, k, T, sig, h = 1.0, 1.2, 0.7, 0.3, 1e-6
    fd = (bs.call(s, k, (sig + h) ** 2 * T) - bs.call(s, k, (sig - h) ** 2 * T)) / (2 * h)
    assert bs.vega(s, k, sig * sig * T, T) == pytest.approx(fd, rel=1e-7)


def test_vega_homogeneity():
    # call(a s, a k, v) = a call(s, k, v), so vega scales the same way.
    a = 2.5
    assert bs.vega(a, a * 0.9, 0.05, 0.5) == pytest.approx(a * bs.vega(1.0, 0.9, 0.05, 0.5), rel=1e-14)


def test_implied_vol_examples():
    assert bs.implied_vol(bs.call(1.0, 1.0, 0.04), 1.0, 1.0, 1.0) == pytest.approx(0.2, abs=1e-12)
    assert bs.implied_vol(1.0 - 0.8, 1.0, 0.8, 1.0) == 0.0
    with pytest.raises(DomainError, match="upper"):
        bs.implied_vol(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError, match="intrinsic"):
        bs.implied_vol(0.1, 1.0, 0.8, 1.0)


def test_implied_vol_round_trip_grid():
    worst = 0.0
    for s in np.linspace(0.5, 2.0, 6):
        for k in np.linspace(0.2, 3.0, 12):
            for v in np.geomspace(1e-4, 4.0, 12):
                T = 1.0
                p = bs.call(s, k, v)
                if p - max(s - k, 0.0) < 1e-14 * s or p >= s:
                    continue  # price carries no information about the vol at double precision
                sig = bs.implied_vol(p, s, k, T)
                assert abs(bs.call(s, k, sig * sig * T) - p) <= 1e-12 * s
                if bs.vega(s, k, v, T) > 1e-6:
                    worst = max(worst, abs(sig - math.sqrt(v)))
    assert worst <= 1e-9


def test_implied_vols_nan_outside_domain():
    out = bs.implied_vols([bs.call(1.0, 1.0, 0.04), 2.0], 1.0, [1.0, 1.0], 1.0)
    assert out[0] == pytest.approx(0.2) and math.isnan(out[1])
