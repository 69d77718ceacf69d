import math

import numpy as np
import pytest

from arbsurf import blackscholes as bs
from arbsurf import noarb
from arbsurf.errors import ArbitrageError, ExtrapolationError, InputError
from arbsurf.linear_surface import (LinearSurface, alpha_atm_variance, alpha_linear, atm_total_variance,
                                    bracket_index, linear_from_snapshot)

K = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
C1 = np.array([1.0, 0.5, 0.25, 0.0, 0.0])  # atoms 0.5 and 1.5
C2 = np.array([1.0, 0.5, 0.3, 0.1, 0.0])  # masses 0.6@0.5, 0.2@1.5, 0.2@2, above C1 in convex order


def atm_call(v):
    # call(1, 1, v) = erf(sqrt(v) / (2 sqrt 2)), independent of the kernel code.
    return math.erf(math.sqrt(v) / (2.0 * math.sqrt(2.0)))


def surface(mode="linear_T"):
    return LinearSurface.from_grid([0.5, 1.0], K, [C1, C2], alpha_mode=mode)


def test_eval_slice_examples():
    s = surface()
    for k, c in zip(K, C1):
        assert s.eval_slice(1, k) == pytest.approx(c, abs=1e-15)
    assert s.eval_slice(1, 0.75) == pytest.approx(0.375)
    assert s.eval_slice(1, 20.0) == 0.0


def test_alpha_linear():
    assert alpha_linear(1.0, 1.0, 2.0) == 0.0
    assert alpha_linear(1.5, 1.0, 2.0) == 0.5
    assert alpha_linear(2.0, 1.0, 2.0) == 1.0
    with pytest.raises(InputError):
        alpha_linear(2.5, 1.0, 2.0)
    with pytest.raises(InputError):
        alpha_linear(1.0, 1.0, 1.0)


def test_alpha_atm_variance():
    c_lo, c_hi = atm_call(0.01), atm_call(0.04)
    assert alpha_atm_variance(1.0, 1.0, 2.0, 0.01, 0.04, c_lo, c_hi) == 0.0
    assert alpha_atm_variance(2.0, 1.0, 2.0, 0.01, 0.04, c_lo, c_hi) == pytest.approx(1.0, abs=1e-15)
    a = alpha_atm_variance(1.5, 1.0, 2.0, 0.01, 0.04, c_lo, c_hi)
    assert a == pytest.approx((atm_call(0.025) - c_lo) / (c_hi - c_lo), abs=1e-14)
    assert a == pytest.approx(0.58160, abs=1e-5)
    # Flat ATM prices fall back to linear weights.
    assert alpha_atm_variance(1.5, 1.0, 2.0, 0.01, 0.04, c_lo, c_lo) == 0.5


def test_atm_total_variance_inverts_kernel():
    for v in (1e-4, 0.04, 1.0):
        assert atm_total_variance(bs.call(1.0, 1.0, v)) == pytest.approx(v, rel=1e-10)
    assert atm_total_variance(0.0) == 0.0


def test_eval_surface():
    s = surface()
    assert s.price(0.5, 1.0) == pytest.approx(0.25)
    assert list(s.price(0.0, [0.0, 0.5, 2.0])) == [1.0, 0.5, 0.0]
    assert s.price(0.75, 1.0) == pytest.approx(0.5 * (0.25 + 0.3))
    with pytest.raises(ExtrapolationError):
        s.price(1.5, 1.0)
    assert s.price(1.5, 1.0, extrapolate=True) == pytest.approx(0.3)


@pytest.mark.parametrize("mode", ["linear_T", "atm_variance"])
def test_surface_invariants(mode):
    s = surface(mode)
    Ts, Ks = np.linspace(0.0, 1.0, 41), np.linspace(0.0, 3.0, 121)
    grid = np.array([s.price(T, Ks) for T in Ts])
    assert np.all(np.diff(grid, axis=0) >= -1e-12)
    assert np.all(np.diff(grid, 2, axis=1) >= -1e-12)
    assert np.allclose(grid[:, 0], 1.0)
    assert np.allclose((grid[:, 1] - grid[:, 0]) / Ks[1], -1.0)


def test_from_grid_rejects_arbitrage():
    with pytest.raises(ArbitrageError):
        LinearSurface.from_grid([0.5, 1.0], K, [C2, C1])
    with pytest.raises(ArbitrageError):
        LinearSurface.from_grid([1.0], K, [[1.0, 0.2, 0.3, 0.0, 0.0]])


def test_degenerate_atm_bracket_noted():
    s = LinearSurface.from_grid([0.5, 1.0], K, [C1, C1], alpha_mode="atm_variance")
    assert s.notes and s.degenerate_brackets() == [1]
    assert s.price(0.75, 1.0) == pytest.approx(0.25)


def test_bracket_index():
    ts = np.array([0.5, 1.0])
    assert bracket_index(ts, 0.25) == 0 and bracket_index(ts, 0.5) == 0 and bracket_index(ts, 0.7) == 1


def test_linear_from_snapshot(small):
    _, snap, _ = small
    # Mids of a quoted market may carry small arbitrage, so the construction check is off.
    lin = linear_from_snapshot(snap, check=False)
    for j, s in enumerate(snap.slices, start=1):
        assert np.allclose(lin.slice_price(j, s.market_strikes), s.mids, atol=1e-14)
        assert lin.slice_price(j, 0.0) == pytest.approx(1.0, abs=1e-15) and lin.slice_price(j, snap.bounds[1]) == 0.0
