"""Discrete local volatilities: transition operators from non-negative ``Sigma``.

``Q^{-1}`` is tridiagonal with unit boundary columns; column ``i`` holds
``-w^{i-}``, ``1 + w^{i-} + w^{i+}``, ``-w^{i+}`` on rows ``i-1, i, i+1``. It is a
column diagonally dominant M-matrix, so the Thomas algorithm solves
``Q^{-1} q_j = q_{j-1}`` without pivoting and ``Q`` itself is non-negative,
column-stochastic and mean-preserving.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import noarb
from .calibration import repair_backbone
from .errors import ArbitrageError, DomainError, InputError, SchemaError
from .linear_surface import atm_total_variance
from .smooth_surface import SmoothSurface

ZERO_TOL = 1e-12


def _check_strikes(strikes) -> np.ndarray:
    K = np.asarray(strikes, dtype=float)
    if K.ndim != 1 or len(K) < 3:
        raise InputError("need at least three strikes")
    if np.any(K <= 0) or np.any(np.diff(K) <= 0):
        raise InputError("strikes must be positive and strictly increasing")
    return K


def _interior_sigma(sigma, n: int) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if s.shape == (n - 2,):
        s = np.concatenate([[0.0], s, [0.0]])
    if s.shape != (n,):
        raise InputError(f"sigma must have length {n} or {n - 2}")
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise InputError("discrete local volatilities must be finite and non-negative")
    s = s.copy()
    s[0] = s[-1] = 0.0  # boundary cells carry no diffusion
    return s


def gammas(strikes):
    """``(gamma^-, gamma^+)`` for every strike; zero at the two boundary strikes."""
    K = _check_strikes(strikes)
    gm, gp = np.zeros(len(K)), np.zeros(len(K))
    half = 0.5 * (K[2:] - K[:-2])
    gm[1:-1] = 1.0 / (half * (K[1:-1] - K[:-2]))
    gp[1:-1] = 1.0 / (half * (K[2:] - K[1:-1]))
    return gm, gp


@dataclass(frozen=True)
class TransitionOperator:
    """Tridiagonal ``Q^{-1}``: ``sub[i] = Q^{-1}[i+1, i]``, ``sup[i] = Q^{-1}[i, i+1]``."""

    strikes: np.ndarray
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    @property
    def n(self) -> int:
        return len(self.diag)

    def dense_inverse(self) -> np.ndarray:
        """``Q^{-1}`` as a dense matrix."""
        return np.diag(self.diag) + np.diag(self.sub, -1) + np.diag(self.sup, 1)

    def solve(self, rhs) -> np.ndarray:
        """Thomas algorithm for ``Q^{-1} x = rhs``."""
        b = np.asarray(rhs, dtype=float)
        n = self.n
        if b.shape != (n,):
            raise InputError(f"right-hand side must have length {n}")
        cp = np.empty(n - 1)
        bp = np.empty(n)
        m = self.diag[0]
        if m == 0:
            raise DomainError("singular tridiagonal system")
        cp[0] = self.sup[0] / m
        bp[0] = b[0] / m
        for i in range(1, n):
            m = self.diag[i] - self.sub[i - 1] * cp[i - 1]
            if m == 0:
                raise DomainError("singular tridiagonal system")
            if i < n - 1:
                cp[i] = self.sup[i] / m
            bp[i] = (b[i] - self.sub[i - 1] * bp[i - 1]) / m
        x = np.empty(n)
        x[-1] = bp[-1]
        for i in range(n - 2, -1, -1):
            x[i] = bp[i] - cp[i] * x[i + 1]
        return x


def weights(strikes, sigma, dt: float):
    """``(w^-, w^+)`` with ``w^{i+-} = 1/2 (Sigma^i K^i)^2 dt gamma^{i+-}``."""
    K = _check_strikes(strikes)
    if not dt > 0:
        raise InputError("time step must be positive")
    s = _interior_sigma(sigma, len(K))
    gm, gp = gammas(K)
    a = 0.5 * (s * K) ** 2 * dt
    return a * gm, a * gp


def build_qinv(strikes, sigma, dt: float) -> TransitionOperator:
    K = _check_strikes(strikes)
    wm, wp = weights(K, sigma, dt)
    return TransitionOperator(strikes=K, sub=-wp[:-1], diag=1.0 + wm + wp, sup=-wm[1:])


def propagate(op: TransitionOperator, q_prev) -> np.ndarray:
    """``q_j = Q q_{j-1}``."""
    return op.solve(q_prev)


def omega_matrix(strikes) -> np.ndarray:
    """``Omega`` with ``Q^{-1} = I + Omega diag(Sigma^2 dt)``."""
    K = _check_strikes(strikes)
    n = len(K)
    om = np.zeros(n)
    op = np.zeros(n)
    span = K[2:] - K[:-2]
    om[1:-1] = K[1:-1] ** 2 / (span * (K[1:-1] - K[:-2]))
    op[1:-1] = K[1:-1] ** 2 / (span * (K[2:] - K[1:-1]))
    W = np.diag(om + op)
    W[np.arange(n - 1), np.arange(1, n)] = -om[1:]
    W[np.arange(1, n), np.arange(n - 1)] = -op[:-1]
    return W


def qinv_from_omega(Omega, sigma, dt: float) -> np.ndarray:
    n = Omega.shape[0]
    s = _interior_sigma(sigma, n)
    return np.eye(n) + Omega * (s ** 2 * dt)[None, :]


@dataclass(frozen=True)
class TransitionReport:
    min_entry: float
    column_sum_error: float
    mean_error: float

    @property
    def ok(self) -> bool:
        return self.min_entry >= -1e-12 and self.column_sum_error <= 1e-10 and self.mean_error <= 1e-10


def check_transition(op: TransitionOperator, max_n: int = 200) -> TransitionReport:
    """Non-negativity, unit column sums and ``K'Q = K'`` of the dense inverse."""
    if op.n > max_n:
        raise InputError(f"dense verification limited to {max_n} strikes")
    Q = np.linalg.inv(op.dense_inverse())
    K = op.strikes
    return TransitionReport(
        min_entry=float(Q.min()),
        column_sum_error=float(np.max(np.abs(Q.sum(axis=0) - 1.0))),
        mean_error=float(np.max(np.abs(K @ Q - K)) / max(1.0, float(K.max()))),
    )


def default_q0(strikes) -> np.ndarray:
    """Unit-mean start density: all mass at 1 if it is a strike, else split between its neighbours."""
    K = _check_strikes(strikes)
    if not K[0] <= 1.0 <= K[-1]:
        raise InputError("strikes must bracket 1")
    q = np.zeros(len(K))
    hit = np.flatnonzero(np.isclose(K, 1.0, rtol=0.0, atol=1e-14))
    if hit.size:
        q[hit[0]] = 1.0
        return q
    i = int(np.searchsorted(K, 1.0)) - 1
    a = (K[i + 1] - 1.0) / (K[i + 1] - K[i])
    q[i], q[i + 1] = a, 1.0 - a
    return q


def backbone_from_increments(dV) -> np.ndarray:
    """``V_j = sum_{l <= j} dV_l`` from strictly positive forward variances."""
    dV = np.asarray(dV, dtype=float)
    if np.any(dV <= 0):
        raise InputError("forward variance increments must be positive")
    return np.cumsum(dV)


@dataclass(frozen=True)
class DlvSurface:
    strikes: np.ndarray
    expiries: np.ndarray
    sigma: np.ndarray  # (M, N); boundary columns are zero
    variances: np.ndarray

    def __post_init__(self):
        K = _check_strikes(self.strikes)
        T = np.asarray(self.expiries, dtype=float)
        if T.ndim != 1 or len(T) == 0 or T[0] <= 0 or np.any(np.diff(T) <= 0):
            raise InputError("expiries must be positive and strictly increasing")
        sig = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sig.shape[0] != len(T):
            raise InputError("sigma needs one row per expiry")
        sig = np.vstack([_interior_sigma(row, len(K)) for row in sig])
        V = np.asarray(self.variances, dtype=float)
        if V.shape != T.shape:
            raise InputError("variances need one entry per expiry")
        object.__setattr__(self, "strikes", K)
        object.__setattr__(self, "expiries", T)
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "variances", V)

    def operators(self) -> list[TransitionOperator]:
        dts = np.diff(np.concatenate([[0.0], self.expiries]))
        return [build_qinv(self.strikes, s, dt) for s, dt in zip(self.sigma, dts)]

    def to_dict(self) -> dict:
        return {"strikes": self.strikes.tolist(), "expiries": self.expiries.tolist(),
                "sigma": self.sigma.tolist(), "variances": self.variances.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "DlvSurface":
        missing = [k for k in ("strikes", "expiries", "sigma", "variances") if k not in doc]
        if missing:
            raise SchemaError(f"DLV document missing fields: {', '.join(missing)}")
        return cls(strikes=doc["strikes"], expiries=doc["expiries"], sigma=doc["sigma"],
                   variances=doc["variances"])


def densities_from_dlv(dlv: DlvSurface, q0=None) -> list[np.ndarray]:
    q = default_q0(dlv.strikes) if q0 is None else np.asarray(q0, dtype=float)
    out = []
    for op in dlv.operators():
        q = propagate(op, q)
        out.append(q)
    return out


def dlv_to_surface(dlv: DlvSurface, eta: float, q0=None, alpha_mode: str = "linear_T") -> SmoothSurface:
    """Smooth surface whose densities are generated by the DLV transition chain."""
    dens = densities_from_dlv(dlv, q0)
    return SmoothSurface(expiries=dlv.expiries, grids=tuple(dlv.strikes for _ in dens),
                         densities=tuple(dens), variances=dlv.variances, eta=eta, alpha_mode=alpha_mode)


def dlv_from_prices(strikes, expiries, calls, variances=None, tol: float = ZERO_TOL) -> DlvSurface:
    """Invert an arbitrage-free homogeneous call grid for ``Sigma``.

    ``calls[j, i]`` is the price at ``expiries[j]`` and ``strikes[i]``; the
    ``K = 0`` row (price 1) is implied and the grid before the first expiry is
    ``(1 - K)+``. ``Sigma = sqrt(2 Theta / (K^2 Gamma))`` with ``0/0 = 0``.
    """
    K = _check_strikes(strikes)
    T = np.asarray(expiries, dtype=float)
    C = np.atleast_2d(np.asarray(calls, dtype=float))
    if C.shape != (len(T), len(K)):
        raise InputError("calls must have shape (expiries, strikes)")
    kz = np.concatenate([[0.0], K])
    rows = [np.maximum(1.0 - K, 0.0)] + list(C)
    Ts = np.concatenate([[0.0], T])
    rep = noarb.ArbReport()
    for j, row in enumerate(C):
        rep.extend(noarb.check_slice(kz, np.concatenate([[1.0], row]), expiry=j, tol=1e-10))
    if not rep.ok:
        v = rep.violations[0]
        raise ArbitrageError(f"price grid has arbitrage: {v.kind} at expiry {v.expiry}, strike {v.strike}",
                             expiry=v.expiry, strike=v.strike)
    half = 0.5 * (K[2:] - K[:-2])
    sigma = np.zeros((len(T), len(K)))
    for j in range(1, len(rows)):
        theta = (rows[j] - rows[j - 1]) / (Ts[j] - Ts[j - 1])
        p = noarb.density_from_calls(kz, np.concatenate([[1.0], rows[j]])).masses
        gamma = p[1:-1] / half
        th = theta[1:-1]
        for i in range(len(th)):
            if th[i] < -tol:
                raise ArbitrageError(f"calendar arbitrage at expiry {j - 1}, strike {i + 1}",
                                     expiry=j - 1, strike=i + 1)
            if gamma[i] < -tol:
                raise ArbitrageError(f"butterfly arbitrage at expiry {j - 1}, strike {i + 1}",
                                     expiry=j - 1, strike=i + 1)
            t, g = max(th[i], 0.0), max(gamma[i], 0.0)
            if t <= tol and g <= tol:
                continue  # 0/0 := 0
            if g <= tol:
                raise DomainError(f"expiry {j - 1}, strike {i + 1}: time value without density "
                                  "cannot be carried by a local volatility")
            sigma[j - 1, i + 1] = math.sqrt(2.0 * t / (K[i + 1] ** 2 * g))
    if variances is None:
        atm = [float(np.interp(1.0, kz, np.concatenate([[1.0], row]))) for row in C]
        variances = repair_backbone([atm_total_variance(c) for c in atm]).V
    return DlvSurface(strikes=K, expiries=T, sigma=sigma, variances=variances)


def prices_from_densities(strikes, densities) -> np.ndarray:
    """Call grid ``sum_i q^i (K^i - K^l)+`` at the same strikes, one row per density."""
    K = np.asarray(strikes, dtype=float)
    P = np.maximum(K[None, :] - K[:, None], 0.0)
    return np.array([P @ q for q in densities])
