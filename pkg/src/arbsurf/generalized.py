"""Iterative generalized model with per-strike variance increments.

``Z_j = prod_{l <= j} X_l Y_l^{X_l}`` where ``X_l ~ q_l`` on the model strikes
and, given ``X_l = K_l^i``, ``Y_l^i`` is a unit-mean lognormal with variance
``eta dV_l^i``. Conditional on the atoms, ``Z_j`` is lognormal around the
strike product, so prices are sums over the tensors

    KK_j = K_j (x) ... (x) K_1,   VV_j = dV_j (+) ... (+) dV_1,   QQ_j = q_j (x) ... (x) q_1.

Tensors are stored flattened with the newest expiry's index varying fastest.
The cost grows with the product of grid sizes; a cap makes that explicit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import blackscholes as bs
from . import lp_solver as lp
from .calibration import CalibConfig, add_density_rows, add_fit_terms, add_tail_row, clean_density
from .errors import CalibrationError, InputError, TensorSizeError
from .linear_surface import ALPHA_MODES, TimeInterpolatedSurface
from .market_data import MarketSnapshot
from .smooth_surface import validate_density

DEFAULT_CAP = 10**7


@dataclass(frozen=True)
class GnrState:
    """Flattened ``KK``, ``VV`` and ``QQ`` after ``len(densities)`` expiries."""

    KK: np.ndarray = field(default_factory=lambda: np.ones(1))
    VV: np.ndarray = field(default_factory=lambda: np.zeros(1))
    QQ: np.ndarray = field(default_factory=lambda: np.ones(1))
    densities: tuple = ()
    cap: int = DEFAULT_CAP

    @property
    def size(self) -> int:
        return len(self.KK)


def _outer(old, new, op) -> np.ndarray:
    return op(np.asarray(old)[:, None], np.asarray(new)[None, :]).ravel()


def check_size(state: GnrState, n_new: int) -> int:
    required = state.size * n_new
    if required > state.cap:
        raise TensorSizeError(f"tensor needs {required} entries, cap is {state.cap}; raise the cap to "
                              f"at least {required}", required=required, cap=state.cap)
    return required


def extend_tensors(state: GnrState, K, dV, q=None) -> GnrState:
    """Append one expiry: ``KK`` by outer product, ``VV`` by outer sum, ``QQ`` if ``q`` is given."""
    K, dV = np.asarray(K, dtype=float), np.asarray(dV, dtype=float)
    if K.shape != dV.shape:
        raise InputError("strikes and variance increments differ in length")
    if np.any(dV < 0):
        raise InputError("variance increments must be non-negative")
    check_size(state, len(K))
    KK = _outer(state.KK, K, np.multiply)
    VV = _outer(state.VV, dV, np.add)
    if q is None:
        return GnrState(KK=KK, VV=VV, QQ=np.repeat(state.QQ, len(K)), densities=state.densities, cap=state.cap)
    q = np.asarray(q, dtype=float)
    QQ = _outer(state.QQ, q, np.multiply)
    return GnrState(KK=KK, VV=VV, QQ=QQ, densities=state.densities + (q,), cap=state.cap)


def step_matrices(state: GnrState, K, dV, market_strikes, eta: float):
    """``C`` (market x atoms), ``U`` (model x atoms) and ``r`` (model) contracted against ``QQ_{j-1}``."""
    K, dV = np.asarray(K, dtype=float), np.asarray(dV, dtype=float)
    check_size(state, len(K))
    prev_K, prev_V, prev_Q = state.KK, state.VV, state.QQ
    C = np.empty((len(market_strikes), len(K)))
    U = np.empty((len(K), len(K)))
    for i in range(len(K)):
        atoms = K[i] * prev_K
        vals = bs.call(atoms[None, :], np.asarray(market_strikes, dtype=float)[:, None],
                       eta * (dV[i] + prev_V)[None, :])
        C[:, i] = np.asarray(vals) @ prev_Q
        U[:, i] = np.maximum(atoms[None, :] - K[:, None], 0.0) @ prev_Q
    r = np.maximum(prev_K[None, :] - K[:, None], 0.0) @ prev_Q
    return C, U, r


def gnr_fit_step(state: GnrState, slice_, dV, config: CalibConfig, expiry: int = 0,
                 tail_strike: float | None = None):
    """Fit ``q_j`` with earlier densities fixed. Returns ``(q_j, state_j, solution)``.

    With ``tail_strike`` set, the call price there is capped at ``config.tail_cap``.
    """
    K = slice_.model_strikes
    C, U, r = step_matrices(state, K, dV, slice_.market_strikes, config.eta)
    problem = lp.LpProblem()
    idx = problem.add_vars(len(K), name="q")
    add_density_rows(problem, idx, K)
    for l in range(len(K)):
        if np.any(U[l]) or r[l] != 0:
            problem.add_ge(idx, U[l], float(r[l]))
    add_fit_terms(problem, idx, C, slice_.bids, slice_.asks, slice_.weights, config.objective_mode,
                  config.epsilon, usable=slice_.usable)
    if tail_strike is not None:
        tail, _, _ = step_matrices(state, K, dV, [tail_strike], config.eta)
        add_tail_row(problem, idx, tail[0], config.tail_cap)
    sol = lp.solve(problem, tol=config.lp_tol, backend=config.backend)
    if not sol.ok:
        raise CalibrationError(f"generalized step LP {sol.status} at expiry {expiry}",
                               status=sol.status, expiry=expiry)
    q = clean_density(sol.x[idx])
    return q, extend_tensors(state, K, dV, q), sol


def _interp_flat(x, xp, fp):
    return np.interp(x, xp, fp, left=fp[0], right=fp[-1])


def default_increments(snapshot: MarketSnapshot) -> list[np.ndarray]:
    """Per-strike increments of bid implied total variance, clipped at 0.

    Variances at market strikes are interpolated onto each model grid linearly
    with flat extrapolation; quotes without a bid implied volatility are skipped.
    """
    out, prev = [], None
    for j, s in enumerate(snapshot.slices):
        use = s.usable
        ks = s.market_strikes[use]
        w = bs.implied_vols(s.bids[use], 1.0, ks, s.T) ** 2 * s.T
        ok = np.isfinite(w)
        if not ok.any():
            raise CalibrationError(f"expiry {j}: no bid implied volatility for variance increments", expiry=j)
        ks, w = ks[ok], w[ok]
        cur = (ks, w)
        on_grid = _interp_flat(s.model_strikes, ks, w)
        before = np.zeros_like(on_grid) if prev is None else _interp_flat(s.model_strikes, *prev)
        out.append(np.maximum(on_grid - before, 0.0))
        prev = cur
    return out


@dataclass(frozen=True, eq=False)
class GeneralizedSurface(TimeInterpolatedSurface):
    expiries: np.ndarray
    grids: tuple
    densities: tuple
    increments: tuple
    eta: float
    alpha_mode: str = "linear_T"
    cap: int = DEFAULT_CAP
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "expiries", np.asarray(self.expiries, dtype=float))
        M = len(self.expiries)
        if not (len(self.grids) == len(self.densities) == len(self.increments) == M):
            raise InputError("expiries, grids, densities and increments must have equal length")
        if not 0.0 <= self.eta < 1.0:
            raise InputError("eta must lie in [0, 1)")
        if self.alpha_mode not in ALPHA_MODES:
            raise InputError(f"unknown alpha mode {self.alpha_mode!r}")
        for j, (g, q) in enumerate(zip(self.grids, self.densities)):
            validate_density(g, q, label=f"expiry {j}")
        states = [GnrState(cap=self.cap)]
        for g, dv, q in zip(self.grids, self.increments, self.densities):
            states.append(extend_tensors(states[-1], g, dv, q))
        object.__setattr__(self, "_states", states)

    def state(self, j: int) -> GnrState:
        return self._states[j]

    def max_atom(self) -> float:
        return float(max(s.KK.max() for s in self._states[1:]))

    def slice_price(self, j: int, K):
        st = self._states[j]
        K = np.asarray(K, dtype=float)
        vals = bs.call(st.KK, K[..., None], self.eta * st.VV)
        out = np.asarray(vals) @ st.QQ
        return out if np.ndim(out) else float(out)


def eval_generalized(densities, grids, increments, K, eta: float = 1.0, j: int | None = None,
                     cap: int = DEFAULT_CAP):
    """Exact tensor-sum price at expiry ``j`` (default: the last one).

    Kernel variances are ``eta VV``; the default ``eta = 1`` uses the increments as given.
    """
    st = GnrState(cap=cap)
    j = len(densities) if j is None else j
    for g, dv, q in list(zip(grids, increments, densities))[:j]:
        st = extend_tensors(st, g, dv, q)
    K = np.asarray(K, dtype=float)
    out = np.asarray(bs.call(st.KK, K[..., None], eta * st.VV)) @ st.QQ
    return out if np.ndim(out) else float(out)


def calibrate_generalized(snapshot: MarketSnapshot, config: CalibConfig = CalibConfig(), increments=None,
                          cap: int = DEFAULT_CAP, tail_strike: float | None = None) -> GeneralizedSurface:
    """Fit expiry by expiry, each step an LP in ``q_j`` alone.

    ``tail_strike`` optionally caps each step's price there; the greedy fit may
    then be infeasible since earlier densities are frozen.
    """
    dV = default_increments(snapshot) if increments is None else [np.asarray(d, dtype=float) for d in increments]
    if len(dV) != len(snapshot.slices):
        raise InputError("need one increment vector per expiry")
    state = GnrState(cap=cap)
    dens, objectives = [], []
    for j, s in enumerate(snapshot.slices):
        q, state, sol = gnr_fit_step(state, s, dV[j], config, expiry=j, tail_strike=tail_strike)
        dens.append(q)
        objectives.append(sol.objective)
    return GeneralizedSurface(expiries=snapshot.expiries, grids=tuple(s.model_strikes for s in snapshot.slices),
                              densities=tuple(dens), increments=tuple(dV), eta=config.eta,
                              alpha_mode=config.alpha_mode, cap=cap,
                              metadata={"objectives": objectives, "tensor_size": state.size})


def mc_generalized(surface: GeneralizedSurface, j: int, strikes, n_paths: int = 10**6, seed: int = 0):
    """Monte Carlo of ``Z_j = prod X_l Y_l^{X_l}``; returns estimates and standard errors."""
    rng = np.random.default_rng(seed)
    strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
    z = np.ones(n_paths)
    for l in range(j):
        g, q, dv = surface.grids[l], surface.densities[l], surface.increments[l]
        cdf = np.cumsum(q)
        cdf /= cdf[-1]
        i = np.minimum(np.searchsorted(cdf, rng.random(n_paths), side="right"), len(q) - 1)
        v = surface.eta * dv[i]
        z *= g[i] * np.exp(np.sqrt(v) * rng.standard_normal(n_paths) - 0.5 * v)
    est = np.array([np.maximum(z - k, 0.0).mean() for k in strikes])
    se = np.array([np.maximum(z - k, 0.0).std(ddof=1) for k in strikes]) / math.sqrt(n_paths)
    return est, se

