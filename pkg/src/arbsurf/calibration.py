"""Calibration of the smooth surface to bid/ask quotes by linear programming.

One global LP over the densities ``q_1..q_M`` of all expiries. The fit terms
price market strikes with the smooth kernel; the martingale rows compare
payoff prices on consecutive model grids, which with ``omega = 0`` puts the
discrete densities in convex order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import blackscholes as bs
from . import lp_solver as lp
from .errors import CalibrationError, InputError
from .market_data import MarketSnapshot
from .smooth_surface import SmoothSurface

OBJECTIVE_MODES = ("mid_fit", "hard_bid_ask", "penalty")
VARIANCE_SOURCES = ("atm_bid", "atm_mid")
BACKBONE_BUMP = 1e-8
Q_CLIP = 1e-12


@dataclass(frozen=True)
class CalibConfig:
    eta: float = 0.25
    omega: int = 0
    objective_mode: str = "penalty"
    epsilon: float = 1e-8
    weight_mode: str = "inv_spread"
    dk_max: float = math.inf
    variance_source: str = "atm_bid"
    alpha_mode: str = "linear_T"
    backend: str = "simplex"
    lp_tol: float = 1e-9
    # Each expiry's price at tail_factor * K_max is held below tail_cap (inf disables).
    tail_factor: float = 1.5
    tail_cap: float = 1e-11

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise InputError("eta must lie in [0, 1)")
        if self.omega not in (0, 1):
            raise InputError("omega must be 0 or 1")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise InputError(f"objective_mode must be one of {OBJECTIVE_MODES}")
        if self.epsilon < 0:
            raise InputError("epsilon must be non-negative")
        if self.variance_source not in VARIANCE_SOURCES:
            raise InputError(f"variance_source must be one of {VARIANCE_SOURCES}")
        if not self.dk_max > 0:
            raise InputError("dk_max must be positive")
        if not (self.tail_factor >= 1.0 and self.tail_cap >= 0):
            raise InputError("tail_factor must be >= 1 and tail_cap >= 0")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, base: "CalibConfig | None" = None) -> "CalibConfig":
        """Parse ``key = value`` lines (``#`` starts a comment) over ``base``."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"config line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise InputError(f"config line {n}: unknown key {key!r}")
            kind = types[key]
            try:
                values[key] = int(val) if kind == "int" else float(val) if kind == "float" else val
            except ValueError as exc:
                raise InputError(f"config line {n}: bad value for {key}: {val!r}") from exc
        return replace(base or cls(), **values)


@dataclass(frozen=True)
class VarianceBackbone:
    V: np.ndarray
    raw: np.ndarray
    repairs: int = 0


@dataclass(frozen=True)
class CalibMatrices:
    C: np.ndarray  # market strikes x model strikes
    U: np.ndarray  # model strikes x model strikes
    R: np.ndarray  # model strikes x previous model strikes (constant column for j = 1)


def repair_backbone(raw, bump: float = BACKBONE_BUMP) -> VarianceBackbone:
    """Running maximum plus ``bump`` wherever the raw sequence fails to increase."""
    raw = np.asarray(raw, dtype=float)
    V = raw.copy()
    repairs = 0
    for j in range(1, len(V)):
        if V[j] <= V[j - 1]:
            V[j] = V[j - 1] + bump
            repairs += 1
    return VarianceBackbone(V=V, raw=raw, repairs=repairs)


def atm_variance(strikes, prices, T: float) -> float:
    """Implied total variance at ``k = 1``, linear in strike between neighbours.

    Without quotes on both sides of 1 the nearest strike's variance is used.
    Returns NaN when no quote has a computable implied volatility.
    """
    strikes = np.asarray(strikes, dtype=float)
    w = bs.implied_vols(prices, 1.0, strikes, T) ** 2 * T
    ok = np.isfinite(w)
    ks, w = strikes[ok], w[ok]
    if ks.size == 0:
        return math.nan
    below, above = np.flatnonzero(ks <= 1.0), np.flatnonzero(ks >= 1.0)
    if below.size and above.size:
        i, j = below[-1], above[0]
        if i == j:
            return float(w[i])
        a = (1.0 - ks[i]) / (ks[j] - ks[i])
        return float((1 - a) * w[i] + a * w[j])
    return float(w[np.argmin(np.abs(ks - 1.0))])


def backbone(snapshot: MarketSnapshot, source: str = "atm_bid") -> VarianceBackbone:
    if source not in VARIANCE_SOURCES:
        raise InputError(f"variance source must be one of {VARIANCE_SOURCES}")
    raw = []
    for j, s in enumerate(snapshot.slices):
        use = s.usable
        prices = (s.bids if source == "atm_bid" else s.mids)[use]
        v = atm_variance(s.market_strikes[use], prices, s.T)
        if not v > 0:
            raise CalibrationError(f"expiry {j} (T={s.T}): no usable ATM quote for the variance backbone",
                                   expiry=j)
        raw.append(v)
    return repair_backbone(raw)


def payoff_matrix(rows, cols) -> np.ndarray:
    """``(cols_i - rows_l)+`` indexed ``[l, i]``."""
    return np.maximum(np.asarray(cols)[None, :] - np.asarray(rows)[:, None], 0.0)


def kernel_matrix(atoms, strikes, v: float) -> np.ndarray:
    """``Call(atoms_i, strikes_l, v)`` indexed ``[l, i]``."""
    return np.asarray(bs.call(np.asarray(atoms)[None, :], np.asarray(strikes)[:, None], v))


def build_matrices(snapshot: MarketSnapshot, V, eta: float, omega: int = 0) -> list[CalibMatrices]:
    V = np.asarray(V, dtype=float)
    out = []
    for j, s in enumerate(snapshot.slices):
        K = s.model_strikes
        C = kernel_matrix(K, s.market_strikes, eta * V[j])
        U = kernel_matrix(K, K, eta * omega * V[j])
        if j == 0:
            R = payoff_matrix(K, [1.0])
        else:
            R = kernel_matrix(snapshot.slices[j - 1].model_strikes, K, eta * omega * V[j - 1])
        out.append(CalibMatrices(C=C, U=U, R=R))
    return out


def add_fit_terms(problem: lp.LpProblem, q_idx, C, bids, asks, weights, mode: str, epsilon: float,
                  usable=None, name: str = "fit") -> None:
    """Objective terms tying ``C q`` to the quotes of one expiry.

    ``mid_fit``: ``w |c - mid|``. ``hard_bid_ask``: the same with ``B <= c <= A``
    enforced through slack bounds. ``penalty``:
    ``w (eps |c - mid| + (c - A)+ + (B - c)+)``, split into an inside and an
    outside deviation per side so the cheaper inside slack fills first.
    """
    if mode not in OBJECTIVE_MODES:
        raise InputError(f"objective mode must be one of {OBJECTIVE_MODES}")
    bids, asks, weights = (np.asarray(a, dtype=float) for a in (bids, asks, weights))
    mids = 0.5 * (bids + asks)
    usable = np.ones(len(bids), dtype=bool) if usable is None else np.asarray(usable)
    for l in np.flatnonzero(usable):
        w, m = weights[l], mids[l]
        if mode == "mid_fit":
            lp.add_abs_deviation(problem, q_idx, C[l], -m, w, name=f"{name}{l}")
            continue
        if mode == "hard_bid_ask":
            ep = problem.add_var(w, 0.0, asks[l] - m, name=f"{name}{l}+")
            em = problem.add_var(w, 0.0, m - bids[l], name=f"{name}{l}-")
            extra, vals = [ep, em], [-1.0, 1.0]
        else:
            ep_in = problem.add_var(w * epsilon, 0.0, asks[l] - m, name=f"{name}{l}+in")
            ep_out = problem.add_var(w * (1.0 + epsilon), name=f"{name}{l}+out")
            em_in = problem.add_var(w * epsilon, 0.0, m - bids[l], name=f"{name}{l}-in")
            em_out = problem.add_var(w * (1.0 + epsilon), name=f"{name}{l}-out")
            extra, vals = [ep_in, ep_out, em_in, em_out], [-1.0, -1.0, 1.0, 1.0]
        problem.add_eq(np.concatenate([q_idx, extra]), np.concatenate([C[l], vals]), m)


def add_density_rows(problem: lp.LpProblem, q_idx, strikes) -> None:
    problem.add_eq(q_idx, np.ones(len(q_idx)), 1.0)
    problem.add_eq(q_idx, strikes, 1.0)


def add_martingale_rows(problem: lp.LpProblem, q_idx, U, prev_idx, R, atol: float = 0.0) -> int:
    """``U q_j >= R q_{j-1}`` (``prev_idx=None``: ``R`` is a constant column). Returns rows added.

    Rows that vanish identically (e.g. at the largest model strike) are skipped.
    """
    added = 0
    for l in range(U.shape[0]):
        u, r = U[l], R[l]
        if not np.any(u) and not np.any(r):
            continue
        if prev_idx is None:
            problem.add_ge(q_idx, u, float(r.sum()) - atol)
        else:
            problem.add_ge(np.concatenate([q_idx, prev_idx]), np.concatenate([u, -r]), -atol)
        added += 1
    return added


def add_tail_row(problem: lp.LpProblem, q_idx, coeffs, cap: float) -> bool:
    """``coeffs . q <= cap`` unless the cap is infinite or the row vanishes."""
    coeffs = np.asarray(coeffs, dtype=float)
    if not math.isfinite(cap) or not np.any(coeffs > 0):
        return False
    top = float(coeffs.max())
    problem.add_le(q_idx, coeffs / top, cap / top)
    return True


def _assemble(snapshot, mats, config: CalibConfig, n_expiries: int, V=None):
    problem = lp.LpProblem()
    q_idx = []
    for j in range(n_expiries):
        s = snapshot.slices[j]
        K = s.model_strikes
        idx = problem.add_vars(len(K), name=f"q{j}_")
        q_idx.append(idx)
        add_density_rows(problem, idx, K)
        add_martingale_rows(problem, idx, mats[j].U, None if j == 0 else q_idx[j - 1], mats[j].R)
        if V is not None:
            tail_k = config.tail_factor * snapshot.bounds[1]
            add_tail_row(problem, idx, kernel_matrix(K, [tail_k], config.eta * V[j])[0], config.tail_cap)
        add_fit_terms(problem, idx, mats[j].C, s.bids, s.asks, s.weights, config.objective_mode,
                      config.epsilon, usable=s.usable, name=f"e{j}_")
    return problem, q_idx


def _binding_expiry(snapshot, mats, config, V) -> int | None:
    """First expiry whose prefix LP is infeasible."""
    for j in range(1, len(snapshot.slices) + 1):
        problem, _ = _assemble(snapshot, mats, config, j, V)
        if lp.solve(problem, tol=config.lp_tol, backend=config.backend).status == lp.INFEASIBLE:
            return j - 1
    return None


def clean_density(q) -> np.ndarray:
    q = np.asarray(q, dtype=float).copy()
    q[(q < 0) & (q > -Q_CLIP)] = 0.0
    return q


def solve_calibration(snapshot: MarketSnapshot, V, config: CalibConfig):
    """Assemble and solve the global LP. Returns ``(densities, solution)``."""
    mats = build_matrices(snapshot, V, config.eta, config.omega)
    problem, q_idx = _assemble(snapshot, mats, config, len(snapshot.slices), np.asarray(V, dtype=float))
    sol = lp.solve(problem, tol=config.lp_tol, backend=config.backend)
    if not sol.ok:
        expiry = _binding_expiry(snapshot, mats, config, V) if sol.status == lp.INFEASIBLE else None
        where = f" (binding expiry {expiry})" if expiry is not None else ""
        raise CalibrationError(f"calibration LP {sol.status}{where}", status=sol.status, expiry=expiry)
    return [clean_density(sol.x[idx]) for idx in q_idx], sol


def fitted_prices(surface: SmoothSurface, snapshot: MarketSnapshot) -> list[np.ndarray]:
    return [np.asarray(surface.slice_price(j + 1, s.market_strikes)) for j, s in enumerate(snapshot.slices)]


def calibrate(snapshot: MarketSnapshot, config: CalibConfig = CalibConfig(),
              V=None) -> SmoothSurface:
    """Fit the smooth surface; ``V`` overrides the backbone taken from the quotes."""
    bb = backbone(snapshot, config.variance_source) if V is None else repair_backbone(V)
    densities, sol = solve_calibration(snapshot, bb.V, config)
    grids = tuple(s.model_strikes for s in snapshot.slices)
    meta = {
        "objective": sol.objective,
        "lp_residual": sol.residual,
        "lp_iterations": sol.iterations,
        "backbone_repairs": bb.repairs,
        "boundary_mass": [(float(q[0]), float(q[-1])) for q in densities],
        "config": asdict(config),
    }
    if config.omega:
        meta["warning"] = "omega=1: martingale rows in price space, absence of arbitrage not guaranteed"
    return SmoothSurface(expiries=snapshot.expiries, grids=grids, densities=tuple(densities),
                         variances=bb.V, eta=config.eta, alpha_mode=config.alpha_mode, metadata=meta)


def calibrate_smp(snapshot: MarketSnapshot, V, eta: float, objective_mode: str = "mid_fit",
                  epsilon: float = 1e-8, backend: str = "simplex") -> list[np.ndarray]:
    """Homogeneous-grid fit with one shared payoff matrix for the martingale rows."""
    if not snapshot.is_homogeneous:
        raise InputError("calibrate_smp needs identical strikes across expiries")
    config = CalibConfig(eta=eta, omega=0, objective_mode=objective_mode, epsilon=epsilon, backend=backend)
    densities, _ = solve_calibration(snapshot, repair_backbone(V).V, config)
    return densities
