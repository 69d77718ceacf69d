"""The smooth surface: a Black-Scholes mixture per expiry, blended in time.

At expiry ``j`` the price is ``sum_i q_j^i Call(K_j^i, K, eta V_j)``, i.e. the
call price of ``Z_j = X_j Y_j`` with ``X_j ~ q_j`` on the model strikes and
``Y_j`` an independent unit-mean lognormal with total variance ``eta V_j``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import blackscholes as bs
from .errors import DomainError, InputError, SchemaError
from .linear_surface import ALPHA_MODES, TimeInterpolatedSurface

SCHEMA_VERSION = 1
DENSITY_TOL = 1e-9


def mixture_call(strikes, masses, K, v):
    """``sum_i masses_i Call(strikes_i, K, v)`` for scalar or array ``K``."""
    K = np.asarray(K, dtype=float)
    vals = bs.call(np.asarray(strikes, dtype=float), K[..., None], v)
    out = np.asarray(vals) @ np.asarray(masses, dtype=float)
    return out if np.ndim(out) else float(out)


def lognormal_mixture_pdf(strikes, masses, K, v):
    """Density in ``K`` of ``X Y`` with ``X ~ masses`` on ``strikes`` and ``log Y ~ N(-v/2, v)``."""
    if v <= 0:
        raise DomainError("density is atomic; use linear baseline densities")
    K = np.asarray(K, dtype=float)
    if np.any(K <= 0):
        raise InputError("density requires K > 0")
    sv = math.sqrt(v)
    z = (np.log(K[..., None] / np.asarray(strikes)) + 0.5 * v) / sv
    out = (bs.norm_pdf(z) / (K[..., None] * sv)) @ np.asarray(masses, dtype=float)
    return out if np.ndim(out) else float(out)


def validate_density(strikes, q, label: str = "density", tol: float = DENSITY_TOL):
    strikes, q = np.asarray(strikes, dtype=float), np.asarray(q, dtype=float)
    if strikes.shape != q.shape or strikes.ndim != 1:
        raise InputError(f"{label}: strikes and masses differ in shape")
    if np.any(q < -1e-12):
        raise InputError(f"{label}: negative mass {q.min():.3g}")
    if abs(q.sum() - 1.0) > tol:
        raise InputError(f"{label}: masses sum to {q.sum():.12g}")
    if abs(strikes @ q - 1.0) > tol:
        raise InputError(f"{label}: mean is {strikes @ q:.12g}")


@dataclass(frozen=True, eq=False)
class SmoothSurface(TimeInterpolatedSurface):
    expiries: np.ndarray
    grids: tuple
    densities: tuple
    variances: np.ndarray
    eta: float
    alpha_mode: str = "linear_T"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "expiries", np.asarray(self.expiries, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        object.__setattr__(self, "grids", tuple(np.asarray(g, dtype=float) for g in self.grids))
        object.__setattr__(self, "densities", tuple(np.asarray(q, dtype=float) for q in self.densities))
        M = len(self.expiries)
        if M == 0 or len(self.grids) != M or len(self.densities) != M or len(self.variances) != M:
            raise InputError("expiries, grids, densities and variances must have equal length")
        if self.expiries[0] <= 0 or np.any(np.diff(self.expiries) <= 0):
            raise InputError("expiries must be positive and strictly increasing")
        if self.variances[0] <= 0 or np.any(np.diff(self.variances) <= 0):
            raise InputError("variance backbone must be positive and strictly increasing")
        if not 0.0 <= self.eta < 1.0:
            raise InputError("eta must lie in [0, 1)")
        if self.alpha_mode not in ALPHA_MODES:
            raise InputError(f"unknown alpha mode {self.alpha_mode!r}")
        for j, (g, q) in enumerate(zip(self.grids, self.densities)):
            if np.any(g <= 0) or np.any(np.diff(g) <= 0):
                raise InputError(f"expiry {j}: model strikes must be positive and increasing")
            validate_density(g, q, label=f"expiry {j}")

    def kernel_variance(self, j: int) -> float:
        """``eta V_j`` for slice ``j = 1..M``."""
        return float(self.eta * self.variances[j - 1])

    def slice_price(self, j: int, K):
        return mixture_call(self.grids[j - 1], self.densities[j - 1], K, self.kernel_variance(j))

    def density(self, j: int, K):
        """Risk-neutral density of slice ``j = 1..M`` (closed-form lognormal mixture)."""
        return lognormal_mixture_pdf(self.grids[j - 1], self.densities[j - 1], K, self.kernel_variance(j))

    def eval_density(self, T: float, K):
        """Density of the blended price at ``T``; requires ``T_1 <= T <= T_M`` and ``eta > 0``."""
        ts = self.expiries
        if not ts[0] <= T <= ts[-1]:
            raise DomainError("density between 0 and T_1 includes the trivial atom at 1")
        j = int(np.searchsorted(ts, T, side="left"))
        if T == ts[j]:
            return self.density(j + 1, K)
        a = self.alpha(T, j)
        return a * self.density(j + 1, K) + (1.0 - a) * self.density(j, K)

    def implied_vols(self, points) -> np.ndarray:
        """Implied volatility of the surface price at each ``(T, K)``."""
        out = []
        for T, K in points:
            out.append(bs.implied_vol(float(self.price(T, K)), 1.0, float(K), float(T)))
        return np.array(out)

    def mc_verify(self, j: int, strikes, n_paths: int = 10**6, seed: int = 0):
        """Monte Carlo call prices of slice ``j`` with standard errors.

        ``X`` is drawn by inverse CDF over the atoms and ``Y`` is lognormal.
        With zero kernel variance ``Y = 1`` and the payoff expectation over
        ``X`` is returned exactly, with zero standard error.
        """
        if n_paths < 1000:
            raise InputError("n_paths must be at least 1000")
        strikes = np.atleast_1d(np.asarray(strikes, dtype=float))
        g, q = self.grids[j - 1], self.densities[j - 1]
        v = self.kernel_variance(j)
        if v < bs.ZERO_VARIANCE:
            exact = np.maximum(g[None, :] - strikes[:, None], 0.0) @ q
            return exact, np.zeros_like(exact)
        z = sample_mixture(g, q, v, n_paths, np.random.default_rng(seed))
        est, se = np.empty(len(strikes)), np.empty(len(strikes))
        for i, k in enumerate(strikes):
            pay = np.maximum(z - k, 0.0)
            est[i] = pay.mean()
            se[i] = pay.std(ddof=1) / math.sqrt(n_paths)
        return est, se

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "eta": float(self.eta),
            "alpha_mode": self.alpha_mode,
            "expiries": self.expiries.tolist(),
            "grids": [g.tolist() for g in self.grids],
            "densities": [q.tolist() for q in self.densities],
            "variances": self.variances.tolist(),
        }

    def to_json(self) -> str:
        # json writes floats with repr, which round-trips exactly (17 significant digits).
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "SmoothSurface":
        required = ("version", "eta", "alpha_mode", "expiries", "grids", "densities", "variances")
        missing = [k for k in required if k not in doc]
        if missing:
            raise SchemaError(f"surface document missing fields: {', '.join(missing)}")
        if doc["version"] != SCHEMA_VERSION:
            raise SchemaError(f"unsupported surface version {doc['version']!r}")
        try:
            return cls(expiries=doc["expiries"], grids=tuple(doc["grids"]), densities=tuple(doc["densities"]),
                       variances=doc["variances"], eta=float(doc["eta"]), alpha_mode=doc["alpha_mode"])
        except InputError as exc:
            raise SchemaError(f"invalid surface document: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "SmoothSurface":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"surface document is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise SchemaError("surface document must be a JSON object")
        return cls.from_dict(doc)


def sample_mixture(strikes, q, v, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of ``X Y``: ``X`` by inverse CDF over the atoms, ``Y`` unit-mean lognormal."""
    cdf = np.cumsum(q)
    cdf /= cdf[-1]
    x = np.asarray(strikes)[np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(q) - 1)]
    if v <= 0:
        return x
    return x * np.exp(math.sqrt(v) * rng.standard_normal(n) - 0.5 * v)
