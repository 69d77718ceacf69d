"""Linear programming: problem container, bounded-variable primal simplex, MPS export.

Problems are stated as ``min c'x`` subject to equality rows, ``<=`` rows and
``>=`` rows with per-variable bounds ``lb <= x <= ub``. Rows are kept sparse
(index/value pairs); the built-in solver densifies them into a tableau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dger as _dger

from .errors import InputError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

SENSES = ("E", "L", "G")

# Consecutive non-improving pivots before Bland's rule takes over.
DEGENERATE_SWITCH = 50
REINVERT_EVERY = 300
PIVOT_TOL = 1e-7
FEAS_TOL = 1e-11


@dataclass
class LpProblem:
    """Mutable builder; variables and rows are appended, never removed."""

    c: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    names: list = field(default_factory=list)
    rows: list = field(default_factory=list)  # (idx array, val array, sense, rhs, name)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def add_vars(self, n: int, cost=0.0, lb=0.0, ub=math.inf, name: str = "x") -> np.ndarray:
        """Append ``n`` variables; returns their indices."""
        start = self.n_vars
        cost, lb, ub = (np.broadcast_to(np.asarray(a, dtype=float), (n,)) for a in (cost, lb, ub))
        if np.any(~np.isfinite(cost)):
            raise InputError("objective coefficients must be finite")
        if np.any(lb > ub):
            raise InputError("variable lower bound exceeds upper bound")
        self.c.extend(cost.tolist())
        self.lb.extend(lb.tolist())
        self.ub.extend(ub.tolist())
        self.names.extend(f"{name}{i}" for i in range(start, start + n))
        return np.arange(start, start + n)

    def add_var(self, cost=0.0, lb=0.0, ub=math.inf, name: str = "x") -> int:
        return int(self.add_vars(1, cost, lb, ub, name)[0])

    def add_row(self, idx, vals, sense: str, rhs: float, name: str | None = None) -> int:
        idx = np.asarray(idx, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if sense not in SENSES:
            raise InputError(f"row sense must be one of {SENSES}")
        if idx.shape != vals.shape:
            raise InputError("row indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise InputError("row references an unknown variable")
        if not (np.all(np.isfinite(vals)) and math.isfinite(rhs)):
            raise InputError("row coefficients must be finite")
        self.rows.append((idx, vals, sense, float(rhs), name or f"r{len(self.rows)}"))
        return len(self.rows) - 1

    def add_eq(self, idx, vals, rhs, name=None):
        return self.add_row(idx, vals, "E", rhs, name)

    def add_le(self, idx, vals, rhs, name=None):
        return self.add_row(idx, vals, "L", rhs, name)

    def add_ge(self, idx, vals, rhs, name=None):
        return self.add_row(idx, vals, "G", rhs, name)

    def add_cost(self, idx, vals):
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(vals)):
            self.c[int(i)] += float(v)

    def dense(self):
        """``(A, b, senses)`` with one dense row per constraint."""
        A = np.zeros((self.n_rows, self.n_vars))
        b = np.empty(self.n_rows)
        senses = []
        for r, (idx, vals, sense, rhs, _) in enumerate(self.rows):
            np.add.at(A[r], idx, vals)
            b[r] = rhs
            senses.append(sense)
        return A, b, senses

    def residual(self, x) -> float:
        """Largest violation of any row or bound at ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        for idx, vals, sense, rhs, _ in self.rows:
            lhs = float(vals @ x[idx])
            if sense == "E":
                worst = max(worst, abs(lhs - rhs))
            elif sense == "L":
                worst = max(worst, lhs - rhs)
            else:
                worst = max(worst, rhs - lhs)
        lb, ub = np.asarray(self.lb), np.asarray(self.ub)
        worst = max(worst, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        return worst

    def objective(self, x) -> float:
        return float(np.asarray(self.c) @ np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray | None
    objective: float
    residual: float
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def add_abs_deviation(problem: LpProblem, idx, coeffs, const: float, weight: float,
                      name: str = "dev") -> tuple[int, int]:
    """Add ``e+ - e- = sum(coeffs * x[idx]) + const`` with cost ``weight (e+ + e-)``.

    At an optimum ``e+ + e-`` equals the absolute value of the expression.
    Returns the indices of ``(e+, e-)``.
    """
    if weight < 0:
        raise InputError("deviation weight must be non-negative")
    ep = problem.add_var(weight, name=f"{name}+")
    em = problem.add_var(weight, name=f"{name}-")
    idx = np.concatenate([np.asarray(idx, dtype=np.int64), [ep, em]])
    vals = np.concatenate([np.asarray(coeffs, dtype=float), [-1.0, 1.0]])
    problem.add_eq(idx, vals, -float(const))
    return ep, em


# ---------------------------------------------------------------------------
# Built-in simplex


def _standard_form(problem: LpProblem):
    """Map to ``min c'y, A y = b, 0 <= y <= u`` with ``b >= 0``.

    Returns the standard-form arrays plus ``(T, shift)`` with ``x = T y + shift``
    restricted to the structural part of ``y``.
    """
    A0, b0, senses = problem.dense()
    c0 = np.asarray(problem.c, dtype=float)
    lb = np.asarray(problem.lb, dtype=float)
    ub = np.asarray(problem.ub, dtype=float)
    n0 = problem.n_vars

    # Columns of y: one per variable (shifted or reflected), extra column for free variables.
    cols, costs, uppers, T_entries, shift = [], [], [], [], np.zeros(n0)
    for i in range(n0):
        if math.isfinite(lb[i]):
            shift[i] = lb[i]
            cols.append(A0[:, i])
            costs.append(c0[i])
            uppers.append(ub[i] - lb[i])
            T_entries.append((i, 1.0))
        elif math.isfinite(ub[i]):
            shift[i] = ub[i]
            cols.append(-A0[:, i])
            costs.append(-c0[i])
            uppers.append(math.inf)
            T_entries.append((i, -1.0))
        else:
            cols.extend([A0[:, i], -A0[:, i]])
            costs.extend([c0[i], -c0[i]])
            uppers.extend([math.inf, math.inf])
            T_entries.extend([(i, 1.0), (i, -1.0)])
    m = len(b0)
    A = np.column_stack(cols) if cols else np.zeros((m, 0))
    b = b0 - A0 @ shift
    # Equilibrate rows on the structural columns; slacks absorb the scale.
    scale = np.max(np.abs(A), axis=1) if A.shape[1] else np.ones(m)
    scale[scale == 0] = 1.0
    scale[b < 0] *= -1.0
    A = A / scale[:, None]
    b = b / scale
    # Slacks for inequality rows.
    slack_cols = []
    for r, s in enumerate(senses):
        if s != "E":
            e = np.zeros(m)
            e[r] = (1.0 if s == "L" else -1.0) / scale[r]
            slack_cols.append(e)
    if slack_cols:
        A = np.hstack([A, np.column_stack(slack_cols)])
        costs.extend([0.0] * len(slack_cols))
        uppers.extend([math.inf] * len(slack_cols))
    return A, b, np.array(costs), np.array(uppers), T_entries, shift, c0


class _Tableau:
    """Dense tableau ``B^-1 A`` with nonbasic variables at either bound."""

    def __init__(self, A, b, c, u, basis, x, tol):
        self.A, self.b, self.c, self.u = A, b, c, u
        self.basis = list(basis)
        self.x = x
        self.tol = tol
        # Costs may span many decades (weights next to tiny tie-break terms), so the
        # dual tolerance follows the smallest cost, floored at roundoff of the largest.
        ac = np.abs(c[c != 0.0])
        c_min = float(ac.min()) if ac.size else 1.0
        c_max = float(ac.max()) if ac.size else 1.0
        self.d_tol = max(tol * min(1.0, c_min), np.finfo(float).eps * max(1.0, c_max))
        self.iterations = 0
        self.reinvert()

    def reinvert(self):
        B = self.A[:, self.basis]
        nb = np.ones(self.A.shape[1], dtype=bool)
        nb[self.basis] = False
        self.T = np.asfortranarray(np.linalg.solve(B, self.A))
        rhs = self.b - self.A[:, nb] @ self.x[nb]
        self.x[self.basis] = np.linalg.solve(B, rhs)
        self.d = self.c - self.c[self.basis] @ self.T
        self.d[self.basis] = 0.0
        self.since_reinvert = 0

    def _entering(self, bland: bool):
        x, u, d, tol = self.x, self.u, self.d, self.d_tol
        fin = np.isfinite(u)
        at_upper = np.zeros(len(u), dtype=bool)
        at_upper[fin] = x[fin] >= u[fin] - 1e-12 * np.maximum(1.0, np.abs(u[fin]))
        cand = np.where(at_upper, d > tol, d < -tol)
        cand[self.basis] = False
        cand[u <= 0.0] = False  # fixed variables never move
        idx = np.flatnonzero(cand)
        if idx.size == 0:
            return None, 0
        j = int(idx[0]) if bland else int(idx[np.argmax(np.abs(d[idx]))])
        return j, (-1 if at_upper[j] else 1)

    def step(self, bland: bool):
        """One pivot or bound flip. Returns ``"optimal"``, ``"unbounded"`` or the step length."""
        j, sign = self._entering(bland)
        if j is None:
            return OPTIMAL
        alpha = sign * self.T[:, j]
        xb = self.x[self.basis]
        ub = self.u[self.basis]
        # Harris two-pass ratio test: bounds relaxed by FEAS_TOL fix the step
        # limit, then the largest pivot within that limit leaves.
        room = np.full(len(xb), math.inf)
        hits_upper = np.zeros(len(xb), dtype=bool)
        pos = alpha > PIVOT_TOL
        room[pos] = np.maximum(xb[pos], 0.0)
        negm = (alpha < -PIVOT_TOL) & np.isfinite(ub)
        room[negm] = np.maximum(ub[negm] - xb[negm], 0.0)
        hits_upper[negm] = True
        live = pos | negm
        absa = np.abs(alpha)
        ratios = np.full(len(xb), math.inf)
        ratios[live] = room[live] / absa[live]
        relaxed = np.full(len(xb), math.inf)
        relaxed[live] = (room[live] + FEAS_TOL) / absa[live]
        t_row = float(relaxed.min()) if len(relaxed) else math.inf
        t_flip = self.u[j]
        if not math.isfinite(t_row) and not math.isfinite(t_flip):
            return UNBOUNDED
        self.iterations += 1
        if t_flip <= float(ratios.min(initial=math.inf)):
            t = t_flip
            self.x[self.basis] -= t * alpha
            self.x[j] += sign * t
            return t * abs(self.d[j])
        if bland:
            # Textbook min-ratio ties with the smallest basic index keep the
            # anti-cycling guarantee that the relaxed test would void.
            t_min = float(ratios.min())
            ties = np.flatnonzero(ratios <= t_min + 1e-12 * max(1.0, t_min))
            r = int(ties[np.argmin(np.asarray(self.basis)[ties])])
        else:
            ties = np.flatnonzero(ratios <= t_row)
            r = int(ties[np.argmax(absa[ties])])
        t_row = float(ratios[r])
        t = t_row
        gain = t * abs(self.d[j])
        leaving = self.basis[r]
        self.x[self.basis] -= t * alpha
        self.x[j] += sign * t
        self.x[leaving] = self.u[leaving] if hits_upper[r] else 0.0
        self._pivot(r, j)
        return gain

    def _pivot(self, r, j):
        T = self.T
        col = T[:, j].copy()
        row = T[r] / col[r]
        col[r] = 0.0
        # In-place rank-one update; the tableau is kept in Fortran order for BLAS.
        self.T = T = _dger(-1.0, col, row, a=T, overwrite_a=1)
        T[r] = row
        self.d -= self.d[j] * row
        self.basis[r] = j
        self.d[self.basis] = 0.0
        self.since_reinvert += 1
        if self.since_reinvert >= REINVERT_EVERY:
            self.reinvert()

    def run(self, max_iters: int):
        degenerate = 0
        while self.iterations < max_iters:
            out = self.step(bland=degenerate >= DEGENERATE_SWITCH)
            if out in (OPTIMAL, UNBOUNDED):
                return out
            degenerate = degenerate + 1 if out <= 1e-14 else 0
        return ITERATION_LIMIT


def _simplex(problem: LpProblem, tol: float, max_iters: int) -> LpSolution:
    A, b, c, u, T_entries, shift, c0 = _standard_form(problem)
    m, n = A.shape
    if m == 0:
        # Only bounds: each variable sits at whichever bound is cheaper.
        y = np.zeros(n)
        if np.any((c < 0) & ~np.isfinite(u)):
            return LpSolution(UNBOUNDED, None, math.nan, math.nan)
        y[c < 0] = u[c < 0]
        return _finish(problem, y, T_entries, shift, OPTIMAL, 0)

    # Phase 1: artificials form the starting basis.
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    u1 = np.concatenate([u, np.full(m, math.inf)])
    x1 = np.concatenate([np.zeros(n), b])
    tab = _Tableau(A1, b, c1, u1, range(n, n + m), x1, tol)
    status = tab.run(max_iters)
    if status == ITERATION_LIMIT:
        return LpSolution(ITERATION_LIMIT, None, math.nan, math.nan, tab.iterations)
    tab.reinvert()
    infeas = float(tab.x[n:].sum())
    if infeas > tol * max(1.0, float(np.abs(b).max())):
        return LpSolution(INFEASIBLE, None, math.nan, infeas, tab.iterations)

    # Drive zero-level artificials out of the basis; drop rows that are redundant.
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if tab.basis[r] < n:
            continue
        row = tab.T[r, :n]
        nz = np.flatnonzero(np.abs(row) > 1e-7)
        if nz.size:
            j = int(nz[np.argmax(np.abs(row[nz]))])
            tab.x[tab.basis[r]] = 0.0
            tab._pivot(r, j)
        else:
            keep[r] = False
    basis = [tab.basis[r] for r in range(m) if keep[r]]
    x = tab.x[:n].copy()
    x = np.clip(x, 0.0, u)
    if not basis:
        return _finish(problem, x, T_entries, shift, OPTIMAL, tab.iterations)

    iters = tab.iterations
    tab = _Tableau(A[keep], b[keep], c, u, basis, x, tol)
    tab.iterations = iters
    status = tab.run(max_iters)
    if status != OPTIMAL:
        return LpSolution(status, None, math.nan, math.nan, tab.iterations)
    tab.reinvert()
    y = np.clip(tab.x, 0.0, u)
    return _finish(problem, y, T_entries, shift, OPTIMAL, tab.iterations)


def _finish(problem, y, T_entries, shift, status, iters) -> LpSolution:
    x = shift.copy()
    for col, (i, s) in enumerate(T_entries):
        x[i] += s * y[col]
    return LpSolution(status, x, problem.objective(x), problem.residual(x), iters)


# ---------------------------------------------------------------------------
# Backends


class LpBackend:
    name = "abstract"

    def solve(self, problem: LpProblem, tol: float, max_iters: int) -> LpSolution:  # pragma: no cover
        raise NotImplementedError


class SimplexBackend(LpBackend):
    """Dense two-phase bounded-variable primal simplex (Dantzig, then Bland under degeneracy)."""

    name = "simplex"

    def solve(self, problem, tol=1e-9, max_iters=100_000):
        return _simplex(problem, tol, max_iters)


class HighsBackend(LpBackend):
    """Cross-check backend through ``scipy.optimize.linprog``."""

    name = "highs"

    def solve(self, problem, tol=1e-9, max_iters=100_000):
        from scipy.optimize import linprog

        A, b, senses = problem.dense()
        senses = np.array(senses)
        eq, le, ge = senses == "E", senses == "L", senses == "G"
        A_ub = np.vstack([A[le], -A[ge]])
        b_ub = np.concatenate([b[le], -b[ge]])
        bounds = [(None if not math.isfinite(lo) else lo, None if not math.isfinite(hi) else hi)
                  for lo, hi in zip(problem.lb, problem.ub)]
        kw = dict(A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  A_eq=A[eq] if eq.any() else None, b_eq=b[eq] if eq.any() else None,
                  bounds=bounds, method="highs", options={"maxiter": max_iters})
        res = linprog(problem.c, **kw)
        status = {0: OPTIMAL, 1: ITERATION_LIMIT, 2: INFEASIBLE, 3: UNBOUNDED}.get(res.status, INFEASIBLE)
        if status == INFEASIBLE and linprog(np.zeros(problem.n_vars), **kw).status == 0:
            # Presolve may report an unbounded problem as infeasible.
            status = UNBOUNDED
        if status != OPTIMAL:
            return LpSolution(status, None, math.nan, math.nan, int(res.nit))
        return LpSolution(OPTIMAL, res.x, problem.objective(res.x), problem.residual(res.x), int(res.nit))


BACKENDS = {"simplex": SimplexBackend, "highs": HighsBackend}


def solve(problem: LpProblem, tol: float = 1e-9, max_iters: int = 100_000,
          backend: str | LpBackend = "simplex") -> LpSolution:
    """Solve ``problem``; never raises on infeasible or unbounded input."""
    if isinstance(backend, str):
        if backend not in BACKENDS:
            raise InputError(f"unknown LP backend {backend!r}")
        backend = BACKENDS[backend]()
    return backend.solve(problem, tol, max_iters)


# ---------------------------------------------------------------------------
# MPS export


def _mps_num(v: float) -> str:
    s = f"{v:.12g}"
    return s if len(s) <= 12 else f"{v:.6e}"


def to_mps(problem: LpProblem, name: str = "ARBSURF") -> str:
    """Fixed-format MPS text. Names are ``C<i>`` and ``R<i>`` to fit eight characters."""
    lines = [f"NAME          {name[:8]}", "ROWS", " N  COST"]
    for r, (_, _, sense, _, _) in enumerate(problem.rows):
        lines.append(f" {sense}  R{r}")
    by_col: dict[int, list[tuple[str, float]]] = {}
    for r, (idx, vals, _, _, _) in enumerate(problem.rows):
        for i, v in zip(idx, vals):
            by_col.setdefault(int(i), []).append((f"R{r}", float(v)))
    lines.append("COLUMNS")
    for i in range(problem.n_vars):
        entries = ([("COST", problem.c[i])] if problem.c[i] != 0 else []) + by_col.get(i, [])
        if not entries:
            entries = [("COST", 0.0)]
        for rname, v in entries:
            lines.append(f"    {'C' + str(i):<8}  {rname:<8}  {_mps_num(v):>12}")
    lines.append("RHS")
    for r, (_, _, _, rhs, _) in enumerate(problem.rows):
        if rhs != 0:
            lines.append(f"    {'RHS':<8}  {'R' + str(r):<8}  {_mps_num(rhs):>12}")
    lines.append("BOUNDS")
    for i, (lo, hi) in enumerate(zip(problem.lb, problem.ub)):
        col = "C" + str(i)
        if not math.isfinite(lo) and not math.isfinite(hi):
            lines.append(f" FR {'BND':<8}  {col:<8}")
            continue
        if not math.isfinite(lo):
            lines.append(f" MI {'BND':<8}  {col:<8}")
        elif lo != 0:
            lines.append(f" LO {'BND':<8}  {col:<8}  {_mps_num(lo):>12}")
        if math.isfinite(hi):
            lines.append(f" UP {'BND':<8}  {col:<8}  {_mps_num(hi):>12}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"
