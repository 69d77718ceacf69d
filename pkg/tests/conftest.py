import sys
import itertools

import numpy as np
import pytest

from arbsurf.calibration import CalibConfig, calibrate
from arbsurf.synthetic import standard_case


def vertex_enumeration(c, A_ub, b_ub, A_eq=None, b_eq=None, lb=None, ub=None, tol=1e-9):
    """Brute-force LP oracle: best feasible vertex of ``min c'x`` over a bounded polytope.

    Returns ``(objective, optimal vertices)`` or ``(None, [])`` when infeasible.
    Every vertex is the solution of ``n`` linearly independent active
    constraints; equality rows are always active.
    """
    c = np.asarray(c, dtype=float)
    n = len(c)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    rows = [np.asarray(A_ub, dtype=float).reshape(-1, n)]
    rhs = [np.asarray(b_ub, dtype=float).ravel()]
    if lb is not None:
        rows.append(-np.eye(n))
        rhs.append(-np.asarray(lb, dtype=float))
    if ub is not None:
        rows.append(np.eye(n))
        rhs.append(np.asarray(ub, dtype=float))
    G, h = np.vstack(rows), np.concatenate(rhs)
    k = n - len(A_eq)
    best, verts = None, []
    combos = np.array(list(itertools.combinations(range(len(G)), k)), dtype=int).reshape(-1, k)
    M = np.concatenate([np.broadcast_to(A_eq, (len(combos),) + A_eq.shape), G[combos]], axis=1)
    r = np.concatenate([np.broadcast_to(b_eq, (len(combos), len(b_eq))), h[combos]], axis=1)
    ok = np.abs(np.linalg.det(M)) > 1e-10
    xs = np.linalg.solve(M[ok], r[ok][..., None])[..., 0]
    feas = np.all(G @ xs.T <= h[:, None] + tol, axis=0)
    if len(A_eq):
        feas &= np.all(np.abs(A_eq @ xs.T - b_eq[:, None]) <= tol, axis=0)
    xs = xs[feas]
    if not len(xs):
        return None, []
    objs = xs @ c
    best = float(objs.min())
    verts = xs[objs <= best + 1e-9 * max(1.0, abs(best))]
    return best, verts


@pytest.fixture(scope="session")
def standard():
    """The round-trip market (M=8, N=40, eta=0.25) and its penalty-mode fit."""
    true, snap = standard_case()
    return true, snap, calibrate(snap, CalibConfig())


@pytest.fixture(scope="session")
def small():
    """A quick four-expiry market and fit for module tests."""
    true, snap = standard_case(n_expiries=4, n_strikes=24, seed=3)
    return true, snap, calibrate(snap, CalibConfig())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
