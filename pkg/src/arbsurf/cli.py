"""Command-line workflow: convert, fit, eval, check and dlv.

Exit codes: 0 success, 1 failed check, 2 calibration or solver failure, 64 usage.
Settings are taken from flags, then ``--config``, then defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import blackscholes as bs
from . import dlv, noarb
from .calibration import CalibConfig, calibrate, fitted_prices
from .errors import (ArbitrageError, ArbSurfError, CalibrationError, DomainError, ExtrapolationError,
                     TensorSizeError)
from .market_data import (build_snapshot, filter_quotes, read_pure_csv, read_raw_csv, with_homogeneous_grid,
                          write_pure_csv)
from .smooth_surface import SmoothSurface

EXIT_OK, EXIT_CHECK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("arbsurf")

OBJECTIVES = {"mid": "mid_fit", "hard": "hard_bid_ask", "penalty": "penalty"}
WEIGHTS = {"spread": "inv_spread", "vega": "inv_vega"}
ALPHAS = {"linear": "linear_T", "atmvar": "atm_variance"}
UNQUOTED = ("tail_nonzero", "zero_attainable")
REPORT_COLUMNS = ("T", "K", "bid_vol", "ask_vol", "fit_vol", "err_over_spread", "density")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# shared helpers


def _config(args) -> CalibConfig:
    base = CalibConfig()
    if args.config:
        base = CalibConfig.from_text(Path(args.config).read_text(), base)
    flags = {
        "eta": args.eta,
        "omega": args.omega,
        "objective_mode": OBJECTIVES.get(args.objective),
        "epsilon": args.epsilon,
        "dk_max": args.dk_max,
        "weight_mode": WEIGHTS.get(args.weights),
        "alpha_mode": ALPHAS.get(args.alpha),
        "backend": args.backend,
    }
    return replace(base, **{k: v for k, v in flags.items() if v is not None})


def _vol(price, k, T):
    try:
        return bs.implied_vol(float(price), 1.0, float(k), float(T))
    except ArbSurfError:
        return math.nan


def _load_surface(path) -> SmoothSurface:
    return SmoothSurface.from_json(Path(path).read_text())


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, allow_nan=True) + "\n")


def _read_rows(path, need):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise UsageError(f"{path}: missing header")
        missing = [c for c in need if c not in reader.fieldnames]
        if missing:
            raise UsageError(f"{path}: missing columns {missing}")
        rows = []
        for line, row in enumerate(reader, start=2):
            try:
                rows.append(tuple(float(row[c]) for c in need))
            except (TypeError, ValueError):
                raise UsageError(f"{path}: line {line}: bad number") from None
        return rows


def _mid_report(snapshot) -> noarb.ArbReport:
    """Static arbitrage of the quote mids, with the ``(0, 1)`` node prepended.

    Quotes cover neither ``K = 0+`` nor the zero-price tail, so those two
    tests are dropped.
    """
    rep = noarb.ArbReport()
    slices = []
    for j, s in enumerate(snapshot.slices):
        k = np.concatenate([[0.0], s.market_strikes])
        c = np.concatenate([[1.0], s.mids])
        rep.extend(noarb.check_slice(k, c, expiry=j))
        slices.append((k, c))
    rep.extend(noarb.check_calendar(slices))
    rep.violations = [v for v in rep.violations if v.kind not in UNQUOTED]
    return rep


# ---------------------------------------------------------------------------
# convert


def cmd_convert(args) -> int:
    raws = read_raw_csv(args.input)
    if not args.keep_all:
        raws = filter_quotes(raws, otm_only=not args.all_strikes, min_vega_over_sqrt_t=args.min_vega)
    weights = WEIGHTS[args.weights or "spread"]
    pures = write_pure_csv(args.output, raws, weight_mode=weights)
    log.info("wrote %d quotes to %s", len(pures), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def fit_report(surface: SmoothSurface, snapshot, seconds: float) -> tuple[dict, list[tuple]]:
    """Per-quote and per-expiry fit statistics plus plot rows.

    ``err_over_spread`` is ``(fit - mid) / (half spread)``, so ``|x| <= 1``
    exactly when the fit lies inside bid/ask.
    """
    quotes, expiries, rows = [], [], []
    for j, (s, fit) in enumerate(zip(snapshot.slices, fitted_prices(surface, snapshot))):
        half = 0.5 * (s.asks - s.bids)
        err = fit - s.mids
        ratio = np.where(half > 0, err / np.where(half > 0, half, 1.0), np.where(err == 0, 0.0, np.inf))
        grid, q = s.model_strikes, surface.densities[j]
        outside = int(np.sum((fit > s.asks) | (fit < s.bids)))
        expiries.append({"expiry": float(s.T), "max_abs_err_over_spread": float(np.max(np.abs(ratio))),
                         "outside_bid_ask": outside})
        for qt, f, r in zip(s.quotes, fit, ratio):
            bid_vol, ask_vol, fit_vol = _vol(qt.bid, qt.k, s.T), _vol(qt.ask, qt.k, s.T), _vol(f, qt.k, s.T)
            i = int(np.argmin(np.abs(grid - qt.k)))
            dens = float(q[i]) if np.isclose(grid[i], qt.k, rtol=1e-12, atol=0) else math.nan
            quotes.append({"expiry": float(s.T), "strike": float(qt.k), "bid": float(qt.bid),
                           "ask": float(qt.ask), "fit": float(f), "fit_vol": fit_vol,
                           "err_over_spread": float(r)})
            rows.append((s.T, qt.k, bid_vol, ask_vol, fit_vol, float(r), dens))
    doc = {"quotes": quotes, "expiries": expiries, "mid_arbitrage": _mid_report(snapshot).to_dict(),
           "seconds": seconds, "lp": {k: surface.metadata.get(k) for k in
                                      ("objective", "lp_residual", "lp_iterations")},
           "config": surface.metadata.get("config")}
    return doc, rows


def _fit_one(input_path, output_path, report_base, config: CalibConfig, homogeneous: bool = False):
    snapshot = build_snapshot(read_pure_csv(input_path), dk_max=config.dk_max, weight_mode=config.weight_mode)
    if homogeneous:
        snapshot = with_homogeneous_grid(snapshot)
    t0 = time.perf_counter()
    surface = calibrate(snapshot, config)
    seconds = time.perf_counter() - t0
    out = Path(output_path)
    out.write_text(surface.to_json())
    doc, rows = fit_report(surface, snapshot, seconds)
    base = Path(report_base)
    _write_json(Path(f"{base}.json"), doc)
    with open(f"{base}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        w.writerows([[repr(float(x)) for x in row] for row in rows])
    return str(out), seconds, max(e["max_abs_err_over_spread"] for e in doc["expiries"])


def cmd_fit(args) -> int:
    config = _config(args)
    inputs = args.input
    if len(inputs) == 1:
        out = Path(args.output)
        jobs = [(inputs[0], out, out.parent / "report")]
    else:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        jobs = [(p, outdir / f"{Path(p).stem}.surface.json", outdir / f"{Path(p).stem}.report") for p in inputs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_fit_one, *zip(*jobs), [config] * len(jobs), [args.homogeneous] * len(jobs)))
    else:
        results = [_fit_one(i, o, r, config, args.homogeneous) for i, o, r in jobs]
    for path, seconds, worst in results:
        log.info("%s: %.2fs, max |err|/half-spread %.3g", path, seconds, worst)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    surface = _load_surface(args.surface)
    points = _read_rows(args.points, ("T", "K"))
    header = ["T", "K", "price", "vol"] + (["mc_price", "mc_se"] if args.mc_paths else [])
    rows = []
    for T, K in points:
        try:
            price = float(surface.price(T, K, extrapolate=args.extrapolate))
        except ExtrapolationError as exc:
            raise UsageError(str(exc)) from None
        row = [T, K, price, _vol(price, K, T) if T > 0 else math.nan]
        if args.mc_paths:
            j = int(np.searchsorted(surface.expiries, T)) + 1
            if j <= len(surface.expiries) and surface.expiries[j - 1] == T:
                est, se = surface.mc_verify(j, [K], n_paths=args.mc_paths, seed=args.seed)
                row += [float(est[0]), float(se[0])]
            else:
                row += [math.nan, math.nan]
        rows.append(row)
    out = sys.stdout if args.output in (None, "-") else open(args.output, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(header)
        w.writerows([[repr(float(x)) for x in row] for row in rows])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def _grid_slices(rows):
    """Group ``(T, K, price)`` rows into ``(expiries, [(strikes, calls)])``."""
    by_t: dict[float, list] = {}
    for T, K, c in rows:
        by_t.setdefault(T, []).append((K, c))
    ts = sorted(by_t)
    slices, padded = [], set()
    for j, T in enumerate(ts):
        kc = sorted(by_t[T])
        k = np.array([x[0] for x in kc])
        c = np.array([x[1] for x in kc])
        if k[0] > 0:
            k, c = np.concatenate([[0.0], k]), np.concatenate([[1.0], c])
            padded.add(j)
        slices.append((k, c))
    return np.array(ts), slices, padded


def check_file(path, tol: float = noarb.TOL, n_T: int = 50, n_K: int = 200) -> noarb.ArbReport:
    """Arbitrage report for a surface JSON, a converted quote CSV or a ``T,K,price`` grid CSV."""
    path = Path(path)
    if path.suffix == ".json":
        s = _load_surface(path)
        kmax = max(float(g[-1]) for g in s.grids)
        tail = s.metadata.get("config", {}).get("tail_factor", 1.5) * kmax
        return noarb.check_surface(s, np.linspace(0.0, s.expiries[-1], n_T), np.linspace(0.0, tail, n_K),
                                   tol=tol, tail_strike=tail)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None:
        raise UsageError(f"{path}: empty file")
    if "pure_strike" in header:
        return _mid_report(build_snapshot(read_pure_csv(path)))
    _, slices, padded = _grid_slices(_read_rows(path, ("T", "K", "price")))
    rep = noarb.ArbReport()
    for j, (k, c) in enumerate(slices):
        rep.extend(noarb.check_slice(k, c, expiry=j, tol=tol))
    rep.extend(noarb.check_calendar(slices, tol=tol))
    # The slope at 0+ is only testable when the file itself starts at K = 0.
    rep.violations = [v for v in rep.violations if v.kind != "tail_nonzero"
                      and not (v.kind == "zero_attainable" and v.expiry in padded)]
    return rep


def cmd_check(args) -> int:
    rep = check_file(args.input, tol=args.tol)
    text = json.dumps({"ok": rep.ok, **rep.to_dict()}, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK if rep.ok else EXIT_CHECK


# ---------------------------------------------------------------------------
# dlv


def _grid_from_surface(s: SmoothSurface):
    K = s.grids[0]
    if any(len(g) != len(K) or not np.array_equal(g, K) for g in s.grids):
        raise UsageError("DLV extraction needs one strike grid shared by all expiries")
    return s.expiries, K, dlv.prices_from_densities(K, s.densities), s.variances


def cmd_dlv(args) -> int:
    path = Path(args.input)
    if args.direction == "to-sigma":
        if path.suffix == ".json":
            T, K, C, V = _grid_from_surface(_load_surface(path))
        else:
            ts, slices, _ = _grid_slices(_read_rows(path, ("T", "K", "price")))
            K = slices[0][0][1:]
            if any(not np.array_equal(k[1:], K) for k, _ in slices):
                raise UsageError("grid CSV must use the same strikes at every expiry")
            T, C, V = ts, np.array([c[1:] for _, c in slices]), None
        try:
            out = dlv.dlv_from_prices(K, T, C, variances=V)
        except DomainError as exc:
            print(f"arbsurf: {exc}", file=sys.stderr)
            return EXIT_CHECK
        Path(args.output).write_text(out.to_json())
        return EXIT_OK
    doc = json.loads(path.read_text())
    chain = dlv.DlvSurface.from_dict(doc)
    eta = CalibConfig().eta if args.eta is None else args.eta
    alpha = ALPHAS[args.alpha or "linear"]
    surface = dlv.dlv_to_surface(chain, eta=eta, alpha_mode=alpha)
    Path(args.output).write_text(surface.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_fit_flags(p):
    p.add_argument("--eta", type=float, help="smoothness factor in [0, 1) (default 0.25)")
    p.add_argument("--omega", type=int, choices=(0, 1), help="martingale rows in payoff (0) or price (1) space")
    p.add_argument("--objective", choices=tuple(OBJECTIVES), help="fit objective (default penalty)")
    p.add_argument("--epsilon", type=float, help="in-spread cost factor for penalty mode")
    p.add_argument("--dk-max", type=float, dest="dk_max", help="largest model grid spacing")
    p.add_argument("--weights", choices=tuple(WEIGHTS), help="quote weights")
    p.add_argument("--alpha", choices=tuple(ALPHAS), help="time interpolation")
    p.add_argument("--backend", choices=("simplex", "highs"), help="LP backend (default simplex)")
    p.add_argument("--config", help="file of key = value settings")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="arbsurf", description="Arbitrage-free option price surfaces.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="raw quotes to pure quotes")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--min-vega", type=float, default=1e-3, dest="min_vega", help="vega/sqrt(T) floor")
    p.add_argument("--all-strikes", action="store_true", dest="all_strikes", help="keep in-the-money quotes")
    p.add_argument("--keep-all", action="store_true", dest="keep_all", help="skip all filters")
    p.add_argument("--weights", choices=tuple(WEIGHTS))
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("fit", help="calibrate a surface; writes report.json and report.csv alongside")
    p.add_argument("input", nargs="+", help="converted quote CSV(s)")
    p.add_argument("-o", "--output", required=True, help="surface JSON, or a directory for several inputs")
    _add_fit_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel fits when several inputs are given")
    p.add_argument("--homogeneous", action="store_true", help="one model grid shared by all expiries")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="prices and implied vols at T,K points")
    p.add_argument("surface")
    p.add_argument("points")
    p.add_argument("-o", "--output")
    p.add_argument("--extrapolate", action="store_true", help="allow T beyond the last expiry")
    p.add_argument("--mc-paths", type=int, default=0, dest="mc_paths", help="add Monte Carlo prices at expiries")
    p.add_argument("--seed", type=int, default=0, help="seed for the Monte Carlo columns")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="arbitrage report; exit 1 on violations")
    p.add_argument("input", help="surface JSON, converted quote CSV or T,K,price CSV")
    p.add_argument("-o", "--output")
    p.add_argument("--tol", type=float, default=noarb.TOL)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("dlv", help="discrete local volatility in either direction")
    p.add_argument("input", help="surface JSON or T,K,price CSV (to-sigma); DLV JSON (to-surface)")
    p.add_argument("output")
    p.add_argument("--direction", choices=("to-sigma", "to-surface"), default="to-sigma")
    p.add_argument("--eta", type=float)
    p.add_argument("--alpha", choices=tuple(ALPHAS))
    p.set_defaults(func=cmd_dlv)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CalibrationError, TensorSizeError) as exc:
        status = getattr(exc, "status", None)
        print(f"arbsurf: {exc}" + (f" [status {status}]" if status else ""), file=sys.stderr)
        return EXIT_SOLVER
    except ArbitrageError as exc:
        print(f"arbsurf: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (UsageError, ArbSurfError, OSError, json.JSONDecodeError) as exc:
        print(f"arbsurf: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
