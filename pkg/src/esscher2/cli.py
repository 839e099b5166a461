"""Command-line interface: calibration, simulation, invariant checks,
pricing, and interval bounds with diffable CSV/JSON/SVG artifacts.

Artifacts are byte-stable: identical config and seed reproduce identical
files (floats via repr, sorted JSON keys, no timestamps).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import bsde_bounds, lattice, path_engine
from .bsde_bounds import Claim
from .esscher_solver import (
    EsscherClass,
    SolverFailure,
    eta,
    eta_residual,
    kappa_exponential,
    kappa_linear,
    theta_root_cp_exponential,
    theta_root_cp_linear,
)
from .market_model import CompoundPoissonModel, MarketModel, load_model, validate

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_SOLVER = 2
EXIT_CHECKS = 3


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, float) else v
                             for v in row])


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _svg_convergence(ns, y_upper, y_lower) -> str:
    """Hand-emitted SVG of the envelope values against n (log-ish x axis)."""
    width, height, pad = 640, 400, 50
    xs = [math.log2(n + 1.0) for n in ns]
    ys = list(y_upper) + list(y_lower)
    x_lo, x_hi = min(xs), max(xs) or 1.0
    y_lo, y_hi = min(ys), max(ys)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    if x_hi == x_lo:
        x_hi = x_lo + 1.0

    def sx(x):
        return pad + (x - x_lo) / (x_hi - x_lo) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y_lo) / (y_hi - y_lo) * (height - 2 * pad)

    def polyline(series, color):
        pts = " ".join(f"{sx(x):.2f},{sy(v):.2f}" for x, v in zip(xs, series))
        return (f'<polyline fill="none" stroke="{color}" stroke-width="2" '
                f'points="{pts}"/>')

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height-pad}" x2="{width-pad}" y2="{height-pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height-pad}" stroke="black"/>',
        polyline(y_upper, "#c0392b"),
        polyline(y_lower, "#2471a3"),
        f'<text x="{width/2:.0f}" y="{height-12}" text-anchor="middle" font-size="12">'
        'log2(1+n)</text>',
        f'<text x="{pad}" y="{pad-10}" font-size="12">upper (red) / lower (blue) '
        'envelope values</text>',
    ]
    for x, n in zip(xs, ns):
        parts.append(f'<text x="{sx(x):.1f}" y="{height-pad+16}" text-anchor="middle" '
                     f'font-size="10">{n:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _psi_grid(lo: float, hi: float, points: int) -> np.ndarray:
    """Symmetric log-spaced grid in [-hi, hi] with magnitude floor lo, plus 0."""
    per_side = (points - 1) // 2
    mags = np.logspace(math.log10(lo), math.log10(hi), per_side)
    return np.concatenate([-mags[::-1], [0.0], mags])


def _load_and_validate(path: str):
    model = load_model(path)
    if isinstance(model, MarketModel):
        report = validate(model)
        if not report.passed:
            raise ValueError("model validation failed:\n" + str(report))
    return model


def _cmd_calibrate(args) -> int:
    model = _load_and_validate(args.model)
    os.makedirs(args.out, exist_ok=True)
    grid = _psi_grid(args.psi_lo, args.psi_hi, args.points)

    if isinstance(model, CompoundPoissonModel):
        def kappa_or_inf(fn, th, psi):
            try:
                return fn(th, psi, model.law)
            except OverflowError:
                return math.inf

        rows = []
        for psi in grid:
            th_l = theta_root_cp_linear(float(psi), model.law)
            th_e = theta_root_cp_exponential(float(psi), model.law)
            rows.append([float(psi), th_l, th_e,
                         kappa_or_inf(kappa_exponential, th_e, float(psi)),
                         kappa_or_inf(kappa_linear, th_l, float(psi))])
        _write_csv(os.path.join(args.out, "theta.csv"),
                   ["psi", "theta_linear", "theta_exponential", "kappa", "kappa_tilde"],
                   rows)
        return EXIT_OK

    for klass in EsscherClass:
        rows = []
        for psi in grid:
            for k, seg in enumerate(model.segments):
                e = eta(float(psi), seg, klass, discount=args.discount)
                res = eta_residual(e, float(psi), seg, klass, discount=args.discount)
                rows.append([k, float(psi), e, res, e / seg.gamma_tilde])
        _write_csv(os.path.join(args.out, f"eta_{klass.value}.csv"),
                   ["segment", "psi", "eta", "residual", "eta_over_gammatilde"],
                   rows)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    model = _load_and_validate(args.model)
    if not isinstance(model, MarketModel):
        raise ValueError("simulate requires a jump-diffusion model")
    os.makedirs(args.out, exist_ok=True)
    bundle = path_engine.simulate(model, model.horizon / args.steps, args.paths, args.seed)
    x_t = bundle.X[:, -1]
    payload = {
        "paths": args.paths,
        "steps": args.steps,
        "seed": args.seed,
        "mean_X_T": float(np.mean(x_t)),
        "var_X_T": float(np.var(x_t, ddof=1)),
        "mean_S_T": float(np.mean(bundle.S_T)),
        "total_jumps": int(np.sum(bundle.dN)),
    }
    _write_json(os.path.join(args.out, "simulate.json"), payload)
    if args.dump_paths:
        k = min(args.dump_paths, args.paths)
        rows = [[i] + [float(v) for v in bundle.X[i]] for i in range(k)]
        _write_csv(os.path.join(args.out, "paths.csv"),
                   ["path"] + [f"X_{j}" for j in range(bundle.X.shape[1])], rows)
    return EXIT_OK


def _run_checks(model: MarketModel, seed: int, n_paths: int, n_steps: int) -> list[dict]:
    checks = []

    def add(name, value, threshold, passed=None):
        checks.append({"name": name, "max_error": float(value),
                       "threshold": threshold,
                       "pass": bool(value <= threshold) if passed is None else passed})

    bundle = path_engine.simulate(model, model.horizon / n_steps, n_paths, seed)
    add("stoch_exp_identity", path_engine.stoch_exp_identity(bundle), 1e-10)
    for klass in EsscherClass:
        add(f"yor_factorization_{klass.value}",
            path_engine.yor_factorization_check(bundle, 0.4, -0.7, klass), 1e-10)
    add("exp_lin_bridge", path_engine.exp_lin_bridge_check(bundle, 0.9, -1.5), 1e-10)

    coarse = path_engine.simulate(model, model.horizon, n_paths, seed)
    for klass in EsscherClass:
        for psi in (-5.0, 0.0, 5.0):
            density = path_engine.density_for_psi(coarse, psi, klass)
            result = path_engine.martingale_check(coarse, density)
            for key, entry in result.items():
                gap = abs(entry["mean"] - entry["target"])
                limit = 3.0 * entry["stderr"]
                add(f"mc_{key}_{klass.value}_psi={psi:g}", gap, limit)

    for klass in EsscherClass:
        lat = lattice.build(model, klass, min(n_steps, 120))
        add(f"lattice_martingale_{klass.value}", lat.s_martingale_error(),
            10.0 * (model.horizon / lat.n_steps) ** 2 * 100.0)
    return checks


def _cmd_check(args) -> int:
    model = _load_and_validate(args.model)
    if not isinstance(model, MarketModel):
        raise ValueError("check requires a jump-diffusion model")
    os.makedirs(args.out, exist_ok=True)
    checks = _run_checks(model, args.seed, args.paths, args.steps)
    _write_csv(os.path.join(args.out, "check.csv"),
               ["name", "max_error", "threshold", "pass"],
               [[c["name"], c["max_error"], c["threshold"], c["pass"]] for c in checks])
    _write_json(os.path.join(args.out, "check.json"),
                {"seed": args.seed, "paths": args.paths, "steps": args.steps,
                 "all_pass": all(c["pass"] for c in checks), "checks": checks})
    return EXIT_OK if all(c["pass"] for c in checks) else EXIT_CHECKS


def _cmd_price(args) -> int:
    model = _load_and_validate(args.model)
    if not isinstance(model, MarketModel):
        raise ValueError("price requires a jump-diffusion model")
    os.makedirs(args.out, exist_ok=True)
    claim = Claim.parse(args.claim)
    klass = EsscherClass.parse(args.klass)
    price, stderr = path_engine.price_mc(
        model, klass, args.psi, claim,
        h=model.horizon / args.steps, n_paths=args.paths, seed=args.seed)
    _write_json(os.path.join(args.out, "price.json"),
                {"claim": claim.describe(), "class": klass.value, "psi": args.psi,
                 "paths": args.paths, "steps": args.steps, "seed": args.seed,
                 "price": price, "stderr": stderr})
    return EXIT_OK


def _cmd_bounds(args) -> int:
    model = _load_and_validate(args.model)
    if not isinstance(model, MarketModel):
        raise ValueError("bounds requires a jump-diffusion model")
    os.makedirs(args.out, exist_ok=True)
    claim = Claim.parse(args.claim)
    klass = EsscherClass.parse(args.klass)
    lat = lattice.build(model, klass, args.steps)
    schedule = bsde_bounds.default_schedule(args.n_max)
    report = bsde_bounds.bounds(lat, claim, n_schedule=schedule, tol=args.tol)

    _write_json(os.path.join(args.out, "bounds.json"), report.to_dict())
    rows = [[n, yu, yl, vu, n * vu, ku]
            for n, yu, yl, vu, ku in zip(report.ns, report.y_upper, report.y_lower,
                                         report.v_upper, report.k_upper)]
    _write_csv(os.path.join(args.out, "convergence.csv"),
               ["n", "Y_n_upper", "Y_n_lower", "v_n", "n_v_n", "K_T_aggregate"], rows)
    with open(os.path.join(args.out, "convergence.svg"), "w") as fh:
        fh.write(_svg_convergence(report.ns, report.y_upper, report.y_lower))

    if args.dump_lattice:
        rows = lat.dump_slices(2)
        _write_csv(os.path.join(args.out, "lattice_slices.csv"),
                   ["slice", "j", "m", "S", "prob"],
                   [[r["slice"], r["j"], r["m"], r["S"], r["prob"]] for r in rows])

    if args.psi_grid:
        grid = [float(v) for v in args.psi_grid.split(",")]
        sandwich = bsde_bounds.interval_sandwich(lat, claim, grid, report=report)
        _write_json(os.path.join(args.out, "sandwich.json"),
                    {"eps": sandwich["eps"], "inside": sandwich["inside"],
                     "Y_inf": sandwich["Y_inf"], "Y_up": sandwich["Y_up"],
                     "psi_values": {repr(k): v for k, v in sandwich["psi_values"].items()}})
    return EXIT_OK


def _cmd_report(args) -> int:
    model = _load_and_validate(args.model)
    if not isinstance(model, MarketModel):
        raise ValueError("report requires a jump-diffusion model")
    os.makedirs(args.out, exist_ok=True)
    claim = Claim.parse(args.claim)
    klass = EsscherClass.parse(args.klass)
    lat = lattice.build(model, klass, args.steps)
    rep = bsde_bounds.bounds(lat, claim)
    grid = [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0]
    sandwich = bsde_bounds.interval_sandwich(lat, claim, grid, report=rep)
    price, stderr = path_engine.price_mc(
        model, klass, 0.0, claim, h=model.horizon / args.steps,
        n_paths=args.paths, seed=args.seed)
    _write_json(os.path.join(args.out, "report.json"), {
        "model": model.to_dict(),
        "claim": claim.describe(),
        "class": klass.value,
        "bounds": rep.to_dict(),
        "sandwich_inside": sandwich["inside"],
        "mc_price_psi0": {"price": price, "stderr": stderr, "seed": args.seed},
    })
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="esscher2",
        description="Second-order Esscher calibration, simulation checks, and "
                    "pricing-interval bounds")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap worker count (results never depend on it)")
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="solve martingale roots on a psi grid")
    cal.add_argument("--model", required=True)
    cal.add_argument("--out", required=True)
    cal.add_argument("--psi-lo", type=float, default=1e-2)
    cal.add_argument("--psi-hi", type=float, default=1e4)
    cal.add_argument("--points", type=int, default=41)
    cal.add_argument("--no-discount", dest="discount", action="store_false")
    cal.set_defaults(func=_cmd_calibrate)

    sim = sub.add_parser("simulate", help="simulate paths, write summary")
    sim.add_argument("--model", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--paths", type=int, default=10_000)
    sim.add_argument("--steps", type=int, default=250)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--dump-paths", type=int, default=0)
    sim.set_defaults(func=_cmd_simulate)

    chk = sub.add_parser("check", help="run the pathwise/martingale invariant suite")
    chk.add_argument("--model", required=True)
    chk.add_argument("--out", required=True)
    chk.add_argument("--paths", type=int, default=20_000)
    chk.add_argument("--steps", type=int, default=250)
    chk.add_argument("--seed", type=int, required=True)
    chk.set_defaults(func=_cmd_check)

    pr = sub.add_parser("price", help="Monte Carlo price under one psi")
    pr.add_argument("--model", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--claim", required=True)
    pr.add_argument("--class", dest="klass", required=True)
    pr.add_argument("--psi", type=float, default=0.0)
    pr.add_argument("--paths", type=int, default=100_000)
    pr.add_argument("--steps", type=int, default=120)
    pr.add_argument("--seed", type=int, required=True)
    pr.set_defaults(func=_cmd_price)

    bd = sub.add_parser("bounds", help="pricing-interval bounds on the lattice")
    bd.add_argument("--model", required=True)
    bd.add_argument("--out", required=True)
    bd.add_argument("--claim", required=True)
    bd.add_argument("--class", dest="klass", required=True)
    bd.add_argument("--steps", type=int, default=120)
    bd.add_argument("--n-max", type=int, default=1024)
    bd.add_argument("--tol", type=float, default=None)
    bd.add_argument("--seed", type=int, default=None,
                    help="recorded for provenance; bounds are deterministic")
    bd.add_argument("--dump-lattice", action="store_true")
    bd.add_argument("--psi-grid", default="",
                    help="comma-separated psi values for the sandwich check")
    bd.set_defaults(func=_cmd_bounds)

    rep = sub.add_parser("report", help="combined bounds + sandwich + MC summary")
    rep.add_argument("--model", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--claim", required=True)
    rep.add_argument("--class", dest="klass", default="linear")
    rep.add_argument("--steps", type=int, default=120)
    rep.add_argument("--paths", type=int, default=50_000)
    rep.add_argument("--seed", type=int, required=True)
    rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; --help exits 0
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    try:
        return args.func(args)
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
