"""Command line interface: verify / run / sweep / report.

Exit codes: 0 completed, 1 error, 2 blow-up detected (the expected success
for the blow-up experiments), 3 diagnostic identity failure beyond
tolerance.  Scripts may branch on 0/2 vs 1/3.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, geometry, report, solver, weight
from .config import ConfigError, load_config

CERT_COLUMNS = ("manifold", "n", "residual", "c", "tau1", "tau2",
                "kappa_min", "p_min")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, OSError,
            report.ReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlslab",
        description="virial blow-up laboratory for radial NLS on warped products")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--quiet", action="store_true", help="suppress stdout")

    p = sub.add_parser("verify", help="weight certificate for a manifold")
    p.add_argument("--manifold", default="sphere_cap", help="manifold kind")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--rmax", type=float, default=None)
    p.add_argument("--warp", default=None, help="custom warp table (r, h, h')")
    p.add_argument("--cells", type=int, default=4096)
    p.add_argument("--out", default=None, help="directory for certificate.csv")
    add_common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="single evolution from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default runs/<config stem>)")
    p.add_argument("--manifold", default=None, help="override manifold kind")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--rmax", type=float, default=None)
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="parameter sweep over (p, amplitude, N, dt)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default sweeps/<config stem>)")
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="drift report and figures from a run CSV")
    p.add_argument("csv", help="diagnostics CSV from the run command")
    p.add_argument("--hessian-bound", type=float, default=None,
                   help="c for the envelope when no summary file is present")
    p.add_argument("--no-figures", action="store_true")
    add_common(p)
    p.set_defaults(func=cmd_report)
    return parser


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    kind = args.manifold
    note = None
    if kind == geometry.SPHERE_FULL:
        # no global unit-Laplacian weight on a closed manifold; certify the
        # hemisphere the odd-extension construction uses
        kind = geometry.SPHERE_CAP
        note = "sphere_full certified through its positive hemisphere"
    table = geometry.load_warp_table(args.warp) if args.warp else None
    m = geometry.make_manifold(kind, args.dim, r_max=args.rmax, warp_table=table)
    grid = geometry.make_grid(m, args.cells)
    w = weight.build_weight(m, grid)

    res = weight.unit_laplacian_residual(w, m, grid)
    c = weight.hessian_bound(w, m, grid)
    tau = weight.tau_bounds(m, grid)

    checks = []
    checks.append(("ode residual", res.analytic <= weight.RESIDUAL_TOL[w.provenance]))
    lam_max = _grid_eigen_max(w, m, grid)
    checks.append(("hessian consistency", lam_max <= c + 1e-12))
    checks.append(("weight monotonicity",
                   bool(np.all(w.rho >= -1e-12) and np.all(w.drho >= -1e-12))))
    checks.append(("tau in [0, 1]", tau.tau_in_range))
    if m.kind == geometry.HYPERBOLIC:
        radii = np.geomspace(1e-3, min(20.0, m.r_max), 500)
        claim = weight.claim_check(m.dim, radii)
        checks.append(("claim 1/n < phi < 1/(n-1)", claim.passed))

    ok = all(passed for _, passed in checks)
    if not args.quiet:
        if note:
            print(f"note: {note}")
        print(f"manifold={m.kind} n={m.dim} rmax={m.r_max:.6g} cells={grid.n_cells} "
              f"provenance={w.provenance}")
        print(f"  residual (analytic) = {res.analytic:.3e}   (discrete {res.discrete:.3e})")
        print(f"  hessian bound c     = {c:.12g}")
        print(f"  tau1, tau2          = {tau.tau1:.12g}, {tau.tau2:.12g}")
        print(f"  kappa_min, p_min    = {tau.kappa_min:.12g}, {tau.p_min:.12g}")
        if m.dim >= 3:
            # the tau route is the 2-d pinching criterion; higher dimensions
            # get the sharper Hessian bound the runs actually use
            print(f"  hessian route       = kappa >= 2c+1 = {2 * c + 1:.12g}, "
                  f"p >= {2 * (2 * c + 1) - 1:.12g}")
        for name, passed in checks:
            print(f"  [{'PASS' if passed else 'FAIL'}] {name}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        row = (m.kind, m.dim, res.analytic, c, tau.tau1, tau.tau2,
               tau.kappa_min, tau.p_min)
        with open(out / "certificate.csv", "w") as f:
            f.write(",".join(CERT_COLUMNS) + "\n")
            f.write(",".join(_cert_fmt(v) for v in row) + "\n")
    return 0 if ok else 3


def _cert_fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, int):
        return str(v)
    return f"{v:.17g}"


def _grid_eigen_max(w, m, grid) -> float:
    h_c, dh_c = m.warp(grid.r)
    vals = [np.max(w.d2rho), np.max(np.abs(w.drho) * np.abs(dh_c) / h_c)]
    return float(max(vals))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    spec = load_config(args.config)
    cfg = spec.base
    if args.manifold:
        cfg.kind = args.manifold
    if args.dim is not None:
        cfg.dim = args.dim
    if args.rmax is not None:
        cfg.r_max = args.rmax

    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    out.mkdir(parents=True, exist_ok=True)

    result = solver.run(cfg)
    _write_run_outputs(result, out)
    code = _exit_code_for(result)
    if not args.quiet:
        if not result.admissible:
            print(f"warning: p = {cfg.p:g} is below p_min = "
                  f"{2 * result.kappa_min - 1:g} (kappa {weight.kappa_for_power(cfg.p):g}"
                  f" < {result.kappa_min:g}); concavity blow-up is not predicted")
        print(_summary_text(result))
        print(f"wrote {out / 'diagnostics.csv'}")
    return code


def _exit_code_for(result: solver.RunResult) -> int:
    if result.outcome.kind == "step_failure":
        return 1
    tol = report.slack_tolerance(result.e0)
    concavity_applies = result.e0 < 0 and result.admissible and not result.config.linear
    if result.mass_drift > 1e-8:
        return 3
    if concavity_applies and result.min_slack < -tol:
        return 3
    return 2 if result.outcome.is_blowup else 0


def _summary_items(result: solver.RunResult):
    cfg = result.config
    blow_t = result.outcome.t if result.outcome.is_blowup else math.nan
    return [
        ("outcome", result.outcome.kind),
        ("outcome_t", result.outcome.t),
        ("blowup_time", blow_t),
        ("t_star", result.t_star if result.t_star is not None else math.nan),
        ("e0", result.e0),
        ("j0", result.j0),
        ("jp0", result.jp0),
        ("hessian_c", result.hessian_c),
        ("kappa_min", result.kappa_min),
        ("p", cfg.p),
        ("admissible", str(result.admissible).lower()),
        ("amplitude", result.amplitude),
        ("mass_drift", result.mass_drift),
        ("min_slack", result.min_slack),
        ("max_concavity_violation", max(0.0, -result.min_slack)),
        ("n_cells", cfg.n_cells),
        ("dt", cfg.dt),
        ("t_max", cfg.t_max),
        ("records", len(result.records)),
    ]


def _summary_text(result: solver.RunResult) -> str:
    return "\n".join(f"{k} = {_cert_fmt(v) if isinstance(v, float) else v}"
                     for k, v in _summary_items(result))


def _write_run_outputs(result: solver.RunResult, out: Path) -> None:
    report.write_records_csv(out / "diagnostics.csv", result.records)
    (out / "summary.txt").write_text(_summary_text(result) + "\n")


def read_summary(path) -> dict:
    vals = {}
    for line in Path(path).read_text().splitlines():
        if "=" not in line:
            continue
        k, _, v = line.partition("=")
        vals[k.strip()] = v.strip()
    return vals


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def cmd_sweep(args) -> int:
    spec = load_config(args.config)
    points = spec.sweep_points()
    if all(axis == [] for axis in (spec.p_values, spec.amplitude_factors,
                                   spec.n_values, spec.dt_values)):
        raise ConfigError("sweep needs at least one sweep.* axis")
    out = Path(args.out) if args.out else Path("sweeps") / Path(args.config).stem
    out.mkdir(parents=True, exist_ok=True)

    def one(index_point):
        idx, point = index_point
        run_dir = out / f"run_{idx:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = spec.config_for(*point)
        try:
            result = solver.run(cfg)
        except Exception as exc:  # per-run isolation: record, keep sweeping
            (run_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n")
            return (run_dir.name, cfg.p, math.nan, math.nan, "error", math.nan)
        _write_run_outputs(result, run_dir)
        t_report = result.outcome.t if result.outcome.is_blowup else cfg.t_max
        return (run_dir.name, cfg.p, result.amplitude, result.e0,
                result.outcome.kind, t_report)

    workers = _sweep_workers(len(points))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, enumerate(points)))
    else:
        rows = [one(ip) for ip in enumerate(points)]

    table = out / "phase_table.csv"
    with open(table, "w") as f:
        f.write("run,p,amplitude,E0,outcome,time\n")
        for row in rows:  # spec order, not completion order
            name, p, amp, e0, outcome, t_rep = row
            f.write(f"{name},{_cert_fmt(float(p))},{_cert_fmt(float(amp))},"
                    f"{_cert_fmt(float(e0))},{outcome},{_cert_fmt(float(t_rep))}\n")
    if not args.quiet:
        print(f"{len(rows)} runs -> {table}")
    failures = sum(1 for row in rows if row[4] == "error")
    return 0 if failures == 0 else 1


def _sweep_workers(n_runs: int) -> int:
    cap = os.environ.get("NLSLAB_THREADS")
    if cap is not None:
        try:
            cap_i = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"NLSLAB_THREADS must be an integer, got {cap!r}")
        return min(cap_i, n_runs)
    return min(os.cpu_count() or 1, n_runs, 8)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def cmd_report(args) -> int:
    csv_path = Path(args.csv)
    series = report.load_series(csv_path)

    c = args.hessian_bound
    detected_t = None
    summary_path = csv_path.parent / "summary.txt"
    if summary_path.is_file():
        summary = read_summary(summary_path)
        if c is None and "hessian_c" in summary:
            c = float(summary["hessian_c"])
        if summary.get("outcome") in ("blowup_detected", "overflow"):
            detected_t = float(summary["outcome_t"])
    if c is None:
        c = 1.0

    stats = report.summarize(series, hessian_c=c, detected_t=detected_t)
    if not args.quiet:
        print(report.format_report(stats))
    if not args.no_figures:
        paths = report.render_figures(series, stats, csv_path.parent, csv_path.stem)
        if not args.quiet:
            for p in paths:
                print(f"wrote {p}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
