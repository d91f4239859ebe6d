"""Post-run analysis of a diagnostics CSV: drift numbers and figures.

The CSV is the machine contract; the report renders what a reviewer wants
to see next to it: the J(t) series against its quadratic envelope and
blow-up time bound, conservation drifts, the identity-vs-finite-difference
mismatches, and the gradient growth.  Figures are written as PNG files
alongside the delimited output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .diagnostics import RECORD_COLUMNS, blowup_time_bound


class ReportError(ValueError):
    """Malformed or truncated diagnostics CSV."""


def write_records_csv(path, records) -> None:
    """Fixed-column CSV with 17-significant-digit floats, so downstream
    diffing and Richardson analysis are exact."""
    with open(path, "w") as f:
        f.write(",".join(RECORD_COLUMNS) + "\n")
        for rec in records:
            f.write(",".join(f"{v:.17g}" for v in rec.as_row()) + "\n")


def load_series(path) -> dict[str, np.ndarray]:
    """Read a diagnostics CSV back into column arrays; strict layout."""
    p = Path(path)
    if not p.is_file():
        raise ReportError(f"no such CSV: {p}")
    lines = p.read_text().strip().splitlines()
    if not lines:
        raise ReportError(f"{p}: empty file")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != RECORD_COLUMNS:
        raise ReportError(f"{p}: unexpected header {header}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(RECORD_COLUMNS):
            raise ReportError(f"{p}:{lineno}: expected {len(RECORD_COLUMNS)} fields")
        try:
            rows.append([float(v) for v in parts])
        except ValueError as exc:
            raise ReportError(f"{p}:{lineno}: {exc}") from None
    if not rows:
        raise ReportError(f"{p}: no data rows")
    data = np.asarray(rows)
    return {name: data[:, i] for i, name in enumerate(RECORD_COLUMNS)}


@dataclass
class ReportStats:
    n_records: int
    t_end: float
    e0: float
    j0: float
    jp0: float
    hessian_c: float
    mass_drift: float          # max relative deviation from the first record
    energy_drift: float        # max absolute deviation
    max_jprime_mismatch: float
    max_jsecond_mismatch: float
    min_slack: float
    slack_tolerance: float
    t_star: float | None
    detected_t: float | None   # from the summary, when available


def slack_tolerance(e0: float) -> float:
    """Absolute floor plus 1% of |4 E0| to absorb discretization error."""
    return max(1e-6, 0.01 * abs(4.0 * e0))


def summarize(series: dict[str, np.ndarray], hessian_c: float = 1.0,
              detected_t: float | None = None) -> ReportStats:
    t = series["t"]
    mass_col = series["mass"]
    finite_mass = mass_col[np.isfinite(mass_col)]
    mass0 = finite_mass[0]
    mass_drift = (np.max(np.abs(finite_mass - mass0)) / mass0) if mass0 > 0 else 0.0

    energy = series["energy"]
    fin_e = energy[np.isfinite(energy)]
    e0 = fin_e[0]
    energy_drift = float(np.max(np.abs(fin_e - e0)))

    def mismatch(a, b):
        sel = np.isfinite(series[a]) & np.isfinite(series[b])
        if not np.any(sel):
            return math.nan
        return float(np.max(np.abs(series[a][sel] - series[b][sel])))

    jsec = series["Jsecond_id"]
    sel = np.isfinite(jsec)
    slack = 4.0 * hessian_c * e0 - jsec[sel]
    j0 = series["J"][0]
    jp0 = series["Jprime_id"][0]
    t_star = blowup_time_bound(j0, jp0, e0, hessian_c) if j0 > 0 else None

    return ReportStats(
        n_records=len(t), t_end=float(t[-1]), e0=float(e0), j0=float(j0),
        jp0=float(jp0), hessian_c=hessian_c,
        mass_drift=float(mass_drift), energy_drift=energy_drift,
        max_jprime_mismatch=mismatch("Jprime_id", "Jprime_fd"),
        max_jsecond_mismatch=mismatch("Jsecond_id", "Jsecond_fd"),
        min_slack=float(np.min(slack)) if np.any(sel) else math.nan,
        slack_tolerance=slack_tolerance(e0),
        t_star=t_star, detected_t=detected_t)


def format_report(stats: ReportStats) -> str:
    lines = [
        f"records                : {stats.n_records} (t_end = {stats.t_end:.6g})",
        f"E0                     : {stats.e0:.10g}",
        f"mass drift (relative)  : {stats.mass_drift:.3e}",
        f"energy drift (absolute): {stats.energy_drift:.3e}",
        f"max |Jprime_id - Jprime_fd|   : {stats.max_jprime_mismatch:.3e}",
        f"max |Jsecond_id - Jsecond_fd| : {stats.max_jsecond_mismatch:.3e}",
        f"concavity slack minimum: {stats.min_slack:.6g} "
        f"(tolerance -{stats.slack_tolerance:.3g}, c = {stats.hessian_c:g})",
    ]
    if stats.t_star is not None:
        lines.append(f"blow-up time bound T*  : {stats.t_star:.6g}")
        if stats.detected_t is not None:
            verdict = "OK (before bound)" if stats.detected_t < stats.t_star \
                else "VIOLATED (past bound)"
            lines.append(f"detected blow-up time  : {stats.detected_t:.6g}  {verdict}")
    else:
        lines.append("blow-up time bound T*  : none (E0 >= 0)")
    return "\n".join(lines)


def render_figures(series: dict[str, np.ndarray], stats: ReportStats,
                   out_dir, stem: str) -> list[Path]:
    """Write the four standard PNG figures next to the CSV; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = series["t"]
    paths = []

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.plot(t, series["J"], label="J(t)", lw=1.6)
    envelope_t = np.linspace(0.0, stats.t_star if stats.t_star else t[-1], 200)
    env = stats.j0 + stats.jp0 * envelope_t + 2.0 * stats.hessian_c * stats.e0 * envelope_t ** 2
    ax.plot(envelope_t, env, "--", label="quadratic envelope", lw=1.2)
    if stats.t_star is not None:
        ax.axvline(stats.t_star, color="k", ls=":", lw=1, label=r"$T_*$")
    if stats.detected_t is not None:
        ax.axvline(stats.detected_t, color="C3", ls="-.", lw=1, label="detected")
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel("t")
    ax.set_ylabel("J")
    ax.legend(frameon=False)
    ax.set_title("weighted mass vs concavity envelope")
    paths.append(_save(fig, out_dir / f"{stem}_virial.png"))

    fig, axes = plt.subplots(2, 1, figsize=(6.4, 5.4), sharex=True)
    mass = series["mass"]
    mass0 = mass[np.isfinite(mass)][0]
    mass_dev = np.abs(mass - mass0) / max(mass0, 1e-300)
    axes[0].plot(t, mass_dev, lw=1.2)
    _log_scale(axes[0], mass_dev)
    axes[0].set_ylabel("|mass - mass0| / mass0")
    energy = series["energy"]
    e0 = energy[np.isfinite(energy)][0]
    e_dev = np.abs(energy - e0)
    axes[1].plot(t, e_dev, lw=1.2, color="C1")
    _log_scale(axes[1], e_dev)
    axes[1].set_ylabel("|E - E0|")
    axes[1].set_xlabel("t")
    axes[0].set_title("conservation drift")
    paths.append(_save(fig, out_dir / f"{stem}_conservation.png"))

    fig, axes = plt.subplots(2, 1, figsize=(6.4, 5.4), sharex=True)
    for name_id, name_fd, label in (("Jprime_id", "Jprime_fd", "|J' id - fd|"),
                                    ("Jsecond_id", "Jsecond_fd", "|J'' id - fd|")):
        sel = np.isfinite(series[name_id]) & np.isfinite(series[name_fd])
        if np.any(sel):
            mism = np.abs(series[name_id][sel] - series[name_fd][sel])
            axes[0].plot(t[sel], mism, lw=1.2, label=label)
            _log_scale(axes[0], mism)
    axes[0].legend(frameon=False)
    axes[0].set_title("virial identity vs centered differences")
    jsec = series["Jsecond_id"]
    sel = np.isfinite(jsec)
    axes[1].plot(t[sel], 4.0 * stats.hessian_c * stats.e0 - jsec[sel], lw=1.2, color="C2")
    axes[1].axhline(-stats.slack_tolerance, color="C3", ls=":", lw=1)
    axes[1].set_ylabel("concavity slack")
    axes[1].set_xlabel("t")
    paths.append(_save(fig, out_dir / f"{stem}_identities.png"))

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    sel = np.isfinite(series["grad_sq"])
    ax.plot(t[sel], series["grad_sq"][sel], lw=1.4, label=r"$\|\nabla u\|^2$")
    sel = np.isfinite(series["sup_abs_u"])
    ax.plot(t[sel], series["sup_abs_u"][sel] ** 2, lw=1.4, label=r"$\sup|u|^2$")
    _log_scale(ax, series["grad_sq"], series["sup_abs_u"])
    ax.set_xlabel("t")
    ax.legend(frameon=False)
    ax.set_title("growth")
    paths.append(_save(fig, out_dir / f"{stem}_growth.png"))
    return paths


def _log_scale(ax, *columns) -> None:
    if any(np.any(col[np.isfinite(col)] > 0) for col in columns):
        ax.set_yscale("log")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
