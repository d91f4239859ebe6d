"""Conserved functionals, the virial identity chain, and blow-up bounds.

Per time slice the record carries mass, energy, J = int rho |u|^2, the
first and second virial derivatives evaluated two ways (the analytic
identity and centered differences of the recorded J series), the gradient
norm, and boundary bookkeeping.  With a unit-Laplacian weight the second
derivative reduces to

    J'' = 4 int rho'' |u_r|^2 - 2 (p-1)/(p+1) int |u|^{p+1}
          - 2 |u_r|^2 rho' area   (at the boundary),

and rho'' <= c pointwise turns it into the concavity bound J'' <= 4 c E0,
whose integrated quadratic envelope yields the blow-up time bound.  Every
functional is invariant under a global phase of u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Manifold, RadialGrid, face_gradient, grad_norm_sq
from .solver import Outcome, WaveState
from .weight import RESIDUAL_TOL, WeightFunction

# fixed CSV column order
RECORD_COLUMNS = ("t", "mass", "energy", "J", "Jprime_id", "Jprime_fd",
                  "Jsecond_id", "Jsecond_fd", "grad_sq", "sup_abs_u",
                  "boundary_flux", "tail_mass")


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    J: float
    Jprime_id: float
    Jprime_fd: float
    Jsecond_id: float
    Jsecond_fd: float
    grad_sq: float
    sup_abs_u: float
    boundary_flux: float
    tail_mass: float

    def as_row(self) -> tuple:
        return tuple(getattr(self, name) for name in RECORD_COLUMNS)


def mass(state: WaveState, grid: RadialGrid) -> float:
    return float(np.sum(np.abs(state.u) ** 2 * grid.weights))


def energy(state: WaveState, grid: RadialGrid, linear: bool = False) -> float:
    """int (|u_r|^2 - G(|u|^2)) dV with G(s) = 2/(p+1) s^{(p+1)/2}."""
    kinetic = grad_norm_sq(grid, state.u)
    if linear:
        return kinetic
    p = state.p
    potential = (2.0 / (p + 1.0)) * float(
        np.sum(np.abs(state.u) ** (p + 1.0) * grid.weights))
    return kinetic - potential


def virial_J(state: WaveState, w: WeightFunction, grid: RadialGrid) -> float:
    return float(np.sum(w.rho * np.abs(state.u) ** 2 * grid.weights))


def _cell_gradient(grid: RadialGrid, u: np.ndarray) -> np.ndarray:
    grad = face_gradient(grid, u)
    return 0.5 * (grad[:-1] + grad[1:])


def virial_Jprime(state: WaveState, w: WeightFunction, grid: RadialGrid) -> float:
    """-2 Im int rho' u_r conj(u) dV with face-averaged cell gradients."""
    ur = _cell_gradient(grid, state.u)
    return -2.0 * float(np.sum(
        w.drho * (ur * np.conj(state.u)).imag * grid.weights))


def _boundary_gradient_flux(grid: RadialGrid, u: np.ndarray) -> float:
    """|u_r|^2 times boundary area at the last face (one-sided gradient)."""
    grad = face_gradient(grid, u)
    return float(grid.face_area[-1] * abs(grad[-1]) ** 2)


def virial_Jsecond(state: WaveState, w: WeightFunction, grid: RadialGrid,
                   m: Manifold, linear: bool = False) -> float:
    """The specialized second-derivative identity for unit-Laplacian weights.

    Refuses weights whose ODE residual exceeds the provenance tolerance:
    the identity would be polluted by the dropped Lap(rho) != 1 and
    Lap^2(rho) terms.  On a mirrored sphere_full weight the equator kink
    contributes the two hemisphere boundary fluxes (the odd-extension sum).
    """
    h, dh = m.warp(grid.r)
    residual = float(np.max(np.abs(
        w.d2rho + (m.dim - 1) * (dh / h) * w.drho - 1.0)))
    if residual > 10.0 * RESIDUAL_TOL[w.provenance]:
        raise ValueError(
            f"weight ODE residual {residual:.3e} too large for the "
            f"unit-Laplacian identity (tolerance {RESIDUAL_TOL[w.provenance]:.0e})")

    u = state.u
    grad = face_gradient(grid, u)
    area = grid.face_area
    dr = grid.dr
    # same face quadrature as grad_norm_sq, so rho'' <= c pointwise gives
    # the discrete inequality term1 <= 4 c grad_norm_sq exactly
    term1 = np.sum(w.d2rho_face[1:-1] * area[1:-1] * np.abs(grad[1:-1]) ** 2) * dr
    if grid.bc_is_dirichlet:
        term1 += w.d2rho_face[-1] * area[-1] * abs(grad[-1]) ** 2 * (dr / 2.0)
    total = 4.0 * float(term1)

    if not linear:
        p = state.p
        total -= 2.0 * ((p - 1.0) / (p + 1.0)) * float(
            np.sum(np.abs(u) ** (p + 1.0) * grid.weights))

    if grid.bc_is_dirichlet:
        total -= 2.0 * _boundary_gradient_flux(grid, u) * w.boundary_slope
    if w.mirror_face is not None:
        eq = w.mirror_face
        slope_in = float(w.eval(grid.r_face[eq])[1])  # hemisphere rho'(pi/2-)
        eq_flux = float(area[eq] * abs(grad[eq]) ** 2)
        total -= 2.0 * (2.0 * slope_in) * eq_flux
    return total


def concavity_slack(record: DiagnosticsRecord, e0: float, c: float,
                    kappa: float | None = None) -> float:
    """4 c E0 - J''; nonnegative (up to discretization) whenever the pair
    is admissible, kappa(p) >= 2c + 1."""
    del kappa  # admissibility is the caller's precondition, not an input
    return 4.0 * c * e0 - record.Jsecond_id


def blowup_time_bound(j0: float, jp0: float, e0: float, c: float) -> float | None:
    """Smallest positive root of J0 + J0' t + 2 c E0 t^2; None if E0 >= 0.

    Since J >= 0 along the flow while the envelope hits zero, the true
    existence time cannot exceed this root.
    """
    if e0 >= 0.0:
        return None
    if j0 <= 0.0:
        raise ValueError("need J(0) > 0 for a meaningful bound")
    a = 2.0 * c * e0
    disc = jp0 * jp0 - 4.0 * a * j0
    return float((jp0 + math.sqrt(disc)) / (-2.0 * a))


def make_record(state: WaveState, m: Manifold, grid: RadialGrid,
                w: WeightFunction, linear: bool = False) -> DiagnosticsRecord:
    """One diagnostics time slice (fd columns filled later from the series)."""
    u = state.u
    n_tail = max(1, grid.n_cells // 10)
    return DiagnosticsRecord(
        t=state.t,
        mass=mass(state, grid),
        energy=energy(state, grid, linear=linear),
        J=virial_J(state, w, grid),
        Jprime_id=virial_Jprime(state, w, grid),
        Jprime_fd=math.nan,
        Jsecond_id=virial_Jsecond(state, w, grid, m, linear=linear),
        Jsecond_fd=math.nan,
        grad_sq=grad_norm_sq(grid, u),
        sup_abs_u=float(np.max(np.abs(u))),
        boundary_flux=_boundary_gradient_flux(grid, u),
        tail_mass=float(np.sum(np.abs(u[-n_tail:]) ** 2 * grid.weights[-n_tail:])),
    )


def overflow_record(state: WaveState, grid: RadialGrid) -> DiagnosticsRecord:
    """Terminal marker row when the field stops being finite."""
    return DiagnosticsRecord(
        t=state.t, mass=math.inf, energy=math.nan, J=math.inf,
        Jprime_id=math.nan, Jprime_fd=math.nan, Jsecond_id=math.nan,
        Jsecond_fd=math.nan, grad_sq=math.inf, sup_abs_u=math.inf,
        boundary_flux=math.nan, tail_mass=math.nan)


def fill_fd_columns(records: list[DiagnosticsRecord]) -> None:
    """Centered time differences of the J series (nonuniform 3-point
    formulas; O(dt^2) on uniformly recorded stretches).  Endpoints and
    non-finite neighbors stay NaN."""
    for i in range(1, len(records) - 1):
        t0, t1, t2 = records[i - 1].t, records[i].t, records[i + 1].t
        f0, f1, f2 = records[i - 1].J, records[i].J, records[i + 1].J
        if not all(map(math.isfinite, (f0, f1, f2))):
            continue
        h1, h2 = t1 - t0, t2 - t1
        if h1 <= 0.0 or h2 <= 0.0:
            continue
        denom = h1 * h2 * (h1 + h2)
        records[i].Jprime_fd = (h1 * h1 * f2 - h2 * h2 * f0
                                + (h2 * h2 - h1 * h1) * f1) / denom
        records[i].Jsecond_fd = 2.0 * (h1 * f2 + h2 * f0 - (h1 + h2) * f1) / denom


@dataclass(frozen=True)
class DetectionReport:
    """Offline blow-up scan of a recorded series."""
    outcome: Outcome
    growth_exponent: float  # power-law fit of grad_sq over its last decade


def detect_blowup(records: list[DiagnosticsRecord], threshold: float) -> DetectionReport:
    """Flag the first record with grad norm past threshold or overflow.

    The growth exponent fits grad_sq ~ (t_end - t)^(-alpha) over the last
    decade of recorded growth; exploratory output only (the analysis proves
    no rate).
    """
    threshold_sq = threshold * threshold
    hit = None
    for rec in records:
        if not math.isfinite(rec.sup_abs_u) or not math.isfinite(rec.grad_sq):
            hit = Outcome("overflow", rec.t)
            break
        if rec.grad_sq > threshold_sq:
            hit = Outcome("blowup_detected", rec.t)
            break
    outcome = hit if hit is not None else Outcome("completed", records[-1].t)
    return DetectionReport(outcome=outcome,
                           growth_exponent=_growth_exponent(records, outcome))


def _growth_exponent(records, outcome) -> float:
    finite = [(r.t, r.grad_sq) for r in records
              if math.isfinite(r.grad_sq) and r.grad_sq > 0.0
              and r.t <= outcome.t]
    if len(finite) < 4 or outcome.kind == "completed":
        return math.nan
    t = np.array([x[0] for x in finite])
    g = np.array([x[1] for x in finite])
    top = g[-1]
    sel = g >= 0.1 * top
    if np.count_nonzero(sel) < 3:
        return math.nan
    dt_last = max(t[-1] - t[-2], 1e-30)
    x = np.log(outcome.t + dt_last - t[sel])
    y = np.log(g[sel])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)
