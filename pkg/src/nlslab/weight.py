"""Virial weight functions solving Lap(rho) = 1 and their blow-up thresholds.

A weight rho >= 0 with unit Laplacian and Hessian bound D^2 rho <= c g is the
manifold replacement for |x|^2/(2n); together with the kappa condition
s F(s) >= kappa G(s), kappa >= 2c+1, it drives the concavity argument.  This
module builds the closed-form weights (-2 log cos(r/2) on the half sphere,
2 log cosh(r/2) on hyperbolic 2-space, r^2/(2n) Euclidean), the general
nested-quadrature weight for any admissible warp, and the tau_1/tau_2
pinching bounds that translate into kappa and power-law thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import mpmath
import numpy as np

from .geometry import (
    CUSTOM, EUCLIDEAN, HYPERBOLIC, SPHERE_CAP, SPHERE_FULL,
    Manifold, RadialGrid, laplacian_apply,
)

CLOSED_FORM = "closed_form"
QUADRATURE = "quadrature"

# analytic ODE residual expected from each construction
RESIDUAL_TOL = {CLOSED_FORM: 1e-12, QUADRATURE: 1e-7}


class UnsupportedClosedForm(ValueError):
    """No closed-form weight for this (kind, dim); use build_quadrature."""


@dataclass(frozen=True)
class WeightFunction:
    """Sampled weight rho with derivatives on a grid's cells and faces.

    ``hessian_bound`` is the smallest certified c with D^2 rho <= c g on the
    domain (analytic supremum for built-ins, grid extremum for custom
    warps).  ``mirror_face`` marks the equator face index of a sphere_full
    weight folded from the hemisphere; across that face rho' flips sign and
    the virial identity picks up an interface flux term.
    """

    grid: RadialGrid
    rho: np.ndarray
    drho: np.ndarray
    d2rho: np.ndarray
    rho_face: np.ndarray
    drho_face: np.ndarray
    d2rho_face: np.ndarray
    provenance: str
    hessian_bound: float
    mirror_face: int | None = None
    _eval: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    def eval(self, r):
        """(rho, rho', rho'') at arbitrary radii in [0, r_max]."""
        r_arr = np.asarray(r, dtype=float)
        vals = self._eval(r_arr)
        if np.ndim(r) == 0:
            return tuple(float(v) for v in vals)
        return vals

    @property
    def boundary_slope(self) -> float:
        """rho'(r_max), the g(grad rho, v) factor in the boundary flux term."""
        return float(self.drho_face[-1])


class ResidualReport(NamedTuple):
    """Max-abs unit-Laplacian residuals of a built weight."""
    discrete: float   # |Lap_d rho - 1| over interior cells (flux form)
    analytic: float   # |rho'' + (n-1)(h'/h) rho' - 1| over cells


def _simpson_cumulative(fn, r_max: float, n_intervals: int):
    """Cumulative integral of ``fn`` on nodes k*delta via per-interval
    Simpson with midpoint evaluations; global accuracy O(delta^4)."""
    t = np.linspace(0.0, r_max, n_intervals + 1)
    delta = r_max / n_intervals
    mid = t[:-1] + delta / 2.0
    ft = fn(t)
    fm = fn(mid)
    inc = (delta / 6.0) * (ft[:-1] + 4.0 * fm + ft[1:])
    return t, np.concatenate(([0.0], np.cumsum(inc)))


def _analytic_forms(m: Manifold):
    """Closed-form (rho, rho', rho'') evaluators, or None."""
    n = m.dim
    if m.kind == SPHERE_CAP and n == 2:
        return lambda r: (-2.0 * np.log(np.cos(r / 2.0)),
                          np.tan(r / 2.0),
                          0.5 / np.cos(r / 2.0) ** 2)
    if m.kind == HYPERBOLIC and n == 2:
        return lambda r: (2.0 * np.log(np.cosh(r / 2.0)),
                          np.tanh(r / 2.0),
                          0.5 / np.cosh(r / 2.0) ** 2)
    if m.kind == EUCLIDEAN:
        return lambda r: (np.asarray(r) ** 2 / (2.0 * n),
                          np.asarray(r) / n,
                          np.full_like(np.asarray(r, dtype=float), 1.0 / n))
    return None


def certified_hessian_bound(m: Manifold) -> float | None:
    """Analytic supremum of the Hessian eigenvalues for built-in warps.

    sphere_cap: 1, attained at the equator r = pi/2.  hyperbolic: 1/(n-1),
    approached as r -> infinity (the tangential eigenvalue is the phi ratio,
    strictly below 1/(n-1)).  euclidean: 1/n exactly.
    """
    if m.kind in (SPHERE_CAP, SPHERE_FULL):
        return 1.0
    if m.kind == HYPERBOLIC:
        return 1.0 / (m.dim - 1)
    if m.kind == EUCLIDEAN:
        return 1.0 / m.dim
    return None


def build_closed_form(m: Manifold, grid: RadialGrid) -> WeightFunction:
    """Exact analytic weight for sphere_cap/hyperbolic (n=2) and euclidean."""
    forms = _analytic_forms(m)
    if forms is None:
        raise UnsupportedClosedForm(f"no closed form for ({m.kind}, n={m.dim})")
    rho, drho, d2rho = forms(grid.r)
    rho_f, drho_f, d2rho_f = forms(grid.r_face)
    return WeightFunction(
        grid=grid, rho=rho, drho=drho, d2rho=d2rho,
        rho_face=rho_f, drho_face=drho_f, d2rho_face=d2rho_f,
        provenance=CLOSED_FORM, hessian_bound=certified_hessian_bound(m),
        _eval=forms)


def build_quadrature(m: Manifold, grid: RadialGrid, refine: int = 4) -> WeightFunction:
    """Weight from the nested integral rho(r) = int_0^r I(s)/h^{n-1}(s) ds
    with I(s) = int_0^s h^{n-1}.

    The inner integral is accumulated once by composite Simpson on a fine
    mesh (step dr/refine) whose nodes contain every cell center and face;
    rho'' comes from the ODE rho'' = 1 - (n-1)(h'/h) rho', not from
    differentiating quadrature output.
    """
    if m.kind == SPHERE_FULL:
        raise UnsupportedClosedForm(
            "no global unit-Laplacian weight on the closed sphere; "
            "use build_mirrored for odd-sector runs")
    n = m.dim
    n_fine = 4 * refine * grid.n_cells  # divisible by 4: faces/centers are nodes

    def h_pow(s):
        h, _ = m.warp(np.asarray(s, dtype=float))
        return h ** (n - 1)

    t, inner = _simpson_cumulative(h_pow, m.r_max, n_fine)
    denom = h_pow(t)
    if np.any(denom[1:] <= 0.0):
        raise ValueError("warp vanishes inside the domain; weight undefined")
    drho_fine = np.empty_like(t)
    drho_fine[0] = 0.0  # limit s/n of I(s)/h^{n-1}(s) at the pole
    drho_fine[1:] = inner[1:] / denom[1:]

    # outer integral on the even nodes, the odd nodes are its midpoints
    delta = t[1] - t[0]
    inc = (2.0 * delta / 6.0) * (drho_fine[0:-2:2] + 4.0 * drho_fine[1:-1:2]
                                 + drho_fine[2::2])
    rho_even = np.concatenate(([0.0], np.cumsum(inc)))
    t_even = t[::2]

    def ode_d2rho(r, drho_vals):
        r = np.asarray(r, dtype=float)
        h, dh = m.warp(r)
        out = np.empty_like(r)
        pos = r > 0.0
        out[pos] = 1.0 - (n - 1) * (dh[pos] / h[pos]) * drho_vals[pos]
        out[~pos] = 1.0 / n  # isotropic limit at the pole
        return out

    def at(radii):
        idx = np.rint(radii / (2.0 * delta)).astype(int)
        rho_v = rho_even[idx]
        fine_idx = 2 * idx
        drho_v = drho_fine[fine_idx]
        return rho_v, drho_v, ode_d2rho(radii, drho_v)

    rho, drho, d2rho = at(grid.r)
    rho_f, drho_f, d2rho_f = at(grid.r_face)

    def interp_eval(r):
        r = np.asarray(r, dtype=float)
        rho_v = np.interp(r, t_even, rho_even)
        drho_v = np.interp(r, t, drho_fine)
        return rho_v, drho_v, ode_d2rho(r, drho_v)

    c = certified_hessian_bound(m)
    if c is None:
        lam_r = np.concatenate((d2rho, d2rho_f))
        h, dh = m.warp(np.concatenate((grid.r, grid.r_face[1:])))
        lam_t = np.concatenate((drho, drho_f[1:])) * dh / h
        c = float(max(np.max(lam_r), np.max(lam_t), 1.0 / n))

    return WeightFunction(
        grid=grid, rho=rho, drho=drho, d2rho=d2rho,
        rho_face=rho_f, drho_face=drho_f, d2rho_face=d2rho_f,
        provenance=QUADRATURE, hessian_bound=c, _eval=interp_eval)


def build_mirrored(m: Manifold, grid: RadialGrid) -> WeightFunction:
    """Weight for sphere_full runs: the hemisphere weight reflected through
    the equator, rho(r) = rho_+(min(r, pi - r)).

    This is the J of the odd-extension construction; rho' flips sign on the
    far hemisphere (the rho' >= 0 invariant holds per hemisphere only) and
    the kink contributes an equator flux term to the virial identity.
    """
    if m.kind != SPHERE_FULL:
        raise ValueError("mirrored weights apply to sphere_full only")
    if grid.n_cells % 2 != 0:
        raise ValueError("sphere_full grid needs an even cell count so the "
                         "equator is a face")
    from .geometry import make_grid
    half = Manifold(kind=SPHERE_CAP, dim=m.dim, r_max=math.pi / 2, warp=m.warp)
    forms = _analytic_forms(half)
    if forms is not None:
        base = forms
    else:
        w_half = build_quadrature(half, make_grid(half, grid.n_cells // 2))
        base = w_half.eval

    def folded(r):
        r = np.asarray(r, dtype=float)
        fold = np.minimum(r, math.pi - r)
        sign = np.where(r <= math.pi / 2, 1.0, -1.0)
        rho_v, drho_v, d2rho_v = base(fold)
        return rho_v, sign * drho_v, d2rho_v

    rho, drho, d2rho = folded(grid.r)
    rho_f, drho_f, d2rho_f = folded(grid.r_face)
    eq = grid.n_cells // 2
    drho_f = drho_f.copy()
    drho_f[eq] = 0.0  # the kink face; the identity uses the one-sided slopes
    return WeightFunction(
        grid=grid, rho=rho, drho=drho, d2rho=d2rho,
        rho_face=rho_f, drho_face=drho_f, d2rho_face=d2rho_f,
        provenance=CLOSED_FORM if forms is not None else QUADRATURE,
        hessian_bound=1.0, mirror_face=eq, _eval=folded)


def build_weight(m: Manifold, grid: RadialGrid) -> WeightFunction:
    """Closed form when available, else quadrature (mirrored on sphere_full)."""
    if m.kind == SPHERE_FULL:
        return build_mirrored(m, grid)
    try:
        return build_closed_form(m, grid)
    except UnsupportedClosedForm:
        return build_quadrature(m, grid)


def unit_laplacian_residual(w: WeightFunction, m: Manifold, grid: RadialGrid) -> ResidualReport:
    """Max-abs residuals of Lap rho = 1, discrete flux form and analytic ODE.

    Cells adjacent to a mirror kink are excluded from the discrete residual
    (the kink is the equator interface, handled separately in the identity).
    """
    lap = laplacian_apply(grid, w.rho.astype(complex)).real
    mask = np.ones(grid.n_cells, dtype=bool)
    # interior cells only: the pole cell's flux balance is pointwise
    # inconsistent for n >= 3 (harmless globally, its measure is O(dr^n)),
    # and the Dirichlet ghost reflection does not apply to the weight
    mask[0] = False
    mask[-1] = False
    if w.mirror_face is not None:
        mask[w.mirror_face - 1:w.mirror_face + 1] = False
    discrete = float(np.max(np.abs(lap[mask] - 1.0)))

    h, dh = m.warp(grid.r)
    analytic_res = w.d2rho + (m.dim - 1) * (dh / h) * w.drho - 1.0
    analytic = float(np.max(np.abs(analytic_res)))
    return ResidualReport(discrete=discrete, analytic=analytic)


def hessian_eigenvalues(w: WeightFunction, m: Manifold, r: float) -> tuple[float, float]:
    """Eigenvalues of D^2 rho relative to g at radius r: (rho'', rho' h'/h).

    At r = 0 both coincide at the isotropic limit rho''(0+) = 1/n.
    """
    if r < 0.0 or r > m.r_max * (1.0 + 1e-12):
        raise ValueError(f"radius {r} outside domain")
    _, drho_v, d2rho_v = w.eval(r)
    if r == 0.0:
        return d2rho_v, d2rho_v
    h, dh = m.warp_eval(r)
    return float(d2rho_v), float(drho_v * dh / h)


def hessian_bound(w: WeightFunction, m: Manifold, grid: RadialGrid) -> float:
    """Certified c with D^2 rho <= c g.

    Built-ins return the analytic supremum (1 on the half sphere, attained
    at r = pi/2; 1/(n-1) hyperbolic, approached only as r -> infinity; 1/n
    euclidean); custom warps return grid extrema over cells and faces plus
    the pole limit 1/n, a grid-resolution estimate.
    """
    c = certified_hessian_bound(m)
    if c is not None:
        return c
    h_c, dh_c = m.warp(grid.r)
    h_f, dh_f = m.warp(grid.r_face[1:])
    lam = [w.d2rho, w.d2rho_face, w.drho * dh_c / h_c, w.drho_face[1:] * dh_f / h_f,
           np.array([1.0 / m.dim])]
    return float(max(np.max(v) for v in lam))


# ---------------------------------------------------------------------------
# the hyperbolic ratio phi(r) = cosh r * int_0^r sinh^{n-1} / sinh^n r
# ---------------------------------------------------------------------------

def phi_ratio(n: int, r: float) -> float:
    """phi(r) for hyperbolic n-space; strictly between 1/n and 1/(n-1).

    Closed form cosh r / (1 + cosh r) for n = 2, composite Simpson
    otherwise.
    """
    if r <= 0.0:
        raise ValueError("phi ratio needs r > 0")
    if n < 2:
        raise ValueError("dimension must be >= 2")
    if n == 2:
        return float(np.cosh(r) / (1.0 + np.cosh(r)))
    panels = max(256, int(math.ceil(32.0 * (n - 1) * r)))
    _, integral = _simpson_cumulative(lambda s: np.sinh(s) ** (n - 1), r, panels)
    return float(np.cosh(r) * integral[-1] / np.sinh(r) ** n)


def _phi_mp(n: int, r) -> mpmath.mpf:
    """phi(r) through the exact power-reduction of int_0^r sinh^{n-1}.

    Integration by parts gives
    int sinh^k = (sinh^{k-1} r cosh r - (k-1) int sinh^{k-2}) / k,
    grounded at int sinh^0 = r and int sinh^1 = cosh r - 1; evaluated under
    the caller's mpmath precision.
    """
    rm = mpmath.mpf(float(r))
    s, ch = mpmath.sinh(rm), mpmath.cosh(rm)
    ints = {0: rm, 1: ch - 1}
    for k in range(2, n):
        ints[k] = (s ** (k - 1) * ch - (k - 1) * ints[k - 2]) / k
    return ch * ints[n - 1] / s ** n


@dataclass(frozen=True)
class ClaimReport:
    """Outcome of the strict pinching check 1/n < phi(r) < 1/(n-1)."""
    passed: bool
    min_margin: float
    worst_r: float | None
    margin_at_rmax_upper: float


def claim_check(n: int, r_grid: np.ndarray) -> ClaimReport:
    """Assert the strict bounds 1/n < phi < 1/(n-1) at every sample radius.

    Near r = 20 the margin to 1/(n-1) shrinks to ~1e-16..1e-19, below what
    double quadrature can certify, so the samples are evaluated with the
    exact recursion in 50-digit mpmath; a violation would indicate an
    evaluation bug, not a failure of the bound.
    """
    if n < 2:
        raise ValueError("dimension must be >= 2")
    radii = np.asarray(r_grid, dtype=float)
    if np.any(radii <= 0.0):
        raise ValueError("claim radii must be positive")
    r_last = float(np.max(radii))
    with mpmath.workdps(50):
        lower = mpmath.mpf(1) / n
        upper = mpmath.mpf(1) / (n - 1)
        worst = mpmath.mpf("inf")
        worst_r = None
        upper_margin_last = None
        for r in radii:
            phi = _phi_mp(n, r)
            margin = min(phi - lower, upper - phi)
            if margin < worst:
                worst, worst_r = margin, float(r)
            if r == r_last:
                upper_margin_last = upper - phi
        passed = worst > 0
        return ClaimReport(passed=bool(passed), min_margin=float(worst),
                           worst_r=None if passed else worst_r,
                           margin_at_rmax_upper=float(upper_margin_last))


# ---------------------------------------------------------------------------
# tau pinching bounds and the kappa / power-law translation
# ---------------------------------------------------------------------------

# analytic endpoint values of q(r) = h'(r) int_0^r h / h^2(r) that finite
# grids cannot attain exactly: the pole limit 1/2 everywhere, q(pi/2) = 0 on
# the half sphere, and the r -> infinity limit 1 on hyperbolic space
_TAU_ANALYTIC = {
    SPHERE_CAP: (0.5, 0.0),
    SPHERE_FULL: (0.5,),
    HYPERBOLIC: (0.5, 1.0),
    EUCLIDEAN: (0.5, 0.5),
    CUSTOM: (0.5,),
}


@dataclass(frozen=True)
class ThresholdReport:
    """Pinching constants and the blow-up thresholds they induce.

    kappa_min = 2 max(1 - tau1, tau2) + 1 and, for the power nonlinearity
    F(s) = s^{(p-1)/2}, p_min = 2 kappa_min - 1.  ``tau_in_range`` is False
    when q leaves [0, 1] somewhere, i.e. the pinching hypothesis fails.
    """
    tau1: float
    tau2: float
    kappa_min: float
    p_min: float
    tau_in_range: bool


def tau_bounds(m: Manifold, grid: RadialGrid) -> ThresholdReport:
    """Grid inf/sup of q(r) = h'(r) int_0^r h(s) ds / h^2(r), with analytic
    endpoint limits, translated to kappa_min and p_min.

    All built-in warps have monotone q, so grid extrema plus endpoints are
    exact; custom warps inherit a grid-resolution caveat.
    """
    n_fine = 8 * grid.n_cells
    t, hint = _simpson_cumulative(lambda s: m.warp(np.asarray(s, dtype=float))[0],
                                  m.r_max, n_fine)
    radii = np.concatenate((grid.r, grid.r_face[1:]))
    # at 8 intervals per cell both faces (8j) and centers (8j - 4) are nodes
    idx = np.clip(np.rint(radii / (t[1] - t[0])).astype(int), 0, n_fine)
    h, dh = m.warp(t[idx])
    good = h > 0.0
    q = dh[good] * hint[idx][good] / h[good] ** 2

    candidates = np.concatenate((q, np.asarray(_TAU_ANALYTIC.get(m.kind, (0.5,)))))
    tau1 = float(np.min(candidates))
    tau2 = float(np.max(candidates))
    in_range = bool(tau1 >= -1e-12 and tau2 <= 1.0 + 1e-12)
    kappa_min = 2.0 * max(1.0 - tau1, tau2) + 1.0
    return ThresholdReport(tau1=tau1, tau2=tau2, kappa_min=kappa_min,
                           p_min=2.0 * kappa_min - 1.0, tau_in_range=in_range)


def kappa_min_for(m: Manifold, grid: RadialGrid) -> float:
    """kappa threshold a run must meet on this manifold.

    2-d manifolds use the tau pinching bounds (the sharp route); higher
    dimensions use kappa >= 2c + 1 with the certified Hessian bound, which
    agrees with the tau value on every 2-d built-in.  sphere_full inherits
    the hemisphere threshold: the odd sector is a Dirichlet hemisphere
    problem.
    """
    if m.kind == SPHERE_FULL:
        return 3.0
    if m.dim == 2:
        rep = tau_bounds(m, grid)
        if rep.tau_in_range:
            return rep.kappa_min
    c = certified_hessian_bound(m)
    if c is None:
        c = hessian_bound(build_weight(m, grid), m, grid)
    return 2.0 * c + 1.0


def kappa_for_power(p):
    """kappa with s F(s) = kappa G(s) exactly for F(s) = s^{(p-1)/2}.

    Works with exact number types (fractions.Fraction) as well as floats,
    so rational thresholds stay exact.
    """
    if p <= 1:
        raise ValueError("power nonlinearity needs p > 1")
    return (p + 1) / 2


def nonlinearity_admissible(p, kappa_min) -> bool:
    """Whether the power p meets the concavity threshold kappa_min."""
    return bool(kappa_for_power(p) >= kappa_min)
