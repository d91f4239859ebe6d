"""Warped-product manifolds, radial grids, and the radial Laplace-Beltrami operator.

The metric is g = dr^2 + h(r)^2 dtheta^2 in geodesic polar coordinates, with
warp h = sin r (sphere), sinh r (hyperbolic) or r (Euclidean).  Fields are
complex radial samples on a cell-centered grid that excludes the coordinate
singularity at r = 0; the Laplacian is discretized in conservative flux form,
which makes it exactly self-adjoint in the weighted inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicHermiteSpline

SPHERE_CAP = "sphere_cap"
SPHERE_FULL = "sphere_full"
HYPERBOLIC = "hyperbolic"
EUCLIDEAN = "euclidean"
CUSTOM = "custom_warp"

KINDS = (SPHERE_CAP, SPHERE_FULL, HYPERBOLIC, EUCLIDEAN, CUSTOM)

# boundary tags at r = r_max; r = 0 is always a zero-flux (regularity) face
BC_DIRICHLET = "dirichlet"
BC_NEUMANN = "neumann"


def sphere_area(n: int) -> float:
    """Area of the unit (n-1)-sphere, 2 pi^(n/2) / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


class WarpTableError(ValueError):
    """Raised when a custom warp table violates the warp invariants."""


@dataclass(frozen=True)
class Manifold:
    """An n-dimensional warped product with metric dr^2 + h(r)^2 dtheta^2.

    Immutable after construction; safe to share across threads.  ``warp``
    maps r to (h(r), h'(r)); built-ins evaluate exact trig/hyperbolic
    functions, custom warps interpolate a user table with explicit h'.
    """

    kind: str
    dim: int
    r_max: float
    warp: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] = field(repr=False)

    def warp_eval(self, r):
        """Return (h(r), h'(r)); raises on r outside [0, r_max]."""
        r_arr = np.asarray(r, dtype=float)
        if np.any(r_arr < 0.0) or np.any(r_arr > self.r_max * (1.0 + 1e-12)):
            raise ValueError(f"radius outside [0, {self.r_max}]")
        h, dh = self.warp(r_arr)
        if np.ndim(r) == 0:
            return float(h), float(dh)
        return h, dh


def _check_warp_invariants(m: Manifold, closed_at_rmax: bool = False) -> None:
    # h(0) = 0, h'(0) > 0, h > 0 on the open interior
    h0, dh0 = m.warp_eval(0.0)
    if abs(h0) > 1e-12:
        raise WarpTableError(f"warp must vanish at r=0 (got h(0)={h0:g})")
    if dh0 <= 0.0:
        raise WarpTableError(f"warp must open (h'(0)>0, got {dh0:g})")
    rs = np.linspace(m.r_max / 256.0, m.r_max, 257)
    if closed_at_rmax:
        rs = rs[:-1]
    h, _ = m.warp(rs)
    if np.any(h <= 0.0):
        bad = rs[np.argmax(h <= 0.0)]
        raise WarpTableError(f"warp must be positive on (0, r_max) (h({bad:g}) <= 0)")


def make_manifold(kind: str, dim: int = 2, r_max: float | None = None,
                  warp_table: np.ndarray | None = None) -> Manifold:
    """Construct a built-in or custom manifold.

    r_max defaults to pi/2 (sphere_cap), pi (sphere_full), or must be given
    for hyperbolic/euclidean/custom truncations.  ``warp_table`` is an
    (N, 3) array of strictly increasing (r, h, h') rows starting at r = 0.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown manifold kind {kind!r}")
    if dim < 2:
        raise ValueError("dimension must be >= 2")

    if kind == SPHERE_CAP:
        if r_max is not None and not math.isclose(r_max, math.pi / 2):
            raise ValueError("sphere_cap has r_max = pi/2 exactly")
        r_max = math.pi / 2
        warp = lambda r: (np.sin(r), np.cos(r))
    elif kind == SPHERE_FULL:
        if r_max is not None and not math.isclose(r_max, math.pi):
            raise ValueError("sphere_full has r_max = pi exactly")
        r_max = math.pi
        warp = lambda r: (np.sin(r), np.cos(r))
    elif kind == HYPERBOLIC:
        if r_max is None or r_max <= 0:
            raise ValueError("hyperbolic manifold needs a finite truncation r_max > 0")
        warp = lambda r: (np.sinh(r), np.cosh(r))
    elif kind == EUCLIDEAN:
        if r_max is None or r_max <= 0:
            raise ValueError("euclidean manifold needs a finite truncation r_max > 0")
        warp = lambda r: (np.asarray(r, dtype=float), np.ones_like(np.asarray(r, dtype=float)))
    else:
        if warp_table is None:
            raise WarpTableError("custom_warp needs a (r, h, h') table")
        warp, table_rmax = _table_warp(np.asarray(warp_table, dtype=float))
        if r_max is None:
            r_max = table_rmax
        elif r_max > table_rmax * (1.0 + 1e-12):
            raise WarpTableError(f"r_max {r_max:g} beyond table end {table_rmax:g}")

    m = Manifold(kind=kind, dim=dim, r_max=float(r_max), warp=warp)
    _check_warp_invariants(m, closed_at_rmax=(kind == SPHERE_FULL))
    return m


def _table_warp(table: np.ndarray):
    """Hermite interpolant of (r, h) with user-supplied h' (no numerical
    differentiation: tau and Hessian bounds are sensitive to h' noise)."""
    if table.ndim != 2 or table.shape[1] != 3:
        raise WarpTableError("warp table must have three columns: r, h, h'")
    r, h, dh = table.T
    if r[0] != 0.0:
        raise WarpTableError("warp table must start at r = 0")
    if np.any(np.diff(r) <= 0.0):
        raise WarpTableError("warp table radii must be strictly increasing")
    spline = CubicHermiteSpline(r, h, dh)
    dspline = spline.derivative()

    def warp(rr):
        rr = np.asarray(rr, dtype=float)
        return spline(rr), dspline(rr)

    return warp, float(r[-1])


def load_warp_table(path) -> np.ndarray:
    """Read a whitespace/comma separated (r, h, h') text table."""
    table = np.loadtxt(path, delimiter=None, comments="#", ndmin=2)
    if table.shape[1] != 3:
        raise WarpTableError(f"{path}: expected 3 columns (r, h, h'), got {table.shape[1]}")
    return table


@dataclass(frozen=True)
class RadialGrid:
    """Cell-centered radial grid with measure h^(n-1)(r) dr times the
    angular sphere area.

    Cells sit at r_j = (j - 1/2) dr, j = 1..n_cells, so the r = 0
    singularity is never sampled; faces sit at j dr, j = 0..n_cells.
    ``face_area`` includes the angular factor, vanishing at poles, and is
    forced to zero at tagged zero-flux faces.
    """

    manifold: Manifold
    n_cells: int
    dr: float
    r: np.ndarray            # cell centers, shape (n_cells,)
    r_face: np.ndarray       # faces incl. both ends, shape (n_cells+1,)
    weights: np.ndarray      # cell measures w_j > 0
    face_area: np.ndarray    # omega_{n-1} h^{n-1} at faces
    bc_rmax: str

    @property
    def bc_is_dirichlet(self) -> bool:
        return self.bc_rmax == BC_DIRICHLET

    def zeros(self) -> np.ndarray:
        return np.zeros(self.n_cells, dtype=complex)


def make_grid(m: Manifold, n_cells: int, bc_rmax: str | None = None) -> RadialGrid:
    """Build the cell-centered grid for ``m``.

    Default boundary tag at r_max is Dirichlet, except sphere_full which is
    closed (zero-flux at the antipode; oddness is preserved by the
    evolution, not enforced).
    """
    if n_cells < 2:
        raise ValueError("need at least 2 cells")
    if bc_rmax is None:
        bc_rmax = BC_NEUMANN if m.kind == SPHERE_FULL else BC_DIRICHLET
    if bc_rmax not in (BC_DIRICHLET, BC_NEUMANN):
        raise ValueError(f"unknown boundary tag {bc_rmax!r}")

    dr = m.r_max / n_cells
    r = (np.arange(n_cells) + 0.5) * dr
    r_face = np.arange(n_cells + 1) * dr
    omega = sphere_area(m.dim)

    h_cell, _ = m.warp(r)
    weights = omega * h_cell ** (m.dim - 1) * dr
    if np.any(weights <= 0.0):
        raise ValueError("non-positive cell measure; warp invalid on grid")

    h_face, _ = m.warp(r_face)
    face_area = omega * h_face ** (m.dim - 1)
    face_area[0] = 0.0  # regularity: exact zero flux through the pole
    if bc_rmax == BC_NEUMANN:
        face_area[-1] = 0.0

    return RadialGrid(manifold=m, n_cells=n_cells, dr=dr, r=r, r_face=r_face,
                      weights=weights, face_area=face_area, bc_rmax=bc_rmax)


def laplacian_coefficients(grid: RadialGrid):
    """Tridiagonal (sub, diag, sup) of the flux-form radial Laplacian.

    Flux through interior face j is face_area[j] (f_{j+1} - f_j) / dr; the
    Dirichlet ghost reflects antisymmetrically, so the boundary value is 0
    exactly at the face (and odd data on sphere_full matches a hemisphere
    Dirichlet run cell for cell).
    """
    w = grid.weights
    dr = grid.dr
    g = grid.face_area / dr  # face conductances, g[0] = 0
    sub = np.zeros(grid.n_cells)
    sup = np.zeros(grid.n_cells)
    diag = np.zeros(grid.n_cells)
    sub[1:] = g[1:-1] / w[1:]
    sup[:-1] = g[1:-1] / w[:-1]
    diag = -(g[:-1] + g[1:]) / w
    if grid.bc_is_dirichlet:
        # antisymmetric ghost: flux = g_N (-2 f_N)
        diag[-1] -= g[-1] / w[-1]
    return sub, diag, sup


def laplacian_apply(grid: RadialGrid, f: np.ndarray) -> np.ndarray:
    """Apply the discrete Laplace-Beltrami operator to a radial field."""
    f = np.asarray(f)
    if f.shape != (grid.n_cells,):
        raise ValueError(f"field shape {f.shape} != ({grid.n_cells},)")
    sub, diag, sup = laplacian_coefficients(grid)
    out = diag * f
    out[:-1] += sup[:-1] * f[1:]
    out[1:] += sub[1:] * f[:-1]
    return out


def face_gradient(grid: RadialGrid, f: np.ndarray) -> np.ndarray:
    """Radial derivative at every face (the gradients the fluxes use).

    Zero at zero-flux faces; the Dirichlet face uses the one-sided value
    (0 - f_N)/(dr/2) consistent with the antisymmetric ghost.
    """
    grad = np.zeros(grid.n_cells + 1, dtype=np.result_type(f, float))
    grad[1:-1] = (f[1:] - f[:-1]) / grid.dr
    if grid.bc_is_dirichlet:
        grad[-1] = -2.0 * f[-1] / grid.dr
    return grad


def inner_product(grid: RadialGrid, f: np.ndarray, g_field: np.ndarray) -> complex:
    """Discrete integral of f conj(g) over the manifold."""
    return complex(np.sum(f * np.conj(g_field) * grid.weights))


def norm_sq(grid: RadialGrid, f: np.ndarray) -> float:
    return float(np.sum(np.abs(f) ** 2 * grid.weights))


def grad_norm_sq(grid: RadialGrid, f: np.ndarray) -> float:
    """Discrete integral of |f'(r)|^2 dV via face-centered differences.

    Built from the same face fluxes as the Laplacian, so the discrete
    integration by parts <-Lap f, f> = grad_norm_sq(f) holds exactly.
    """
    grad = face_gradient(grid, f)
    area = grid.face_area
    dr = grid.dr
    total = np.sum(area[1:-1] * np.abs(grad[1:-1]) ** 2) * dr
    if grid.bc_is_dirichlet:
        total += area[-1] * np.abs(grad[-1]) ** 2 * (dr / 2.0)
    return float(total)
