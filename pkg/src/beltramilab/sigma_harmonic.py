"""Mappings built from pairs of solutions, their Jacobians, and coordinate changes.

A solution u of div(sigma grad u) = 0 has a conjugate stream function with
gradient equal to the rotated flux.  Two gradient conventions for that
conjugate coexist on purpose:

* ``exact``   -- the per-element rotated flux rot(sigma grad u).  Pointwise
  algebraic identities (the mixed-Wirtinger/Jacobian identity, the
  dilatation-pair residual, the triangular structure of the transported
  coefficient) hold to machine precision in this convention.
* ``recovered`` -- the single-valued P1 field produced by the global
  least-squares solve.  Needed whenever a genuine map is required (image
  triangulations, areas, injectivity).

Each operation documents which convention it uses.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coeff_algebra import BeltramiPair
from .elliptic_solver import SolveOptions, rotated_flux, solve_dirichlet, stream_function
from .grid import ElementMatrixField, ScalarFieldP1, TriMesh, element_gradient

log = logging.getLogger(__name__)


@dataclass
class ComplexMap:
    """Complex-valued P1 map F = re + i*im on a shared mesh."""

    re: ScalarFieldP1
    im: ScalarFieldP1

    def __post_init__(self):
        if self.re.mesh is not self.im.mesh:
            raise ValueError("both components must live on the same mesh")

    @property
    def mesh(self) -> TriMesh:
        return self.re.mesh

    def vertex_values(self) -> np.ndarray:
        return self.re.values + 1j * self.im.values


@dataclass
class WirtingerField:
    """Per-element derivatives f_z = (f_x - i f_y)/2 and f_zbar = (f_x + i f_y)/2."""

    mesh: TriMesh
    f_z: np.ndarray
    f_zbar: np.ndarray


@dataclass
class SigmaHarmonicMap:
    """Pair of scalar solutions viewed as a planar map, with its Jacobian field."""

    u1: ScalarFieldP1
    u2: ScalarFieldP1
    sigma: ElementMatrixField
    det_DU: np.ndarray

    @property
    def mesh(self) -> TriMesh:
        return self.u1.mesh


def make_map(u1: ScalarFieldP1, u2: ScalarFieldP1, sigma: ElementMatrixField) -> SigmaHarmonicMap:
    det = _det_from_gradients(element_gradient(u1), element_gradient(u2))
    return SigmaHarmonicMap(u1=u1, u2=u2, sigma=sigma, det_DU=det)


def _det_from_gradients(g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    return g1[:, 0] * g2[:, 1] - g1[:, 1] * g2[:, 0]


def jacobian_det(U: SigmaHarmonicMap) -> np.ndarray:
    """Per-element determinant of the row-gradient matrix [grad u1; grad u2]."""
    return _det_from_gradients(element_gradient(U.u1), element_gradient(U.u2))


def wirtinger_from_gradients(grad_re: np.ndarray, grad_im: np.ndarray, mesh: TriMesh) -> WirtingerField:
    f_z = 0.5 * ((grad_re[:, 0] + grad_im[:, 1]) + 1j * (grad_im[:, 0] - grad_re[:, 1]))
    f_zbar = 0.5 * ((grad_re[:, 0] - grad_im[:, 1]) + 1j * (grad_im[:, 0] + grad_re[:, 1]))
    return WirtingerField(mesh=mesh, f_z=f_z, f_zbar=f_zbar)


def wirtinger(F: ComplexMap) -> WirtingerField:
    """Per-element Wirtinger derivatives of a P1 complex map (recovered convention)."""
    return wirtinger_from_gradients(
        element_gradient(F.re), element_gradient(F.im), F.mesh
    )


def wirtinger_exact(sigma: ElementMatrixField, u: ScalarFieldP1) -> WirtingerField:
    """Wirtinger derivatives of u + i*utilde with the exact rotated-flux gradient."""
    return wirtinger_from_gradients(element_gradient(u), rotated_flux(sigma, u), sigma.mesh)


def beltrami_residual(
    F: ComplexMap | WirtingerField,
    pair: BeltramiPair | tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """Per-element |f_zbar - mu f_z - nu conj(f_z)|.

    ``pair`` is either one dilatation pair used on every element, or a
    tuple of per-element (mu, nu) arrays.  For F built from a solution and
    its exact rotated flux, the residual vanishes identically when the
    pair is the per-element dilatation transform of the coefficient.
    """
    w = F if isinstance(F, WirtingerField) else wirtinger(F)
    if isinstance(pair, BeltramiPair):
        mu, nu = pair.mu, pair.nu
    else:
        mu, nu = pair
    return np.abs(w.f_zbar - mu * w.f_z - nu * np.conj(w.f_z))


def reduce_nu_to_zero(pair: BeltramiPair, f_z: complex) -> complex:
    """Fold the conjugate-coefficient into a single dilatation at one point.

    mu~ = mu + (conj(f_z)/f_z) nu, valid wherever f_z != 0; the modulus is
    bounded by |mu| + |nu|.
    """
    if f_z == 0:
        raise ZeroDivisionError("reduction undefined where f_z vanishes")
    return pair.mu + (np.conj(f_z) / f_z) * pair.nu


# ---------------------------------------------------------------------------
# Primary pairs and general two-component Dirichlet maps
# ---------------------------------------------------------------------------


def _polygon_signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _polygon_is_convex(pts: np.ndarray, tol: float = 1e-12) -> bool:
    """Convex and positively oriented; collinear consecutive edges allowed."""
    e = np.roll(pts, -1, axis=0) - pts
    cross = e[:, 0] * np.roll(e[:, 1], -1) - e[:, 1] * np.roll(e[:, 0], -1)
    scale = np.max(np.abs(e)) ** 2 + 1e-300
    return bool(np.all(cross >= -tol * scale)) and _polygon_signed_area(pts) > 0


def check_convex_domain(mesh: TriMesh) -> None:
    if not _polygon_is_convex(mesh.vertices[mesh.boundary_loop]):
        raise ValueError("mesh boundary is not a convex polygon")


def primary_pair(
    sigma: ElementMatrixField, opts: SolveOptions | None = None
) -> tuple[ComplexMap, ComplexMap, SigmaHarmonicMap]:
    """Coordinate-data solution pair on a convex domain.

    Solves the two Dirichlet problems with data x1 and x2, reconstructs
    the recovered stream functions, and returns Phi = u1 + i*ut1,
    Psi = u2 + i*ut2 and the map U = (u1, u2) with its Jacobian field.
    """
    mesh = sigma.mesh
    check_convex_domain(mesh)
    opts = opts or SolveOptions()
    u1 = solve_dirichlet(sigma, lambda p: p[:, 0], opts)
    u2 = solve_dirichlet(sigma, lambda p: p[:, 1], opts)
    ut1, res1 = stream_function(sigma, u1, opts)
    ut2, res2 = stream_function(sigma, u2, opts)
    log.info("primary pair stream residuals: %.3e %.3e", res1, res2)
    return (
        ComplexMap(u1, ut1),
        ComplexMap(u2, ut2),
        make_map(u1, u2, sigma),
    )


def boundary_embedding_is_convex(points: np.ndarray) -> bool:
    """Is the mapped boundary loop a sense-preserving embedding onto a convex polygon?"""
    return _polygon_is_convex(points)


def sigma_harmonic_map(
    sigma: ElementMatrixField,
    phi1,
    phi2,
    opts: SolveOptions | None = None,
) -> SigmaHarmonicMap:
    """Two Dirichlet solves with vector boundary data (phi1, phi2).

    When the sampled boundary data is not a sense-preserving convex
    embedding the homeomorphism guarantee is void; a warning is emitted
    and the computation proceeds (useful as a negative control).  Use
    :func:`injectivity_check` on the result.
    """
    mesh = sigma.mesh
    opts = opts or SolveOptions()
    loop_pts = mesh.vertices[mesh.boundary_loop]
    v1 = np.asarray(phi1(loop_pts) if callable(phi1) else phi1, dtype=float)
    v2 = np.asarray(phi2(loop_pts) if callable(phi2) else phi2, dtype=float)
    if not boundary_embedding_is_convex(np.column_stack([v1, v2])):
        log.warning(
            "boundary data is not a sense-preserving convex embedding; "
            "injectivity is not guaranteed"
        )
    u1 = solve_dirichlet(sigma, v1, opts)
    u2 = solve_dirichlet(sigma, v2, opts)
    return make_map(u1, u2, sigma)


# ---------------------------------------------------------------------------
# Identities and checks
# ---------------------------------------------------------------------------


def equival_residual(
    Phi: ComplexMap, Psi: ComplexMap, sigma: ElementMatrixField, U: SigmaHarmonicMap
) -> np.ndarray:
    """Per-element residual of the mixed-derivative Jacobian identity.

    With stream gradients taken as the exact rotated fluxes (not the
    recovered fields),

        Im(Phi_z conj(Psi_z)) = det(I + sigma) det DU / 4
                              = (1 + tr sigma + det sigma) det DU / 4,

    exactly, element by element; the factor 1/4 carries the two Wirtinger
    1/2 factors.  The returned residual is the absolute gap.
    """
    w1 = wirtinger_exact(sigma, Phi.re)
    w2 = wirtinger_exact(sigma, Psi.re)
    lhs = np.imag(w1.f_z * np.conj(w2.f_z))
    mats = sigma.matrices
    det_sigma = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    gauge = 1.0 + mats[:, 0, 0] + mats[:, 1, 1] + det_sigma
    rhs = 0.25 * gauge * U.det_DU
    return np.abs(lhs - rhs)


def unimodality_check(g: np.ndarray) -> tuple[bool, bool, tuple[int, int] | None]:
    """Detect one-max-arc/one-min-arc structure of a cyclic boundary sample.

    Returns (is_unimodal, is_strict, split_indices): unimodal means the
    cyclic difference signs form exactly one positive and one negative
    block (plateaus allowed); strict additionally forbids plateaus.  The
    split indices point at the first sample of the falling arc (peak) and
    of the rising arc (valley).  Constant data is degenerate, not unimodal.
    """
    g = np.asarray(g, dtype=float)
    n = len(g)
    if n < 3:
        raise ValueError("need at least 3 boundary samples")
    diffs = np.roll(g, -1) - g
    signs = np.sign(diffs)
    nz = np.nonzero(signs)[0]
    if len(nz) == 0:
        return False, False, None
    seq = signs[nz]
    changes = int(np.sum(seq != np.roll(seq, 1)))
    is_unimodal = changes == 2
    if not is_unimodal:
        return False, False, None
    is_strict = bool(np.all(signs != 0))
    peak = valley = None
    for k in range(len(nz)):
        nxt = (k + 1) % len(nz)
        if seq[k] > 0 and seq[nxt] < 0:
            peak = int((nz[k] + 1) % n)
        if seq[k] < 0 and seq[nxt] > 0:
            valley = int((nz[k] + 1) % n)
    return True, is_strict, (peak, valley)


def _segments_cross(p0, p1, q0, q1, tol_scale) -> np.ndarray:
    """Vectorized segment intersection (proper crossings and collinear overlap)."""

    def cross(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (
            b[..., 1] - a[..., 1]
        ) * (c[..., 0] - a[..., 0])

    d1 = cross(q0, q1, p0)
    d2 = cross(q0, q1, p1)
    d3 = cross(p0, p1, q0)
    d4 = cross(p0, p1, q1)
    eps = tol_scale
    z1, z2, z3, z4 = (np.abs(d) <= eps for d in (d1, d2, d3, d4))
    proper = (
        (((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps)))
        & (((d3 > eps) & (d4 < -eps)) | ((d3 < -eps) & (d4 > eps)))
    )

    def on_segment(a, b, c):
        lo = np.minimum(a, b)
        hi = np.maximum(a, b)
        return np.all((c >= lo - 1e-300) & (c <= hi + 1e-300), axis=-1)

    touch = (
        (z1 & on_segment(q0, q1, p0))
        | (z2 & on_segment(q0, q1, p1))
        | (z3 & on_segment(p0, p1, q0))
        | (z4 & on_segment(p0, p1, q1))
    )
    return proper | touch


def polygon_is_simple(pts: np.ndarray) -> bool:
    """No two non-adjacent edges of the closed polygon intersect or touch."""
    n = len(pts)
    a0 = pts
    a1 = np.roll(pts, -1, axis=0)
    scale = float(np.max(np.abs(pts)) + 1.0)
    tol = 1e-13 * scale * scale
    idx_i, idx_j = np.triu_indices(n, k=1)
    adjacent = (idx_j == idx_i + 1) | ((idx_i == 0) & (idx_j == n - 1))
    keep = ~adjacent
    idx_i, idx_j = idx_i[keep], idx_j[keep]
    hits = _segments_cross(
        a0[idx_i], a1[idx_i], a0[idx_j], a1[idx_j], tol
    )
    return not bool(hits.any())


def injectivity_check(U: SigmaHarmonicMap) -> tuple[bool, bool]:
    """Local and global injectivity flags for a P1 map.

    Local: det DU > 0 on every triangle (strict, no tolerance).  Global:
    additionally the image of the boundary loop is a simple polygon and
    its enclosed area matches the summed signed element image areas to
    1e-8 relative; for orientation-positive P1 maps this degree argument
    replaces the quadratic-cost pairwise triangle-overlap test.
    """
    locally = bool(np.all(U.det_DU > 0.0))
    mesh = U.mesh
    loop = mesh.boundary_loop
    img = np.column_stack([U.u1.values[loop], U.u2.values[loop]])
    simple = polygon_is_simple(img)
    signed_sum = float(np.dot(U.det_DU, mesh.areas))
    shoelace = _polygon_signed_area(img)
    area_ok = abs(signed_sum - shoelace) <= 1e-8 * max(abs(shoelace), 1e-300)
    return locally, bool(locally and simple and area_ok)


# ---------------------------------------------------------------------------
# Coordinate change by f and the transported coefficient
# ---------------------------------------------------------------------------


@dataclass
class TauPushforward:
    """Transported coefficient tau = (Df sigma Df^T)/det Df on the image triangulation.

    For f = u + i*utilde with the exact rotated-flux gradient, tau is
    exactly [[1, b], [0, c]] with b the antisymmetric gap and c the
    determinant of sigma (transported); with the recovered P1 gradient the
    structural residuals |tau11 - 1| and |tau21| decay under refinement.
    """

    image_mesh: TriMesh
    tau: np.ndarray
    b: np.ndarray
    c: np.ndarray
    resid_diag: np.ndarray     # |tau11 - 1|
    resid_lower: np.ndarray    # |tau21|
    excluded: np.ndarray       # near-degenerate elements, excluded from norms
    l1_resid_diag: float
    l1_resid_lower: float


def image_mesh_of(f: ComplexMap) -> TriMesh:
    """Mesh with vertices mapped through f, same connectivity (f must be injective)."""
    mesh = f.mesh
    verts = np.column_stack([f.re.values, f.im.values])
    return TriMesh(
        vertices=verts,
        triangles=mesh.triangles.copy(),
        boundary_loop=mesh.boundary_loop.copy(),
        domain="image",
    )


def change_coordinates(U: SigmaHarmonicMap, f: ComplexMap) -> tuple[TriMesh, SigmaHarmonicMap]:
    """Express the map U in the coordinates produced by f (recovered convention).

    The transported map keeps the nodal values of (u1, u2) but lives on the
    image triangulation, so its per-element gradients are DU Df^{-1} by the
    P1 chain rule and its Jacobian field is det DU / det Df.
    """
    locally, globally = injectivity_check(
        make_map(f.re, f.im, U.sigma)
    )
    if not locally:
        raise ValueError("coordinate map is not locally injective; cannot change coordinates")
    if not globally:
        log.warning("coordinate map failed the global injectivity check; proceeding")
    img = image_mesh_of(f)
    v1 = ScalarFieldP1(img, U.u1.values.copy())
    v2 = ScalarFieldP1(img, U.u2.values.copy())
    return img, make_map(v1, v2, U.sigma)


def pushforward_tau(
    sigma: ElementMatrixField, f: ComplexMap, convention: str = "recovered"
) -> TauPushforward:
    """Transported coefficient with the chosen gradient convention for Df.

    ``recovered`` uses the P1 gradients of both components of f (the map
    that actually produced the image triangulation); ``exact`` replaces
    the imaginary-part gradient by the rotated flux of the real part, in
    which case the triangular structure holds to machine precision.
    Near-degenerate image elements (det Df below 1e-12 of the median) are
    flagged and excluded from the reported L1 norms.
    """
    mesh = f.mesh
    grad_re = element_gradient(f.re)
    if convention == "recovered":
        grad_im = element_gradient(f.im)
    elif convention == "exact":
        grad_im = rotated_flux(sigma, f.re)
    else:
        raise ValueError(f"unknown convention {convention!r}")

    df = np.stack([grad_re, grad_im], axis=1)  # rows: gradients of the components
    det_df = _det_from_gradients(grad_re, grad_im)
    if np.any(det_df <= 0):
        raise ValueError("coordinate map is not locally injective (det Df <= 0 somewhere)")
    scale = float(np.median(det_df))
    excluded = det_df < 1e-12 * scale
    tau = np.einsum("tia,tab,tjb->tij", df, sigma.matrices, df) / det_df[:, None, None]

    img = image_mesh_of(f)
    b = tau[:, 0, 1]
    c = tau[:, 0, 0] * tau[:, 1, 1] - tau[:, 0, 1] * tau[:, 1, 0]
    resid_diag = np.abs(tau[:, 0, 0] - 1.0)
    resid_lower = np.abs(tau[:, 1, 0])
    keep = ~excluded
    img_areas = img.areas
    total = float(img_areas[keep].sum())
    l1_diag = float(np.dot(img_areas[keep], resid_diag[keep]) / total)
    l1_lower = float(np.dot(img_areas[keep], resid_lower[keep]) / total)
    return TauPushforward(
        image_mesh=img,
        tau=tau,
        b=b,
        c=c,
        resid_diag=resid_diag,
        resid_lower=resid_lower,
        excluded=excluded,
        l1_resid_diag=l1_diag,
        l1_resid_lower=l1_lower,
    )


def sense_preservation(sigma: ElementMatrixField, u: ScalarFieldP1) -> np.ndarray:
    """|f_z|^2 - |f_zbar|^2 per element for f = u + i*utilde (exact convention).

    This is the Jacobian of f itself; nonnegativity is the quasiregularity
    direction of the first-order system.
    """
    w = wirtinger_exact(sigma, u)
    return np.abs(w.f_z) ** 2 - np.abs(w.f_zbar) ** 2
