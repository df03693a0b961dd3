"""Periodic cell problems, effective conductivity, and area formulas.

The primary definition of the effective tensor is the average flux per
unit applied mean gradient (column construction); the variational
characterization of the quadratic form is reported alongside.  At the
discrete level the two agree identically for every coefficient, symmetric
or not, because the corrector is orthogonal to the discrete test space --
but the minimization reading is only meaningful for symmetric input, so
no equality is asserted for non-symmetric coefficients at the API level.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .elliptic_solver import SolveOptions, mean_flux, solve_periodic_cell, stream_function
from .grid import ElementMatrixField, ScalarFieldP1, TriMesh, element_gradient
from .sigma_harmonic import ComplexMap, SigmaHarmonicMap, injectivity_check, make_map

log = logging.getLogger(__name__)


@dataclass
class EffectiveTensor:
    """Homogenized tensor with the probe data used to produce it."""

    matrix: np.ndarray                       # columns: cell averages of sigma grad u^{e_j}
    solutions: dict[str, ScalarFieldP1]      # cell solutions for e1, e2
    quadratic_forms: dict[str, float]        # energy probes for e1, e2, e1+e2

    def quadratic_form_gap(self) -> float:
        """Largest gap between the energy probes and the flux-average quadratic form."""
        gaps = []
        probes = {"e1": np.array([1.0, 0.0]), "e2": np.array([0.0, 1.0]),
                  "e1+e2": np.array([1.0, 1.0])}
        for name, xi in probes.items():
            form = float(xi @ self.matrix @ xi)
            gaps.append(abs(self.quadratic_forms[name] - form))
        return max(gaps)


@dataclass
class CellMap:
    """Periodic solution pair U with U - A x periodic; A need not be symmetric."""

    A: np.ndarray
    U: SigmaHarmonicMap
    linearity_error: float  # max nodal gap between U^A and A U^I


def _energy(sigma: ElementMatrixField, u: ScalarFieldP1) -> float:
    grad = element_gradient(u)
    flux = np.einsum("tab,tb->ta", sigma.matrices, grad)
    return float(np.dot(sigma.mesh.areas, np.einsum("ta,ta->t", grad, flux)))


def effective_conductivity(
    sigma: ElementMatrixField, opts: SolveOptions | None = None
) -> EffectiveTensor:
    """Cell solves for the coordinate directions; columns are average fluxes.

    Also records the energy quadratic form for the probes e1, e2 and
    e1 + e2 (the last by discrete superposition, which is exact).
    """
    opts = opts or SolveOptions()
    mesh = sigma.mesh
    u1 = solve_periodic_cell(sigma, np.array([1.0, 0.0]), opts)
    u2 = solve_periodic_cell(sigma, np.array([0.0, 1.0]), opts)
    col1 = mean_flux(sigma, u1)
    col2 = mean_flux(sigma, u2)
    u12 = ScalarFieldP1(mesh, u1.values + u2.values)
    tensor = np.column_stack([col1, col2])
    qf = {
        "e1": _energy(sigma, u1),
        "e2": _energy(sigma, u2),
        "e1+e2": _energy(sigma, u12),
    }
    result = EffectiveTensor(matrix=tensor, solutions={"e1": u1, "e2": u2}, quadratic_forms=qf)
    log.info(
        "effective tensor [[%.6g, %.6g], [%.6g, %.6g]] (probe gap %.3e)",
        tensor[0, 0], tensor[0, 1], tensor[1, 0], tensor[1, 1], result.quadratic_form_gap(),
    )
    return result


def cell_map(
    sigma: ElementMatrixField, A: np.ndarray, opts: SolveOptions | None = None
) -> CellMap:
    """Componentwise periodic cell solves for the affine part A x.

    Verifies the linearity relation U^A = A U^I (exact up to solver
    tolerance because the discrete problems are linear).  A singular A is
    solved as given; only the homeomorphism interpretation is void then.
    """
    opts = opts or SolveOptions()
    A = np.asarray(A, dtype=float)
    mesh = sigma.mesh
    u1 = solve_periodic_cell(sigma, A[0], opts)
    u2 = solve_periodic_cell(sigma, A[1], opts)
    e1 = solve_periodic_cell(sigma, np.array([1.0, 0.0]), opts)
    e2 = solve_periodic_cell(sigma, np.array([0.0, 1.0]), opts)
    lin1 = A[0, 0] * e1.values + A[0, 1] * e2.values
    lin2 = A[1, 0] * e1.values + A[1, 1] * e2.values
    err = max(
        float(np.max(np.abs(u1.values - lin1))), float(np.max(np.abs(u2.values - lin2)))
    )
    if np.linalg.det(A) == 0.0:
        log.warning("affine part is singular; homeomorphism checks are skipped")
    return CellMap(A=A, U=make_map(u1, u2, sigma), linearity_error=err)


def cell_complex_map(
    sigma: ElementMatrixField, xi: np.ndarray, opts: SolveOptions | None = None
) -> tuple[ComplexMap, float]:
    """u^xi + i * (recovered stream of u^xi) on the unwrapped cell."""
    opts = opts or SolveOptions()
    u = solve_periodic_cell(sigma, np.asarray(xi, dtype=float), opts)
    ut, resid = stream_function(sigma, u, opts)
    return ComplexMap(u, ut), resid


def _element_dets(map_like) -> tuple[TriMesh, np.ndarray]:
    if isinstance(map_like, SigmaHarmonicMap):
        return map_like.mesh, map_like.det_DU
    if isinstance(map_like, ComplexMap):
        g1 = element_gradient(map_like.re)
        g2 = element_gradient(map_like.im)
        return map_like.mesh, g1[:, 0] * g2[:, 1] - g1[:, 1] * g2[:, 0]
    raise TypeError(f"expected a map, got {type(map_like)!r}")


def image_area(map_like, region: np.ndarray | None = None, detailed: bool = False):
    """Area of the image of a region: sum of |det| times element area.

    ``region`` is an element index array (default: the whole mesh).  If the
    map is not injective on the region the unsigned integral overcounts
    folds; a warning is emitted and, with ``detailed=True``, the signed
    (overlap-corrected) estimate is returned alongside.
    """
    mesh, dets = _element_dets(map_like)
    if region is None:
        region = np.arange(mesh.n_triangles)
    areas = mesh.areas[region]
    d = dets[region]
    unsigned = float(np.dot(np.abs(d), areas))
    signed = float(np.dot(d, areas))
    injective = bool(np.all(d > 0))
    if isinstance(map_like, SigmaHarmonicMap) and len(region) == mesh.n_triangles and injective:
        _, injective = injectivity_check(map_like)
    if not injective:
        log.warning(
            "map not injective on the region: unsigned image area %.6g, "
            "overlap-corrected estimate %.6g", unsigned, abs(signed),
        )
    if detailed:
        return unsigned, abs(signed), injective
    return unsigned


def area_formula_check(
    U, phi, region: np.ndarray | None = None
) -> tuple[float, float, float]:
    """Compare the two sides of the change-of-variables formula for phi.

    Left side: one-point (barycenter) rule on the source elements of
    phi(U(x)) |det DU|.  Right side: degree-2 (edge-midpoint) rule for phi
    over the image triangles.  Returns (lhs, rhs, relative gap); the gap
    measures the one-point quadrature error and decays under refinement.
    """
    mesh, dets = _element_dets(U)
    if region is None:
        region = np.arange(mesh.n_triangles)
    if isinstance(U, SigmaHarmonicMap):
        comp1, comp2 = U.u1.values, U.u2.values
    else:
        comp1, comp2 = U.re.values, U.im.values
    tris = mesh.triangles[region]
    areas = mesh.areas[region]
    d = dets[region]

    img = np.stack([comp1[tris], comp2[tris]], axis=-1)  # (m, 3, 2) image vertices
    img_bary = img.mean(axis=1)
    lhs = float(np.dot(phi(img_bary) * np.abs(d), areas))

    mids = 0.5 * (img + np.roll(img, -1, axis=1))        # (m, 3, 2) image edge midpoints
    phi_mid = np.mean(
        np.stack([phi(mids[:, k, :]) for k in range(3)], axis=0), axis=0
    )
    img_areas = np.abs(d) * areas
    rhs = float(np.dot(phi_mid, img_areas))
    gap = abs(lhs - rhs) / max(abs(rhs), 1e-300)
    return lhs, rhs, gap


def mean_matrices(sigma: ElementMatrixField) -> tuple[np.ndarray, np.ndarray]:
    """(harmonic, arithmetic) means of the symmetric part over the cell.

    Classical sandwich oracle: for symmetric coefficients the symmetric
    part of the effective tensor lies between them in quadratic form.  For
    non-symmetric coefficients only the harmonic lower bound survives --
    the energy identity bounds sym(sigma_eff) from below by the
    homogenized symmetric part, hence by its harmonic mean, while an
    oscillating antisymmetric part can push the effective tensor above the
    arithmetic mean (strips of [[1, c], [-c, 1]] with alternating sign of
    c homogenize to diag(1, 1 + c^2)).
    """
    mats = sigma.matrices
    sym = 0.5 * (mats + np.transpose(mats, (0, 2, 1)))
    w = sigma.mesh.areas / sigma.mesh.areas.sum()
    arith = np.einsum("t,tab->ab", w, sym)
    harm = np.linalg.inv(np.einsum("t,tab->ab", w, np.linalg.inv(sym)))
    return harm, arith
