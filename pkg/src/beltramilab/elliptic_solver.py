"""Weak-form assembly and solution of div(sigma grad u) = 0 on P1 triangulations.

The coefficient matrix may be non-symmetric, so the assembled system is
genuinely non-symmetric (test gradient . sigma . trial gradient ordering);
the default solver is sparse LU, the iterative option a non-symmetric
Krylov method (GMRES).  Assembly order is the triangle index order so
results are bit-reproducible at a fixed thread count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coeff_algebra import sym_min_eig_batch
from .errors import NonEllipticError, SolverError
from .grid import ROT90, ElementMatrixField, ScalarFieldP1, TriMesh, element_gradient

log = logging.getLogger(__name__)

BoundaryData = Callable[[np.ndarray], np.ndarray] | np.ndarray


@dataclass
class SolveOptions:
    method: str = "direct_lu"  # or "iterative_nonsymmetric"
    tolerance: float = 1e-10
    max_iterations: int = 2000

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.method not in ("direct_lu", "iterative_nonsymmetric"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class LinearSystem:
    """Assembled sparse system on the free degrees of freedom."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray  # vertex -> equation index, -1 for eliminated vertices


def validate_coefficient(sigma: ElementMatrixField) -> None:
    """Reject a coefficient field with any non-elliptic element.

    Also asserts the positivity of 1 + tr(sigma) + det(sigma), which every
    admissible matrix satisfies and which the dilatation transform divides by.
    """
    mats = sigma.matrices
    alpha = sym_min_eig_batch(mats)
    if np.any(alpha <= 0):
        bad = int(np.argmin(alpha))
        raise NonEllipticError(
            f"element {bad}: symmetric part not positive definite (min eig {alpha[bad]:.3e})"
        )
    det = mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0]
    inv = np.empty_like(mats)
    inv[:, 0, 0] = mats[:, 1, 1]
    inv[:, 1, 1] = mats[:, 0, 0]
    inv[:, 0, 1] = -mats[:, 0, 1]
    inv[:, 1, 0] = -mats[:, 1, 0]
    inv /= det[:, None, None]
    alpha_inv = sym_min_eig_batch(inv)
    if np.any(alpha_inv <= 0):
        bad = int(np.argmin(alpha_inv))
        raise NonEllipticError(
            f"element {bad}: symmetric part of the inverse not positive definite"
        )
    gauge = 1.0 + mats[:, 0, 0] + mats[:, 1, 1] + det
    if np.any(gauge <= 0):
        bad = int(np.argmin(gauge))
        raise AssertionError(
            f"element {bad}: 1 + tr + det = {gauge[bad]:.3e} <= 0 on an elliptic element"
        )


def _element_matrices(mesh: TriMesh, mats: np.ndarray) -> np.ndarray:
    """(nt, 3, 3) element stiffness blocks A_e * grad_i . sigma_e grad_j."""
    grads = mesh.hat_gradients
    blocks = np.einsum("tia,tab,tjb->tij", grads, mats, grads)
    return blocks * mesh.areas[:, None, None]


def _assemble(mesh: TriMesh, mats: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix on the free dofs (quotient map applied on the torus)."""
    blocks = _element_matrices(mesh, mats)
    dofs = mesh.vertex_dofs()
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    n = mesh.n_free
    mat = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))
    return mat.tocsr()


def _solve_system(matrix: sp.csr_matrix, rhs: np.ndarray, opts: SolveOptions) -> tuple[np.ndarray, dict]:
    rhs_norm = float(np.linalg.norm(rhs))
    if opts.method == "direct_lu":
        try:
            lu = spla.splu(matrix.tocsc())
            x = lu.solve(rhs)
        except RuntimeError as exc:
            raise SolverError(f"sparse LU factorization failed: {exc}") from exc
        iters = None
    else:
        ilu = spla.spilu(matrix.tocsc(), drop_tol=1e-5, fill_factor=20)
        precond = spla.LinearOperator(matrix.shape, ilu.solve)
        counter = {"n": 0}

        def cb(_):
            counter["n"] += 1

        x, info = spla.gmres(
            matrix,
            rhs,
            rtol=opts.tolerance,
            maxiter=opts.max_iterations,
            M=precond,
            callback=cb,
            callback_type="pr_norm",
        )
        iters = counter["n"]
        if info > 0:
            resid = float(np.linalg.norm(matrix @ x - rhs))
            raise SolverError(
                f"GMRES stagnated after {info} iterations", residual=resid
            )
        if info < 0:
            raise SolverError(f"GMRES received illegal input (info={info})")
    residual = float(np.linalg.norm(matrix @ x - rhs))
    rel = residual / rhs_norm if rhs_norm > 0 else residual
    if rel > max(opts.tolerance, 1e-8):
        raise SolverError(f"relative residual {rel:.3e} above tolerance", residual=residual)
    stats = {"n": matrix.shape[0], "nnz": matrix.nnz, "method": opts.method,
             "residual": residual, "relative_residual": rel, "iterations": iters}
    log.info(
        "linear solve: n=%d nnz=%d method=%s residual=%.3e iterations=%s",
        stats["n"], stats["nnz"], stats["method"], residual, iters,
    )
    return x, stats


def _boundary_values(mesh: TriMesh, g: BoundaryData) -> np.ndarray:
    loop = mesh.boundary_loop
    if callable(g):
        vals = np.asarray(g(mesh.vertices[loop]), dtype=float)
    else:
        vals = np.asarray(g, dtype=float)
    if vals.shape != (len(loop),):
        raise ValueError(f"boundary data must give {len(loop)} values, got {vals.shape}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("boundary data contains non-finite values")
    return vals


def solve_dirichlet(
    sigma: ElementMatrixField, g: BoundaryData, opts: SolveOptions | None = None
) -> ScalarFieldP1:
    """Discrete weak solution with Dirichlet data g at the boundary vertices.

    ``g`` is either a callable taking an (m, 2) array of boundary vertex
    positions or an array of per-boundary-vertex values ordered like the
    boundary loop.
    """
    opts = opts or SolveOptions()
    mesh = sigma.mesh
    if mesh.periodic:
        raise ValueError("Dirichlet solve needs a mesh with boundary; got a periodic cell")
    validate_coefficient(sigma)
    g_vals = _boundary_values(mesh, g)

    full = _assemble(mesh, sigma.matrices)
    boundary = mesh.boundary_loop
    is_free = np.ones(mesh.n_vertices, dtype=bool)
    is_free[boundary] = False
    free = np.nonzero(is_free)[0]
    dof_map = -np.ones(mesh.n_vertices, dtype=np.int64)
    dof_map[free] = np.arange(len(free))

    u_full = np.zeros(mesh.n_vertices)
    u_full[boundary] = g_vals
    rhs = -(full[free][:, boundary] @ g_vals)
    matrix = full[free][:, free].tocsr()
    x, _ = _solve_system(matrix, rhs, opts)
    u_full[free] = x
    return ScalarFieldP1(mesh, u_full)


def dirichlet_system(sigma: ElementMatrixField, g: BoundaryData) -> LinearSystem:
    """Assembled reduced system for inspection/testing; mirrors solve_dirichlet."""
    mesh = sigma.mesh
    validate_coefficient(sigma)
    g_vals = _boundary_values(mesh, g)
    full = _assemble(mesh, sigma.matrices)
    boundary = mesh.boundary_loop
    is_free = np.ones(mesh.n_vertices, dtype=bool)
    is_free[boundary] = False
    free = np.nonzero(is_free)[0]
    dof_map = -np.ones(mesh.n_vertices, dtype=np.int64)
    dof_map[free] = np.arange(len(free))
    rhs = -(full[free][:, boundary] @ g_vals)
    return LinearSystem(matrix=full[free][:, free].tocsr(), rhs=rhs, dof_map=dof_map)


def interior_residual(sigma: ElementMatrixField, u: ScalarFieldP1) -> np.ndarray:
    """Assembled weak residual at every interior vertex (flux conservation check)."""
    mesh = sigma.mesh
    full = _assemble(mesh, sigma.matrices)
    res = full @ u.values
    is_free = ~mesh.boundary_mask
    return res[is_free]


def _pin_dof(matrix: sp.csr_matrix, rhs: np.ndarray, dof: int = 0) -> tuple[sp.csr_matrix, np.ndarray]:
    """Replace one row by the identity to fix the additive constant.

    Valid because the unpinned singular system is consistent (both the
    all-ones left and right kernels), so the pinned solution solves every
    original equation.
    """
    lil = matrix.tolil()
    lil.rows[dof] = [dof]
    lil.data[dof] = [1.0]
    rhs = rhs.copy()
    rhs[dof] = 0.0
    return lil.tocsr(), rhs


def solve_periodic_cell(
    sigma: ElementMatrixField, xi: np.ndarray, opts: SolveOptions | None = None
) -> ScalarFieldP1:
    """Cell solution u = xi . x + w with w periodic and of zero mean over the cell.

    Returns u on the unwrapped fundamental domain (identified vertices share
    the periodic part but keep their own affine part).  For constant
    coefficients the corrector w vanishes and u = xi . x exactly.
    """
    opts = opts or SolveOptions()
    mesh = sigma.mesh
    if not mesh.periodic:
        raise ValueError("cell solve needs a periodic mesh")
    validate_coefficient(sigma)
    xi = np.asarray(xi, dtype=float)

    matrix = _assemble(mesh, sigma.matrices)
    # rhs_i = - sum_e A_e grad(phi_i) . sigma_e xi
    flux = np.einsum("tab,b->ta", sigma.matrices, xi)
    contrib = -np.einsum("tia,ta,t->ti", mesh.hat_gradients, flux, mesh.areas)
    rhs = np.zeros(mesh.n_free)
    np.add.at(rhs, mesh.vertex_dofs().ravel(), contrib.ravel())

    pinned, rhs_p = _pin_dof(matrix, rhs)
    w_free, _ = _solve_system(pinned, rhs_p, opts)

    # Shift the periodic part to zero mean over the cell.
    w_at_tri = w_free[mesh.vertex_dofs()]
    mean_w = float(np.dot(mesh.areas, w_at_tri.mean(axis=1)) / mesh.areas.sum())
    w_free = w_free - mean_w

    u = mesh.vertices @ xi + w_free[mesh.free_index]
    return ScalarFieldP1(mesh, u)


def rotated_flux(sigma: ElementMatrixField, u: ScalarFieldP1) -> np.ndarray:
    """Per-element rotated flux: the exact gradient target of the stream function."""
    grad = element_gradient(u)
    flux = np.einsum("tab,tb->ta", sigma.matrices, grad)
    return flux @ ROT90.T


def mean_flux(sigma: ElementMatrixField, u: ScalarFieldP1) -> np.ndarray:
    """Cell average of sigma grad u."""
    grad = element_gradient(u)
    flux = np.einsum("tab,tb->ta", sigma.matrices, grad)
    return np.tensordot(sigma.mesh.areas, flux, axes=(0, 0)) / sigma.mesh.areas.sum()


def vertex_circulations(mesh: TriMesh, field: np.ndarray) -> np.ndarray:
    """Discrete circulation of a per-element constant vector field around interior vertices.

    The loop around vertex i is the chain of opposite edges of its incident
    triangles; zero circulation for the rotated flux is algebraically the
    interior weak equation, which is what makes the stream function exist.
    """
    tri = mesh.triangles
    p = mesh.vertices
    circ = np.zeros(mesh.n_vertices)
    for local in range(3):
        i = tri[:, local]
        j = tri[:, (local + 1) % 3]
        k = tri[:, (local + 2) % 3]
        seg = p[k] - p[j]
        np.add.at(circ, i, np.einsum("ta,ta->t", field, seg))
    return circ[~mesh.boundary_mask]


def stream_function(
    sigma: ElementMatrixField, u: ScalarFieldP1, opts: SolveOptions | None = None
) -> tuple[ScalarFieldP1, float]:
    """Least-squares potential of the rotated flux, anchored to zero at vertex 0.

    Solves the discrete Neumann problem
    ``sum_e A_e grad(phi) . grad(utilde) = sum_e A_e grad(phi) . rot(sigma grad u)``
    over all P1 test functions; the global solve avoids the path-ordering
    error of line integration and is unique up to the anchored constant.
    On the torus the rotated mean flux is the gradient of a non-periodic
    linear part that is split off, solved around, and added back on the
    unwrapped cell.  Returns the field and the L2 norm of the gradient
    mismatch (decreases under refinement; zero when the target is exact).
    """
    opts = opts or SolveOptions()
    mesh = sigma.mesh
    target = rotated_flux(sigma, u)

    if mesh.periodic:
        linear = ROT90 @ mean_flux(sigma, u)
        target_periodic = target - linear[None, :]
    else:
        linear = None
        target_periodic = target

    identity = ElementMatrixField(
        mesh, np.broadcast_to(np.eye(2), (mesh.n_triangles, 2, 2)).copy()
    )
    matrix = _assemble(mesh, identity.matrices)
    contrib = np.einsum("tia,ta,t->ti", mesh.hat_gradients, target_periodic, mesh.areas)
    rhs = np.zeros(mesh.n_free)
    np.add.at(rhs, mesh.vertex_dofs().ravel(), contrib.ravel())

    pinned, rhs_p = _pin_dof(matrix, rhs)
    w, _ = _solve_system(pinned, rhs_p, opts)

    values = w[mesh.free_index]
    if linear is not None:
        values = values + mesh.vertices @ linear
    values = values - values[0]  # anchor at the lowest vertex index
    field = ScalarFieldP1(mesh, values)

    mismatch = element_gradient(field) - target
    residual = float(np.sqrt(np.dot(mesh.areas, np.einsum("ta,ta->t", mismatch, mismatch))))
    return field, residual
