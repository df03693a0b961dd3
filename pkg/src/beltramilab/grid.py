"""Structured triangulations, nodal/element fields, and dyadic square families.

Meshes are immutable after construction.  Coefficients are piecewise
constant per triangle (sampled at barycenters); scalar unknowns are
continuous piecewise-linear (P1) nodal fields.  On the periodic unit cell
opposite boundary vertices are identified through a quotient map rather
than constraint equations, which keeps linear systems square.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeshBudgetError

TRIANGLE_BUDGET = 2_000_000

# Rotation by +pi/2, used for flux rotation throughout the package.
ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class TriMesh:
    """Triangulation of a convex polygon or of the periodic unit square.

    ``free_index`` maps every vertex to its degree-of-freedom index; on a
    periodic mesh identified copies share one index, otherwise it is the
    identity.  ``boundary_loop`` is the counterclockwise geometric boundary
    of the (fundamental) domain; on the torus it is kept for unwrapped
    geometry but carries no topological boundary meaning.
    """

    vertices: np.ndarray      # (nv, 2)
    triangles: np.ndarray     # (nt, 3), counterclockwise
    boundary_loop: np.ndarray  # ordered vertex indices
    periodic: bool = False
    free_index: np.ndarray | None = None
    n_free: int = 0
    domain: str = "custom"
    _geom: dict | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.boundary_loop = np.asarray(self.boundary_loop, dtype=np.int64)
        if self.free_index is None:
            self.free_index = np.arange(len(self.vertices), dtype=np.int64)
            self.n_free = len(self.vertices)
        areas = self.areas
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise ValueError(f"triangle {bad} has non-positive signed area {areas[bad]:.3e}")

    # -- geometry cache ----------------------------------------------------

    def _geometry(self) -> dict:
        if self._geom is None:
            tri = self.triangles
            p0 = self.vertices[tri[:, 0]]
            p1 = self.vertices[tri[:, 1]]
            p2 = self.vertices[tri[:, 2]]
            e1 = p1 - p0
            e2 = p2 - p0
            areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
            # Hat-function gradients: grad lambda_i = perp(edge opposite i) / (2A).
            grads = np.empty((len(tri), 3, 2))
            pts = (p0, p1, p2)
            for i in range(3):
                pj = pts[(i + 1) % 3]
                pk = pts[(i + 2) % 3]
                grads[:, i, 0] = pj[:, 1] - pk[:, 1]
                grads[:, i, 1] = pk[:, 0] - pj[:, 0]
            grads /= (2.0 * areas)[:, None, None]
            self._geom = {
                "areas": areas,
                "grads": grads,
                "barycenters": (p0 + p1 + p2) / 3.0,
            }
        return self._geom

    @property
    def areas(self) -> np.ndarray:
        return self._geometry()["areas"]

    @property
    def hat_gradients(self) -> np.ndarray:
        """(nt, 3, 2) gradients of the three nodal hat functions per triangle."""
        return self._geometry()["grads"]

    @property
    def barycenters(self) -> np.ndarray:
        return self._geometry()["barycenters"]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        if not self.periodic:
            mask[self.boundary_loop] = True
        return mask

    def vertex_dofs(self) -> np.ndarray:
        """(nt, 3) dof index of each triangle vertex (quotient map applied)."""
        return self.free_index[self.triangles]


@dataclass
class ScalarFieldP1:
    """Continuous piecewise-linear scalar field given by nodal values."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"expected {self.mesh.n_vertices} nodal values, got {self.values.shape}"
            )


@dataclass
class ElementMatrixField:
    """Per-triangle constant 2x2 matrix field (a measurable coefficient)."""

    mesh: TriMesh
    matrices: np.ndarray

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.shape != (self.mesh.n_triangles, 2, 2):
            raise ValueError(
                f"expected shape ({self.mesh.n_triangles}, 2, 2), got {self.matrices.shape}"
            )


def element_gradient(f: ScalarFieldP1) -> np.ndarray:
    """Exact per-triangle gradient of the piecewise-linear interpolant, (nt, 2)."""
    vals = f.values[f.mesh.triangles]  # (nt, 3)
    return np.einsum("ti,tid->td", vals, f.mesh.hat_gradients)


def integrate_element_field(mesh: TriMesh, values: np.ndarray) -> float | np.ndarray:
    """Integral over the mesh of a per-triangle constant field (scalar or vector)."""
    if values.ndim == 1:
        return float(np.dot(mesh.areas, values))
    return np.tensordot(mesh.areas, values, axes=(0, 0))


def field_mean(f: ScalarFieldP1) -> float:
    """Area-weighted mean of a P1 field (exact for the piecewise-linear interpolant)."""
    tri_means = f.values[f.mesh.triangles].mean(axis=1)
    return float(np.dot(f.mesh.areas, tri_means) / f.mesh.areas.sum())


# ---------------------------------------------------------------------------
# Mesh builders
# ---------------------------------------------------------------------------


def _square_lattice(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    n = resolution
    xs = np.arange(n + 1) / n
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return vertices, np.asarray(tris, dtype=np.int64)


def _square_boundary_loop(resolution: int) -> np.ndarray:
    n = resolution

    def vid(i, j):
        return j * (n + 1) + i

    loop = [vid(i, 0) for i in range(n)]
    loop += [vid(n, j) for j in range(n)]
    loop += [vid(i, n) for i in range(n, 0, -1)]
    loop += [vid(0, j) for j in range(n, 0, -1)]
    return np.asarray(loop, dtype=np.int64)


def build_unit_square(resolution: int) -> TriMesh:
    """Structured triangulation of [0,1]^2 with 2*resolution^2 triangles."""
    _check_resolution(resolution, 2 * resolution * resolution)
    vertices, tris = _square_lattice(resolution)
    return TriMesh(
        vertices=vertices,
        triangles=tris,
        boundary_loop=_square_boundary_loop(resolution),
        domain="unit_square",
    )


def build_periodic_cell(resolution: int) -> TriMesh:
    """Unit cell with opposite-edge vertices identified; resolution^2 free vertices."""
    _check_resolution(resolution, 2 * resolution * resolution)
    vertices, tris = _square_lattice(resolution)
    n = resolution
    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="xy")
    free = ((jj % n) * n + (ii % n)).ravel()
    return TriMesh(
        vertices=vertices,
        triangles=tris,
        boundary_loop=_square_boundary_loop(resolution),
        periodic=True,
        free_index=free.astype(np.int64),
        n_free=n * n,
        domain="periodic_cell",
    )


def build_regular_ngon(n_sides: int, radius: float, resolution: int) -> TriMesh:
    """Fan-and-ring triangulation of a regular polygon.

    Ring k (k = 1..resolution) carries ``n_sides * k`` vertices placed on
    the polygon boundary scaled by k/resolution, so the outermost ring is
    the polygon itself subdivided ``resolution`` times per side.
    """
    if n_sides < 3:
        raise ValueError(f"polygon needs at least 3 sides, got {n_sides}")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    _check_resolution(resolution, n_sides * resolution * resolution)
    corners = np.array(
        [
            [radius * math.cos(2 * math.pi * s / n_sides), radius * math.sin(2 * math.pi * s / n_sides)]
            for s in range(n_sides)
        ]
    )
    vertices = [np.array([0.0, 0.0])]
    ring_start = [None, 1]
    for k in range(1, resolution + 1):
        frac = k / resolution
        for s in range(n_sides):
            c0, c1 = corners[s], corners[(s + 1) % n_sides]
            for j in range(k):
                t = j / k
                vertices.append(frac * ((1.0 - t) * c0 + t * c1))
        ring_start.append(ring_start[-1] + n_sides * k)
    vertices = np.asarray(vertices)

    def ring_vertex(k: int, s: int, j: int) -> int:
        if k == 0:
            return 0
        s_eff, j_eff = (s + j // k) % n_sides, j % k
        return ring_start[k] + s_eff * k + j_eff

    tris = []
    for k in range(resolution):
        for s in range(n_sides):
            inner = [ring_vertex(k, s, m) for m in range(k + 1)]
            outer = [ring_vertex(k + 1, s, m) for m in range(k + 2)]
            for m in range(k + 1):
                tris.append((outer[m], outer[m + 1], inner[m]))
            for m in range(k):
                tris.append((outer[m + 1], inner[m + 1], inner[m]))
    loop = np.arange(ring_start[resolution], ring_start[resolution] + n_sides * resolution)
    return TriMesh(
        vertices=vertices,
        triangles=np.asarray(tris, dtype=np.int64),
        boundary_loop=loop.astype(np.int64),
        domain=f"regular_ngon_{n_sides}",
    )


def build_mesh(domain, resolution: int) -> TriMesh:
    """Dispatch on a domain spec: 'unit_square', 'periodic_cell', or ('regular_ngon', n, radius)."""
    if domain == "unit_square":
        return build_unit_square(resolution)
    if domain == "periodic_cell":
        return build_periodic_cell(resolution)
    if isinstance(domain, (tuple, list)) and domain and domain[0] == "regular_ngon":
        _, n_sides, radius = domain
        return build_regular_ngon(int(n_sides), float(radius), resolution)
    raise ValueError(f"unknown domain spec {domain!r}")


def _check_resolution(resolution: int, n_triangles: int):
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if n_triangles > TRIANGLE_BUDGET:
        raise MeshBudgetError(
            f"{n_triangles} triangles exceed the budget of {TRIANGLE_BUDGET}"
        )


def regular_ngon_area(n_sides: int, radius: float) -> float:
    """Closed-form area of the regular polygon, used as a mesh oracle."""
    return 0.5 * n_sides * radius * radius * math.sin(2 * math.pi / n_sides)


# ---------------------------------------------------------------------------
# Dyadic squares
# ---------------------------------------------------------------------------

MIN_ELEMENTS_PER_SQUARE = 8


@dataclass
class DyadicSquare:
    level: int
    corner: np.ndarray        # lower-left corner
    side: float
    elements: np.ndarray      # triangle indices whose barycenter lies inside
    area: float               # discrete measure: sum of member triangle areas
    too_few: bool             # fewer than MIN_ELEMENTS_PER_SQUARE members
    twice_inside: bool        # the concentric double square stays inside the domain


@dataclass
class DyadicSquareSet:
    mesh: TriMesh
    origin: np.ndarray
    side: float
    max_level: int
    squares: list[DyadicSquare]

    def admissible(self, require_twice_inside: bool = False) -> list[DyadicSquare]:
        out = [s for s in self.squares if not s.too_few]
        if require_twice_inside:
            out = [s for s in out if s.twice_inside]
        return out


def _boundary_polygon(mesh: TriMesh) -> np.ndarray:
    return mesh.vertices[mesh.boundary_loop]


def _points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < np.where(crosses, xint, np.inf))
    return inside


def _segment_hits_box(p0: np.ndarray, p1: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Liang-Barsky clip test: does each segment intersect the axis box [lo, hi]?"""
    d = p1 - p0
    t0 = np.zeros(len(p0))
    t1 = np.ones(len(p0))
    hits = np.ones(len(p0), dtype=bool)
    for axis in range(2):
        dd = d[:, axis]
        near = np.where(dd != 0, (lo[axis] - p0[:, axis]) / np.where(dd == 0, 1, dd), -np.inf)
        far = np.where(dd != 0, (hi[axis] - p0[:, axis]) / np.where(dd == 0, 1, dd), np.inf)
        swap = near > far
        near2 = np.where(swap, far, near)
        far2 = np.where(swap, near, far)
        parallel_out = (dd == 0) & ((p0[:, axis] < lo[axis]) | (p0[:, axis] > hi[axis]))
        t0 = np.maximum(t0, near2)
        t1 = np.minimum(t1, far2)
        hits &= ~parallel_out
    return hits & (t0 <= t1)


def dyadic_squares(mesh: TriMesh, max_level: int) -> DyadicSquareSet:
    """All dyadic squares of levels 0..max_level over the mesh's reference square.

    For the unit square and the periodic cell the reference square is
    [0,1]^2 and tiles the domain exactly; for other meshes it is the
    bounding square, and squares simply collect the triangles whose
    barycenter falls inside.  Squares with fewer than
    ``MIN_ELEMENTS_PER_SQUARE`` members are flagged (sub-resolution noise)
    and squares whose concentric double stays inside the domain are
    flagged ``twice_inside`` for the diagnostics that need an interior
    margin.  On the torus every double square is inside.
    """
    if max_level < 0:
        raise ValueError("max_level must be >= 0")
    canonical = mesh.domain in ("unit_square", "periodic_cell")
    if canonical:
        origin = np.array([0.0, 0.0])
        side = 1.0
    else:
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        side = float(max(hi - lo))
        origin = lo
    bary = mesh.barycenters
    areas = mesh.areas
    poly = None if canonical else _boundary_polygon(mesh)

    squares: list[DyadicSquare] = []
    for level in range(max_level + 1):
        n = 1 << level
        h = side / n
        ix = np.clip(((bary[:, 0] - origin[0]) / h).astype(np.int64), 0, n - 1)
        iy = np.clip(((bary[:, 1] - origin[1]) / h).astype(np.int64), 0, n - 1)
        key = iy * n + ix
        order = np.argsort(key, kind="stable")
        sorted_key = key[order]
        boundaries = np.searchsorted(sorted_key, np.arange(n * n + 1))
        if poly is not None:
            # Enumerate corners in key order (key = iy*n + ix).
            ix_all = np.arange(n * n) % n
            iy_all = np.arange(n * n) // n
            corners_lo = origin[None, :] + h * np.column_stack([ix_all, iy_all])
            twice_flags = _double_square_inside_polygon(corners_lo, h, poly)
        for k in range(n * n):
            members = order[boundaries[k] : boundaries[k + 1]]
            cx, cy = k % n, k // n
            corner = origin + h * np.array([cx, cy])
            if canonical:
                if mesh.periodic:
                    twice = True
                else:
                    twice = (
                        corner[0] - 0.5 * h >= origin[0] - 1e-12
                        and corner[1] - 0.5 * h >= origin[1] - 1e-12
                        and corner[0] + 1.5 * h <= origin[0] + side + 1e-12
                        and corner[1] + 1.5 * h <= origin[1] + side + 1e-12
                    )
            else:
                twice = bool(twice_flags[k])
            squares.append(
                DyadicSquare(
                    level=level,
                    corner=corner,
                    side=h,
                    elements=np.sort(members),
                    area=float(areas[members].sum()),
                    too_few=len(members) < MIN_ELEMENTS_PER_SQUARE,
                    twice_inside=twice,
                )
            )
    return DyadicSquareSet(mesh=mesh, origin=origin, side=side, max_level=max_level, squares=squares)


def _double_square_inside_polygon(corners_lo: np.ndarray, h: float, poly: np.ndarray) -> np.ndarray:
    """For each square (corner, side h): is the concentric double inside the polygon?

    The double square is inside iff its four corners are inside and no
    boundary segment crosses it.
    """
    n = len(corners_lo)
    lo2 = corners_lo - 0.5 * h
    hi2 = corners_lo + 1.5 * h
    flags = np.ones(n, dtype=bool)
    corner_offsets = np.array([[0.0, 0.0], [2.0 * h, 0.0], [0.0, 2.0 * h], [2.0 * h, 2.0 * h]])
    for off in corner_offsets:
        flags &= _points_in_polygon(lo2 + off[None, :], poly)
    seg0 = poly
    seg1 = np.roll(poly, -1, axis=0)
    for k in range(n):
        if not flags[k]:
            continue
        if _segment_hits_box(seg0, seg1, lo2[k], hi2[k]).any():
            flags[k] = False
    return flags


# ---------------------------------------------------------------------------
# CSV export (column order: index, x, y, value(s))
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def export_vertices_csv(mesh: TriMesh, path) -> None:
    rows = ((i, v[0], v[1]) for i, v in enumerate(mesh.vertices))
    write_csv(path, ["index", "x", "y"], rows)


def export_triangles_csv(mesh: TriMesh, path) -> None:
    rows = ((i, t[0], t[1], t[2]) for i, t in enumerate(mesh.triangles))
    write_csv(path, ["index", "v0", "v1", "v2"], rows)


def export_vertex_values_csv(mesh: TriMesh, values: np.ndarray, path, name: str = "value") -> None:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != mesh.n_vertices:
        raise ValueError(f"expected {mesh.n_vertices} rows of vertex values, got {values.shape}")
    cols = values.shape[1]
    names = [name] if cols == 1 else [f"{name}{k}" for k in range(cols)]
    rows = (
        (i, mesh.vertices[i, 0], mesh.vertices[i, 1], *values[i])
        for i in range(mesh.n_vertices)
    )
    write_csv(path, ["index", "x", "y", *names], rows)


def export_element_values_csv(mesh: TriMesh, values: np.ndarray, path, name: str = "value") -> None:
    values = np.asarray(values, dtype=float)
    bary = mesh.barycenters
    if values.ndim == 1:
        rows = ((i, bary[i, 0], bary[i, 1], values[i]) for i in range(mesh.n_triangles))
        write_csv(path, ["index", "x", "y", name], rows)
    else:
        flat = values.reshape(mesh.n_triangles, -1)
        names = [f"{name}{k}" for k in range(flat.shape[1])]
        rows = (
            (i, bary[i, 0], bary[i, 1], *flat[i]) for i in range(mesh.n_triangles)
        )
        write_csv(path, ["index", "x", "y", *names], rows)
