import numpy as np
import pytest

from beltramilab.errors import MeshBudgetError
from beltramilab.grid import (
    ElementMatrixField,
    ScalarFieldP1,
    build_mesh,
    build_periodic_cell,
    build_regular_ngon,
    build_unit_square,
    dyadic_squares,
    element_gradient,
    export_element_values_csv,
    export_triangles_csv,
    export_vertex_values_csv,
    export_vertices_csv,
    regular_ngon_area,
)


class TestMeshBuilders:
    def test_unit_square_counts(self):
        m = build_unit_square(2)
        assert m.n_triangles == 8
        assert m.n_vertices == 9

    @pytest.mark.parametrize("n", [2, 5, 16])
    def test_unit_square_triangle_count(self, n):
        assert build_unit_square(n).n_triangles == 2 * n * n

    def test_unit_square_area(self):
        m = build_unit_square(7)
        assert abs(m.areas.sum() - 1.0) < 1e-12

    def test_boundary_loop_simple_closed(self):
        m = build_unit_square(4)
        loop = m.boundary_loop
        assert len(loop) == 16
        assert len(set(loop.tolist())) == len(loop)

    @pytest.mark.parametrize("n", [2, 4, 9])
    def test_periodic_identification(self, n):
        m = build_periodic_cell(n)
        assert m.n_triangles == 2 * n * n
        assert m.n_free == n * n
        # identified copies: right column maps onto the left, top onto bottom
        assert m.free_index[n] == m.free_index[0]
        assert set(m.free_index.tolist()) == set(range(n * n))

    @pytest.mark.parametrize("sides,res", [(3, 4), (5, 3), (6, 7)])
    def test_ngon_area_closed_form(self, sides, res):
        m = build_regular_ngon(sides, 1.3, res)
        assert abs(m.areas.sum() - regular_ngon_area(sides, 1.3)) < 1e-12

    def test_ngon_counts(self):
        sides, res = 6, 5
        m = build_regular_ngon(sides, 1.0, res)
        assert m.n_triangles == sides * res * res
        assert m.n_vertices == 1 + sides * res * (res + 1) // 2
        assert len(m.boundary_loop) == sides * res

    def test_dispatch(self):
        assert build_mesh("unit_square", 3).n_triangles == 18
        assert build_mesh("periodic_cell", 3).periodic
        assert build_mesh(("regular_ngon", 4, 1.0), 2).n_triangles == 16
        with pytest.raises(ValueError):
            build_mesh("hexagoat", 3)

    def test_resolution_validation(self):
        with pytest.raises(ValueError):
            build_unit_square(1)
        with pytest.raises(MeshBudgetError):
            build_unit_square(1500)


class TestFields:
    def test_affine_gradient_exact(self):
        m = build_unit_square(6)
        f = ScalarFieldP1(m, 3.0 * m.vertices[:, 0] - 2.0 * m.vertices[:, 1])
        g = element_gradient(f)
        assert np.abs(g - np.array([3.0, -2.0])).max() < 1e-13

    def test_coordinate_and_constant_gradients(self):
        m = build_regular_ngon(5, 1.0, 4)
        fx = ScalarFieldP1(m, m.vertices[:, 0].copy())
        assert np.abs(element_gradient(fx) - np.array([1.0, 0.0])).max() < 1e-13
        fc = ScalarFieldP1(m, np.full(m.n_vertices, 4.2))
        assert np.abs(element_gradient(fc)).max() < 1e-13

    def test_field_shape_validation(self):
        m = build_unit_square(2)
        with pytest.raises(ValueError):
            ScalarFieldP1(m, np.zeros(5))
        with pytest.raises(ValueError):
            ElementMatrixField(m, np.zeros((3, 2, 2)))


class TestDyadicSquares:
    def test_counts(self):
        m = build_unit_square(8)
        assert len(dyadic_squares(m, 0).squares) == 1
        assert len(dyadic_squares(m, 2).squares) == 21

    def test_membership_partitions_every_level(self):
        m = build_unit_square(12)
        ds = dyadic_squares(m, 3)
        for level in range(4):
            members = np.concatenate(
                [s.elements for s in ds.squares if s.level == level]
            )
            assert len(members) == m.n_triangles
            assert len(np.unique(members)) == m.n_triangles
            area = sum(s.area for s in ds.squares if s.level == level)
            assert abs(area - 1.0) < 1e-12

    def test_too_few_flag(self):
        m = build_unit_square(8)
        ds = dyadic_squares(m, 4)
        # level 4 squares on a res-8 mesh hold 2*(8/16)^2 < 8 triangles
        assert all(s.too_few for s in ds.squares if s.level == 4)
        assert not any(s.too_few for s in ds.squares if s.level <= 2)

    def test_twice_inside_flags(self):
        m = build_unit_square(16)
        ds = dyadic_squares(m, 2)
        assert not any(s.twice_inside for s in ds.squares if s.level <= 1)
        inner = [s for s in ds.squares if s.level == 2 and s.twice_inside]
        assert len(inner) == 4

    def test_periodic_cell_all_twice_inside(self):
        m = build_periodic_cell(16)
        ds = dyadic_squares(m, 2)
        assert all(s.twice_inside for s in ds.squares)

    def test_bounding_square_mode_for_custom_mesh(self):
        # squares over the bounding square of a polygon mesh still partition;
        # the diamond (4-gon) admits double squares from level 3 on
        m = build_regular_ngon(4, 1.0, 8)
        ds = dyadic_squares(m, 3)
        members = np.concatenate([s.elements for s in ds.squares if s.level == 2])
        assert len(np.unique(members)) == m.n_triangles
        assert sum(1 for s in ds.squares if s.level == 3 and s.twice_inside) == 8
        assert not any(s.twice_inside for s in ds.squares if s.level <= 2)


class TestCsvExport:
    def test_column_order_and_determinism(self, tmp_path):
        m = build_unit_square(2)
        p1 = tmp_path / "v1.csv"
        p2 = tmp_path / "v2.csv"
        export_vertices_csv(m, p1)
        export_vertices_csv(m, p2)
        assert p1.read_bytes() == p2.read_bytes()
        lines = p1.read_text().splitlines()
        assert lines[0] == "index,x,y"
        assert lines[1].startswith("0,0.0,0.0")

    def test_value_tables(self, tmp_path):
        m = build_unit_square(2)
        export_triangles_csv(m, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "index,v0,v1,v2"
        export_vertex_values_csv(m, m.vertices[:, 0], tmp_path / "f.csv", name="u")
        head = (tmp_path / "f.csv").read_text().splitlines()[0]
        assert head == "index,x,y,u"
        export_element_values_csv(m, m.areas, tmp_path / "a.csv", name="area")
        head = (tmp_path / "a.csv").read_text().splitlines()[0]
        assert head == "index,x,y,area"
