import numpy as np
import pytest

from beltramilab.coefficients import (
    checkerboard_field,
    constant_field,
    hall_laminate_field,
    laminate_field,
    random_piecewise_field,
)
from beltramilab.grid import ScalarFieldP1, build_periodic_cell, build_unit_square
from beltramilab.homogenization import (
    area_formula_check,
    cell_complex_map,
    cell_map,
    effective_conductivity,
    image_area,
    mean_matrices,
)
from beltramilab.sigma_harmonic import injectivity_check, make_map


class TestEffectiveConductivity:
    def test_constant_passthrough_including_antisymmetric_part(self):
        m = build_periodic_cell(8)
        mat = np.array([[2.0, 1.3], [0.1, 1.5]])
        eff = effective_conductivity(constant_field(m, mat))
        assert np.abs(eff.matrix - mat).max() < 1e-10

    def test_laminate_oracle(self):
        m = build_periodic_cell(32)
        eff = effective_conductivity(laminate_field(m, 1.0, 5.0))
        oracle = np.diag([5.0 / 3.0, 3.0])
        assert np.abs(eff.matrix - oracle).max() < 0.01 * 3.0

    def test_laminate_other_direction(self):
        m = build_periodic_cell(16)
        eff = effective_conductivity(laminate_field(m, 1.0, 5.0, direction="x2"))
        oracle = np.diag([3.0, 5.0 / 3.0])
        assert np.abs(eff.matrix - oracle).max() < 1e-9

    def test_checkerboard_duality(self):
        m = build_periodic_cell(64)
        eff = effective_conductivity(checkerboard_field(m, 1.0, 4.0))
        assert np.abs(eff.matrix - 2.0 * np.eye(2)).max() / 2.0 < 0.05
        # interchange spot check: det(sigma_eff(a,b) sigma_eff(b,a)) = (ab)^2
        eff_ba = effective_conductivity(checkerboard_field(m, 4.0, 1.0))
        det = np.linalg.det(eff.matrix @ eff_ba.matrix)
        assert abs(det - 16.0) / 16.0 < 0.05

    def test_antisymmetric_laminate_closed_form(self):
        # strips of [[1, +/-c], [-/+c, 1]] homogenize to diag(1, 1 + c^2):
        # the effective tensor exceeds the arithmetic mean of the symmetric
        # parts, so the upper sandwich bound genuinely fails here
        c = 0.5
        m = build_periodic_cell(16)
        eff = effective_conductivity(hall_laminate_field(m, c))
        oracle = np.diag([1.0, 1.0 + c * c])
        assert np.abs(eff.matrix - oracle).max() < 1e-9

    def test_energy_probe_matches_flux_tensor(self):
        # discrete identity: the corrector is orthogonal to the test space,
        # so the energy probes equal the flux quadratic form for any sigma
        m = build_periodic_cell(16)
        sig = random_piecewise_field(m, 5.0, 4, seed=12)
        eff = effective_conductivity(sig)
        assert eff.quadratic_form_gap() < 1e-10

    def test_voigt_reuss_sandwich(self):
        m = build_periodic_cell(16)
        for seed in range(5):
            sig = random_piecewise_field(m, 4.0, 4, seed=seed, symmetric=True)
            eff = effective_conductivity(sig)
            harm, arith = mean_matrices(sig)
            sym = 0.5 * (eff.matrix + eff.matrix.T)
            assert np.linalg.eigvalsh(sym - 0.5 * (harm + harm.T)).min() > -1e-9
            assert np.linalg.eigvalsh(0.5 * (arith + arith.T) - sym).min() > -1e-9

    def test_harmonic_lower_bound_nonsymmetric(self):
        m = build_periodic_cell(16)
        for seed in range(5):
            sig = random_piecewise_field(m, 4.0, 4, seed=seed, symmetric=False)
            eff = effective_conductivity(sig)
            harm, _ = mean_matrices(sig)
            sym = 0.5 * (eff.matrix + eff.matrix.T)
            assert np.linalg.eigvalsh(sym - 0.5 * (harm + harm.T)).min() > -1e-9


class TestCellMap:
    def test_identity_coefficient(self):
        m = build_periodic_cell(8)
        cm = cell_map(constant_field(m, np.eye(2)), np.eye(2))
        assert np.abs(cm.U.u1.values - m.vertices[:, 0]).max() < 1e-12
        assert np.abs(cm.U.u2.values - m.vertices[:, 1]).max() < 1e-12

    def test_linearity_scaling(self):
        m = build_periodic_cell(8)
        sig = random_piecewise_field(m, 4.0, 4, seed=2)
        cm1 = cell_map(sig, np.eye(2))
        cm2 = cell_map(sig, 2.0 * np.eye(2))
        assert cm2.linearity_error < 1e-9
        assert np.abs(cm2.U.u1.values - 2.0 * cm1.U.u1.values).max() < 1e-9

    def test_random_cell_map_homeomorphism(self):
        # blocks sized so the resolution resolves them (8 mesh cells each)
        m = build_periodic_cell(32)
        sig = random_piecewise_field(m, 5.0, 4, seed=3)
        cm = cell_map(sig, np.eye(2))
        assert cm.U.det_DU.min() > 0.0
        assert injectivity_check(cm.U) == (True, True)

    def test_singular_affine_part_still_solves(self):
        m = build_periodic_cell(8)
        sig = random_piecewise_field(m, 3.0, 4, seed=4)
        cm = cell_map(sig, np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert cm.linearity_error < 1e-9


class TestImageArea:
    def test_identity_cell(self):
        m = build_periodic_cell(8)
        cm = cell_map(constant_field(m, np.eye(2)), np.eye(2))
        assert image_area(cm.U) == pytest.approx(1.0, abs=1e-12)

    def test_affine_region(self):
        m = build_unit_square(8)
        A = np.array([[2.0, 1.0], [0.0, 1.5]])
        sig = constant_field(m, np.eye(2))
        aff = make_map(
            ScalarFieldP1(m, m.vertices @ A[0]),
            ScalarFieldP1(m, m.vertices @ A[1]),
            sig,
        )
        region = np.arange(0, m.n_triangles, 2)
        expected = np.linalg.det(A) * m.areas[region].sum()
        assert image_area(aff, region) == pytest.approx(expected, rel=1e-12)

    def test_laminate_area_equals_quadratic_form(self):
        m = build_periodic_cell(64)
        sig = laminate_field(m, 1.0, 5.0)
        eff = effective_conductivity(sig)
        f1, _ = cell_complex_map(sig, np.array([1.0, 0.0]))
        area = image_area(f1)
        qf = eff.matrix[0, 0]
        assert abs(area - qf) / qf < 0.02

    def test_non_injective_warns_with_corrected_estimate(self):
        m = build_unit_square(8)
        sig = constant_field(m, np.eye(2))
        fold = make_map(
            ScalarFieldP1(m, m.vertices[:, 0].copy()),
            ScalarFieldP1(m, np.abs(m.vertices[:, 1] - 0.5)),
            sig,
        )
        unsigned, corrected, injective = image_area(fold, detailed=True)
        assert not injective
        assert unsigned == pytest.approx(1.0)          # both folds counted
        assert corrected == pytest.approx(0.0, abs=1e-12)  # signed cancellation


class TestAreaFormula:
    def test_constant_function_reduces_to_image_area(self):
        m = build_unit_square(8)
        sig = constant_field(m, np.eye(2))
        ident = make_map(
            ScalarFieldP1(m, m.vertices[:, 0].copy()),
            ScalarFieldP1(m, m.vertices[:, 1].copy()),
            sig,
        )
        lhs, rhs, gap = area_formula_check(ident, lambda y: np.ones(len(y)))
        assert gap < 1e-10
        assert lhs == pytest.approx(image_area(ident), rel=1e-12)

    def test_linear_function_identity_map(self):
        m = build_unit_square(8)
        sig = constant_field(m, np.eye(2))
        ident = make_map(
            ScalarFieldP1(m, m.vertices[:, 0].copy()),
            ScalarFieldP1(m, m.vertices[:, 1].copy()),
            sig,
        )
        lhs, rhs, gap = area_formula_check(ident, lambda y: y[:, 0])
        assert lhs == pytest.approx(0.5, abs=1e-12)
        assert rhs == pytest.approx(0.5, abs=1e-12)

    def test_quadratic_function_converges(self):
        gaps = []
        for n in (16, 32, 64):
            m = build_periodic_cell(n)
            sig = laminate_field(m, 1.0, 5.0)
            f1, _ = cell_complex_map(sig, np.array([1.0, 0.0]))
            _, _, gap = area_formula_check(f1, lambda y: y[:, 0] ** 2)
            gaps.append(gap)
        assert gaps[2] < gaps[0]
        assert gaps[2] < 0.02
