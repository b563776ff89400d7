"""Tests for the assembled global interpolants.
"""

import unittest

import numpy as np

from nudgelab import cover, fake_field, interpolant, local, pou, spectral
from nudgelab.errors import CoverError, OrderError


def _smooth_field(n: int = 64) -> spectral.SpectralField:
    return fake_field.FakeModes(spectral.Grid(n), [(1, 2, 1.0, 0.4), (2, 1, 0.5, 1.1)]).field()


class TestAssemble(unittest.TestCase):

    def test_single_spectral_cell(self):
        interp = interpolant.uniform_family(local.spectral_local(4), 1)
        self.assertIs(interp.category, interpolant.FamilyCategory.REPEATED_UNIFORM)
        self.assertEqual((interp.m, interp.k), (2, 3))
        self.assertTrue(interp.generic)
        self.assertTrue(interp.optimal)

    def test_repeated_volavg(self):
        interp = interpolant.uniform_family(local.volavg0(), 4)
        self.assertIs(interp.category, interpolant.FamilyCategory.REPEATED_UNIFORM)
        self.assertEqual(interp.rank, 16)
        self.assertEqual((interp.m, interp.k), (0, 1))

    def test_hybrid(self):
        tiling = cover.uniform_cover(4)
        ops = [local.lagrange(2) if q % 2 else local.taylor1() for q in range(len(tiling))]
        interp = interpolant.assemble(tiling, pou.build_pou(tiling), ops)
        self.assertIs(interp.category, interpolant.FamilyCategory.HYBRID_UNIFORM)
        self.assertEqual((interp.m, interp.k), (1, 3))
        self.assertTrue(interp.generic)
        self.assertFalse(interp.optimal)
        self.assertEqual(interp.locals[1], local.lagrange(2, order=1))
        self.assertEqual(interp.canonical[1], local.lagrange(2))

    def test_nonuniform(self):
        tiling = cover.dyadic_cover(2)
        interp = interpolant.assemble(tiling, pou.build_pou(tiling), local.volavg0())
        self.assertIs(interp.category, interpolant.FamilyCategory.REPEATED_NONUNIFORM)
        self.assertAlmostEqual(interp.scale, tiling.diameters.max())

    def test_count_mismatch(self):
        tiling = cover.uniform_cover(2)
        with self.assertRaises(CoverError):
            interpolant.assemble(tiling, pou.build_pou(tiling), [local.volavg0()] * 3)

    def test_foreign_partition(self):
        with self.assertRaises(CoverError):
            interpolant.assemble(
                cover.uniform_cover(2), pou.build_pou(cover.uniform_cover(4)), local.volavg0()
            )


class TestApply(unittest.TestCase):

    def test_spectral_single_cell_is_exact(self):
        grid = spectral.Grid(32)
        field = spectral.random_field(grid, 4, np.random.default_rng(2))
        interp = interpolant.uniform_family(local.spectral_local(4), 1)
        np.testing.assert_allclose(interpolant.apply_global(interp, field), field.physical(), atol=1e-12)
        self.assertLess(interpolant.global_error(interp, field, 0), 1e-12)

    def test_constants_reproduced(self):
        grid = spectral.Grid(64)
        values = np.full(grid.shape, 2.5)
        for op in (local.volavg0(), local.nodal0(), local.lagrange(2), local.taylor1()):
            interp = interpolant.uniform_family(op, 4)
            np.testing.assert_allclose(interpolant.apply_global(interp, values), 2.5, atol=1e-12, err_msg=op.label)

    def test_volavg_matches_direct_blend(self):
        grid = spectral.Grid(64)
        x, _ = grid.mesh()
        phi = np.sin(x)
        interp = interpolant.uniform_family(local.volavg0(), 4)
        expected = np.zeros(grid.shape)
        for q, cell in enumerate(interp.cover):
            average = spectral.region_integral(phi, grid, cell.region()) / cell.area
            expected += interp.pou.evaluate(q, grid) * average
        np.testing.assert_allclose(interpolant.apply_global(interp, phi), expected, atol=1e-12)

    def test_linear(self):
        grid = spectral.Grid(64)
        rng = np.random.default_rng(4)
        phi = spectral.random_field(grid, 6, rng).physical()
        psi = spectral.random_field(grid, 6, rng).physical()
        interp = interpolant.uniform_family(local.lagrange(2), 4)
        combined = interpolant.apply_global(interp, 2.0 * phi - 3.0 * psi)
        separate = 2.0 * interpolant.apply_global(interp, phi) - 3.0 * interpolant.apply_global(interp, psi)
        np.testing.assert_allclose(combined, separate, atol=1e-12)

    def test_derivative_matches_differences(self):
        grid = spectral.Grid(128)
        interp = interpolant.uniform_family(local.lagrange(1), 2)
        field = _smooth_field(128)
        values = interpolant.apply_global(interp, field)
        derivative = interpolant.apply_global(interp, field, (1, 0))
        dx = grid.dx
        numeric = (
            -np.roll(values, -2, axis=0)
            + 8 * np.roll(values, -1, axis=0)
            - 8 * np.roll(values, 1, axis=0)
            + np.roll(values, 2, axis=0)
        ) / (12 * dx)
        np.testing.assert_allclose(derivative, numeric, atol=1e-2 * np.abs(derivative).max())

    def test_smoothness_limit(self):
        interp = interpolant.uniform_family(local.volavg0(), 2)
        with self.assertRaises(ValueError):
            interpolant.apply_global(interp, np.zeros((16, 16)), (3, 2))


class TestMeanFree(unittest.TestCase):

    def setUp(self):
        self.interp = interpolant.uniform_family(local.volavg0(), 4)
        self.grid = spectral.Grid(64)

    def test_zero(self):
        np.testing.assert_array_equal(interpolant.mean_free(self.interp, np.zeros(self.grid.shape)), 0.0)

    def test_zero_mean(self):
        x, y = self.grid.mesh()
        values = interpolant.mean_free(self.interp, 1.0 + np.sin(x) * np.cos(y) + np.cos(x))
        self.assertLess(abs(values.mean()), 1e-14)

    def test_gradient_unchanged(self):
        field = _smooth_field()
        for alpha in [(1, 0), (0, 1)]:
            np.testing.assert_allclose(
                interpolant.mean_free(self.interp, field, alpha),
                interpolant.apply_global(self.interp, field, alpha),
                atol=1e-12,
            )


class TestErrorReports(unittest.TestCase):

    def test_verify_global_error(self):
        field = _smooth_field()
        interp = interpolant.uniform_family(local.volavg0(), 4)
        report = interpolant.verify_global_error(interp, field, 0, ensemble_size=2)
        self.assertGreater(report.lhs, 0.0)
        self.assertGreater(report.rhs, 0.0)
        self.assertTrue(np.isfinite(report.ratio))
        records = report.records()
        self.assertEqual([r["j"] for r in records], [1])
        self.assertEqual(set(records[0]), {"ell", "j", "h", "lhs", "rhs", "ratio"})

    def test_order_violation(self):
        interp = interpolant.uniform_family(local.volavg0(), 4)
        with self.assertRaises(OrderError):
            interpolant.verify_global_error(interp, _smooth_field(), 1)

    def test_shared_constants(self):
        interp = interpolant.uniform_family(local.lagrange(1), 4)
        constants = interpolant.estimate_family_constants(interp, spectral.Grid(64), ensemble_size=2)
        self.assertEqual(len(constants), 16)
        for table in constants[1:]:
            self.assertEqual(table.values, constants[0].values)

    def test_boundedness_identity(self):
        interp = interpolant.uniform_family(local.spectral_local(8), 1)
        rows = interpolant.verify_boundedness(interp, spectral.Grid(64), ensemble_size=3)
        self.assertEqual([row.ell for row in rows], [0, 1])
        for row in rows:
            self.assertLessEqual(row.ratio, 1 + 1e-10)

    def test_boundedness_volavg(self):
        interp = interpolant.uniform_family(local.volavg0(), 8)
        rows = interpolant.verify_boundedness(interp, spectral.Grid(64), ells=(0,), ensemble_size=3)
        self.assertTrue(np.isfinite(rows[0].ratio))
        self.assertGreater(rows[0].ratio, 0.0)


class TestConvergenceStudy(unittest.TestCase):

    def setUp(self):
        self.field = _smooth_field(128)

    def test_volavg_first_order(self):
        rows, fit = interpolant.convergence_study(local.volavg0(), self.field, 0)
        self.assertEqual([row.cells_per_axis for row in rows], [4, 8, 16, 32])
        self.assertGreater(fit.slope, 0.7)
        self.assertLess(fit.slope, 1.3)

    def test_lagrange2_third_order(self):
        _, fit = interpolant.convergence_study(local.lagrange(2), self.field, 0)
        self.assertGreater(fit.slope, 2.5)

    def test_needs_four_levels(self):
        with self.assertRaises(ValueError):
            interpolant.convergence_study(local.volavg0(), self.field, 0, (4, 8))


if __name__ == "__main__":
    unittest.main()
