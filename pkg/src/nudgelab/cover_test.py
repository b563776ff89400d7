"""Tests for covers and their overlap bookkeeping.
"""

import json
import math
import unittest

import numpy as np

from nudgelab import cover, fake_field, spectral
from nudgelab.errors import CoverError
from nudgelab.spectral import TWO_PI


class TestSubdomain(unittest.TestCase):

    def test_geometry(self):
        cell = cover.Subdomain((1.0, 2.0), (0.5, 1.0), 0.25)
        self.assertEqual(cell.collared_sides, (1.0, 1.5))
        self.assertAlmostEqual(cell.diameter, math.hypot(1.0, 1.5))
        self.assertEqual(cell.ramps, (0.25,) * 4)
        self.assertAlmostEqual(cell.collared_region().anchor[0], 0.75)
        core = cell.plateau_region()
        self.assertAlmostEqual(core.sides[0], 0.0)
        self.assertAlmostEqual(core.sides[1], 0.5)

    def test_anchor_wraps(self):
        cell = cover.Subdomain((TWO_PI + 1.0, -1.0), (1.0, 1.0), 0.1)
        self.assertAlmostEqual(cell.anchor[0], 1.0)
        self.assertAlmostEqual(cell.anchor[1], TWO_PI - 1.0)

    def test_collar_capped(self):
        cell = cover.Subdomain((0.0, 0.0), (TWO_PI, 1.0), 0.5)
        self.assertTrue(cell.full_axis(0))
        self.assertEqual(cell.collared_sides[0], TWO_PI)
        self.assertEqual(cell.collared_region().anchor[0], 0.0)

    def test_invalid(self):
        with self.assertRaises(CoverError):
            cover.Subdomain((0.0, 0.0), (0.0, 1.0), 0.1)
        with self.assertRaises(CoverError):
            cover.Subdomain((0.0, 0.0), (1.0, 1.0), 0.0)
        with self.assertRaises(CoverError):
            cover.Subdomain((0.0, 0.0), (1.0, 1.0), 0.1, ramps=(0.2, 0.1, 0.1, 0.1))
        with self.assertRaises(CoverError):
            cover.Subdomain((0.0, 0.0), (0.3, 1.0), 0.2)


class TestUniformCover(unittest.TestCase):

    def test_single_cell(self):
        one = cover.uniform_cover(1)
        self.assertEqual(len(one), 1)
        self.assertEqual(one.pi0, 1)
        self.assertAlmostEqual(one.uniform_scale, TWO_PI * math.sqrt(2))

    def test_four_by_four(self):
        grid = cover.uniform_cover(4)
        self.assertEqual(len(grid), 16)
        self.assertEqual(grid.pi0, 9)
        self.assertAlmostEqual(grid.uniform_scale, 3 * math.pi / 4 * math.sqrt(2))
        self.assertTrue(grid.covers_torus())

    def test_two_by_two(self):
        self.assertEqual(cover.uniform_cover(2).pi0, 4)

    def test_delta_adic(self):
        report = cover.check_delta_adic(cover.uniform_cover(8))
        self.assertTrue(report.passed)
        self.assertAlmostEqual(report.worst_ratio, 1.0)

    def test_invalid(self):
        with self.assertRaises(CoverError):
            cover.uniform_cover(0)
        with self.assertRaises(CoverError):
            cover.uniform_cover(4, collar_fraction=0.5)


class TestDyadicCover(unittest.TestCase):

    def test_widths(self):
        for levels in (1, 2, 3, 4):
            self.assertAlmostEqual(sum(cover.dyadic_widths(levels)), TWO_PI)

    def test_delta_adic(self):
        for levels in (2, 3):
            dyadic = cover.dyadic_cover(levels)
            report = cover.check_delta_adic(dyadic)
            self.assertTrue(report.passed, msg=f"levels={levels}")
            self.assertLessEqual(report.worst_ratio, 2.0 + 1e-12)
            self.assertGreater(report.worst_ratio, 1.0)
            self.assertLessEqual(dyadic.pi0, cover.MAX_OVERLAP)
            self.assertTrue(dyadic.covers_torus())
            self.assertIsNone(dyadic.uniform_scale)

    def test_not_uniformly_adic(self):
        self.assertFalse(cover.check_delta_adic(cover.dyadic_cover(3), 1.0).passed)

    def test_one_level(self):
        self.assertEqual(len(cover.dyadic_cover(1)), 1)


class TestCoverage(unittest.TestCase):

    def test_gap(self):
        cells = (
            cover.Subdomain((0.0, 0.0), (3.0, TWO_PI), 0.2),
            cover.Subdomain((3.2, 0.0), (TWO_PI - 3.2, TWO_PI), 0.2),
        )
        self.assertFalse(cover.Cover(cells).covers_torus())

    def test_empty(self):
        with self.assertRaises(CoverError):
            cover.Cover(())


class TestMultiplicity(unittest.TestCase):

    def test_uniform(self):
        report = cover.partition_multiplicity(cover.uniform_cover(4))
        self.assertEqual(report.multiplicity, 1)
        self.assertTrue(report.passed)
        self.assertEqual(report.status, "determined")

    def test_staggered(self):
        staggered = cover.staggered_cover(2)
        report = cover.partition_multiplicity(staggered)
        self.assertEqual(report.multiplicity, 4)
        self.assertEqual(len(report.classes), 4)
        self.assertTrue(report.passed)

    def test_sandwich_with_function(self):
        grid = spectral.Grid(64)
        x, y = grid.mesh()
        phi = 1.0 + 0.5 * np.sin(x) * np.cos(2 * y)
        report = cover.partition_multiplicity(cover.staggered_cover(2), phi, grid)
        self.assertTrue(report.passed)
        for lemma in report.sandwich:
            self.assertLessEqual(lemma.lower, lemma.value + 1e-9)

    def test_undetermined(self):
        cells = (
            cover.Subdomain((0.0, 0.0), (4.0, TWO_PI), 0.2),
            cover.Subdomain((3.0, 0.0), (TWO_PI - 3.0, TWO_PI), 0.2),
        )
        with self.assertLogs("nudgelab.cover", level="WARNING"):
            report = cover.partition_multiplicity(cover.Cover(cells))
        self.assertIsNone(report.multiplicity)
        self.assertEqual(report.status, "multiplicity undetermined")
        self.assertFalse(report.passed)

    def test_collar_lemma(self):
        grid = spectral.Grid(64)
        x, y = grid.mesh()
        phi = np.exp(np.sin(x) + np.cos(y))
        for tiling in (cover.uniform_cover(4), cover.dyadic_cover(2)):
            report = cover.check_multiplicity_lemma(tiling, grid, phi)
            self.assertTrue(report.passed, msg=tiling.name)

    def test_collar_lemma_constant(self):
        # 16 collared cells of side 3/4 pi against the torus area
        report = cover.check_multiplicity_lemma(cover.uniform_cover(4), spectral.Grid(64))
        self.assertAlmostEqual(report.upper, 9 * np.pi**2, places=9)
        self.assertAlmostEqual(report.value, 4 * np.pi**2, places=9)
        self.assertAlmostEqual(report.lower, np.pi**2, places=9)
        self.assertTrue(report.passed)

    def test_collar_lemma_rejects_negative(self):
        grid = spectral.Grid(16)
        with self.assertRaises(ValueError):
            cover.check_multiplicity_lemma(cover.uniform_cover(2), grid, -np.ones(grid.shape))


class TestLemmaReport(unittest.TestCase):

    def test_passed_and_strict(self):
        self.assertTrue(cover.LemmaReport("a", 1.0, 2.0, 3.0).strict)
        edge = cover.LemmaReport("b", 1.0, 1.0, 3.0)
        self.assertTrue(edge.passed)
        self.assertFalse(edge.strict)
        self.assertFalse(cover.LemmaReport("c", 1.0, 4.0, 3.0).passed)


class TestCoverFiles(fake_field.TestWithTempDir):

    def test_roundtrip_uniform(self):
        path = self.tmp_dir / "cover.json"
        original = cover.uniform_cover(4)
        cover.save_cover(original, path)
        loaded = cover.load_cover(path)
        self.assertEqual(loaded.subdomains, original.subdomains)
        self.assertEqual(loaded.name, "cover")
        self.assertAlmostEqual(loaded.uniform_scale, original.uniform_scale)
        self.assertAlmostEqual(loaded.delta, 1.0)

    def test_roundtrip_dyadic(self):
        path = self.tmp_dir / "dyadic.json"
        cover.save_cover(cover.dyadic_cover(2), path)
        loaded = cover.load_cover(path)
        self.assertIsNone(loaded.uniform_scale)
        self.assertAlmostEqual(loaded.delta, cover.check_delta_adic(cover.dyadic_cover(2)).worst_ratio)

    def test_hand_written(self):
        path = self.tmp_dir / "hand.json"
        path.write_text(json.dumps([{"anchor": [0, 0], "sides": [TWO_PI, TWO_PI], "collar": 1.0}]))
        loaded = cover.load_cover(path, name="whole")
        self.assertEqual(loaded.name, "whole")
        self.assertEqual(loaded[0].ramps, (1.0,) * 4)

    def test_malformed(self):
        path = self.tmp_dir / "bad.json"
        path.write_text(json.dumps([{"anchor": [0, 0]}]))
        with self.assertRaises(CoverError):
            cover.load_cover(path)


if __name__ == "__main__":
    unittest.main()
