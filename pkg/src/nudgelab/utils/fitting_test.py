"""Tests for the fitting helpers.
"""

import math
import unittest

import numpy as np

from nudgelab.utils import fitting


class TestFitLine(unittest.TestCase):

    def test_exact_line(self):
        x = np.linspace(0, 1, 11)
        fit = fitting.fit_line(x, -3.0 * x + 0.5)
        self.assertAlmostEqual(fit.slope, -3.0)
        self.assertAlmostEqual(fit.intercept, 0.5)
        self.assertLess(fit.residual, 1e-12)
        self.assertEqual(fit.points, 11)

    def test_too_few(self):
        with self.assertRaises(ValueError):
            fitting.fit_line([1.0], [2.0])


class TestLoglogSlope(unittest.TestCase):

    def test_power_law(self):
        h = np.array([1.0, 0.5, 0.25, 0.125])
        fit = fitting.loglog_slope(h, 7.0 * h**3)
        self.assertAlmostEqual(fit.slope, 3.0)
        self.assertEqual(fit.excluded, ())

    def test_floor_excludes(self):
        h = np.array([1.0, 0.5, 0.25, 0.125])
        fit = fitting.loglog_slope(h, np.array([1.0, 0.25, 0.0625, 1e-14]))
        self.assertAlmostEqual(fit.slope, 2.0)
        self.assertEqual(fit.excluded, (3,))

    def test_all_below_floor(self):
        with self.assertLogs("nudgelab.utils.fitting", level="WARNING"):
            fit = fitting.loglog_slope([1.0, 0.5], [0.0, 0.0])
        self.assertTrue(math.isnan(fit.slope))


if __name__ == "__main__":
    unittest.main()
