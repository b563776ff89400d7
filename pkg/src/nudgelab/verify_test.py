"""Tests for the verification suite.
"""

import dataclasses
import unittest

from nudgelab import cover, verify
from nudgelab.errors import ConfigError

EXACT = ("pou-sum", "gapped-cover", "unisolvence", "leray", "parseval", "energy-orthogonality", "spectral-exactness")


class TestRunSuite(unittest.TestCase):

    def test_exact_checks_pass(self):
        results = verify.run_suite(32, EXACT)
        self.assertGreater(len(results), len(EXACT))
        for row in results:
            self.assertTrue(row.passed, msg=f"{row.check}: {row.value} > {row.bound}")

    def test_subset_order(self):
        results = verify.run_suite(16, ("parseval", "leray"))
        self.assertEqual([row.check for row in results], ["parseval", "leray-idempotence", "leray-divergence"])

    def test_extra_cover(self):
        extra = dataclasses.replace(cover.uniform_cover(2), name="extra")
        results = verify.run_suite(32, ("pou-sum", "pou-plateau"), cover=extra)
        names = [row.check for row in results]
        self.assertIn("pou-sum extra", names)
        self.assertIn("pou-plateau extra", names)
        self.assertTrue(all(row.passed for row in results))

    def test_unknown_check(self):
        with self.assertRaises(ConfigError) as ctx:
            verify.run_suite(16, ("parseval", "nope"))
        self.assertEqual(ctx.exception.key, "verify.checks")
        self.assertIn("nope", str(ctx.exception))

    def test_failures_logged(self):
        with self.assertLogs("nudgelab.verify", level="INFO") as logs:
            verify.run_suite(16, ("gapped-cover",))
        self.assertIn("1 passed, 0 failed", logs.output[-1])

    def test_deterministic(self):
        first = verify.run_suite(16, ("pou-blend",), seed=3)
        second = verify.run_suite(16, ("pou-blend",), seed=3)
        self.assertEqual(first, second)


class TestCheckResult(unittest.TestCase):

    def test_at_most(self):
        self.assertTrue(verify.CheckResult.at_most("x", 1.0, 1.0).passed)
        self.assertFalse(verify.CheckResult.at_most("x", 1.5, 1.0).passed)
        self.assertIsInstance(verify.CheckResult.at_most("x", 1, 2).value, float)


if __name__ == "__main__":
    unittest.main()
