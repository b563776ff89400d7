"""Test the sweep expansion and dispatch.
"""

import doctest
import pathlib
import unittest

from nudgelab import fake_field
from nudgelab.errors import ConfigError
from nudgelab.utils import sweep


def load_tests(loader, tests, ignore):
    tests.addTests(doctest.DocTestSuite(sweep))
    return tests


def _record(job_id: int, overrides: dict, path: pathlib.Path) -> int:
    path.mkdir(parents=True)
    (path / "job.txt").write_text(f"{job_id} {sorted(overrides.items())}", encoding="utf-8")
    return job_id % 2


class TestParseSweep(unittest.TestCase):

    def test_product(self):
        jobs = sweep.parse_sweep("assimilation.mu=1,2,4;cover.cells=8,16")
        self.assertEqual(len(jobs), 6)
        self.assertEqual(jobs[0], {"assimilation.mu": 1, "cover.cells": 8})
        self.assertEqual(jobs[1], {"assimilation.mu": 1, "cover.cells": 16})
        self.assertEqual(jobs[-1], {"assimilation.mu": 4, "cover.cells": 16})

    def test_values_parsed(self):
        jobs = sweep.parse_sweep("run.horizon=0.5; interpolant.kinds=volavg0")
        self.assertEqual(jobs, [{"run.horizon": 0.5, "interpolant.kinds": "volavg0"}])

    def test_trailing_separator(self):
        self.assertEqual(len(sweep.parse_sweep("seed=1,2;")), 2)

    def test_malformed(self):
        for spec in ("", ";", "seed", "seed=", "=1,2"):
            with self.assertRaises(ConfigError, msg=spec):
                sweep.parse_sweep(spec)

    def test_repeated_key(self):
        with self.assertRaises(ConfigError) as ctx:
            sweep.parse_sweep("seed=1;seed=2")
        self.assertEqual(ctx.exception.key, "seed")


class TestRunSweep(fake_field.TestWithTempDir):

    def test_dispatch(self):
        jobs = sweep.parse_sweep("seed=0,1,2")
        codes = sweep.run_sweep(jobs, _record, self.tmp_dir, max_workers=2)
        self.assertEqual(codes, [0, 1, 0])
        for i, path in enumerate(sweep.job_dirs(self.tmp_dir, 3)):
            self.assertEqual(path.name, f"job_{i}")
            self.assertTrue((path / "job.txt").read_text(encoding="utf-8").startswith(str(i)))


if __name__ == "__main__":
    unittest.main()
