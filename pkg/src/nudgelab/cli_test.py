"""Tests for the CLI module.
"""

import io
import json
import pathlib
import unittest
from unittest import mock

import polars as pl

import nudgelab
from nudgelab import cli, cover, fake_field, manifest, snapshot

SMALL_RUN = """
seed = 3

[grid]
n = 32

[forcing]
grashof = 5.0

[run]
horizon = 1.0
save_interval = 0.25
spin_up = 0.5
window = 2
snapshot_every = 2

[cover]
cells = 4

[assimilation]
mu = 5.0

[study]
operators = ["volavg0", "lagrange(1)"]
ells = [0, 2]
cells = [4, 8, 16, 32]
n = 128
ensemble_size = 2

[verify]
n = 32
checks = ["pou-sum", "leray", "parseval"]
"""


class TestNudgelabArgsParser(unittest.TestCase):

    def test_help_message(self):
        with self.assertRaises(SystemExit):
            cli.NudgelabArgumentParser().parse_args(["--help"])

    def test_command(self):
        for command in cli.Command:
            args = cli.NudgelabArgumentParser().parse_args([str(command)])
            self.assertIs(args.command, command)

    def test_command_case_insensitive(self):
        args = cli.NudgelabArgumentParser().parse_args(["Interp_Study"])
        self.assertIs(args.command, cli.Command.INTERP_STUDY)

    def test_unknown_command(self):
        with mock.patch("sys.stderr", new=io.StringIO()):
            with self.assertRaises(SystemExit):
                cli.NudgelabArgumentParser().parse_args(["forecast"])

    def test_missing_command(self):
        with mock.patch("sys.stderr", new=io.StringIO()):
            with self.assertRaises(SystemExit):
                cli.NudgelabArgumentParser().parse_args([])

    def test_defaults(self):
        args = cli.NudgelabArgumentParser().parse_args(["simulate"])
        self.assertEqual(args.log_level, "warning")
        self.assertIsNone(args.config)
        self.assertIsNone(args.seed)
        self.assertEqual(args.out, pathlib.Path("out"))
        self.assertIsNone(args.sweep)
        self.assertIsNone(args.jobs)

    def test_log_level(self):
        for level in ["debug", "info", "warning", "error"]:
            parser = cli.NudgelabArgumentParser()
            args = parser.parse_args(["--log-level", level, "verify"])
            self.assertEqual(args.log_level, level)

    def test_options(self):
        args = cli.NudgelabArgumentParser().parse_args(
            [
                "--config", "run.toml",
                "--seed", "7",
                "--out", "runs/a",
                "--sweep", "seed=1,2",
                "--jobs", "2",
                "assimilate",
            ]  # fmt: skip
        )
        self.assertEqual(args.config, pathlib.Path("run.toml"))
        self.assertEqual(args.seed, 7)
        self.assertEqual(args.out, pathlib.Path("runs/a"))
        self.assertEqual(args.sweep, "seed=1,2")
        self.assertEqual(args.jobs, 2)

    def test_version(self):
        args = cli.NudgelabArgumentParser().parse_args(["--version"])
        self.assertEqual(args.version, True)

    def test_cant_parse_args_twice(self):
        parser = cli.NudgelabArgumentParser()
        parser.parse_args(["verify"])
        with self.assertRaises(RuntimeError):
            parser.parse_args(["verify"])


class TestMainVersion(unittest.TestCase):

    @mock.patch("sys.argv", ["nudgelab", "--version"])
    def test_version(self, *_):
        with mock.patch("sys.stdout", new=io.StringIO()) as mock_stdout:
            cli.main()
            self.assertEqual(mock_stdout.getvalue().strip(), nudgelab.__version__)


class TestCommands(fake_field.TestWithTempDir):

    def setUp(self):
        super().setUp()
        self.config = self.tmp_dir / "run.toml"
        self.config.write_text(SMALL_RUN, encoding="utf-8")
        self.out = self.tmp_dir / "out"

    def run_cli(self, *argv: str) -> tuple[int, str]:
        args = ["--config", str(self.config), "--out", str(self.out), *argv]
        with mock.patch("sys.stdout", new=io.StringIO()) as mock_stdout:
            parsed = cli.NudgelabArgumentParser().parse_args(args)
            code = cli.dispatch(parsed)
        return code, mock_stdout.getvalue()

    def assert_manifest(self, command: str, expected: set[str]):
        record = manifest.load_manifest(self.out)
        self.assertEqual(record.command, command)
        self.assertEqual(record.version, nudgelab.__version__)
        self.assertIsNotNone(record.finished)
        self.assertTrue(expected <= {entry["path"] for entry in record.outputs})
        self.assertEqual(manifest.verify_outputs(record, self.out), [])

    def test_verify(self):
        code, stdout = self.run_cli("verify")
        self.assertEqual(code, 0)
        table = pl.read_csv(self.out / "verify.csv")
        self.assertEqual(table.columns, ["check", "value", "bound", "passed"])
        self.assertTrue(table["passed"].all())
        self.assertIn(f"{table.height} passed, 0 failed", stdout)
        self.assert_manifest("verify", {"verify.csv"})

    def test_verify_unknown_check(self):
        self.config.write_text('[verify]\nchecks = ["pou-sum", "nope"]\n', encoding="utf-8")
        with mock.patch("sys.stderr", new=io.StringIO()) as mock_stderr:
            code, _ = self.run_cli("verify")
        self.assertEqual(code, cli.EXIT_CONFIG)
        self.assertIn("verify.checks", mock_stderr.getvalue())

    def test_verify_missing_cover(self):
        self.config.write_text(f'[verify]\ncover_path = "{self.tmp_dir / "none.json"}"\n', encoding="utf-8")
        with mock.patch("sys.stderr", new=io.StringIO()):
            code, _ = self.run_cli("verify")
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_verify_cover_file(self):
        path = self.tmp_dir / "cells.json"
        cover.save_cover(cover.uniform_cover(2), path)
        self.config.write_text(
            f'[verify]\nn = 32\nchecks = ["pou-sum"]\ncover_path = "{path}"\n', encoding="utf-8"
        )
        code, stdout = self.run_cli("verify")
        self.assertEqual(code, 0)
        self.assertIn("0 failed", stdout)
        snap = snapshot.load_snapshot(self.out / "pou.snap")
        self.assertIs(snap.kind, snapshot.SnapshotKind.POU)
        self.assertEqual(snap.data.shape, (4, 32, 32))
        self.assert_manifest("verify", {"verify.csv", "pou.snap"})

    def test_bad_config(self):
        self.config.write_text("[grid]\nn = 32\ncells = 4\n", encoding="utf-8")
        with mock.patch("sys.stderr", new=io.StringIO()) as mock_stderr:
            code, _ = self.run_cli("simulate")
        self.assertEqual(code, cli.EXIT_CONFIG)
        self.assertIn("grid.cells", mock_stderr.getvalue())
        self.assertIn("line 3", mock_stderr.getvalue())
        self.assertFalse(self.out.exists())

    def test_missing_config(self):
        self.config = self.tmp_dir / "absent.toml"
        with mock.patch("sys.stderr", new=io.StringIO()):
            code, _ = self.run_cli("simulate")
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_simulate(self):
        code, _ = self.run_cli("simulate")
        self.assertEqual(code, 0)
        series = pl.read_csv(self.out / "series.csv")
        self.assertEqual(series.height, 5)
        self.assertEqual(series.columns[:4], ["t", "l2", "h1", "h2"])
        ball = json.loads((self.out / "ball.json").read_text(encoding="utf-8"))
        self.assertIn(ball["status"], ("absorbed", "not absorbed"))
        self.assertIn("energy_balance_residual", ball)
        snaps = sorted((self.out / "snapshots").iterdir())
        self.assertEqual([p.name for p in snaps], ["u_000000.snap", "u_000002.snap", "u_000004.snap"])
        final = snapshot.load_snapshot(self.out / "final.snap")
        self.assertEqual(final.data.shape, (2, 32, 32))
        self.assertAlmostEqual(final.time, 1.0)
        self.assertEqual(final.meta["nu"], 0.1)
        self.assert_manifest("simulate", {"series.csv", "ball.csv", "ball.json", "final.snap"})

    def test_simulate_seed_override(self):
        self.run_cli("--seed", "11", "simulate")
        self.assertEqual(manifest.load_manifest(self.out).seed, 11)

    def test_simulate_reproducible(self):
        self.run_cli("simulate")
        first = (self.out / "series.csv").read_bytes()
        self.run_cli("simulate")
        self.assertEqual((self.out / "series.csv").read_bytes(), first)

    def test_assimilate(self):
        code, _ = self.run_cli("assimilate")
        self.assertEqual(code, 0)
        errors = pl.read_csv(self.out / "errors.csv")
        self.assertEqual(errors.columns, ["t", "e0", "e1"])
        self.assertEqual(errors.height, 5)
        self.assertLess(errors["e1"][-1], errors["e1"][0])
        conditions = json.loads((self.out / "conditions.json").read_text(encoding="utf-8"))
        self.assertEqual(conditions["mode"], "h1-baseline")
        fits = json.loads((self.out / "fits.json").read_text(encoding="utf-8"))
        self.assertEqual(set(fits), {"e0", "e1"})
        self.assertTrue((self.out / "observations.bin").exists())
        self.assert_manifest("assimilate", {"errors.csv", "conditions.json", "fits.json", "observations.bin"})

    def test_interp_study(self):
        with self.assertLogs("nudgelab.cli", level="WARNING") as logs:
            code, _ = self.run_cli("interp-study")
        self.assertEqual(code, 0)
        self.assertTrue(any("skipping ell=2" in line for line in logs.output))
        slopes = pl.read_csv(self.out / "slopes.csv")
        self.assertEqual(slopes.height, 2)
        volavg = slopes.filter(pl.col("operator") == "VolAvg0")
        self.assertAlmostEqual(volavg["expected"][0], 1.0)
        self.assertGreater(volavg["slope"][0], 0.7)
        convergence = pl.read_csv(self.out / "convergence.csv")
        self.assertEqual(convergence.height, 8)
        self.assertTrue((self.out / "global_error.csv").exists())
        self.assertTrue((self.out / "constants.csv").exists())
        self.assert_manifest("interp-study", {"slopes.csv", "convergence.csv"})

    def test_sweep(self):
        code, _ = self.run_cli("--sweep", "verify.n=16,32", "--jobs", "2", "verify")
        self.assertEqual(code, 0)
        for job in ("job_0", "job_1"):
            self.assertTrue((self.out / job / "verify.csv").exists())
            self.assertEqual(manifest.load_manifest(self.out / job).job, int(job[-1]))
        self.assertEqual(manifest.load_manifest(self.out / "job_1").config["verify"]["n"], 32)

    def test_sweep_bad_key(self):
        with mock.patch("sys.stderr", new=io.StringIO()):
            code, _ = self.run_cli("--sweep", "verify.size=16", "--jobs", "1", "verify")
        self.assertEqual(code, cli.EXIT_CONFIG)

    def test_main_exit_code(self):
        self.config.write_text("[forcing]\nstrength = 4.0\n", encoding="utf-8")
        argv = ["nudgelab", "--config", str(self.config), "--out", str(self.out), "simulate"]
        with mock.patch("sys.argv", argv), mock.patch("sys.stderr", new=io.StringIO()):
            with self.assertRaises(SystemExit) as ctx:
                cli.main()
        self.assertEqual(ctx.exception.code, cli.EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
