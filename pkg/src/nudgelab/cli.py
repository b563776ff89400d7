"""Module for argument parsing and CLI functionality.
"""

import argparse
import functools
import logging
import pathlib
import sys

import numpy as np
import polars as pl

import nudgelab
from nudgelab import (
    assimilation,
    config,
    cover,
    enum,
    interpolant,
    local,
    manifest,
    pou,
    snapshot,
    solver,
    spectral,
    tables,
    verify,
)
from nudgelab.errors import ConfigError, CoverError, NumericalInstability
from nudgelab.utils import sweep

logger = logging.getLogger("nudgelab.cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


class Command(enum.CiStrEnum):
    """Subcommands.

    +--------------+---------------------------------------------------------+
    | Value        | Outputs                                                 |
    +==============+=========================================================+
    | simulate     | norm series, absorbing ball report, velocity snapshots  |
    +--------------+---------------------------------------------------------+
    | assimilate   | error series, decay fits, conditions, observation log   |
    +--------------+---------------------------------------------------------+
    | interp-study | convergence and slope tables, global error reports      |
    +--------------+---------------------------------------------------------+
    | verify       | pass/fail table of the verification suite               |
    +--------------+---------------------------------------------------------+
    """

    SIMULATE = "simulate"
    ASSIMILATE = "assimilate"
    INTERP_STUDY = "interp-study"
    VERIFY = "verify"


class NudgelabArgumentParser(argparse.ArgumentParser):
    """Nudgelab argument parser.

    Subclass of :class:`argparse.ArgumentParser` that allows the required
    subcommand to be left out in the presence of the ``--version`` flag.

    .. warning::

        Due to the way this behavior is implemented, the
        :meth:`parse_args` method can only be called once, and calling
        twice will raise a :class:`RuntimeError`.

    The CLI ``--help`` message is shown below:

    .. code-block:: text

        usage: nudgelab [-h]
            [--log-level {debug,info,warning,error}]
            [--config CONFIG] [--seed SEED] [--out OUT]
            [--sweep SWEEP] [--jobs JOBS] [--version]
            {simulate,assimilate,interp-study,verify}

        Nudging data assimilation experiments for the 2D Navier-Stokes equations.

        positional arguments:
          {simulate,assimilate,interp-study,verify}
                                Experiment to run

        options:
          -h, --help            show this help message and exit
          --log-level {debug,info,warning,error}
                                Set the logging level (default: WARNING)
          --config CONFIG       Path to a TOML experiment config (default: built-in defaults)
          --seed SEED           Override the config seed
          --out OUT             Output directory (default: ./out)
          --sweep SWEEP         Sweep spec, e.g. "assimilation.mu=1,2;cover.cells=8,16"
          --jobs JOBS           Worker processes for sweeps (default: one per CPU)
          --version             Show program's version number and exit

    """

    def __init__(self):
        super(NudgelabArgumentParser, self).__init__(
            description="Nudging data assimilation experiments for the 2D Navier-Stokes equations.",
            prog="nudgelab",
        )
        self._add_optional_args()
        # hacky flag to make sure .parse_args() is called only once
        self.args_parsed = False

    def _add_optional_args(self):
        """Add optional arguments to the parser."""
        self.add_argument(
            "--log-level",
            type=str,
            choices=["debug", "info", "warning", "error"],
            default="warning",
            help="Set the logging level (default: WARNING)",
        )
        self.add_argument(
            "--config",
            type=pathlib.Path,
            default=None,
            help="Path to a TOML experiment config (default: built-in defaults)",
        )
        self.add_argument(
            "--seed",
            type=int,
            default=None,
            help="Override the config seed",
        )
        self.add_argument(
            "--out",
            type=pathlib.Path,
            default=pathlib.Path("out"),
            help="Output directory (default: ./out)",
        )
        self.add_argument(
            "--sweep",
            type=str,
            default=None,
            help='Sweep spec, e.g. "assimilation.mu=1,2;cover.cells=8,16"',
        )
        self.add_argument(
            "--jobs",
            type=int,
            default=None,
            help="Worker processes for sweeps (default: one per CPU)",
        )
        self.add_argument(
            "--version",
            action="store_true",
            help="Show program's version number and exit",
        )

    def _add_positional_args(self):
        # Positional arguments added if --version is not used
        self.add_argument(
            "command",
            type=Command,
            choices=list(Command),
            help="Experiment to run",
        )

    def parse_args(self, args=None, namespace=None):
        """Parse command-line arguments.

        If the ``--version`` flag is not used, then the subcommand is added
        to the parser.

        :param args: List of strings to parse. Default is taken from sys.argv.
        :param namespace: An object to take the attributes. Default is a new empty namespace.
        :return: The parsed arguments.
        """
        if self.args_parsed:
            raise RuntimeError("parse_args() called more than once")
        initial_args, _ = self.parse_known_args(args=args, namespace=namespace)
        if initial_args.version:
            return initial_args
        self._add_positional_args()
        parsed = super().parse_args(args=args, namespace=namespace)
        self.args_parsed = True
        return parsed


def _velocity_snapshot(cfg: config.Config, state: solver.SolverState) -> snapshot.Snapshot:
    d = cfg.dissipation
    meta = {"nu": d.nu, "gamma": d.gamma, "p": d.p}
    return snapshot.Snapshot(snapshot.SnapshotKind.VECTOR, state.u.physical(), state.t, meta)


def cmd_simulate(
    cfg: config.Config, out_dir: pathlib.Path, record: manifest.ExperimentManifest
):
    """Spin up a truth run, writing the norm series, the ball report and snapshots."""
    rng = np.random.default_rng(cfg.seed)
    model = assimilation.build_model(cfg, rng)
    r = cfg.run
    u0 = spectral.random_solenoidal(model.grid, r.initial_kmax, rng, energy=r.initial_energy)
    saves = []

    def keep(state: solver.SolverState):
        index = len(saves)
        saves.append(state.t)
        if r.snapshot_every > 0 and index % r.snapshot_every == 0:
            path = out_dir / "snapshots" / f"u_{index:06d}.snap"
            path.parent.mkdir(parents=True, exist_ok=True)
            snapshot.save_snapshot(path, _velocity_snapshot(cfg, state))
            record.record(path, out_dir)

    state, report, samples = solver.spin_up(
        model, u0, r.horizon, k=r.k, save_interval=r.save_interval, window=r.window, on_save=keep
    )
    final = out_dir / "final.snap"
    snapshot.save_snapshot(final, _velocity_snapshot(cfg, state))
    residuals = solver.energy_residuals(samples)
    outputs = [
        final,
        tables.write_csv(tables.trajectory_frame(samples, residuals), out_dir / "series.csv"),
        tables.write_csv(tables.ball_frame(report), out_dir / "ball.csv"),
        manifest.write_json(
            {
                **report.summary(),
                "energy_balance_residual": solver.energy_balance_residual(samples),
                "forcing": model.forcing.describe(),
            },
            out_dir / "ball.json",
        ),
    ]
    for path in outputs:
        record.record(path, out_dir)
    if not report.absorbed:
        print(f"{solver.AbsorbStatus.NOT_ABSORBED} by t={r.horizon}")


def cmd_assimilate(
    cfg: config.Config, out_dir: pathlib.Path, record: manifest.ExperimentManifest
):
    """Run a nudging experiment, writing errors, fits, conditions and the observation log."""
    result = assimilation.run_experiment(cfg)
    fits = {f"e{ell}": fit.to_dict() for ell, fit in result.fits.items()}
    outputs = [
        tables.write_csv(tables.error_frame(result.series), out_dir / "errors.csv"),
        manifest.write_json(result.conditions.to_dict(), out_dir / "conditions.json"),
        manifest.write_json(fits, out_dir / "fits.json"),
        manifest.write_json(result.ball.summary(), out_dir / "ball.json"),
    ]
    if result.log is not None:
        path = out_dir / "observations.bin"
        result.log.save(path)
        outputs.append(path)
    for path in outputs:
        record.record(path, out_dir)
    if not result.conditions.passed:
        print(assimilation.OUTSIDE_REGIME)


def cmd_interp_study(
    cfg: config.Config, out_dir: pathlib.Path, record: manifest.ExperimentManifest
):
    """Convergence ladders and global error reports for the configured operators."""
    s = cfg.study
    grid = spectral.Grid(s.n)
    field = spectral.random_field(grid, s.kmax, np.random.default_rng(cfg.seed))
    ladders, slopes, reports, constants = [], [], [], []
    for text in s.operators:
        op = local.LocalInterpolant.parse(text)
        family = interpolant.uniform_family(op, s.cells[0], s.collar)
        family_constants = None
        if s.global_error:
            family_constants = interpolant.estimate_family_constants(
                family, grid, s.ensemble_size, cfg.seed
            )
            labels = [op.label] * len(family_constants)
            constants.append(tables.constants_frame(family_constants, labels))
        for ell in s.ells:
            if ell > family.m:
                logger.warning(f"skipping ell={ell} for {op.label} of order {family.m}")
                continue
            rows, fit = interpolant.convergence_study(op, field, ell, s.cells, s.collar)
            ladders.append(tables.convergence_frame(op.label, ell, rows))
            slopes.append((op.label, ell, fit, float(op.level - ell)))
            logger.info(f"{op.label} ell={ell}: slope {fit.slope:.3f} (expected {op.level - ell})")
            if s.global_error:
                report = interpolant.verify_global_error(family, field, ell, family_constants)
                reports.append(tables.global_error_frame(op.label, [report]))
    outputs = [tables.write_csv(tables.slope_frame(slopes), out_dir / "slopes.csv")]
    if ladders:
        outputs.append(tables.write_csv(pl.concat(ladders), out_dir / "convergence.csv"))
    if reports:
        outputs.append(tables.write_csv(pl.concat(reports), out_dir / "global_error.csv"))
    if constants:
        outputs.append(tables.write_csv(pl.concat(constants), out_dir / "constants.csv"))
    for path in outputs:
        record.record(path, out_dir)


def cmd_verify(
    cfg: config.Config, out_dir: pathlib.Path, record: manifest.ExperimentManifest
):
    """Run the verification suite and write its table."""
    v = cfg.verify
    tiling = None
    if v.cover_path:
        try:
            tiling = cover.load_cover(pathlib.Path(v.cover_path))
        except (OSError, CoverError) as err:
            raise ConfigError(f"cannot load cover: {err}", "verify.cover_path") from err
    results = verify.run_suite(v.n, v.checks, tiling, cfg.seed)
    path = tables.write_csv(tables.verify_frame(results), out_dir / "verify.csv")
    record.record(path, out_dir)
    if tiling is not None:
        # partition functions of the cover under test, for inspection
        path = out_dir / "pou.snap"
        partition = pou.PartitionOfUnity(tiling)
        snapshot.save_snapshot(path, pou.pou_snapshot(partition, spectral.Grid(v.n)))
        record.record(path, out_dir)
    failed = [r.check for r in results if not r.passed]
    print(f"{len(results) - len(failed)} passed, {len(failed)} failed")
    for name in failed:
        print(f"FAILED {name}")


COMMANDS = {
    Command.SIMULATE: cmd_simulate,
    Command.ASSIMILATE: cmd_assimilate,
    Command.INTERP_STUDY: cmd_interp_study,
    Command.VERIFY: cmd_verify,
}


def run_command(
    command: Command, cfg: config.Config, out_dir: pathlib.Path, job: int | None = None
) -> int:
    """Run one subcommand into ``out_dir`` and write its manifest.

    :return: Exit code, 2 on a numerical abort.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    record = manifest.ExperimentManifest(str(command), config.to_dict(cfg), cfg.seed, job=job)
    logger.info(f"{command} into {out_dir}")
    try:
        COMMANDS[Command(command)](cfg, out_dir, record)
    except NumericalInstability as err:
        logger.error(f"numerical abort: {err}")
        return EXIT_NUMERICAL
    finally:
        record.finish(out_dir)
    return EXIT_OK


def _sweep_job(
    command: Command,
    config_path: pathlib.Path | None,
    base: dict,
    job_id: int,
    overrides: dict,
    out_dir: pathlib.Path,
) -> int:
    try:
        cfg = config.load_config(config_path, {**base, **overrides})
        return run_command(command, cfg, out_dir, job=job_id)
    except ConfigError as err:
        logger.error(f"{out_dir.name}: {err}")
        return EXIT_CONFIG


def dispatch(args: argparse.Namespace) -> int:
    """Load the config (or expand the sweep) and run the subcommand.

    :return: 0 on success, 1 for config errors, 2 for numerical aborts.
    """
    base = {} if args.seed is None else {"seed": args.seed}
    try:
        if args.sweep:
            jobs = sweep.parse_sweep(args.sweep)
            worker = functools.partial(_sweep_job, args.command, args.config, base)
            return max(sweep.run_sweep(jobs, worker, args.out, args.jobs))
        cfg = config.load_config(args.config, base)
        return run_command(args.command, cfg, args.out)
    except (ConfigError, CoverError) as err:
        logger.error(str(err))
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv: list[str] | None = None):
    parser = NudgelabArgumentParser()
    args = parser.parse_args(argv)
    if args.version:
        print(f"{nudgelab.__version__}")
        return
    # Set the logging level
    logging.basicConfig(level=args.log_level.upper())
    logger.info("nudgelab version: %s", nudgelab.__version__)
    code = dispatch(args)
    if code != EXIT_OK:
        sys.exit(code)


if __name__ == "__main__":
    main()
