"""Nudging data assimilation for the forced Navier-Stokes equations.

An observer ``v`` follows the truth ``u`` through the feedback

.. math::

    \\partial_t v + \\dots = P_\\sigma f - \\mu P_\\sigma (J v - J u),

where :math:`J u` is all the observer ever sees of the truth.  The
observations arrive through an :class:`ObservationChannel`: a
:class:`LiveChannel` integrates the truth itself, a :class:`ReplayChannel`
plays back a recorded :class:`ObservationLog`.

The module also evaluates the sufficient conditions on ``mu`` and the
observation density, with every unknown universal constant set to one,
and fits exponential decay rates to the synchronization error.
"""

import dataclasses
import logging
import math
import pathlib
import typing

import numpy as np

from nudgelab import cover as cover_mod
from nudgelab import enum, interpolant, local, pou, snapshot, solver, spectral
from nudgelab.config import Config, ConditionMode, CoverKind, ObserverInit
from nudgelab.errors import ConditionError, ConfigError, CoverError
from nudgelab.interpolant import GlobalInterpolant
from nudgelab.solver import NavierStokes, SolverState
from nudgelab.spectral import Grid, VectorField
from nudgelab.utils import fitting

logger = logging.getLogger("nudgelab.assimilation")

MIN_FIT_POINTS = 10

OUTSIDE_REGIME = "outside sufficient regime"


def mu_lower_bound(nu: float, grashof: float) -> float:
    """:math:`\\nu(1 + \\log(1 + G))G`, the smallest ``mu`` of the H1 result.

    >>> mu_lower_bound(1.0, 0.0)
    0.0
    """
    return nu * (1.0 + math.log1p(grashof)) * grashof


@dataclasses.dataclass(frozen=True)
class ConditionCheck:
    """One normalized condition ``lhs <= bound``.

    :param alternative: Name of a check that may hold in place of this one.
    """

    name: str
    lhs: float
    bound: float
    alternative: str | None = None

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.bound)

    def within(self, safety: float) -> bool:
        return bool(self.lhs * safety <= self.bound)


@dataclasses.dataclass(frozen=True)
class ConditionReport:
    """Evaluated sufficient conditions.

    :param mu_min: :math:`\\nu(1+\\log(1+G))G`.
    """

    mode: ConditionMode
    mu: float
    mu_min: float
    checks: tuple[ConditionCheck, ...]

    def unmet(self, safety: float = 1.0) -> list[str]:
        """Names of failing checks whose alternative, if any, fails too."""
        held = {c.name for c in self.checks if c.within(safety)}
        return [c.name for c in self.checks if c.name not in held and c.alternative not in held]

    @property
    def passed(self) -> bool:
        return not self.unmet()

    def within(self, safety: float) -> bool:
        """Whether the conditions hold with ``lhs`` multiplied by ``safety``."""
        return not self.unmet(safety)

    def check(self, name: str) -> ConditionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mode": str(self.mode),
            "mu": float(self.mu),
            "mu_min": float(self.mu_min),
            "passed": self.passed,
            "status": "within sufficient regime" if self.passed else OUTSIDE_REGIME,
            "checks": [
                {
                    "name": c.name,
                    "lhs": float(c.lhs),
                    "bound": float(c.bound),
                    "passed": c.passed,
                    "alternative": c.alternative,
                }
                for c in self.checks
            ],
        }


def _hyper(gamma: float, value: float) -> float:
    """``value`` when ``gamma > 0``; zero otherwise, whatever ``value`` is."""
    return value if gamma > 0 else 0.0


def _either(cellwise: ConditionCheck, uniform: ConditionCheck) -> list[ConditionCheck]:
    """A cellwise check and the uniform-scale check that may replace it."""
    return [
        dataclasses.replace(cellwise, alternative=uniform.name),
        dataclasses.replace(uniform, alternative=cellwise.name),
    ]


def _needs_constants(constants, mode: ConditionMode):
    if constants is None:
        raise ConditionError(f"{mode} conditions need the associated constants of every cell")


def check_conditions(
    mu: float,
    interp: GlobalInterpolant,
    nu: float,
    gamma: float,
    p: float,
    grashof: float,
    mode: ConditionMode,
    constants: typing.Sequence[local.AssociatedConstants] | None = None,
) -> ConditionReport:
    """Evaluate the sufficient conditions of ``mode`` with normalized constants.

    Every condition is reported as ``lhs <= bound``.  The lower bound on
    ``mu`` is reported as ``mu_min / mu <= 1``.  Sums over the
    hyperdissipative range run over ``j = 1..floor(p)`` and vanish when
    ``gamma = 0``.

    :param constants: Per-cell constants; required by the cellwise modes.
    :raises: :class:`ConditionError` for missing constants, for a uniform
        mode on a non-uniform cover, or for an optimal mode on a family that
        does not interpolate optimally.
    """
    mode = ConditionMode(mode)
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    pi0 = interp.cover.pi0
    h = interp.cover.diameters
    hs = interp.uniform_scale
    top = int(math.floor(p))
    ratio = mu * h**2 / nu
    mu_min = mu_lower_bound(nu, grashof)
    lower = ConditionCheck("mu-lower-bound", mu_min / mu if mu > 0 else math.inf, 1.0)
    resolution = ConditionCheck("h1-resolution", mu * interp.scale**2 / nu, 1.0)
    cellwise_bound = 1.0 / (10.0 * pi0)
    checks: list[ConditionCheck] = []

    def uniform() -> float:
        if hs is None:
            raise ConditionError(f"{mode} conditions need a cover with a uniform scale")
        return mu * hs**2 / nu

    if mode in (ConditionMode.OPTIMAL, ConditionMode.H1_OPTIMAL) and not interp.optimal:
        raise ConditionError(f"{mode} conditions need an optimal family, got {interp.describe()}")

    if mode is ConditionMode.H1_BASELINE:
        checks = [resolution, lower]
    elif mode is ConditionMode.GENERAL:
        _needs_constants(constants, mode)
        worst = 0.0
        for i in range(interp.m + 1):
            for q, c in enumerate(constants):
                hyper = sum(c.get(i, j) ** 2 * h[q] ** (2 * (j - 1)) for j in range(1, top + 1))
                weight = _hyper(gamma, mu / gamma if gamma else 0.0)
                bracket = c.get(i, 1) + c.get(i, 2) + weight * hyper
                worst = max(worst, ratio[q] * bracket)
        checks = [resolution, ConditionCheck("hk-cellwise", worst, cellwise_bound), lower]
    elif mode is ConditionMode.UNIFORM:
        value = uniform()
        hyper = sum(hs ** (2 * (j - 1)) for j in range(1, top + 1))
        lhs = value * (1.0 + _hyper(gamma, mu / gamma if gamma else 0.0) * hyper)
        checks = [resolution, ConditionCheck("hk-uniform", lhs, 0.1), lower]
    elif mode is ConditionMode.OPTIMAL:
        _needs_constants(constants, mode)
        k = interp.m
        total = float(sum(c.combined(k, k + 1) ** 2 * ratio[q] for q, c in enumerate(constants)))
        cellwise = ConditionCheck("optimal-cellwise", total, cellwise_bound)
        checks = [resolution, cellwise]
        if hs is not None:
            checks[1:] = _either(cellwise, ConditionCheck("optimal-uniform", uniform(), 0.1))
        checks.append(lower)
    elif mode is ConditionMode.WELLPOSED:
        _needs_constants(constants, mode)
        worst = 0.0
        for q, c in enumerate(constants):
            hyper = sum(c.get(0, j) ** 2 * h[q] ** (2 * (j - 2)) for j in range(1, top + 1))
            extra = _hyper(gamma, nu / gamma if gamma else 0.0) * ratio[q] * hyper
            worst = max(worst, ratio[q] * (c.get(0, 1) + c.get(0, 2) + extra))
        cellwise = ConditionCheck("wellposed-cellwise", worst, cellwise_bound)
        checks = [cellwise]
        if hs is not None:
            value = uniform()
            hyper = sum(hs ** (2 * (j - 2)) for j in range(1, top + 1))
            extra = _hyper(gamma, nu / gamma if gamma else 0.0) * value * hyper
            checks = _either(cellwise, ConditionCheck("wellposed-uniform", value * (1.0 + extra), 0.1))
    elif mode is ConditionMode.H1_GENERAL:
        _needs_constants(constants, mode)
        worst = 0.0
        for q, c in enumerate(constants):
            hyper = sum(c.get(0, j + 2) ** 2 * h[q] ** (2 * j) for j in range(1, top + 1))
            extra = _hyper(gamma, mu * h[q] ** 2 / gamma if gamma else 0.0) * hyper
            worst = max(worst, ratio[q] * (c.get(0, 1) ** 2 + c.get(0, 2) ** 2 + extra))
        cellwise = ConditionCheck("h1-cellwise", worst, cellwise_bound)
        checks = [cellwise]
        if hs is not None:
            hyper = _hyper(gamma, sum(hs ** (2 * j) for j in range(1, top + 1)))
            checks = _either(cellwise, ConditionCheck("h1-uniform", uniform() * (1.0 + hyper), 0.1))
        checks.append(lower)
    elif mode is ConditionMode.H1_OPTIMAL:
        _needs_constants(constants, mode)
        worst = max(c.get(1, 1) ** 2 * ratio[q] for q, c in enumerate(constants))
        cellwise = ConditionCheck("h1-optimal-cellwise", float(worst), cellwise_bound)
        checks = [cellwise]
        if hs is not None:
            checks = _either(cellwise, ConditionCheck("h1-optimal-uniform", uniform(), 0.1))
        checks.append(lower)

    report = ConditionReport(mode, mu, mu_min, tuple(checks))
    for check in report.checks:
        logger.debug(f"{check.name}: {check.lhs:.4g} <= {check.bound:.4g} {check.passed}")
    if not report.passed:
        failed = ", ".join(report.unmet())
        logger.warning(f"{OUTSIDE_REGIME}: {failed}")
    return report


def _observe_physical(values: np.ndarray, grid: Grid, interp: GlobalInterpolant) -> np.ndarray:
    return np.stack([interpolant.mean_free(interp, local.FieldSampler(c, grid)) for c in values])


def observe(u: VectorField, interp: GlobalInterpolant) -> VectorField:
    """:math:`J u`, applied to each velocity component."""
    values = _observe_physical(u.physical(), u.grid, interp)
    return VectorField.from_physical(values, u.grid)


@dataclasses.dataclass
class ObservationRecord:
    """Observations for one step: ``J u`` at ``t`` and at the predictor time ``t + dt``."""

    t: float
    dt: float
    stages: tuple[np.ndarray, np.ndarray]


class ObservationLog:
    """Recorded observations, in memory and optionally as a snapshot stream."""

    def __init__(self, records: typing.Iterable[ObservationRecord] = ()):
        self.records = list(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, index: int) -> ObservationRecord:
        return self.records[index]

    def append(self, record: ObservationRecord):
        self.records.append(record)

    def save(self, path: pathlib.Path):
        """Write every record as two vector snapshots tagged with ``stage`` and ``dt``."""
        with open(path, "wb") as stream:
            for record in self.records:
                for stage, values in enumerate(record.stages):
                    time = record.t + stage * record.dt
                    meta = {"dt": record.dt, "stage": stage}
                    snapshot.write_snapshot(
                        stream, snapshot.Snapshot(snapshot.SnapshotKind.VECTOR, values, time, meta)
                    )
        logger.info(f"wrote {len(self.records)} observation records to {path}")

    @classmethod
    def load(cls, path: pathlib.Path) -> "ObservationLog":
        """:raises: :class:`ValueError` if stages are missing or out of order."""
        records = []
        pending = None
        for snap in snapshot.iter_snapshots(path):
            stage = int(snap.meta.get("stage", -1))
            if stage == 0 and pending is None:
                pending = snap
            elif stage == 1 and pending is not None:
                dt = float(pending.meta["dt"])
                records.append(ObservationRecord(pending.time, dt, (pending.data, snap.data)))
                pending = None
            else:
                raise ValueError(f"observation log {path} has an unpaired stage at t={snap.time}")
        if pending is not None:
            raise ValueError(f"observation log {path} ends with an unpaired stage")
        return cls(records)


class ObservationChannel(typing.Protocol):
    """Source of observations for the observer.

    ``next(dt)`` returns the spectral coefficients of ``J u`` at both
    Runge-Kutta stages of the coming step; ``max_dt()`` caps the step.
    """

    grid: Grid

    def max_dt(self) -> float: ...

    def next(self, dt: float) -> tuple[np.ndarray, np.ndarray]: ...


class LiveChannel:
    """Integrates the truth and observes it.

    :param model: Truth dynamics.
    :param truth: Initial truth state.
    :param interp: Observation operator.
    :param observe_every: Observe every this many steps; in between, the
        last observation is held.
    :param log: Log receiving every emitted observation, if any.
    """

    def __init__(
        self,
        model: NavierStokes,
        truth: SolverState,
        interp: GlobalInterpolant,
        observe_every: int = 1,
        log: ObservationLog | None = None,
    ):
        if observe_every < 1:
            raise ValueError(f"observe_every must be at least 1, got {observe_every}")
        self.model = model
        self.grid = model.grid
        self.truth = truth
        self.interp = interp
        self.observe_every = observe_every
        self.log = log
        self._steps = 0
        self._held: np.ndarray | None = None

    def max_dt(self) -> float:
        return self.model.choose_dt(self.truth.u)

    def next(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        new, predictor = self.model.stages(self.truth, dt)
        if self._held is None or self._steps % self.observe_every == 0:
            first = _observe_physical(self.truth.u.physical(), self.grid, self.interp)
            if self.observe_every == 1:
                predicted = spectral.inverse(predictor, self.grid)
                second = _observe_physical(predicted, self.grid, self.interp)
            else:
                second = first
            self._held = first
        else:
            first = second = self._held
        if self.log is not None:
            self.log.append(ObservationRecord(self.truth.t, dt, (first, second)))
        self.truth = new
        self._steps += 1
        return spectral.forward(first, self.grid), spectral.forward(second, self.grid)


class ReplayChannel:
    """Plays back an :class:`ObservationLog` step by step.

    :raises: :class:`ValueError` from :meth:`next` when the log is exhausted
        or the requested step differs from the recorded one.
    """

    def __init__(self, log: ObservationLog, grid: Grid):
        self.log = log
        self.grid = grid
        self._index = 0

    def max_dt(self) -> float:
        if self._index >= len(self.log):
            raise ValueError("observation log exhausted")
        return self.log[self._index].dt

    def next(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        if self._index >= len(self.log):
            raise ValueError("observation log exhausted")
        record = self.log[self._index]
        if not math.isclose(record.dt, dt, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(f"step {dt} differs from recorded step {record.dt}")
        self._index += 1
        first, second = record.stages
        return spectral.forward(first, self.grid), spectral.forward(second, self.grid)


@dataclasses.dataclass
class AssimilationRun:
    """Observer state with its dynamics, feedback strength and data source.

    The observer only touches the truth through ``channel``.
    """

    model: NavierStokes
    interp: GlobalInterpolant
    mu: float
    state: SolverState
    channel: ObservationChannel

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError(f"mu must be non-negative, got {self.mu}")

    def feedback(self, observations: tuple[np.ndarray, np.ndarray]) -> solver.Feedback:
        grid = self.model.grid

        def nudge(coeffs: np.ndarray, stage: int) -> np.ndarray:
            observed = _observe_physical(spectral.inverse(coeffs, grid), grid, self.interp)
            jv = spectral.forward(observed, grid)
            return -self.mu * spectral.leray_coeffs(jv - observations[stage], grid)

        return nudge

    def choose_dt(self) -> float:
        return min(self.model.choose_dt(self.state.u, self.mu), self.channel.max_dt())


def coupled_step(run: AssimilationRun, dt: float) -> AssimilationRun:
    """Advance truth (through the channel) and observer by one step.

    :raises: :class:`NumericalInstability` if either blows up.
    """
    observations = run.channel.next(dt)
    feedback = run.feedback(observations) if run.mu > 0 else None
    run.state = run.model.step(run.state, dt, feedback)
    return run


def integrate(
    run: AssimilationRun,
    horizon: float,
    save_interval: float,
    on_save: typing.Callable[[AssimilationRun], None] | None = None,
) -> AssimilationRun:
    """Run coupled steps for ``horizon``.

    ``on_save`` is called at ``t = 0`` and every ``save_interval``.
    """
    if on_save is not None:
        on_save(run)
    start = run.state.t
    for i in range(max(1, round(horizon / save_interval))):
        steps = max(1, math.ceil(save_interval / run.choose_dt() - 1e-9))
        dt = save_interval / steps
        for _ in range(steps):
            coupled_step(run, dt)
        run.state = SolverState(run.state.u, start + (i + 1) * save_interval)
        if on_save is not None:
            on_save(run)
    return run


@dataclasses.dataclass(frozen=True)
class ErrorSeries:
    """Synchronization errors :math:`\\|v - u\\|_{\\dot H^\\ell}` at the save times."""

    times: np.ndarray
    ells: tuple[int, ...]
    values: np.ndarray

    def column(self, ell: int) -> np.ndarray:
        return self.values[:, self.ells.index(ell)]

    def records(self) -> list[dict]:
        return [
            {"t": float(t), **{f"e{ell}": float(v) for ell, v in zip(self.ells, row)}}
            for t, row in zip(self.times, self.values)
        ]


class FitStatus(enum.CiStrEnum):
    FITTED = "fitted"
    SYNCHRONIZED = "already synchronized"
    INSUFFICIENT = "insufficient data"


@dataclasses.dataclass(frozen=True)
class DecayFit:
    """Exponential fit :math:`e(t) \\approx C e^{-\\lambda t}` on a window of the series.

    :param rate: Fitted :math:`\\lambda`; NaN unless ``status`` is fitted.
    :param residual: RMS residual of the fit of :math:`\\log e`.
    :param floor: Absolute floor; points below it are excluded.
    """

    status: FitStatus
    rate: float
    residual: float
    window: tuple[float, float]
    floor: float
    points: int

    def to_dict(self) -> dict:
        return {
            "status": str(self.status),
            "rate": None if math.isnan(self.rate) else self.rate,
            "residual": None if math.isnan(self.residual) else self.residual,
            "window": list(self.window),
            "floor": float(self.floor),
            "points": int(self.points),
        }


def fit_decay(
    times: typing.Sequence[float],
    errors: typing.Sequence[float],
    floor: float = 1e-11,
    min_points: int = MIN_FIT_POINTS,
) -> DecayFit:
    """Fit an exponential decay rate to an error series.

    Points stop counting once the error first drops below ``floor`` times
    the initial error.  The window then starts at the earliest candidate
    start (every tenth of the remaining points) whose least-squares fit of
    :math:`\\log e` has an RMS residual within twice the best candidate's,
    which skips an initial transient.
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(errors, dtype=float)
    if e.size == 0 or e[0] <= 0.0:
        return DecayFit(FitStatus.SYNCHRONIZED, math.nan, math.nan, (0.0, 0.0), 0.0, 0)
    absolute = floor * e[0]
    below = np.flatnonzero(e <= absolute)
    end = int(below[0]) if below.size else e.size
    if end <= 1:
        return DecayFit(
            FitStatus.SYNCHRONIZED, math.nan, math.nan, (float(t[0]), float(t[0])), absolute, 0
        )
    if end < min_points:
        logger.warning(f"only {end} errors above the floor, decay rate not fitted")
        return DecayFit(
            FitStatus.INSUFFICIENT,
            math.nan,
            math.nan,
            (float(t[0]), float(t[end - 1])),
            absolute,
            end,
        )
    logs = np.log(e[:end])
    step = max(1, end // 10)
    starts = [s for s in range(0, end - min_points + 1, step)]
    fits = {s: fitting.fit_line(t[s:end], logs[s:end]) for s in starts}
    best = min(fit.residual for fit in fits.values())
    start = next(s for s in starts if fits[s].residual <= 2.0 * best + 1e-14)
    fit = fits[start]
    return DecayFit(
        FitStatus.FITTED,
        -fit.slope,
        fit.residual,
        (float(t[start]), float(t[end - 1])),
        absolute,
        fit.points,
    )


def error_norms(u: VectorField, v: VectorField, ells: typing.Sequence[int]) -> list[float]:
    difference = v - u
    return [spectral.sobolev_norm(difference, ell) for ell in ells]


def tracked_ells(interp: GlobalInterpolant, grid: Grid) -> tuple[int, ...]:
    """Sobolev indices an experiment records.

    These are ``0..max(m, 1)``, plus ``k`` for optimal families.
    """
    ells = set(range(max(interp.m, 1) + 1))
    if interp.optimal:
        ells.add(interp.k)
    return tuple(ell for ell in sorted(ells) if ell <= grid.n // 3)


def build_cover(cfg: Config) -> cover_mod.Cover:
    kind = CoverKind(cfg.cover.kind)
    if kind is CoverKind.UNIFORM:
        return cover_mod.uniform_cover(cfg.cover.cells, cfg.cover.collar)
    if kind is CoverKind.DYADIC:
        return cover_mod.dyadic_cover(cfg.cover.levels, cfg.cover.collar)
    try:
        return cover_mod.load_cover(pathlib.Path(cfg.cover.path))
    except (OSError, CoverError) as err:
        raise ConfigError(f"cannot load cover: {err}", "cover.path") from err


def build_family(cfg: Config) -> GlobalInterpolant:
    """The configured family; operator specs are assigned to cells in turn."""
    tiling = build_cover(cfg)
    specs = [local.LocalInterpolant.parse(text) for text in cfg.interpolant.kinds]
    if not specs:
        raise ValueError("no local operators configured")
    ops = [specs[q % len(specs)] for q in range(len(tiling))]
    return interpolant.assemble(tiling, pou.build_pou(tiling), ops)


def build_model(cfg: Config, rng: np.random.Generator) -> NavierStokes:
    grid = Grid(cfg.grid.n)
    d = cfg.dissipation
    forcing = solver.build_forcing(
        cfg.forcing.kind,
        grid,
        d.nu,
        cfg.forcing.grashof,
        rng,
        cfg.forcing.wavenumber,
        cfg.forcing.kmin,
        cfg.forcing.kmax,
    )
    return NavierStokes(spectral.DissipationSymbol(d.nu, d.gamma, d.p), forcing, cfg.run.dt_max)


@dataclasses.dataclass
class ExperimentResult:
    """Everything an assimilation experiment produces.

    :param fits: Decay fit per tracked Sobolev index.
    :param ball: Absorbing ball report of the truth spin-up.
    """

    series: ErrorSeries
    fits: dict[int, DecayFit]
    conditions: ConditionReport
    interp: GlobalInterpolant
    ball: solver.AbsorbingBallReport
    log: ObservationLog | None
    observer: SolverState
    truth: SolverState

    @property
    def fit(self) -> DecayFit:
        """The H1 decay fit."""
        return self.fits[1]


def resolve_mu(cfg: Config, grashof: float) -> float:
    """Configured ``mu``, or the H1 lower bound times ``mu_factor`` when unset."""
    if cfg.assimilation.mu is not None:
        return cfg.assimilation.mu
    return cfg.assimilation.mu_factor * mu_lower_bound(cfg.dissipation.nu, grashof)


def run_experiment(cfg: Config) -> ExperimentResult:
    """Spin up the truth, check the conditions, then assimilate and fit decay rates.

    Conditions that fail do not stop the run; the report is marked
    outside the sufficient regime.

    :raises: :class:`NumericalInstability` if a run blows up.
    """
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg, rng)
    grid = model.grid
    interp = build_family(cfg)
    ells = tracked_ells(interp, grid)
    u0 = spectral.random_solenoidal(grid, cfg.run.initial_kmax, rng, energy=cfg.run.initial_energy)
    truth, ball, _ = solver.spin_up(
        model,
        u0,
        cfg.run.spin_up,
        k=max(cfg.run.k, *ells),
        save_interval=cfg.run.save_interval,
        window=cfg.run.window,
    )
    truth = SolverState(truth.u, 0.0)

    grashof = model.forcing.grashof
    mu = resolve_mu(cfg, grashof)
    a = cfg.assimilation
    mode = ConditionMode(a.mode)
    constants = None
    if mode not in (ConditionMode.H1_BASELINE, ConditionMode.UNIFORM):
        constants = interpolant.estimate_family_constants(interp, grid, a.ensemble_size, cfg.seed)
    d = cfg.dissipation
    conditions = check_conditions(mu, interp, d.nu, d.gamma, d.p, grashof, mode, constants)

    if ObserverInit(a.observer_init) is ObserverInit.RANDOM:
        v0 = spectral.random_solenoidal(
            grid, cfg.run.initial_kmax, rng, energy=cfg.run.initial_energy
        )
    else:
        v0 = VectorField.zeros(grid)
    log = ObservationLog() if a.log_observations else None
    channel = LiveChannel(model, truth, interp, a.observe_every, log)
    run = AssimilationRun(model, interp, mu, SolverState(v0, 0.0), channel)

    times, rows = [], []

    def record(current: AssimilationRun):
        times.append(current.state.t)
        rows.append(error_norms(channel.truth.u, current.state.u, ells))
        logger.debug(f"t={current.state.t:.4g} errors={rows[-1]}")

    logger.info(f"assimilating with mu={mu:.4g} for t={cfg.run.horizon}: {interp.describe()}")
    integrate(run, cfg.run.horizon, cfg.run.save_interval, record)
    series = ErrorSeries(np.array(times), ells, np.array(rows))
    fits = {ell: fit_decay(series.times, series.column(ell), a.floor) for ell in ells}
    for ell, fit in fits.items():
        if fit.status is FitStatus.FITTED:
            logger.info(f"e{ell} decays at rate {fit.rate:.4g} (mu/2 = {mu / 2:.4g})")
    return ExperimentResult(series, fits, conditions, interp, ball, log, run.state, channel.truth)
