"""Pseudo-spectral integration of the hyperdissipative 2D Navier-Stokes equations.

The velocity obeys

.. math::

    \\partial_t u - \\nu\\Delta u + \\gamma(-\\Delta)^{p+1} u
        + P_\\sigma (u\\cdot\\nabla) u = P_\\sigma f

on the torus.  The diagonal dissipation symbol is integrated exactly by an
exponential integrating factor and the remaining terms (advection, forcing,
and any nudging feedback supplied by the caller) by Heun's second order
Runge-Kutta scheme.  With ``gamma = 0`` the same code path integrates the
classical equations.

Besides stepping, the module provides the Grashof number, shape factors,
absorbing ball radii and an energy balance diagnostic.
"""

import dataclasses
import functools
import logging
import math
import typing

import numpy as np

from nudgelab import enum, spectral
from nudgelab.errors import NumericalInstability, ResolutionError
from nudgelab.spectral import DissipationSymbol, Grid, VectorField

logger = logging.getLogger("nudgelab.solver")


class ForcingKind(enum.CiStrEnum):
    NONE = "none"
    KOLMOGOROV = "kolmogorov"
    BAND = "band"


CFL = 0.4
"""Courant number of the default time step policy."""

GROWTH_LIMIT = 10.0
"""Largest norm growth allowed in one step before the run is aborted."""

SETTLE_SAVES = 20
"""Consecutive saves the H1 bound must hold for before a run counts as absorbed."""

ABSORB_TOL = 1e-8

Feedback = typing.Callable[[np.ndarray, int], np.ndarray]
"""Extra tendency ``g(coeffs, stage)`` added at Runge-Kutta stage 0 or 1."""


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """:math:`L^2` inner product of two coefficient arrays of equal shape."""
    return float(np.sum((np.conj(a) * b).real)) * spectral.TWO_PI**2


def nonlinear_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """:math:`P_\\sigma (u\\cdot\\nabla) u` on raw ``(2, n, n)`` coefficients.

    The velocity is truncated by the 2/3 rule before the products are
    formed, and the result is truncated again before projection.
    """
    u_hat = spectral.dealias_coeffs(coeffs, grid)
    u = spectral.inverse(u_hat, grid)
    du_dx = spectral.inverse(u_hat * spectral.derivative_multiplier(grid, (1, 0)), grid)
    du_dy = spectral.inverse(u_hat * spectral.derivative_multiplier(grid, (0, 1)), grid)
    advection = u[0] * du_dx + u[1] * du_dy
    out = spectral.dealias_coeffs(spectral.forward(advection, grid), grid)
    return spectral.leray_coeffs(out, grid)


def nonlinear_term(u: VectorField) -> VectorField:
    """Dealiased, Leray-projected advection term of a velocity field."""
    return VectorField.from_coeffs(nonlinear_coeffs(u.coeffs, u.grid), u.grid)


def energy_transfer(u: VectorField) -> float:
    """:math:`\\langle P_\\sigma(u\\cdot\\nabla)u, u\\rangle`, zero up to round-off."""
    return inner(nonlinear_coeffs(u.coeffs, u.grid), u.coeffs)


def enstrophy_transfer(u: VectorField) -> float:
    """:math:`\\langle P_\\sigma(u\\cdot\\nabla)u, \\Delta u\\rangle`, zero up to round-off in 2D."""
    laplacian = -u.grid.k_squared * u.coeffs
    return inner(nonlinear_coeffs(u.coeffs, u.grid), laplacian)


def grashof(f: VectorField, nu: float) -> float:
    """Grashof number :math:`\\|P_\\sigma f\\|_{L^2} / \\nu^2`.

    :raises: :class:`ValueError` for non-positive ``nu``.
    """
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")
    return spectral.sobolev_norm(spectral.leray_project(f), 0) / nu**2


def shape_factor(f: VectorField, k: int) -> float:
    """Shape factor :math:`\\sigma_k = \\|P_\\sigma f\\|_{\\dot H^k} / \\|P_\\sigma f\\|_{L^2}`.

    :raises: :class:`ValueError` for zero forcing.
    """
    projected = spectral.leray_project(f)
    base = spectral.sobolev_norm(projected, 0)
    if base == 0.0:
        raise ValueError("shape factor of zero forcing is undefined")
    return spectral.sobolev_norm(projected, k) / base


@dataclasses.dataclass(frozen=True)
class ForcingSpec:
    """Time independent forcing, stored after Leray projection and dealiasing.

    :param field: The body force.
    :param nu: Viscosity used for the Grashof number.
    """

    field: VectorField
    nu: float

    def __post_init__(self):
        projected = spectral.leray_project(spectral.dealias(self.field))
        object.__setattr__(self, "field", projected)
        object.__setattr__(self, "_sigma", {})

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def is_zero(self) -> bool:
        return not np.any(self.field.coeffs)

    @functools.cached_property
    def grashof(self) -> float:
        return grashof(self.field, self.nu)

    def shape_factor(self, k: int) -> float:
        """:math:`\\sigma_k`, with :math:`\\sigma_0 = 1`; cached per ``k``."""
        if k == 0:
            return 1.0
        if k not in self._sigma:
            self._sigma[k] = shape_factor(self.field, k)
        return self._sigma[k]

    def describe(self) -> dict:
        out = {"grashof": self.grashof}
        if not self.is_zero:
            out["sigma_1"] = self.shape_factor(1)
        return out


def zero_forcing(grid: Grid) -> VectorField:
    return VectorField.zeros(grid)


def kolmogorov_forcing(grid: Grid, nu: float, grashof: float, wavenumber: int = 1) -> VectorField:
    """Shear forcing ``a (sin(k y), 0)`` with ``a`` chosen for the target Grashof number."""
    if wavenumber > grid.dealias_cutoff:
        raise ResolutionError(f"forcing wavenumber {wavenumber} not resolved at n={grid.n}")
    # ||(sin ky, 0)||_L2 = pi sqrt(2) for every k
    amplitude = grashof * nu**2 / (math.pi * math.sqrt(2.0))
    _, y = grid.mesh()
    values = np.stack([amplitude * np.sin(wavenumber * y), np.zeros(grid.shape)])
    return VectorField.from_physical(values, grid)


def band_forcing(
    grid: Grid,
    nu: float,
    grashof: float,
    rng: np.random.Generator,
    kmin: float = 1.0,
    kmax: float = 3.0,
) -> VectorField:
    """Random solenoidal forcing on the shell ``kmin <= |k| <= kmax`` scaled to a Grashof number."""
    f = spectral.random_solenoidal(grid, kmax, rng, kmin)
    norm = spectral.sobolev_norm(f, 0)
    if norm == 0.0:
        return f
    return f * (grashof * nu**2 / norm)


def build_forcing(
    kind: ForcingKind,
    grid: Grid,
    nu: float,
    grashof: float,
    rng: np.random.Generator,
    wavenumber: int = 1,
    kmin: float = 1.0,
    kmax: float = 3.0,
) -> VectorField:
    kind = ForcingKind(kind)
    if kind is ForcingKind.NONE or grashof == 0.0:
        return zero_forcing(grid)
    if kind is ForcingKind.KOLMOGOROV:
        return kolmogorov_forcing(grid, nu, grashof, wavenumber)
    return band_forcing(grid, nu, grashof, rng, kmin, kmax)


@dataclasses.dataclass(frozen=True)
class SolverState:
    """Velocity at time ``t``."""

    u: VectorField
    t: float = 0.0


@dataclasses.dataclass(frozen=True)
class Sample:
    """Diagnostics of one saved state.

    :param norms: :math:`\\|u\\|_{\\dot H^\\ell}` for ``ell = 0..k``.
    :param energy: :math:`\\tfrac12\\|u\\|_{L^2}^2`.
    :param dissipation: :math:`\\nu\\|\\nabla u\\|^2 + \\gamma\\|(-\\Delta)^{(p+1)/2}u\\|^2`.
    :param power: :math:`\\langle f, u\\rangle`.
    """

    t: float
    norms: tuple[float, ...]
    energy: float
    dissipation: float
    power: float


class NavierStokes:
    """The forced hyperdissipative equations on one grid.

    :param symbol: Dissipation parameters.
    :param forcing: Body force; ``None`` means unforced.
    :param dt_max: Largest time step the policy returns.
    :param cfl: Courant number of the advective limit.
    """

    def __init__(
        self,
        symbol: DissipationSymbol,
        forcing: VectorField,
        dt_max: float = 0.05,
        cfl: float = CFL,
    ):
        if dt_max <= 0:
            raise ValueError(f"dt_max must be positive, got {dt_max}")
        self.symbol = symbol
        self.forcing = ForcingSpec(forcing, symbol.nu)
        self.grid = forcing.grid
        self.dt_max = dt_max
        self.cfl = cfl
        self._rate = symbol.on_grid(self.grid)
        self._decay: dict[float, np.ndarray] = {}

    @property
    def nu(self) -> float:
        return self.symbol.nu

    def decay(self, dt: float) -> np.ndarray:
        """Integrating factor :math:`e^{-L\\,dt}` per mode."""
        if dt not in self._decay:
            self._decay[dt] = np.exp(-self._rate * dt)
        return self._decay[dt]

    def tendency(self, coeffs: np.ndarray) -> np.ndarray:
        """Everything except dissipation: :math:`P_\\sigma f - P_\\sigma(u\\cdot\\nabla)u`."""
        return self.forcing.field.coeffs - nonlinear_coeffs(coeffs, self.grid)

    def choose_dt(self, u: VectorField, mu: float = 0.0) -> float:
        """``min(cfl dx / max|u|, 1/(2 mu), dt_max)``; terms with a zero denominator drop out."""
        dt = self.dt_max
        speed = float(np.sqrt(np.sum(u.physical() ** 2, axis=0)).max())
        if speed > 0:
            dt = min(dt, self.cfl * self.grid.dx / speed)
        if mu > 0:
            dt = min(dt, 0.5 / mu)
        return dt

    def stages(
        self, state: SolverState, dt: float, feedback: Feedback | None = None
    ) -> tuple[SolverState, np.ndarray]:
        """One step, also returning the predictor coefficients at ``t + dt``.

        :raises: :class:`NumericalInstability` on non-finite values or a norm
            growth above :data:`GROWTH_LIMIT`.
        """
        u0 = state.u.coeffs
        factor = self.decay(dt)
        n0 = self.tendency(u0)
        if feedback is not None:
            n0 = n0 + feedback(u0, 0)
        predictor = factor * (u0 + dt * n0)
        n1 = self.tendency(predictor)
        if feedback is not None:
            n1 = n1 + feedback(predictor, 1)
        new = factor * u0 + 0.5 * dt * (factor * n0 + n1)
        new[:, 0, 0] = 0.0
        self._check(u0, new, state.t + dt)
        return SolverState(VectorField.from_coeffs(new, self.grid), state.t + dt), predictor

    def step(self, state: SolverState, dt: float, feedback: Feedback | None = None) -> SolverState:
        return self.stages(state, dt, feedback)[0]

    def _check(self, old: np.ndarray, new: np.ndarray, t: float):
        if not np.all(np.isfinite(new)):
            raise NumericalInstability(f"non-finite velocity at t={t:.6g}")
        before = np.linalg.norm(old)
        after = np.linalg.norm(new)
        if before > 0 and after > GROWTH_LIMIT * before:
            raise NumericalInstability(
                f"velocity norm grew by {after / before:.3g}x in one step at t={t:.6g}"
            )

    def advance(self, state: SolverState, duration: float, mu: float = 0.0) -> SolverState:
        """Integrate over ``duration`` in equal steps no longer than the policy allows."""
        steps = max(1, math.ceil(duration / self.choose_dt(state.u, mu) - 1e-9))
        dt = duration / steps
        for _ in range(steps):
            state = self.step(state, dt)
        return state

    def diagnose(self, state: SolverState, k: int) -> Sample:
        coeffs = state.u.coeffs
        norms = tuple(spectral.sobolev_norm(state.u, ell) for ell in range(k + 1))
        power_spectrum = np.sum(np.abs(coeffs) ** 2, axis=0)
        scale = spectral.TWO_PI**2
        return Sample(
            t=state.t,
            norms=norms,
            energy=0.5 * scale * float(np.sum(power_spectrum)),
            dissipation=scale * float(np.sum(self._rate * power_spectrum)),
            power=inner(self.forcing.field.coeffs, coeffs),
        )


def energy_residuals(samples: typing.Sequence[Sample]) -> np.ndarray:
    """Pointwise energy balance residual :math:`dE/dt + D - \\langle f,u\\rangle`.

    :math:`dE/dt` uses the logarithmic centred difference
    :math:`E_n(\\ln E_{n+1} - \\ln E_{n-1})/(2\\Delta t)`, which is exact on
    pure exponential decay; the plain centred difference is used wherever an
    energy vanishes.  The first and last entries are NaN.

    :raises: :class:`ValueError` if the samples are not uniformly spaced.
    """
    out = np.full(len(samples), np.nan)
    if len(samples) < 3:
        return out
    t = np.array([s.t for s in samples])
    spacing = np.diff(t)
    if not np.allclose(spacing, spacing[0], rtol=1e-9, atol=1e-12):
        raise ValueError("energy balance needs uniformly spaced samples")
    dt = spacing[0]
    energy = np.array([s.energy for s in samples])
    for i in range(1, len(samples) - 1):
        lo, mid, hi = energy[i - 1], energy[i], energy[i + 1]
        if lo > 0 and mid > 0 and hi > 0:
            rate = mid * (math.log(hi) - math.log(lo)) / (2 * dt)
        else:
            rate = (hi - lo) / (2 * dt)
        out[i] = rate + samples[i].dissipation - samples[i].power
    return out


def energy_balance_residual(samples: typing.Sequence[Sample]) -> float:
    """Largest absolute energy balance residual; NaN for fewer than three samples."""
    residuals = energy_residuals(samples)
    if np.all(np.isnan(residuals)):
        return math.nan
    return float(np.nanmax(np.abs(residuals)))


def ball_radii(grashof: float, sigma: typing.Callable[[int], float], k: int) -> tuple[float, ...]:
    """Normalized radii :math:`(\\sigma_{j-1}^{1/j} + G)^{j-1} G` for ``j = 1..k``.

    >>> ball_radii(2.0, lambda j: 1.0, 2)
    (2.0, 6.0)
    """
    return tuple(
        (sigma(j - 1) ** (1.0 / j) + grashof) ** (j - 1) * grashof for j in range(1, k + 1)
    )


class AbsorbStatus(enum.CiStrEnum):
    ABSORBED = "absorbed"
    NOT_ABSORBED = "not absorbed"


@dataclasses.dataclass(frozen=True)
class AbsorbingBallReport:
    """Spin-up trajectory against the absorbing ball radii.

    :param radii: Normalized radii :math:`\\rho_j`, ``j = 1..k``, with the
        universal constants set to one.
    :param h1_bound: :math:`2G`, the bound on :math:`\\|u\\|_{\\dot H^1}/\\nu`.
    :param times: Save times.
    :param normalized: :math:`\\|u(t)\\|_{\\dot H^j}/\\nu`, shape ``(saves, k+1)``.
    :param entry_time: First save from which the H1 bound held for
        ``window`` consecutive saves, or ``None``.
    """

    k: int
    grashof: float
    radii: tuple[float, ...]
    h1_bound: float
    times: np.ndarray
    normalized: np.ndarray
    entry_time: float | None
    window: int

    @property
    def status(self) -> AbsorbStatus:
        return AbsorbStatus.NOT_ABSORBED if self.entry_time is None else AbsorbStatus.ABSORBED

    @property
    def absorbed(self) -> bool:
        return self.entry_time is not None

    def within_bound(self) -> np.ndarray:
        """Per save, whether the H1 bound holds."""
        scale = max(1.0, float(self.normalized[0, 1])) if len(self.normalized) else 1.0
        return self.normalized[:, 1] <= self.h1_bound + ABSORB_TOL * scale

    def holds_after(self, fraction: float) -> bool:
        """Whether the H1 bound holds over the final ``fraction`` of the saves."""
        ok = self.within_bound()
        start = int(math.floor(len(ok) * (1.0 - fraction)))
        return bool(ok[start:].all())

    def ratios(self, fraction: float = 0.5) -> tuple[float, ...]:
        """Largest :math:`\\|u\\|_{\\dot H^j}/(\\nu\\rho_j)` over the final ``fraction`` of the run."""
        start = int(math.floor(len(self.times) * (1.0 - fraction)))
        tail = self.normalized[start:]
        out = []
        for j, radius in enumerate(self.radii, start=1):
            if radius == 0.0:
                out.append(0.0 if not tail[:, j].any() else math.inf)
            else:
                out.append(float(tail[:, j].max() / radius))
        return tuple(out)

    def summary(self) -> dict:
        return {
            "status": str(self.status),
            "grashof": self.grashof,
            "h1_bound": self.h1_bound,
            "entry_time": self.entry_time,
            "radii": list(self.radii),
            "ratios": list(self.ratios()),
        }


def _entry_time(times: np.ndarray, ok: np.ndarray, window: int) -> float | None:
    run = 0
    for i, good in enumerate(ok):
        run = run + 1 if good else 0
        if run == window:
            return float(times[i - window + 1])
    return None


def spin_up(
    model: NavierStokes,
    u0: VectorField,
    horizon: float,
    k: int = 2,
    save_interval: float = 0.5,
    window: int = SETTLE_SAVES,
    stop_when_absorbed: bool = False,
    on_save: typing.Callable[[SolverState], None] | None = None,
) -> tuple[SolverState, AbsorbingBallReport, list[Sample]]:
    """Integrate from ``u0`` until ``horizon`` and monitor entry into the absorbing ball.

    :param k: Highest Sobolev index recorded and reported against.
    :param save_interval: Time between saved diagnostics.
    :param window: Consecutive saves the H1 bound must hold for.
    :param stop_when_absorbed: Return as soon as the entry time is known.
    :param on_save: Called with every saved state, the initial one included.
    :return: Final state, the report and the saved diagnostics.
    :raises: :class:`NumericalInstability` if the run blows up.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    state = SolverState(spectral.leray_project(u0), 0.0)
    samples = [model.diagnose(state, k)]
    if on_save is not None:
        on_save(state)
    bound = 2.0 * model.forcing.grashof
    saves = max(1, round(horizon / save_interval))
    logger.info(f"spinning up to t={horizon} with G={model.forcing.grashof:.4g}")
    for i in range(saves):
        state = model.advance(state, save_interval)
        state = SolverState(state.u, (i + 1) * save_interval)
        samples.append(model.diagnose(state, k))
        if on_save is not None:
            on_save(state)
        logger.debug(f"t={state.t:.4g} norms={samples[-1].norms}")
        if stop_when_absorbed and len(samples) >= window:
            report = _ball_report(model, samples, k, bound, window)
            if report.absorbed:
                logger.info(f"entered the absorbing ball at t={report.entry_time:.4g}")
                return state, report, samples
    report = _ball_report(model, samples, k, bound, window)
    if report.absorbed:
        logger.info(f"entered the absorbing ball at t={report.entry_time:.4g}")
    else:
        logger.warning(f"not absorbed by t={horizon}")
    return state, report, samples


def _ball_report(
    model: NavierStokes, samples: list[Sample], k: int, bound: float, window: int
) -> AbsorbingBallReport:
    times = np.array([s.t for s in samples])
    normalized = np.array([s.norms for s in samples]) / model.nu
    forcing = model.forcing
    sigma = (lambda j: 1.0) if forcing.is_zero else forcing.shape_factor
    report = AbsorbingBallReport(
        k=k,
        grashof=forcing.grashof,
        radii=ball_radii(forcing.grashof, sigma, k),
        h1_bound=bound,
        times=times,
        normalized=normalized,
        entry_time=None,
        window=window,
    )
    entry = _entry_time(times, report.within_bound(), window)
    return dataclasses.replace(report, entry_time=entry)
