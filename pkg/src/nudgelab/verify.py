"""Verification suite.

Each check is a named function returning one or more
:class:`CheckResult` rows.  The default suite runs them all at desk scale
in a few seconds; :func:`run_suite` takes a subset by name.

+------------------------+----------------------------------------------------+
| Check                  | What it measures                                   |
+========================+====================================================+
| pou-sum                | ``max|sum psi_q - 1|`` on uniform and dyadic       |
+------------------------+----------------------------------------------------+
| pou-plateau            | ``psi_q = 1`` on plateau cores, ``0`` off collars  |
+------------------------+----------------------------------------------------+
| pou-derivatives        | spread of ``sup|d psi_q| h_q^l`` across cells and  |
|                        | three refinement levels                            |
+------------------------+----------------------------------------------------+
| cover-geometry         | overlap count and adicity                          |
+------------------------+----------------------------------------------------+
| multiplicity           | collar and tiling multiplicity sandwiches          |
+------------------------+----------------------------------------------------+
| pou-blend              | ``||sum psi_q f_q||^2 <= pi0 sum ||f_q||^2``       |
+------------------------+----------------------------------------------------+
| gapped-cover           | a cover with a hole is rejected                    |
+------------------------+----------------------------------------------------+
| unisolvence            | determinants and biorthogonality, ``m = 1..6``     |
+------------------------+----------------------------------------------------+
| inverse-inequality     | local inverse inequality constants are finite      |
+------------------------+----------------------------------------------------+
| leray                  | idempotence and divergence of the projection       |
+------------------------+----------------------------------------------------+
| parseval               | physical against spectral L2 norm                  |
+------------------------+----------------------------------------------------+
| energy-orthogonality   | ``<P(u.grad)u, u>`` relative to its scale          |
+------------------------+----------------------------------------------------+
| spectral-exactness     | one spectral cell is exact on band-limited data    |
+------------------------+----------------------------------------------------+
"""

import dataclasses
import logging
import math
import typing

import numpy as np

from nudgelab import cover as cover_mod
from nudgelab import interpolant, local, pou, solver, spectral, unisolvence
from nudgelab.errors import ConfigError, PartitionError

logger = logging.getLogger("nudgelab.verify")

PARTITION_TOL = 1e-12
DERIVATIVE_SPREAD = 2.0


@dataclasses.dataclass(frozen=True)
class CheckResult:
    check: str
    value: float
    bound: float
    passed: bool

    @classmethod
    def at_most(cls, check: str, value: float, bound: float) -> "CheckResult":
        return cls(check, float(value), float(bound), bool(value <= bound))


@dataclasses.dataclass
class VerifyContext:
    """Inputs shared by the checks.

    :param cover: Cover under test, in addition to the built-in ones.
    """

    grid: spectral.Grid
    rng: np.random.Generator
    cover: cover_mod.Cover | None = None


def _lemma(check: str, report: cover_mod.LemmaReport) -> CheckResult:
    """Signed violation of a sandwich; non-positive means it holds."""
    scale = max(abs(report.value), 1.0)
    violation = max(report.lower - report.value, report.value - report.upper) / scale
    return CheckResult(check, violation, report.tol, report.passed)


def _covers(ctx: VerifyContext) -> list[cover_mod.Cover]:
    covers = [cover_mod.uniform_cover(4), cover_mod.dyadic_cover(2)]
    if ctx.cover is not None:
        covers.append(ctx.cover)
    return covers


def check_pou_sum(ctx: VerifyContext) -> list[CheckResult]:
    out = []
    for c in _covers(ctx):
        deviation = float(np.abs(pou.PartitionOfUnity(c).partition_sum(ctx.grid) - 1.0).max())
        out.append(CheckResult.at_most(f"pou-sum {c.name}", deviation, PARTITION_TOL))
    return out


def check_pou_plateau(ctx: VerifyContext) -> list[CheckResult]:
    out = []
    for c in _covers(ctx):
        report = pou.check_plateau(pou.PartitionOfUnity(c), ctx.grid)
        value = max(report.max_core_deviation, report.max_outside_value)
        out.append(CheckResult(f"pou-plateau {c.name}", value, 0.0, report.passed))
    return out


def check_pou_derivatives(ctx: VerifyContext) -> list[CheckResult]:
    levels = [
        pou.build_pou(cover_mod.uniform_cover(count)).derivative_constants()
        for count in (4, 8, 16)
    ]
    out = []
    for ell in range(1, pou.MAX_DERIVATIVE + 1):
        within = max(level.spread(ell) for level in levels)
        bounds = [level.bound(ell) for level in levels]
        across = max(bounds) / min(bounds)
        spread = max(within, across)
        out.append(CheckResult.at_most(f"pou-derivatives l={ell}", spread, DERIVATIVE_SPREAD))
    return out


def check_cover_geometry(ctx: VerifyContext) -> list[CheckResult]:
    out = []
    for c in _covers(ctx):
        out.append(CheckResult.at_most(f"overlap-count {c.name}", c.pi0, cover_mod.MAX_OVERLAP))
        report = cover_mod.check_delta_adic(c)
        out.append(
            CheckResult(f"delta-adic {c.name}", report.worst_ratio, report.delta, report.passed)
        )
    return out


def check_multiplicity(ctx: VerifyContext) -> list[CheckResult]:
    x, y = ctx.grid.mesh()
    phi = 1.0 + 0.5 * np.sin(x) * np.cos(2 * y)
    out = []
    for c in _covers(ctx):
        report = cover_mod.check_multiplicity_lemma(c, ctx.grid, phi)
        out.append(_lemma(f"multiplicity-lemma {c.name}", report))
    staggered = cover_mod.staggered_cover(2)
    report = cover_mod.partition_multiplicity(staggered)
    value = math.nan if report.multiplicity is None else report.multiplicity
    passed = report.passed and value == 4
    out.append(CheckResult(f"partition-multiplicity {staggered.name}", value, 4.0, passed))
    return out


def check_pou_blend(ctx: VerifyContext) -> list[CheckResult]:
    out = []
    for c in _covers(ctx):
        partition = pou.PartitionOfUnity(c)
        data = ctx.rng.standard_normal((len(c),) + ctx.grid.shape)
        out.append(_lemma(f"pou-blend {c.name}", pou.check_pou_lemma(partition, ctx.grid, data)))
    return out


def check_gapped_cover(ctx: VerifyContext) -> list[CheckResult]:
    """A uniform cover missing one cell must fail the partition sum."""
    full = cover_mod.uniform_cover(4)
    gapped = cover_mod.Cover(full.subdomains[1:], name="gapped-4")
    deviation = float(np.abs(pou.PartitionOfUnity(gapped).partition_sum(ctx.grid) - 1.0).max())
    try:
        pou.build_pou(gapped, grid=ctx.grid)
        rejected = False
    except PartitionError as err:
        logger.debug(f"gapped cover rejected: {err}")
        rejected = True
    passed = rejected and deviation > PARTITION_TOL
    return [CheckResult("gapped-cover", deviation, PARTITION_TOL, passed)]


def check_unisolvence(ctx: VerifyContext) -> list[CheckResult]:
    out = []
    for m in range(1, 7):
        basis = unisolvence.build_volpoly_dual_basis(m)
        out.append(CheckResult.at_most(f"unisolvence-det m={m}", basis.determinant_error, 1e-8))
        error = basis.biorthogonality_error()
        out.append(CheckResult.at_most(f"biorthogonality m={m}", error, 1e-10))
    return out


def check_inverse_inequality(ctx: VerifyContext) -> list[CheckResult]:
    cell = cover_mod.uniform_cover(4)[5]
    out = []
    for op in (local.lagrange(2), local.volpoly(2)):
        report = local.check_inverse_inequality(op, cell, ctx.grid, 1, 0, ensemble_size=4)
        finite = math.isfinite(report.ratio)
        out.append(CheckResult(f"inverse-inequality {op.label}", report.ratio, math.inf, finite))
    return out


def check_leray(ctx: VerifyContext) -> list[CheckResult]:
    u = spectral.VectorField.from_physical(ctx.rng.standard_normal((2,) + ctx.grid.shape), ctx.grid)
    once = spectral.leray_project(u)
    twice = spectral.leray_project(once)
    drift = float(np.abs(twice.coeffs - once.coeffs).max() / np.abs(once.coeffs).max())
    return [
        CheckResult.at_most("leray-idempotence", drift, 1e-12),
        CheckResult.at_most("leray-divergence", once.divergence_residual(), 1e-12),
    ]


def check_parseval(ctx: VerifyContext) -> list[CheckResult]:
    values = ctx.rng.standard_normal(ctx.grid.shape)
    values -= values.mean()
    physical = float(np.sum(values**2)) * ctx.grid.dx**2
    field = spectral.SpectralField.from_physical(values, ctx.grid)
    spectral_sq = spectral.sobolev_norm(field, 0) ** 2
    return [CheckResult.at_most("parseval", abs(physical - spectral_sq) / physical, 1e-10)]


def check_energy_orthogonality(ctx: VerifyContext) -> list[CheckResult]:
    u = spectral.random_solenoidal(ctx.grid, ctx.grid.n // 4, ctx.rng)
    term = solver.nonlinear_term(u)
    scale = spectral.sobolev_norm(term, 0) * spectral.sobolev_norm(u, 0)
    value = abs(solver.energy_transfer(u)) / scale if scale > 0 else 0.0
    return [CheckResult.at_most("energy-orthogonality", value, 1e-10)]


def check_spectral_exactness(ctx: VerifyContext) -> list[CheckResult]:
    field = spectral.random_field(ctx.grid, 4, ctx.rng)
    interp = interpolant.uniform_family(local.spectral_local(4), 1)
    error = interpolant.global_error(interp, field, 0)
    relative = error / spectral.sobolev_norm(field, 0)
    return [CheckResult.at_most("spectral-exactness", relative, 1e-10)]


CHECKS: dict[str, typing.Callable[[VerifyContext], list[CheckResult]]] = {
    "pou-sum": check_pou_sum,
    "pou-plateau": check_pou_plateau,
    "pou-derivatives": check_pou_derivatives,
    "cover-geometry": check_cover_geometry,
    "multiplicity": check_multiplicity,
    "pou-blend": check_pou_blend,
    "gapped-cover": check_gapped_cover,
    "unisolvence": check_unisolvence,
    "inverse-inequality": check_inverse_inequality,
    "leray": check_leray,
    "parseval": check_parseval,
    "energy-orthogonality": check_energy_orthogonality,
    "spectral-exactness": check_spectral_exactness,
}


def run_suite(
    n: int = 64,
    names: typing.Sequence[str] = (),
    cover: cover_mod.Cover | None = None,
    seed: int = 0,
) -> list[CheckResult]:
    """Run the named checks (all of them when ``names`` is empty).

    :raises: :class:`ConfigError` for an unknown check name.
    """
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise ConfigError(
            f"unknown checks {', '.join(unknown)}; choose from {', '.join(CHECKS)}",
            "verify.checks",
        )
    ctx = VerifyContext(spectral.Grid(n), np.random.default_rng(seed), cover)
    results = []
    for name in names or CHECKS:
        rows = CHECKS[name](ctx)
        for row in rows:
            level = logging.DEBUG if row.passed else logging.WARNING
            verdict = "pass" if row.passed else "FAIL"
            logger.log(level, f"{row.check}: {row.value:.3g} (bound {row.bound:.3g}) {verdict}")
        results.extend(rows)
    failed = sum(not r.passed for r in results)
    logger.info(f"verification: {len(results) - failed} passed, {failed} failed")
    return results
