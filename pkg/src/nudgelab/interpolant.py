"""Global interpolant observable operators assembled from local ones.

A global operator blends one local operator per cell with the partition
of unity of the cover,

.. math::

    (I\\phi)(x) = \\sum_q \\psi_q(x)\\,(I^{(q)}\\phi)(x),

and its mean-free variant is :math:`J\\phi = I\\phi - \\langle I\\phi\\rangle`.
Local outputs are only evaluated on the collared cells, where
:math:`\\psi_q` lives, and accumulated on the global grid in cell order.
Derivatives of :math:`I\\phi` follow from the Leibniz rule on each term.
"""

import dataclasses
import logging
import math
import typing

import numpy as np

from nudgelab import enum, local, spectral
from nudgelab.cover import Cover, uniform_cover
from nudgelab.errors import CoverError, OrderError
from nudgelab.pou import PartitionOfUnity, build_pou
from nudgelab.utils import fitting

logger = logging.getLogger("nudgelab.interpolant")

Data = np.ndarray | spectral.SpectralField | local.Sampler


class FamilyCategory(enum.CiStrEnum):
    """Kind of subordinate family: one operator type or several, on a uniform cover or not."""

    REPEATED_UNIFORM = "repeated-uniform"
    REPEATED_NONUNIFORM = "repeated-nonuniform"
    HYBRID_UNIFORM = "hybrid-uniform"
    HYBRID_NONUNIFORM = "hybrid-nonuniform"


def _relabel(op: local.LocalInterpolant, order: int) -> local.LocalInterpolant:
    if op.kind is local.OperatorKind.SPECTRAL or op.order == order:
        return op
    return dataclasses.replace(op, order=order)


class GlobalInterpolant:
    """A partition of unity together with one local operator per cell.

    Build with :func:`assemble`.  The family order is the smallest local
    order and the level the largest local level; every local operator is
    relabelled down to the family order.
    """

    def __init__(
        self,
        cover: Cover,
        pou: PartitionOfUnity,
        locals_: typing.Sequence[local.LocalInterpolant],
        canonical: typing.Sequence[local.LocalInterpolant],
    ):
        self.cover = cover
        self.pou = pou
        self.locals = tuple(locals_)
        self.canonical = tuple(canonical)
        self._groups: dict[int, list[local.PlanGroup]] = {}
        self._weights: dict[tuple, np.ndarray] = {}

    @property
    def m(self) -> int:
        return min(op.order for op in self.locals)

    @property
    def k(self) -> int:
        return max(op.level for op in self.locals)

    @property
    def generic(self) -> bool:
        return len({(op.order, op.level) for op in self.locals}) == 1

    @property
    def uniform_scale(self) -> float | None:
        return self.cover.uniform_scale

    @property
    def optimal(self) -> bool:
        return self.generic and all(op.optimal for op in self.locals)

    @property
    def category(self) -> FamilyCategory:
        repeated = len({(op.kind, op.degree) for op in self.canonical}) == 1
        uniform = self.uniform_scale is not None
        if repeated:
            if uniform:
                return FamilyCategory.REPEATED_UNIFORM
            return FamilyCategory.REPEATED_NONUNIFORM
        return FamilyCategory.HYBRID_UNIFORM if uniform else FamilyCategory.HYBRID_NONUNIFORM

    @property
    def rank(self) -> int:
        """Upper bound on the rank, the sum of the local ranks."""
        return sum(op.rank for op in self.locals)

    @property
    def scale(self) -> float:
        """Uniform scale, or the largest cell diameter."""
        if self.uniform_scale is not None:
            return self.uniform_scale
        return float(self.cover.diameters.max())

    def describe(self) -> str:
        labels = sorted({op.label for op in self.canonical})
        return (
            f"{self.category} family of {', '.join(labels)} on {self.cover.name}: "
            f"m={self.m}, k={self.k}, generic={self.generic}, optimal={self.optimal}"
        )

    def plan_groups(self, grid: spectral.Grid) -> list[local.PlanGroup]:
        """Local plans on ``grid``, batched by signature and built once per grid."""
        if grid.n not in self._groups:
            plans = [local.build_plan(op, cell, grid) for op, cell in zip(self.locals, self.cover)]
            self._groups[grid.n] = local.group_plans(plans)
            logger.debug(
                f"planned {len(plans)} cells in {len(self._groups[grid.n])} groups at n={grid.n}"
            )
        return self._groups[grid.n]

    def window_weights(
        self, grid: spectral.Grid, index: int, group: local.PlanGroup, order: tuple[int, int]
    ) -> np.ndarray:
        """:math:`\\partial^\\beta\\psi_q` on each cell's window, shape ``(cells, nx, ny)``."""
        key = (grid.n, index, order)
        if key not in self._weights:
            fx = np.stack([
                self.pou.local_axis_factor(q, 0, plan.window[0].coord, order[0])
                for q, plan in zip(group.cells, group.plans)
            ])
            fy = np.stack([
                self.pou.local_axis_factor(q, 1, plan.window[1].coord, order[1])
                for q, plan in zip(group.cells, group.plans)
            ])
            self._weights[key] = fx[:, :, None] * fy[:, None, :]
        return self._weights[key]


def assemble(
    cover: Cover,
    pou: PartitionOfUnity,
    locals_: local.LocalInterpolant | typing.Sequence[local.LocalInterpolant],
) -> GlobalInterpolant:
    """Combine a cover, its partition of unity and the local operators.

    :param locals_: One operator per cell, or a single operator used on
        every cell.
    :raises: :class:`CoverError` when the operator count does not match the
        cells or the partition belongs to another cover.
    """
    if isinstance(locals_, local.LocalInterpolant):
        locals_ = [locals_] * len(cover)
    locals_ = list(locals_)
    if len(locals_) != len(cover):
        raise CoverError(f"{len(locals_)} local operators for {len(cover)} cells")
    if pou.cover != cover:
        raise CoverError("partition of unity is subordinate to a different cover")
    order = min(op.order for op in locals_)
    relabelled = [_relabel(op, order) for op in locals_]
    interp = GlobalInterpolant(cover, pou, relabelled, locals_)
    logger.info(f"assembled {interp.describe()}")
    return interp


def uniform_family(
    op: local.LocalInterpolant, cells_per_axis: int, collar_fraction: float = 0.25
) -> GlobalInterpolant:
    """The repeated family of ``op`` on a uniform cover."""
    cover = uniform_cover(cells_per_axis, collar_fraction)
    return assemble(cover, build_pou(cover), op)


def as_sampler(data: Data, grid: spectral.Grid | None = None) -> local.Sampler:
    """Wrap grid samples or a spectral field as a sampler."""
    if isinstance(data, spectral.SpectralField):
        return local.FieldSampler.from_field(data)
    if isinstance(data, np.ndarray):
        if grid is None:
            grid = spectral.Grid(data.shape[-1])
        return local.FieldSampler(data, grid)
    return data


def apply_global(
    interp: GlobalInterpolant, data: Data, alpha: tuple[int, int] = (0, 0)
) -> np.ndarray:
    """:math:`\\partial^\\alpha I\\phi` on the grid.

    :param data: Grid samples, a spectral field or any sampler.
    :param alpha: Derivative multi-index, at most the partition smoothness.
    :return: Physical samples, shape ``(n, n)``.
    """
    if sum(alpha) > interp.pou.smoothness:
        raise ValueError(
            f"derivative order {sum(alpha)} exceeds partition smoothness {interp.pou.smoothness}"
        )
    sampler = as_sampler(data)
    grid = sampler.grid
    out = np.zeros(grid.shape)
    for index, group in enumerate(interp.plan_groups(grid)):
        coeffs = group.coefficients(sampler)
        total = np.zeros((len(group),) + tuple(ix.shape[1] for ix in group.window_index))
        for bx in range(alpha[0] + 1):
            for by in range(alpha[1] + 1):
                weight = math.comb(alpha[0], bx) * math.comb(alpha[1], by)
                psi = interp.window_weights(grid, index, group, (alpha[0] - bx, alpha[1] - by))
                total += weight * psi * group.evaluate(coeffs, (bx, by))
        wx, wy = group.window_index
        np.add.at(out, (wx[:, :, None], wy[:, None, :]), total)
    return out


def mean_free(interp: GlobalInterpolant, data: Data, alpha: tuple[int, int] = (0, 0)) -> np.ndarray:
    """:math:`\\partial^\\alpha J\\phi`; the mean is removed only when ``alpha = (0, 0)``."""
    values = apply_global(interp, data, alpha)
    if alpha == (0, 0):
        values = values - values.mean()
    return values


def seminorm(values_by_alpha: typing.Iterable[np.ndarray], grid: spectral.Grid) -> float:
    total = sum(float(np.sum(v**2)) for v in values_by_alpha)
    return math.sqrt(total) * grid.dx


def output_norm(interp: GlobalInterpolant, data: Data, ell: int) -> float:
    """:math:`\\|I\\phi\\|_{\\dot H^\\ell}` by grid quadrature."""
    sampler = as_sampler(data)
    return seminorm(
        (apply_global(interp, sampler, alpha) for alpha in spectral.multi_indices(ell)),
        sampler.grid,
    )


def global_error(interp: GlobalInterpolant, data: Data, ell: int) -> float:
    """:math:`\\|\\phi - I\\phi\\|_{\\dot H^\\ell}` by grid quadrature."""
    sampler = as_sampler(data)
    return seminorm(
        (
            sampler.derivative(alpha) - apply_global(interp, sampler, alpha)
            for alpha in spectral.multi_indices(ell)
        ),
        sampler.grid,
    )


def estimate_family_constants(
    interp: GlobalInterpolant,
    grid: spectral.Grid,
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> list[local.AssociatedConstants]:
    """Associated constants for every cell of the family.

    Cells with the same operator and the same collared shape share one
    estimate, made on the first such cell.
    """
    shared: dict[tuple, local.AssociatedConstants] = {}
    constants = []
    for op, cell in zip(interp.locals, interp.cover):
        key = (op, cell.sides, cell.collar)
        if key not in shared:
            shared[key] = local.estimate_all_constants(op, cell, grid, ensemble_size, seed, kmax)
            logger.debug(f"estimated constants of {op.label} on a {cell.sides} cell")
        constants.append(dataclasses.replace(shared[key], h=cell.diameter))
    logger.info(f"estimated {len(shared)} constant tables for {len(constants)} cells")
    return constants


@dataclasses.dataclass(frozen=True)
class GlobalErrorRow:
    j: int
    rhs: float


@dataclasses.dataclass(frozen=True)
class GlobalErrorReport:
    """Measured global error against the per-cell structural bound.

    :param lhs: :math:`\\|\\phi - I\\phi\\|^2_{\\dot H^\\ell}`.
    :param rows: For each smoothness ``j``, the sum over cells of
        :math:`\\varepsilon_{\\ell,j}(Q_q)^2 h_q^{2(j-\\ell)}\\|\\phi\\|^2_{\\dot H^j(\\tilde Q_q)}`.
    """

    ell: int
    h: float
    lhs: float
    rows: tuple[GlobalErrorRow, ...]

    @property
    def rhs(self) -> float:
        return sum(row.rhs for row in self.rows)

    @property
    def ratio(self) -> float:
        if self.rhs == 0.0:
            return 0.0 if self.lhs == 0.0 else math.inf
        return self.lhs / self.rhs

    def records(self) -> list[dict]:
        return [
            {
                "ell": self.ell,
                "j": row.j,
                "h": self.h,
                "lhs": self.lhs,
                "rhs": row.rhs,
                "ratio": self.lhs / row.rhs if row.rhs > 0 else math.nan,
            }
            for row in self.rows
        ]


def verify_global_error(
    interp: GlobalInterpolant,
    field: spectral.SpectralField,
    ell: int,
    constants: list[local.AssociatedConstants] | None = None,
    ensemble_size: int = 8,
    seed: int = 0,
) -> GlobalErrorReport:
    """Measure the global error and its bound by local errors.

    :param constants: Per-cell constants; estimated when omitted.
    :raises: :class:`OrderError` for ``ell`` above the family order.
    """
    if ell > interp.m:
        raise OrderError(f"family has order {interp.m}, cannot control ell={ell}")
    grid = field.grid
    if constants is None:
        constants = estimate_family_constants(interp, grid, ensemble_size, seed)
    lhs = global_error(interp, field, ell) ** 2
    regions = [cell.collared_region() for cell in interp.cover]
    h = interp.cover.diameters
    rows = []
    for j in range(1, interp.k + 1):
        norms = spectral.local_sobolev_norms(field, j, regions)
        eps = np.array([c.combined(ell, j) for c in constants])
        rows.append(GlobalErrorRow(j, float(np.sum(eps**2 * h ** (2 * (j - ell)) * norms**2))))
    report = GlobalErrorReport(ell, interp.scale, lhs, tuple(rows))
    logger.info(f"global error ell={ell}: lhs={report.lhs:.3e} rhs={report.rhs:.3e}")
    return report


@dataclasses.dataclass(frozen=True)
class BoundednessRow:
    """Ensemble sup of :math:`\\|I\\phi\\|_{\\dot H^\\ell} / \\|\\phi\\|_{H^k}` and its ``h^\\ell``-scaled version."""

    ell: int
    h: float
    ratio: float
    scaled_ratio: float


def verify_boundedness(
    interp: GlobalInterpolant,
    grid: spectral.Grid,
    ells: typing.Sequence[int] = (0, 1),
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> list[BoundednessRow]:
    """Check that the family is bounded from :math:`H^k` into :math:`\\dot H^\\ell`."""
    rng = np.random.default_rng(seed)
    kmax = kmax or max(grid.n // 8, 2)
    best = {ell: 0.0 for ell in ells}
    for _ in range(ensemble_size):
        field = spectral.random_field(grid, kmax, rng)
        denom = spectral.sobolev_norm(field, interp.k, homogeneous=False)
        if denom == 0.0:
            continue
        for ell in ells:
            best[ell] = max(best[ell], output_norm(interp, field, ell) / denom)
    h = interp.scale
    return [BoundednessRow(ell, h, best[ell], best[ell] * h**ell) for ell in ells]


@dataclasses.dataclass(frozen=True)
class ConvergenceRow:
    cells_per_axis: int
    h: float
    error: float


def convergence_study(
    op: local.LocalInterpolant,
    field: spectral.SpectralField,
    ell: int,
    cells_per_axis: typing.Sequence[int] = (4, 8, 16, 32),
    collar_fraction: float = 0.25,
    floor: float = 1e-12,
) -> tuple[list[ConvergenceRow], fitting.SlopeFit]:
    """Global error of the uniform ``op`` family under refinement, with its log-log slope.

    :raises: :class:`ValueError` for fewer than four levels.
    """
    if len(cells_per_axis) < 4:
        raise ValueError(f"need at least 4 refinement levels, got {len(cells_per_axis)}")
    sampler = local.FieldSampler.from_field(field)
    rows = []
    for count in cells_per_axis:
        interp = uniform_family(op, count, collar_fraction)
        if ell > interp.m:
            raise OrderError(f"{op.label} has order {interp.m}, cannot control ell={ell}")
        rows.append(ConvergenceRow(count, interp.scale, global_error(interp, sampler, ell)))
    fit = fitting.loglog_slope([r.h for r in rows], [r.error for r in rows], floor)
    return rows, fit
