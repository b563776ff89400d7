"""Tensor-product plateau partitions of unity subordinate to a cover.

Each :math:`\\psi_q` is a product of one factor per axis.  Along an axis a
cell of side ``s`` with edge ramps ``w_l`` and ``w_r`` has the factor

.. math::

    X(\\xi) = S\\Big(\\frac{\\xi + w_l}{2 w_l}\\Big)\\,
              S\\Big(\\frac{s + w_r - \\xi}{2 w_r}\\Big),
    \\qquad S(t) = \\frac{1}{1 + e^{1/t - 1/(1-t)}},

in the local coordinate :math:`\\xi` measured from the cell anchor.  The
smoothstep satisfies :math:`S(t) + S(1-t) = 1`, so two cells sharing an
edge with the same ramp sum to one across it.  A cell spanning the whole
axis has the constant factor 1.

:math:`\\psi_q` equals one on the plateau core (the cell shrunk by its
ramps) and vanishes outside the collared cell.
"""

import dataclasses
import logging
import math

import numpy as np
import scipy.special

from nudgelab import cover as cover_mod
from nudgelab import snapshot, spectral
from nudgelab.errors import PartitionError
from nudgelab.spectral import TWO_PI

logger = logging.getLogger("nudgelab.pou")

MAX_DERIVATIVE = 4
"""Highest derivative order available in closed form."""

PARTITION_TOL = 1e-12

_T_CLAMP = 1e-6


def _smoothstep_jet(t: np.ndarray, order: int) -> np.ndarray:
    """``order``-th derivative of the smoothstep at ``t``.

    Uses Faà di Bruno on :math:`\\sigma(g(t))` with the logistic
    :math:`\\sigma` and :math:`g(t) = 1/(1-t) - 1/t`.
    """
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    tc = np.clip(t, _T_CLAMP, 1 - _T_CLAMP)
    g = 1.0 / (1.0 - tc) - 1.0 / tc
    s = scipy.special.expit(g)
    if order == 0:
        return np.where(inside, s, np.where(t >= 1, 1.0, 0.0))
    # g^(n)(t) = n!/(1-t)^(n+1) - (-1)^n n!/t^(n+1)
    dg = [
        math.factorial(n) / (1.0 - tc) ** (n + 1)
        - (-1) ** n * math.factorial(n) / tc ** (n + 1)
        for n in range(1, order + 1)
    ]
    s1 = s * (1.0 - s)
    s2 = s1 * (1.0 - 2.0 * s)
    s3 = s1 * (1.0 - 6.0 * s + 6.0 * s**2)
    s4 = s1 * (1.0 - 2.0 * s) * (1.0 - 12.0 * s + 12.0 * s**2)
    if order == 1:
        value = s1 * dg[0]
    elif order == 2:
        value = s2 * dg[0] ** 2 + s1 * dg[1]
    elif order == 3:
        value = s3 * dg[0] ** 3 + 3.0 * s2 * dg[0] * dg[1] + s1 * dg[2]
    elif order == 4:
        value = (
            s4 * dg[0] ** 4
            + 6.0 * s3 * dg[0] ** 2 * dg[1]
            + s2 * (3.0 * dg[1] ** 2 + 4.0 * dg[0] * dg[2])
            + s1 * dg[3]
        )
    else:
        raise ValueError(f"smoothstep derivatives go up to {MAX_DERIVATIVE}, got {order}")
    return np.where(inside, value, 0.0)


def smoothstep(t, order: int = 0):
    """The plateau smoothstep or one of its first four derivatives.

    >>> float(smoothstep(0.5))
    0.5
    >>> float(smoothstep(0.0)), float(smoothstep(1.0))
    (0.0, 1.0)
    """
    return _smoothstep_jet(t, order)


@dataclasses.dataclass(frozen=True)
class DerivativeConstants:
    """Measured :math:`c_{q,\\ell} = \\max_{|\\alpha|=\\ell}\\sup|\\partial^\\alpha\\psi_q|\\,h_q^\\ell`.

    :param values: Array of shape ``(cells, MAX_DERIVATIVE)``; column
        ``ell - 1`` holds order ``ell``.
    """

    values: np.ndarray

    def spread(self, ell: int) -> float:
        """Max over min of the order-``ell`` constants among cells with a ramp."""
        column = self.values[:, ell - 1]
        column = column[column > 0]
        if column.size == 0:
            return 1.0
        return float(column.max() / column.min())

    def bound(self, ell: int) -> float:
        return float(self.values[:, ell - 1].max())


@dataclasses.dataclass(frozen=True)
class PartitionOfUnity:
    """Plateau partition of unity over a rectilinear cover.

    :param cover: The cover.
    :param smoothness: Highest derivative order the partition promises,
        between 1 and 4.
    """

    cover: cover_mod.Cover
    smoothness: int = MAX_DERIVATIVE

    def __len__(self) -> int:
        return len(self.cover)

    def local_axis_factor(self, q: int, axis: int, xi: np.ndarray, order: int = 0) -> np.ndarray:
        """Axis factor of ``psi_q`` or its derivative at local coordinates ``xi``."""
        cell = self.cover[q]
        xi = np.asarray(xi, dtype=float)
        if cell.full_axis(axis):
            return np.full(xi.shape, 1.0 if order == 0 else 0.0)
        left, right = cell.axis_ramps(axis)
        side = cell.sides[axis]
        t_left = (xi + left) / (2.0 * left)
        t_right = (side + right - xi) / (2.0 * right)
        value = np.zeros(xi.shape)
        for j in range(order + 1):
            rising = _smoothstep_jet(t_left, j) / (2.0 * left) ** j
            falling = _smoothstep_jet(t_right, order - j) * (-1.0 / (2.0 * right)) ** (order - j)
            value = value + math.comb(order, j) * rising * falling
        return value

    def local_coordinate(self, q: int, axis: int, coords: np.ndarray) -> np.ndarray:
        """Signed offset from the anchor, wrapped so the left ramp sits at ``[-w_l, 0]``."""
        cell = self.cover[q]
        left = cell.axis_ramps(axis)[0]
        return np.mod(np.asarray(coords) - cell.anchor[axis] + left, TWO_PI) - left

    def axis_factor(self, q: int, axis: int, coords: np.ndarray, order: int = 0) -> np.ndarray:
        xi = self.local_coordinate(q, axis, coords)
        return self.local_axis_factor(q, axis, xi, order)

    def factors(
        self, q: int, grid: spectral.Grid, alpha: tuple[int, int] = (0, 0)
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis samples whose outer product is :math:`\\partial^\\alpha\\psi_q` on ``grid``."""
        return (
            self.axis_factor(q, 0, grid.points, alpha[0]),
            self.axis_factor(q, 1, grid.points, alpha[1]),
        )

    def evaluate(self, q: int, grid: spectral.Grid, alpha: tuple[int, int] = (0, 0)) -> np.ndarray:
        """:math:`\\partial^\\alpha\\psi_q` sampled on the grid."""
        if sum(alpha) > self.smoothness:
            raise ValueError(f"derivative order {sum(alpha)} exceeds smoothness {self.smoothness}")
        fx, fy = self.factors(q, grid, alpha)
        return np.outer(fx, fy)

    def partition_sum(self, grid: spectral.Grid) -> np.ndarray:
        total = np.zeros(grid.shape)
        for q in range(len(self.cover)):
            fx, fy = self.factors(q, grid)
            total += np.outer(fx, fy)
        return total

    def sample(self, grid: spectral.Grid) -> np.ndarray:
        """All partition functions stacked as ``(cells, n, n)``."""
        return np.stack([self.evaluate(q, grid) for q in range(len(self.cover))])

    def derivative_constants(self, samples: int = 2049) -> DerivativeConstants:
        """Measure P4 constants on a fine lattice of every support.

        The lattice is laid over each axis of the collared support, so the
        measurement does not depend on the solver grid.
        """
        values = np.zeros((len(self.cover), MAX_DERIVATIVE))
        for q, cell in enumerate(self.cover):
            sups = []
            for axis in (0, 1):
                if cell.full_axis(axis):
                    xi = np.linspace(0.0, TWO_PI, samples)
                else:
                    left, right = cell.axis_ramps(axis)
                    xi = np.linspace(-left, cell.sides[axis] + right, samples)
                sups.append(
                    [
                        float(np.abs(self.local_axis_factor(q, axis, xi, r)).max())
                        for r in range(MAX_DERIVATIVE + 1)
                    ]
                )
            for ell in range(1, MAX_DERIVATIVE + 1):
                best = max(sups[0][a] * sups[1][ell - a] for a in range(ell + 1))
                values[q, ell - 1] = best * cell.diameter**ell
        return DerivativeConstants(values)


def build_pou(
    cover: cover_mod.Cover, smoothness: int = MAX_DERIVATIVE, grid: spectral.Grid | None = None
) -> PartitionOfUnity:
    """Build the plateau partition of unity of a cover.

    The partition sum is checked on ``grid`` (default ``n = 128``).

    :param smoothness: Derivative order the caller needs, 1 to 4.
    :raises: :class:`PartitionError` when the sum deviates from one by more
        than ``1e-12``, which happens for gapped covers, covers whose
        neighbouring ramps do not match, or covers with more than one layer.
    """
    if not 1 <= smoothness <= MAX_DERIVATIVE:
        raise ValueError(f"smoothness must lie in 1..{MAX_DERIVATIVE}, got {smoothness}")
    grid = grid or spectral.Grid(128)
    pou = PartitionOfUnity(cover, smoothness)
    deviation = float(np.abs(pou.partition_sum(grid) - 1.0).max())
    if deviation > PARTITION_TOL:
        raise PartitionError(
            f"partition of unity on cover {cover.name} deviates from 1 by {deviation:.3e}"
        )
    logger.debug(f"built partition of unity on {cover.name}, deviation {deviation:.2e}")
    return pou


@dataclasses.dataclass(frozen=True)
class PlateauReport:
    """Grid check of P1: ones on the plateau cores, zeros off the collars."""

    max_core_deviation: float
    max_outside_value: float

    @property
    def passed(self) -> bool:
        return self.max_core_deviation == 0.0 and self.max_outside_value == 0.0


def _inside(coords: np.ndarray, anchor: float, side: float) -> np.ndarray:
    if side >= TWO_PI:
        return np.ones(coords.shape, dtype=bool)
    return np.mod(coords - anchor, TWO_PI) <= side


def check_plateau(pou: PartitionOfUnity, grid: spectral.Grid) -> PlateauReport:
    core_dev = 0.0
    outside = 0.0
    pts = grid.points
    for q, cell in enumerate(pou.cover):
        psi = pou.evaluate(q, grid)
        core = cell.plateau_region()
        in_core = np.outer(
            _inside(pts, core.anchor[0], core.sides[0]),
            _inside(pts, core.anchor[1], core.sides[1]),
        )
        collar = cell.collared_region()
        # open collar: boundary points are outside too
        in_collar = np.outer(
            _open_inside(pts, collar.anchor[0], collar.sides[0]),
            _open_inside(pts, collar.anchor[1], collar.sides[1]),
        )
        if in_core.any():
            core_dev = max(core_dev, float(np.abs(psi[in_core] - 1.0).max()))
        if (~in_collar).any():
            outside = max(outside, float(np.abs(psi[~in_collar]).max()))
    return PlateauReport(core_dev, outside)


def _open_inside(coords: np.ndarray, anchor: float, side: float) -> np.ndarray:
    if side >= TWO_PI:
        return np.ones(coords.shape, dtype=bool)
    offset = np.mod(coords - anchor, TWO_PI)
    return (offset > 0) & (offset < side)


def check_pou_lemma(
    pou: PartitionOfUnity, grid: spectral.Grid, local_data: np.ndarray
) -> cover_mod.LemmaReport:
    """Check :math:`\\int(\\sum_q\\psi_q f_q)^2 \\le \\pi_0\\sum_q\\|f_q\\|^2_{L^2(\\mathrm{supp}\\,\\psi_q)}`.

    :param local_data: Per-cell functions ``f_q`` on the grid, shape
        ``(cells, n, n)``.
    """
    grid.check_shape(local_data, leading=(len(pou),))
    blended = np.zeros(grid.shape)
    rhs = 0.0
    for q in range(len(pou)):
        psi = pou.evaluate(q, grid)
        blended += psi * local_data[q]
        rhs += float(np.sum(local_data[q][psi > 0] ** 2))
    lhs = float(np.sum(blended**2)) * grid.dx**2
    rhs *= pou.cover.pi0 * grid.dx**2
    return cover_mod.LemmaReport("partition of unity blend", 0.0, lhs, rhs)


def pou_snapshot(pou: PartitionOfUnity, grid: spectral.Grid) -> snapshot.Snapshot:
    """Partition functions as a ``pou`` snapshot for inspection."""
    return snapshot.Snapshot(
        snapshot.SnapshotKind.POU,
        pou.sample(grid),
        0.0,
        {"cover": pou.cover.name, "smoothness": pou.smoothness},
    )
