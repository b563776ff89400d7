"""Local interpolant observable operators on a single cell of a cover.

Every operator reduces observed data on a cell :math:`Q` to a finite
coefficient matrix ``C`` in a tensor basis and is then evaluated as

.. math::

    (I^Q\\phi)(\\xi, \\eta) = \\mathrm{Re}\\,\\big(B_x(\\xi)\\,C\\,B_y(\\eta)^T\\big),

where :math:`B_x` and :math:`B_y` hold monomials in the scaled local
coordinate, or local Fourier modes.  Two kinds of plan compute ``C``:

* tensor plans, ``C = G_x S G_y^T`` with ``S`` the grid samples of
  :math:`\\phi` on the cell (nodal values, volume averages, local Fourier
  coefficients);
* derivative plans, ``C = A d`` with ``d`` spectral derivative samples at
  the cell centre or over a ball (Taylor and averaged Taylor polynomials).

Plans depend on the cell and the grid only, so they are built once and
applied to many fields.  Cells whose plans have the same shapes are
stacked into a :class:`PlanGroup` and applied with batched matrix
products.

Canonical orders and levels:

+------------------+-----------+-----------+---------+
| Operator         | order m   | level k   | optimal |
+==================+===========+===========+=========+
| SpectralLocal(N) | 2 or set  | m + 1     | yes     |
+------------------+-----------+-----------+---------+
| Nodal0           | 0         | 2         | no      |
+------------------+-----------+-----------+---------+
| VolAvg0          | 0         | 1         | yes     |
+------------------+-----------+-----------+---------+
| Taylor1          | 1         | 3         | no      |
+------------------+-----------+-----------+---------+
| SobolevPoly(k)   | k         | k + 1     | yes     |
+------------------+-----------+-----------+---------+
| Lagrange(k)      | k         | k + 1     | yes     |
+------------------+-----------+-----------+---------+
| VolPoly(k)       | k         | k + 1     | yes     |
+------------------+-----------+-----------+---------+

An operator may be declared at a lower order than its canonical one
(``order=``), which keeps its level and drops the optimal flag.
"""

import dataclasses
import logging
import math
import re
import typing

import numpy as np
import scipy.linalg

from nudgelab import enum, spectral
from nudgelab.cover import Subdomain, uniform_cover
from nudgelab.errors import ConditionError, OrderError, SampleError
from nudgelab.spectral import TWO_PI
from nudgelab.utils import fitting

logger = logging.getLogger("nudgelab.local")

DEFAULT_SPECTRAL_ORDER = 2
"""Order declared for a local Fourier operator when none is given."""


class OperatorKind(enum.CiStrEnum):
    SPECTRAL = "spectrallocal"
    NODAL0 = "nodal0"
    VOLAVG0 = "volavg0"
    TAYLOR1 = "taylor1"
    SOBOLEV = "sobolevpoly"
    LAGRANGE = "lagrange"
    VOLPOLY = "volpoly"


_LABELS = {
    OperatorKind.SPECTRAL: "SpectralLocal",
    OperatorKind.NODAL0: "Nodal0",
    OperatorKind.VOLAVG0: "VolAvg0",
    OperatorKind.TAYLOR1: "Taylor1",
    OperatorKind.SOBOLEV: "SobolevPoly",
    OperatorKind.LAGRANGE: "Lagrange",
    OperatorKind.VOLPOLY: "VolPoly",
}

_DEGREE_KINDS = {
    OperatorKind.SPECTRAL,
    OperatorKind.SOBOLEV,
    OperatorKind.LAGRANGE,
    OperatorKind.VOLPOLY,
}

_OPTIMAL_KINDS = _DEGREE_KINDS | {OperatorKind.VOLAVG0}

_SPEC_RE = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*(?:\((.*)\))?\s*$")


@dataclasses.dataclass(frozen=True)
class LocalInterpolant:
    """A local operator type with its declared order and level.

    :param kind: Operator family.
    :param degree: ``N`` for SpectralLocal, ``k`` for the polynomial
        families; ignored otherwise.
    :param order: Declared order, at most the canonical one.  For
        SpectralLocal it sets the canonical order (default 2).
    :param radius: SobolevPoly ball radius as a fraction of half the
        shorter cell side.
    :raises: :class:`OrderError` for an order above the canonical one.
    """

    kind: OperatorKind
    degree: int = 0
    order: int | None = None
    radius: float = 1.0

    def __post_init__(self):
        kind = OperatorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _DEGREE_KINDS and self.degree < 1:
            raise ValueError(f"{_LABELS[kind]} needs a degree >= 1, got {self.degree}")
        if kind not in _DEGREE_KINDS:
            object.__setattr__(self, "degree", 0)
        if not 0 < self.radius <= 1:
            raise ValueError(f"radius fraction must lie in (0, 1], got {self.radius}")
        if kind is OperatorKind.SPECTRAL:
            canonical = DEFAULT_SPECTRAL_ORDER if self.order is None else self.order
        else:
            canonical = self.canonical_order
        order = canonical if self.order is None else self.order
        if order < 0 or order > canonical:
            raise OrderError(f"{_LABELS[kind]} has order at most {canonical}, got {order}")
        object.__setattr__(self, "order", order)

    @classmethod
    def parse(cls, text: str) -> "LocalInterpolant":
        """Parse ``"Lagrange(2)"``, ``"lagrange(2, order=1)"``, ``"VolAvg0"``, ...

        :raises: :class:`ValueError` on malformed text.
        """
        match = _SPEC_RE.match(text)
        if match is None:
            raise ValueError(f"cannot parse local operator '{text}'")
        name, args = match.groups()
        kwargs = {}
        for position, arg in enumerate(a.strip() for a in (args or "").split(",") if a.strip()):
            if "=" in arg:
                key, value = (part.strip() for part in arg.split("=", 1))
                kwargs[key] = float(value) if key == "radius" else int(value)
            elif position == 0:
                kwargs["degree"] = int(arg)
            else:
                raise ValueError(f"cannot parse argument '{arg}' of '{text}'")
        return cls(OperatorKind(name), **kwargs)

    @property
    def canonical_order(self) -> int:
        if self.kind is OperatorKind.SPECTRAL:
            return self.order if self.order is not None else DEFAULT_SPECTRAL_ORDER
        if self.kind in (OperatorKind.NODAL0, OperatorKind.VOLAVG0):
            return 0
        if self.kind is OperatorKind.TAYLOR1:
            return 1
        return self.degree

    @property
    def level(self) -> int:
        if self.kind is OperatorKind.NODAL0:
            return 2
        if self.kind is OperatorKind.TAYLOR1:
            return 3
        return self.canonical_order + 1

    @property
    def optimal(self) -> bool:
        return self.kind in _OPTIMAL_KINDS and self.level == self.order + 1

    @property
    def rank(self) -> int:
        if self.kind is OperatorKind.SPECTRAL:
            j = np.arange(-self.degree, self.degree + 1)
            return int(np.sum(j[:, None] ** 2 + j[None, :] ** 2 <= self.degree**2))
        if self.kind in (OperatorKind.NODAL0, OperatorKind.VOLAVG0):
            return 1
        if self.kind is OperatorKind.TAYLOR1:
            return 3
        if self.kind is OperatorKind.SOBOLEV:
            return (self.degree + 1) * (self.degree + 2) // 2
        return (self.degree + 1) ** 2

    @property
    def label(self) -> str:
        name = _LABELS[self.kind]
        if self.kind not in _DEGREE_KINDS:
            return name
        if self.kind is OperatorKind.SPECTRAL or self.order == self.canonical_order:
            return f"{name}({self.degree})"
        return f"{name}({self.degree}, order={self.order})"

    def __str__(self):
        return self.label


def spectral_local(modes: int, order: int = DEFAULT_SPECTRAL_ORDER) -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.SPECTRAL, modes, order)


def nodal0() -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.NODAL0)


def volavg0() -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.VOLAVG0)


def taylor1() -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.TAYLOR1)


def sobolev_poly(degree: int, radius: float = 1.0) -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.SOBOLEV, degree, radius=radius)


def lagrange(degree: int, order: int | None = None) -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.LAGRANGE, degree, order)


def volpoly(degree: int) -> LocalInterpolant:
    return LocalInterpolant(OperatorKind.VOLPOLY, degree)


class Sampler(typing.Protocol):
    """Source of observed data: derivatives of the signal on the grid."""

    grid: spectral.Grid

    def derivative(self, alpha: tuple[int, int]) -> np.ndarray: ...


class FieldSampler:
    """Samples of a field and its spectral derivatives, cached per multi-index.

    :param values: Physical samples; the mean is kept for ``alpha = (0, 0)``
        and drops out of every derivative.
    """

    def __init__(self, values: np.ndarray, grid: spectral.Grid):
        grid.check_shape(values)
        self.grid = grid
        self.values = np.asarray(values, dtype=float)
        self._coeffs = None
        self._cache = {}

    @classmethod
    def from_field(cls, field: spectral.SpectralField) -> "FieldSampler":
        sampler = cls(field.physical(), field.grid)
        sampler._coeffs = field.coeffs
        return sampler

    def derivative(self, alpha: tuple[int, int]) -> np.ndarray:
        alpha = tuple(alpha)
        if alpha == (0, 0):
            return self.values
        if alpha not in self._cache:
            if self._coeffs is None:
                self._coeffs = spectral.forward(self.values, self.grid)
            multiplier = spectral.derivative_multiplier(self.grid, alpha)
            self._cache[alpha] = spectral.inverse(self._coeffs * multiplier, self.grid)
        return self._cache[alpha]


@dataclasses.dataclass(frozen=True)
class AxisSamples:
    """Grid points along one axis with local coordinates and optional weights."""

    index: np.ndarray
    coord: np.ndarray
    weight: np.ndarray | None = None


def local_coordinate(cell: Subdomain, axis: int, points: np.ndarray) -> np.ndarray:
    """Offset from the anchor, unwrapped so the collar sits at ``[-δ, 0)`` and ``(s, s+δ]``."""
    points = np.asarray(points, dtype=float)
    if cell.full_axis(axis):
        return np.mod(points - cell.anchor[axis], TWO_PI)
    pad = cell.collar
    return np.mod(points - cell.anchor[axis] + pad, TWO_PI) - pad


def collared_axis(cell: Subdomain, grid: spectral.Grid, axis: int) -> AxisSamples:
    """Grid points of the closed collared cell along ``axis``, with quadrature weights."""
    region = cell.collared_region()
    index, weight = spectral.axis_weights(grid, region.anchor[axis], region.sides[axis])
    coord = local_coordinate(cell, axis, grid.points[index])
    order = np.argsort(coord, kind="stable")
    return AxisSamples(index[order], coord[order], weight[order])


def cell_axis(cell: Subdomain, grid: spectral.Grid, axis: int) -> AxisSamples:
    """Grid points carrying quadrature weight on the closed cell along ``axis``."""
    index, weight = spectral.axis_weights(grid, cell.anchor[axis], cell.sides[axis])
    coord = local_coordinate(cell, axis, grid.points[index])
    order = np.argsort(coord, kind="stable")
    return AxisSamples(index[order], coord[order], weight[order])


def _nearest_point(
    grid: spectral.Grid, cell: Subdomain, axis: int, offset: float
) -> tuple[int, float]:
    index = int(np.rint((cell.anchor[axis] + offset) / grid.dx)) % grid.n
    coord = float(local_coordinate(cell, axis, grid.points[index]))
    return index, coord


@dataclasses.dataclass(frozen=True)
class MonomialBasis:
    """Monomials ``X^a Y^b`` in ``X = (ξ - origin) / scale``.

    :param degree: Largest exponent per axis.
    :param total: Restrict to ``a + b <= degree``.
    """

    degree: int
    total: bool
    origin: tuple[float, float]
    scale: tuple[float, float]

    def axis_matrix(self, axis: int, coords: np.ndarray, order: int = 0) -> np.ndarray:
        x = (np.asarray(coords, dtype=float) - self.origin[axis]) / self.scale[axis]
        matrix = np.zeros(x.shape + (self.degree + 1,))
        for a in range(order, self.degree + 1):
            falling = math.perm(a, order)
            matrix[..., a] = falling * x ** (a - order)
        return matrix / self.scale[axis] ** order

    @property
    def mask(self) -> np.ndarray:
        a = np.arange(self.degree + 1)
        if self.total:
            return a[:, None] + a[None, :] <= self.degree
        return np.ones((self.degree + 1, self.degree + 1), dtype=bool)


@dataclasses.dataclass(frozen=True)
class FourierBasis:
    """Local Fourier modes :math:`e^{i\\kappa j \\xi}`, ``|j| <= N``, on a ball mask."""

    modes: int
    wavenumber: tuple[float, float]

    def axis_matrix(self, axis: int, coords: np.ndarray, order: int = 0) -> np.ndarray:
        j = np.arange(-self.modes, self.modes + 1)
        kappa = self.wavenumber[axis] * j
        coords = np.asarray(coords, dtype=float)
        return (1j * kappa) ** order * np.exp(1j * coords[..., None] * kappa)

    @property
    def mask(self) -> np.ndarray:
        j = np.arange(-self.modes, self.modes + 1)
        return j[:, None] ** 2 + j[None, :] ** 2 <= self.modes**2


Basis = MonomialBasis | FourierBasis


@dataclasses.dataclass(frozen=True)
class LocalFit:
    """Fitted output of a local operator: basis plus coefficients."""

    basis: Basis
    coeffs: np.ndarray

    def evaluate(
        self, xi: np.ndarray, eta: np.ndarray, alpha: tuple[int, int] = (0, 0)
    ) -> np.ndarray:
        """Values on the tensor grid of local coordinates ``xi`` by ``eta``."""
        bx = self.basis.axis_matrix(0, xi, alpha[0])
        by = self.basis.axis_matrix(1, eta, alpha[1])
        return np.real(bx @ self.coeffs @ by.T)


@dataclasses.dataclass(frozen=True)
class TensorPlan:
    """``C = G_x S G_y^T`` on the samples ``S`` at ``data`` points."""

    op: LocalInterpolant
    basis: Basis
    window: tuple[AxisSamples, AxisSamples]
    interior: tuple[AxisSamples, AxisSamples]
    data: tuple[np.ndarray, np.ndarray]
    gather: tuple[np.ndarray, np.ndarray]

    def signature(self) -> tuple:
        return (
            "tensor",
            self.op,
            self.gather[0].shape,
            self.gather[1].shape,
            _shapes(self.window),
            _shapes(self.interior),
        )


@dataclasses.dataclass(frozen=True)
class DerivativePlan:
    """``C = A d`` on derivative samples ``d[r] = ∂^{alphas[which[r]]} φ(points[r])``."""

    op: LocalInterpolant
    basis: Basis
    window: tuple[AxisSamples, AxisSamples]
    interior: tuple[AxisSamples, AxisSamples]
    alphas: tuple[tuple[int, int], ...]
    which: np.ndarray
    points: np.ndarray
    matrix: np.ndarray

    def signature(self) -> tuple:
        return (
            "derivative",
            self.op,
            self.alphas,
            self.matrix.shape,
            _shapes(self.window),
            _shapes(self.interior),
        )


Plan = TensorPlan | DerivativePlan


def _shapes(samples: tuple[AxisSamples, AxisSamples]) -> tuple[int, int]:
    return (samples[0].index.size, samples[1].index.size)


def _centre_basis(cell: Subdomain, degree: int, total: bool = False) -> MonomialBasis:
    return MonomialBasis(
        degree, total, (cell.sides[0] / 2, cell.sides[1] / 2), (cell.sides[0], cell.sides[1])
    )


def _invert(matrix: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.matrix_rank(matrix) < matrix.shape[0]:
        raise SampleError(f"{what} are not unisolvent on this grid")
    return scipy.linalg.inv(matrix)


def _volavg_gather(samples: AxisSamples) -> np.ndarray:
    return (samples.weight / samples.weight.sum())[None, :]


def _lagrange_gather(op, cell, grid, basis, axis) -> tuple[np.ndarray, np.ndarray]:
    k = op.degree
    side = cell.sides[axis]
    nodes = [_nearest_point(grid, cell, axis, (i + 0.5) * side / (k + 1)) for i in range(k + 1)]
    index = np.array([node[0] for node in nodes])
    if np.unique(index).size < index.size:
        raise SampleError(f"{op.label} nodes collide on a grid with n={grid.n}")
    coords = np.array([node[1] for node in nodes])
    return index, _invert(basis.axis_matrix(axis, coords), f"{op.label} nodes")


def _volpoly_gather(op, cell, grid, basis, axis) -> tuple[np.ndarray, np.ndarray]:
    k = op.degree
    width = cell.sides[axis] / (k + 1)
    if width < grid.dx:
        raise SampleError(f"{op.label} patches narrower than the grid spacing")
    patches = [
        spectral.axis_weights(grid, cell.anchor[axis] + p * width, width) for p in range(k + 1)
    ]
    index = np.unique(np.concatenate([ix for ix, _ in patches]))
    weights = np.zeros((k + 1, index.size))
    for p, (ix, w) in enumerate(patches):
        weights[p, np.searchsorted(index, ix)] = w / w.sum()
    coords = local_coordinate(cell, axis, grid.points[index])
    moments = weights @ basis.axis_matrix(axis, coords)
    return index, _invert(moments, f"{op.label} patch averages") @ weights


def _spectral_gather(op, cell, samples: AxisSamples, axis) -> np.ndarray:
    j = np.arange(-op.degree, op.degree + 1)
    kappa = TWO_PI / cell.sides[axis]
    phase = np.exp(-1j * kappa * j[:, None] * samples.coord[None, :])
    return phase * (samples.weight / samples.weight.sum())[None, :]


def _sobolev_matrix(op, cell, grid, basis, interior) -> tuple:
    k = op.degree
    cx, cy = basis.origin
    radius = op.radius * min(cell.sides) / 2
    dx = interior[0].coord[:, None] - cx
    dy = interior[1].coord[None, :] - cy
    rho2 = (dx**2 + dy**2) / radius**2
    inside = np.argwhere(rho2 < 1.0)
    needed = (k + 1) * (k + 2) // 2
    if len(inside) < needed:
        raise SampleError(f"{op.label} ball holds {len(inside)} grid points, need {needed}")
    bump = np.exp(-1.0 / (1.0 - rho2[inside[:, 0], inside[:, 1]]))
    bump /= bump.sum()
    offsets_x = dx[inside[:, 0], 0]
    offsets_y = dy[0, inside[:, 1]]
    flat = interior[0].index[inside[:, 0]] * grid.n + interior[1].index[inside[:, 1]]
    alphas = tuple((a, t - a) for t in range(k + 1) for a in range(t, -1, -1))
    size = k + 1
    matrix = np.zeros((size * size, len(alphas) * len(flat)))
    for r, (ax, ay) in enumerate(alphas):
        column = slice(r * len(flat), (r + 1) * len(flat))
        norm = math.factorial(ax) * math.factorial(ay)
        for bx in range(ax + 1):
            for by in range(ay + 1):
                # (x - y)^α expanded about the centre: coefficient of (x - c)^β
                term = (
                    math.comb(ax, bx)
                    * math.comb(ay, by)
                    * (-offsets_x) ** (ax - bx)
                    * (-offsets_y) ** (ay - by)
                    / norm
                )
                scale = basis.scale[0] ** bx * basis.scale[1] ** by
                matrix[bx * size + by, column] += bump * term * scale
    which = np.repeat(np.arange(len(alphas)), len(flat))
    points = np.tile(flat, len(alphas))
    return alphas, which, points, matrix


def build_plan(op: LocalInterpolant, cell: Subdomain, grid: spectral.Grid) -> Plan:
    """Precompute how ``op`` turns data on ``cell`` into coefficients.

    :raises: :class:`SampleError` when the collared cell holds fewer than
        ``k + 2`` points per axis, or the nodes, patches or ball are not
        resolved by the grid.
    """
    window = (collared_axis(cell, grid, 0), collared_axis(cell, grid, 1))
    needed = op.level + 2
    if min(_shapes(window)) < needed:
        raise SampleError(
            f"{op.label} needs {needed} points per axis on the collared cell, "
            f"got {min(_shapes(window))} at n={grid.n}"
        )
    interior = (cell_axis(cell, grid, 0), cell_axis(cell, grid, 1))
    kind = op.kind
    if kind is OperatorKind.VOLAVG0:
        basis = _centre_basis(cell, 0)
        data = (interior[0].index, interior[1].index)
        gather = (_volavg_gather(interior[0]), _volavg_gather(interior[1]))
        return TensorPlan(op, basis, window, interior, data, gather)
    if kind is OperatorKind.NODAL0:
        (ix, cx), (iy, cy) = (
            _nearest_point(grid, cell, axis, cell.sides[axis] / 2) for axis in (0, 1)
        )
        basis = MonomialBasis(0, False, (cx, cy), cell.sides)
        one = np.ones((1, 1))
        return TensorPlan(op, basis, window, interior, (np.array([ix]), np.array([iy])), (one, one))
    if kind is OperatorKind.LAGRANGE:
        basis = _centre_basis(cell, op.degree)
        (ix, gx), (iy, gy) = (_lagrange_gather(op, cell, grid, basis, axis) for axis in (0, 1))
        return TensorPlan(op, basis, window, interior, (ix, iy), (gx, gy))
    if kind is OperatorKind.VOLPOLY:
        basis = _centre_basis(cell, op.degree)
        (ix, gx), (iy, gy) = (_volpoly_gather(op, cell, grid, basis, axis) for axis in (0, 1))
        return TensorPlan(op, basis, window, interior, (ix, iy), (gx, gy))
    if kind is OperatorKind.SPECTRAL:
        if min(_shapes(interior)) < 2 * op.degree + 2:
            raise SampleError(f"{op.label} needs {2 * op.degree + 2} points per axis on the cell")
        basis = FourierBasis(op.degree, (TWO_PI / cell.sides[0], TWO_PI / cell.sides[1]))
        data = (interior[0].index, interior[1].index)
        gather = (
            _spectral_gather(op, cell, interior[0], 0),
            _spectral_gather(op, cell, interior[1], 1),
        )
        return TensorPlan(op, basis, window, interior, data, gather)
    (ix, cx), (iy, cy) = (_nearest_point(grid, cell, axis, cell.sides[axis] / 2) for axis in (0, 1))
    if kind is OperatorKind.TAYLOR1:
        basis = MonomialBasis(1, True, (cx, cy), cell.sides)
        alphas = ((0, 0), (1, 0), (0, 1))
        matrix = np.zeros((4, 3))
        matrix[0, 0] = 1.0
        matrix[2, 1] = cell.sides[0]
        matrix[1, 2] = cell.sides[1]
        flat = np.full(3, ix * grid.n + iy)
        return DerivativePlan(op, basis, window, interior, alphas, np.arange(3), flat, matrix)
    basis = MonomialBasis(op.degree, True, (cx, cy), cell.sides)
    alphas, which, points, matrix = _sobolev_matrix(op, cell, grid, basis, interior)
    return DerivativePlan(op, basis, window, interior, alphas, which, points, matrix)


class PlanGroup:
    """Plans with a common signature, applied together with batched products.

    :param cells: Cell indices, in cover order.
    :param plans: One plan per cell.
    """

    def __init__(self, cells: list[int], plans: list[Plan]):
        self.cells = list(cells)
        self.plans = list(plans)
        first = plans[0]
        self.kind = "tensor" if isinstance(first, TensorPlan) else "derivative"
        self.mask = first.basis.mask
        self.window_index = tuple(np.stack([p.window[a].index for p in plans]) for a in (0, 1))
        self.interior_index = tuple(np.stack([p.interior[a].index for p in plans]) for a in (0, 1))
        self.interior_weight = tuple(
            np.stack([p.interior[a].weight for p in plans]) for a in (0, 1)
        )
        if self.kind == "tensor":
            self.data = tuple(np.stack([p.data[a] for p in plans]) for a in (0, 1))
            self.gather = tuple(np.stack([p.gather[a] for p in plans]) for a in (0, 1))
        else:
            self.alphas = first.alphas
            self.which = first.which
            self.points = np.stack([p.points for p in plans])
            self.matrix = np.stack([p.matrix for p in plans])
        self._bases = {}

    def __len__(self) -> int:
        return len(self.cells)

    def coefficients(self, sampler: Sampler) -> np.ndarray:
        """Coefficient matrices, shape ``(cells, nb, nb)``."""
        if self.kind == "tensor":
            values = sampler.derivative((0, 0))
            samples = values[self.data[0][:, :, None], self.data[1][:, None, :]]
            coeffs = self.gather[0] @ samples @ np.swapaxes(self.gather[1], 1, 2)
            return coeffs * self.mask
        stack = np.stack([sampler.derivative(alpha).ravel() for alpha in self.alphas])
        data = stack[self.which[None, :], self.points]
        size = self.mask.shape[0]
        return np.einsum("cbd,cd->cb", self.matrix, data).reshape(len(self), size, size)

    def axis_matrices(self, axis: int, order: int, where: str) -> np.ndarray:
        key = (axis, order, where)
        if key not in self._bases:
            self._bases[key] = np.stack(
                [
                    p.basis.axis_matrix(axis, getattr(p, where)[axis].coord, order)
                    for p in self.plans
                ]
            )
        return self._bases[key]

    def evaluate(
        self, coeffs: np.ndarray, alpha: tuple[int, int] = (0, 0), where: str = "window"
    ) -> np.ndarray:
        """:math:`\\partial^\\alpha I^Q\\phi` on the window or interior points, ``(cells, nx, ny)``."""
        bx = self.axis_matrices(0, alpha[0], where)
        by = self.axis_matrices(1, alpha[1], where)
        return np.real(bx @ coeffs @ np.swapaxes(by, 1, 2))

    def fits(self, coeffs: np.ndarray) -> list[LocalFit]:
        return [LocalFit(p.basis, c) for p, c in zip(self.plans, coeffs)]

    def gather_interior(self, values: np.ndarray) -> np.ndarray:
        return values[self.interior_index[0][:, :, None], self.interior_index[1][:, None, :]]

    def interior_quadrature(self, values: np.ndarray) -> np.ndarray:
        """Per-cell quadrature of ``(cells, nx, ny)`` interior samples."""
        return np.einsum("ci,cij,cj->c", self.interior_weight[0], values, self.interior_weight[1])

    def error_squared(self, sampler: Sampler, coeffs: np.ndarray, ell: int) -> np.ndarray:
        """:math:`\\|\\phi - I^Q\\phi\\|^2_{\\dot H^\\ell(Q)}` per cell."""
        total = np.zeros(len(self))
        for alpha in spectral.multi_indices(ell):
            diff = self.gather_interior(sampler.derivative(alpha)) - self.evaluate(
                coeffs, alpha, "interior"
            )
            total += self.interior_quadrature(diff**2)
        return total

    def output_squared(self, coeffs: np.ndarray, ell: int) -> np.ndarray:
        """:math:`\\|I^Q\\phi\\|^2_{\\dot H^\\ell(Q)}` per cell."""
        total = np.zeros(len(self))
        for alpha in spectral.multi_indices(ell):
            total += self.interior_quadrature(self.evaluate(coeffs, alpha, "interior") ** 2)
        return total


def group_plans(plans: list[Plan]) -> list[PlanGroup]:
    """Group plans by signature, keeping first-appearance order."""
    buckets: dict[tuple, list[int]] = {}
    for q, plan in enumerate(plans):
        buckets.setdefault(plan.signature(), []).append(q)
    return [PlanGroup(cells, [plans[q] for q in cells]) for cells in buckets.values()]


@dataclasses.dataclass(frozen=True)
class LocalOutput:
    """Result of a local operator on the collared cell."""

    window: tuple[AxisSamples, AxisSamples]
    values: np.ndarray
    fit: LocalFit


def fit_local(op: LocalInterpolant, cell: Subdomain, sampler: Sampler) -> LocalFit:
    group = PlanGroup([0], [build_plan(op, cell, sampler.grid)])
    return group.fits(group.coefficients(sampler))[0]


def apply_local(
    op: LocalInterpolant, cell: Subdomain, sampler: Sampler, alpha: tuple[int, int] = (0, 0)
) -> LocalOutput:
    """Apply ``op`` to the data of ``sampler`` on ``cell``.

    :return: Values of :math:`\\partial^\\alpha I^Q\\phi` on the grid points of
        the collared cell, with the fit that produced them.
    :raises: :class:`SampleError` when the grid under-resolves the cell.
    """
    plan = build_plan(op, cell, sampler.grid)
    group = PlanGroup([0], [plan])
    coeffs = group.coefficients(sampler)
    values = group.evaluate(coeffs, alpha)[0]
    return LocalOutput(plan.window, values, LocalFit(plan.basis, coeffs[0]))


@dataclasses.dataclass(frozen=True)
class AssociatedConstants:
    """Empirical constants :math:`\\hat\\varepsilon_{\\ell,j}(Q)` of a local operator.

    ``values[(ell, j)]`` bounds
    :math:`\\|\\phi - I^Q\\phi\\|_{\\dot H^\\ell(Q)} / (h^j \\|\\phi\\|_{\\dot H^{\\ell+j}(\\tilde Q)})`.
    Entries outside ``ell <= order``, ``1 <= j <= level - ell`` count as
    zero.
    """

    order: int
    level: int
    h: float
    values: dict

    def get(self, ell: int, j: int) -> float:
        """:raises: :class:`ConditionError` for a missing entry inside the declared range."""
        if ell < 0 or ell > self.order or j < 1 or j > self.level - ell:
            return 0.0
        try:
            return self.values[(ell, j)]
        except KeyError:
            raise ConditionError(f"missing constant for ell={ell}, j={j}") from None

    def combined(self, ell: int, level: int) -> float:
        """:math:`(\\sum_{i \\le \\min(\\ell, k'-1)} \\hat\\varepsilon_{i,k'-i}^2)^{1/2}`."""
        top = min(ell, level - 1)
        return math.sqrt(sum(self.get(i, level - i) ** 2 for i in range(top + 1)))

    def rows(self) -> list[dict]:
        return [
            {"ell": ell, "j": j, "h": self.h, "epsilon": value}
            for (ell, j), value in sorted(self.values.items())
        ]


def _check_indices(op: LocalInterpolant, ell: int, kprime: int):
    if ell < 0 or ell > op.order:
        raise OrderError(f"{op.label} has order {op.order}, cannot control ell={ell}")
    if kprime <= ell or kprime > op.level:
        raise OrderError(f"{op.label} has level {op.level}, got k'={kprime} with ell={ell}")


def _collar_norms(cells: list[Subdomain], field: spectral.SpectralField, kprime: int) -> np.ndarray:
    return spectral.local_sobolev_norms(field, kprime, [cell.collared_region() for cell in cells])


def ensemble_ratios(
    op: LocalInterpolant,
    cells: list[Subdomain],
    grid: spectral.Grid,
    pairs: list[tuple[int, int]],
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> np.ndarray:
    """Ensemble maxima of the error ratios for every cell and ``(ell, k')`` pair.

    :return: Array of shape ``(cells, pairs)``.
    """
    for ell, kprime in pairs:
        _check_indices(op, ell, kprime)
    rng = np.random.default_rng(seed)
    kmax = kmax or max(grid.n // 8, 2)
    plans = [build_plan(op, cell, grid) for cell in cells]
    groups = group_plans(plans)
    h = np.array([cell.diameter for cell in cells])
    best = np.zeros((len(cells), len(pairs)))
    for _ in range(ensemble_size):
        field = spectral.random_field(grid, kmax, rng)
        sampler = FieldSampler.from_field(field)
        norms = {kp: _collar_norms(cells, field, kp) for kp in {kp for _, kp in pairs}}
        for group in groups:
            coeffs = group.coefficients(sampler)
            idx = np.array(group.cells)
            for p, (ell, kprime) in enumerate(pairs):
                error = np.sqrt(group.error_squared(sampler, coeffs, ell))
                denom = h[idx] ** (kprime - ell) * norms[kprime][idx]
                ratio = np.where(denom > 0, error / np.where(denom > 0, denom, 1.0), 0.0)
                best[idx, p] = np.maximum(best[idx, p], ratio)
    return best


def estimate_constants(
    op: LocalInterpolant,
    cell: Subdomain,
    grid: spectral.Grid,
    ell: int,
    kprime: int,
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> float:
    """Empirical :math:`\\hat\\varepsilon_{\\ell,k'-\\ell}` by ensemble maximum.

    Fields with a vanishing denominator are skipped.  The result is
    deterministic for a fixed seed.

    :raises: :class:`OrderError` unless ``ell <= order`` and
        ``ell < k' <= level``.
    """
    ratios = ensemble_ratios(op, [cell], grid, [(ell, kprime)], ensemble_size, seed, kmax)
    return float(ratios[0, 0])


def estimate_all_constants(
    op: LocalInterpolant,
    cell: Subdomain,
    grid: spectral.Grid,
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> AssociatedConstants:
    """Every constant in the declared range of ``op`` on ``cell``."""
    pairs = [
        (ell, ell + j) for ell in range(op.order + 1) for j in range(1, op.level - ell + 1)
    ]
    ratios = ensemble_ratios(op, [cell], grid, pairs, ensemble_size, seed, kmax)[0]
    values = {(ell, kp - ell): float(r) for (ell, kp), r in zip(pairs, ratios)}
    return AssociatedConstants(op.order, op.level, cell.diameter, values)


@dataclasses.dataclass(frozen=True)
class InverseReport:
    ell: int
    ell_prime: int
    h: float
    ratio: float


def check_inverse_inequality(
    op: LocalInterpolant,
    cell: Subdomain,
    grid: spectral.Grid,
    ell: int,
    ell_prime: int,
    ensemble_size: int = 8,
    seed: int = 0,
    kmax: float | None = None,
) -> InverseReport:
    """Sup of :math:`\\|I^Q\\phi\\|_{\\dot H^\\ell(Q)} / (h^{\\ell'-\\ell}\\|I^Q\\phi\\|_{\\dot H^{\\ell'}(Q)})`.

    :raises: :class:`OrderError` unless ``0 <= ell' <= ell <= order``.
    """
    if not 0 <= ell_prime <= ell <= op.order:
        raise OrderError(f"need 0 <= ell'={ell_prime} <= ell={ell} <= {op.order}")
    rng = np.random.default_rng(seed)
    kmax = kmax or max(grid.n // 8, 2)
    group = PlanGroup([0], [build_plan(op, cell, grid)])
    h = cell.diameter
    best = 0.0
    for _ in range(ensemble_size):
        sampler = FieldSampler.from_field(spectral.random_field(grid, kmax, rng))
        coeffs = group.coefficients(sampler)
        top = math.sqrt(group.output_squared(coeffs, ell)[0])
        bottom = math.sqrt(group.output_squared(coeffs, ell_prime)[0])
        if bottom > 0:
            best = max(best, top / (h ** (ell_prime - ell) * bottom))
    return InverseReport(ell, ell_prime, h, best)


def cover_error(
    op: LocalInterpolant, cells: list[Subdomain], sampler: Sampler, ell: int
) -> float:
    """:math:`(\\sum_q \\|\\phi - I^{Q_q}\\phi\\|^2_{\\dot H^\\ell(Q_q)})^{1/2}` over the cells."""
    plans = [build_plan(op, cell, sampler.grid) for cell in cells]
    total = 0.0
    for group in group_plans(plans):
        total += float(group.error_squared(sampler, group.coefficients(sampler), ell).sum())
    return math.sqrt(total)


def convergence_order(
    op: LocalInterpolant,
    field: spectral.SpectralField,
    ell: int,
    cells_per_axis: typing.Sequence[int] = (4, 8, 16, 32),
    collar_fraction: float = 0.25,
    floor: float = 1e-12,
) -> fitting.SlopeFit:
    """Log-log slope of the local error against ``h`` on refined uniform covers.

    :param cells_per_axis: At least four refinement levels.
    :raises: :class:`ValueError` for fewer than four levels and
        :class:`OrderError` for ``ell`` above the order.
    """
    if len(cells_per_axis) < 4:
        raise ValueError(f"need at least 4 refinement levels, got {len(cells_per_axis)}")
    if ell > op.order:
        raise OrderError(f"{op.label} has order {op.order}, cannot control ell={ell}")
    sampler = FieldSampler.from_field(field)
    hs, errors = [], []
    for count in cells_per_axis:
        cover = uniform_cover(count, collar_fraction)
        hs.append(cover.uniform_scale)
        errors.append(cover_error(op, list(cover), sampler, ell))
        logger.debug(f"{op.label} ell={ell} cells={count} error={errors[-1]:.3e}")
    return fitting.loglog_slope(hs, errors, floor)


def operator_inventory() -> list[LocalInterpolant]:
    """One instance of every operator family at a small degree."""
    return [
        spectral_local(2),
        nodal0(),
        volavg0(),
        taylor1(),
        sobolev_poly(1),
        lagrange(2),
        volpoly(2),
    ]

