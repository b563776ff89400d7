"""Mean-free periodic field algebra on the torus T² = [0, 2π]².

Coefficients follow the normalization

.. math::

    \\hat u(k) = \\frac{1}{n^2} \\sum_{x} u(x) e^{-i k \\cdot x},
    \\qquad u(x) = \\sum_k \\hat u(k) e^{i k \\cdot x},

so Parseval reads :math:`(2\\pi)^{-2}\\int |u|^2 = \\sum_k |\\hat u(k)|^2`.
Arrays are indexed ``[i, j]`` with ``i`` along x and ``j`` along y.  The
zero mode is hard-zeroed by every operation that builds a field.

Homogeneous Sobolev norms use the multi-index sum

.. math::

    \\|\\phi\\|_{\\dot H^\\ell}^2 = \\sum_{|\\alpha| = \\ell} \\|\\partial^\\alpha \\phi\\|_{L^2}^2
    = (2\\pi)^2 \\sum_k \\Big(\\sum_{|\\alpha|=\\ell} k^{2\\alpha}\\Big) |\\hat\\phi(k)|^2,

with every multi-index counted once (no multinomial weights).  This
differs from the :math:`\\sum |k|^{2\\ell}` convention by bounded factors.
"""

import dataclasses
import functools
import logging
import math
import typing

import numpy as np
import scipy.fft

from nudgelab import enum
from nudgelab.errors import RegionError, ResolutionError, ShapeError

logger = logging.getLogger("nudgelab.spectral")

TWO_PI = 2.0 * math.pi

MIN_GRID_POINTS = 8
"""Smallest supported number of grid points per axis."""


class Direction(enum.CiStrEnum):
    """Direction of a transform between physical and spectral space."""

    FORWARD = "forward"
    INVERSE = "inverse"


class Region(typing.Protocol):
    """Anything with an anchor and side lengths on the torus."""

    anchor: tuple[float, float]
    sides: tuple[float, float]


@dataclasses.dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis.

    :param n: Points per axis, a power of two no smaller than 8.
    :raises: :class:`ResolutionError` for other values of ``n``.
    """

    n: int

    def __post_init__(self):
        if self.n < MIN_GRID_POINTS or self.n & (self.n - 1):
            raise ResolutionError(
                f"grid size must be a power of two >= {MIN_GRID_POINTS}, got {self.n}"
            )

    @property
    def dx(self) -> float:
        return TWO_PI / self.n

    @property
    def dealias_cutoff(self) -> int:
        return self.n // 3

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @functools.cached_property
    def points(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        return np.arange(self.n) * self.dx

    @functools.cached_property
    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumbers ``{-n/2, ..., n/2-1}`` in FFT order."""
        return np.rint(scipy.fft.fftfreq(self.n, d=1.0 / self.n))

    @functools.cached_property
    def derivative_wavenumbers(self) -> np.ndarray:
        """Wavenumbers with the unpaired Nyquist mode set to zero."""
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        return k

    @functools.cached_property
    def kx(self) -> np.ndarray:
        return np.broadcast_to(self.wavenumbers[:, None], self.shape)

    @functools.cached_property
    def ky(self) -> np.ndarray:
        return np.broadcast_to(self.wavenumbers[None, :], self.shape)

    @functools.cached_property
    def k_squared(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @functools.cached_property
    def dealias_mask(self) -> np.ndarray:
        c = self.dealias_cutoff
        return (np.abs(self.kx) <= c) & (np.abs(self.ky) <= c)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinate arrays ``(X, Y)`` of shape ``(n, n)``."""
        return np.meshgrid(self.points, self.points, indexing="ij")

    def check_shape(self, array: np.ndarray, leading: tuple[int, ...] = ()):
        expected = leading + self.shape
        if array.shape != expected:
            raise ShapeError(f"expected shape {expected}, got {array.shape}")


def forward(values: np.ndarray, grid: Grid, mean_free: bool = True) -> np.ndarray:
    """Physical samples to Fourier coefficients over the last two axes.

    :param values: Real samples with trailing shape ``(n, n)``.
    :param grid: The grid.
    :param mean_free: Zero the ``k = 0`` coefficient.
    :return: Complex coefficients, same shape as ``values``.
    """
    if values.shape[-2:] != grid.shape:
        raise ShapeError(f"expected trailing shape {grid.shape}, got {values.shape}")
    coeffs = scipy.fft.fft2(values, axes=(-2, -1)) / grid.n**2
    if mean_free:
        coeffs[..., 0, 0] = 0.0
    return coeffs


def inverse(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Fourier coefficients to real physical samples over the last two axes."""
    if coeffs.shape[-2:] != grid.shape:
        raise ShapeError(f"expected trailing shape {grid.shape}, got {coeffs.shape}")
    return scipy.fft.ifft2(coeffs * grid.n**2, axes=(-2, -1)).real


def transform(data: np.ndarray, grid: Grid, direction: Direction) -> np.ndarray:
    """Move data between physical and spectral representation.

    The forward direction projects out the mean, so the all-ones field maps
    to zero.

    :raises: :class:`ShapeError` if the data does not match the grid.
    """
    direction = Direction(direction)
    if direction is Direction.FORWARD:
        return forward(np.asarray(data, dtype=float), grid)
    return inverse(np.asarray(data), grid)


def derivative_multiplier(grid: Grid, alpha: tuple[int, int]) -> np.ndarray:
    """Spectral symbol of :math:`\\partial^\\alpha`."""
    a, b = alpha
    kx = grid.derivative_wavenumbers[:, None]
    ky = grid.derivative_wavenumbers[None, :]
    return (1j * kx) ** a * (1j * ky) ** b


def multi_indices(order: int) -> list[tuple[int, int]]:
    """All 2D multi-indices with ``|alpha| = order``, each once."""
    return [(a, order - a) for a in range(order, -1, -1)]


def multi_index_weight(grid: Grid, order: int) -> np.ndarray:
    """:math:`\\sum_{|\\alpha|=\\ell} k^{2\\alpha}` on the grid."""
    kx2 = grid.kx**2
    ky2 = grid.ky**2
    weight = np.zeros(grid.shape)
    for a, b in multi_indices(order):
        weight += kx2**a * ky2**b
    return weight


@dataclasses.dataclass(frozen=True)
class SpectralField:
    """Mean-free scalar field stored by its Fourier coefficients.

    The zero mode of ``coeffs`` is forced to zero on construction.
    """

    coeffs: np.ndarray
    grid: Grid

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=complex)
        self.grid.check_shape(coeffs)
        coeffs[0, 0] = 0.0
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: Grid) -> "SpectralField":
        return cls(forward(np.asarray(values, dtype=float), grid), grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(np.zeros(grid.shape, dtype=complex), grid)

    def physical(self) -> np.ndarray:
        return inverse(self.coeffs, self.grid)

    def derivative(self, alpha: tuple[int, int]) -> "SpectralField":
        return SpectralField(self.coeffs * derivative_multiplier(self.grid, alpha), self.grid)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.coeffs - other.coeffs, self.grid)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.coeffs * scalar, self.grid)

    __rmul__ = __mul__


@dataclasses.dataclass(frozen=True)
class VectorField:
    """Mean-free vector field as a pair of :class:`SpectralField` components."""

    x_component: SpectralField
    y_component: SpectralField

    def __post_init__(self):
        if self.x_component.grid != self.y_component.grid:
            raise ShapeError("vector components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.x_component.grid

    @property
    def coeffs(self) -> np.ndarray:
        """Stacked coefficients of shape ``(2, n, n)``."""
        return np.stack([self.x_component.coeffs, self.y_component.coeffs])

    @classmethod
    def from_coeffs(cls, coeffs: np.ndarray, grid: Grid) -> "VectorField":
        grid.check_shape(coeffs, leading=(2,))
        return cls(SpectralField(coeffs[0], grid), SpectralField(coeffs[1], grid))

    @classmethod
    def from_physical(cls, values: np.ndarray, grid: Grid) -> "VectorField":
        grid.check_shape(values, leading=(2,))
        return cls.from_coeffs(forward(np.asarray(values, dtype=float), grid), grid)

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls.from_coeffs(np.zeros((2,) + grid.shape, dtype=complex), grid)

    def physical(self) -> np.ndarray:
        return inverse(self.coeffs, self.grid)

    def divergence_residual(self) -> float:
        """``max|k·û| / max|û|``, zero for the zero field."""
        coeffs = self.coeffs
        scale = np.abs(coeffs).max()
        if scale == 0.0:
            return 0.0
        div = self.grid.kx * coeffs[0] + self.grid.ky * coeffs[1]
        return float(np.abs(div).max() / scale)

    def is_solenoidal(self, tol: float = 1e-12) -> bool:
        return self.divergence_residual() <= tol

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField.from_coeffs(self.coeffs + other.coeffs, self.grid)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField.from_coeffs(self.coeffs - other.coeffs, self.grid)

    def __mul__(self, scalar: float) -> "VectorField":
        return VectorField.from_coeffs(self.coeffs * scalar, self.grid)

    __rmul__ = __mul__


AnyField = SpectralField | VectorField


def _components(field: AnyField) -> list[SpectralField]:
    if isinstance(field, VectorField):
        return [field.x_component, field.y_component]
    return [field]


def leray_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection on raw ``(2, n, n)`` coefficients."""
    k2 = grid.k_squared.copy()
    k2[0, 0] = 1.0
    k_dot = (grid.kx * coeffs[0] + grid.ky * coeffs[1]) / k2
    projected = np.stack([coeffs[0] - grid.kx * k_dot, coeffs[1] - grid.ky * k_dot])
    projected[:, 0, 0] = 0.0
    return projected


def leray_project(v: VectorField) -> VectorField:
    """Project onto divergence-free fields, :math:`\\hat v - k (k\\cdot\\hat v)/|k|^2`.

    The projection is idempotent and leaves the zero mode at zero.
    """
    return VectorField.from_coeffs(leray_coeffs(v.coeffs, v.grid), v.grid)


def sobolev_norm(field: AnyField, ell: int, homogeneous: bool = True) -> float:
    """Sobolev norm of a scalar or vector field.

    Vector norms sum the squared norms of both components.

    :param field: The field.
    :param ell: Sobolev index, at most ``n // 3``.
    :param homogeneous: Use :math:`\\dot H^\\ell`; otherwise :math:`H^\\ell`,
        the sum of all homogeneous orders up to ``ell``.
    :raises: :class:`ResolutionError` if ``ell`` is too large for the grid.
    """
    grid = field.grid
    if ell < 0:
        raise ValueError(f"Sobolev index must be non-negative, got {ell}")
    if ell > grid.n // 3:
        raise ResolutionError(f"Sobolev index {ell} too large for n={grid.n}")
    if homogeneous:
        weight = multi_index_weight(grid, ell)
    else:
        weight = sum(multi_index_weight(grid, j) for j in range(ell + 1))
    total = 0.0
    for component in _components(field):
        total += float(np.sum(weight * np.abs(component.coeffs) ** 2))
    return math.sqrt(total) * TWO_PI


def axis_weights(grid: Grid, start: float, length: float) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature weights of grid points for the periodic interval ``[start, start+length]``.

    Each point carries the length of its dual cell ``[x - dx/2, x + dx/2]``
    that falls inside the interval.  For grid-aligned endpoints this is the
    composite trapezoid rule.

    :return: Sorted point indices and their weights.
    :raises: :class:`RegionError` if the interval holds no grid weight.
    """
    dx = grid.dx
    if length >= TWO_PI - 1e-12:
        return np.arange(grid.n), np.full(grid.n, dx)
    lo = math.floor(start / dx) - 1
    hi = math.ceil((start + length) / dx) + 1
    candidates = np.arange(lo, hi + 1)
    centres = candidates * dx
    overlap = np.minimum(start + length, centres + dx / 2) - np.maximum(
        start, centres - dx / 2
    )
    keep = overlap > 1e-14 * dx
    if not keep.any():
        raise RegionError(f"interval [{start}, {start + length}] holds no grid points")
    indices = np.mod(candidates[keep], grid.n)
    weights = overlap[keep]
    unique, inverse_ix = np.unique(indices, return_inverse=True)
    return unique, np.bincount(inverse_ix, weights=weights)


def region_integral(values: np.ndarray, grid: Grid, region: Region) -> float:
    """Grid quadrature of ``values`` over a rectangular region of the torus."""
    ix, wx = axis_weights(grid, region.anchor[0], region.sides[0])
    iy, wy = axis_weights(grid, region.anchor[1], region.sides[1])
    return float(wx @ values[np.ix_(ix, iy)] @ wy)


def local_sobolev_norm(field: AnyField, ell: int, region: Region) -> float:
    """Homogeneous Sobolev norm restricted to a region.

    Derivatives are taken spectrally on the whole torus, then the squared
    derivatives are integrated over the region by grid quadrature.

    :raises: :class:`RegionError` for an empty region.
    """
    if region.sides[0] <= 0 or region.sides[1] <= 0:
        raise RegionError(f"region has non-positive sides {region.sides}")
    grid = field.grid
    total = 0.0
    for component in _components(field):
        for alpha in multi_indices(ell):
            d = component.derivative(alpha).physical()
            total += region_integral(d**2, grid, region)
    return math.sqrt(total)


def local_sobolev_norms(field: AnyField, ell: int, regions: typing.Sequence[Region]) -> np.ndarray:
    """:func:`local_sobolev_norm` over many regions, differentiating once."""
    grid = field.grid
    density = np.zeros(grid.shape)
    for component in _components(field):
        for alpha in multi_indices(ell):
            density += component.derivative(alpha).physical() ** 2
    return np.sqrt(np.array([region_integral(density, grid, region) for region in regions]))


@dataclasses.dataclass(frozen=True)
class DissipationSymbol:
    """Viscous plus hyperviscous damping :math:`\\nu|k|^2 + \\gamma|k|^{2(p+1)}`.

    :raises: :class:`ValueError` unless ``nu > 0``, ``gamma >= 0``, ``p >= 0``,
        and ``p == 0`` whenever ``gamma == 0``.
    """

    nu: float
    gamma: float = 0.0
    p: float = 0.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if self.gamma < 0 or self.p < 0:
            raise ValueError("hyperviscosity and its order must be non-negative")
        if self.gamma == 0 and self.p != 0:
            raise ValueError("p must be 0 when gamma is 0")

    def on_grid(self, grid: Grid) -> np.ndarray:
        return dissipation_multiplier(self, grid.k_squared)


def dissipation_multiplier(sym: DissipationSymbol, k_squared):
    """Evaluate the dissipation symbol at :math:`|k|^2`.

    >>> dissipation_multiplier(DissipationSymbol(1.0, 1.0, 1.0), 4.0)
    20.0
    """
    k_squared = np.asarray(k_squared, dtype=float)
    value = sym.nu * k_squared
    if sym.gamma > 0:
        value = value + sym.gamma * k_squared ** (sym.p + 1.0)
    if value.ndim == 0:
        return float(value)
    return value


def dealias_coeffs(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """2/3-rule truncation on raw coefficients (any leading axes)."""
    return np.where(grid.dealias_mask, coeffs, 0.0)


def dealias(field: AnyField) -> AnyField:
    """Zero every mode with ``max(|k1|, |k2|) > n // 3``."""
    if isinstance(field, VectorField):
        return VectorField.from_coeffs(dealias_coeffs(field.coeffs, field.grid), field.grid)
    return SpectralField(dealias_coeffs(field.coeffs, field.grid), field.grid)


def band_mask(grid: Grid, kmax: float, kmin: float = 0.0) -> np.ndarray:
    """Modes with ``kmin <= |k| <= kmax`` (Euclidean), excluding ``k = 0``."""
    kk = np.sqrt(grid.k_squared)
    mask = (kk <= kmax + 1e-12) & (kk >= kmin - 1e-12)
    mask[0, 0] = False
    return mask


def random_field(
    grid: Grid, kmax: float, rng: np.random.Generator, kmin: float = 1.0
) -> SpectralField:
    """Random real band-limited scalar field with unit :math:`L^2` norm.

    Coefficients are complex Gaussian inside the band; the real part of the
    physical field keeps the band and makes the coefficients Hermitian.
    """
    mask = band_mask(grid, kmax, kmin)
    raw = (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)) * mask
    field = SpectralField.from_physical(inverse(raw, grid), grid)
    norm = sobolev_norm(field, 0)
    if norm == 0.0:
        return field
    return field * (1.0 / norm)


def random_solenoidal(
    grid: Grid,
    kmax: float,
    rng: np.random.Generator,
    kmin: float = 1.0,
    energy: float = 1.0,
) -> VectorField:
    """Random divergence-free band-limited field with prescribed :math:`\\tfrac12\\|u\\|^2`."""
    stream = random_field(grid, kmax, rng, kmin)
    # u = (∂_y ψ, -∂_x ψ)
    u = VectorField(stream.derivative((0, 1)), stream.derivative((1, 0)) * -1.0)
    u = VectorField.from_coeffs(dealias_coeffs(u.coeffs, grid), grid)
    norm = sobolev_norm(u, 0)
    if norm == 0.0:
        return u
    return u * (math.sqrt(2.0 * energy) / norm)
