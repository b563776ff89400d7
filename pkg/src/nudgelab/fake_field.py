"""Module for fake field creation.

The classes in this module provide quick, exactly known data for testing
the local operators and the solver: polynomials written in the local
coordinates of a cell, and short sums of Fourier modes whose derivatives
are known in closed form.
"""

import pathlib
import shutil
import tempfile
import unittest

import numpy as np
import numpy.polynomial.polynomial as poly

from nudgelab import local, spectral
from nudgelab.cover import Subdomain


class PolynomialSampler:
    """Samples of a polynomial in the local coordinates of one cell.

    On the torus a polynomial is not periodic, so the values are only
    meaningful on the collared cell, which is where the local operators
    read them.  Derivatives are exact.

    :param coeffs: 2D coefficient array, ``coeffs[a, b]`` multiplies
        :math:`\\xi^a \\eta^b`.
    :param grid: The grid.
    :param cell: Cell whose local coordinates define :math:`\\xi, \\eta`.
    """

    def __init__(self, coeffs: np.ndarray, grid: spectral.Grid, cell: Subdomain):
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.grid = grid
        self.cell = cell
        self.xi = local.local_coordinate(cell, 0, grid.points)
        self.eta = local.local_coordinate(cell, 1, grid.points)

    def derivative(self, alpha: tuple[int, int]) -> np.ndarray:
        c = poly.polyder(self.coeffs, m=alpha[0], axis=0) if alpha[0] else self.coeffs
        c = poly.polyder(c, m=alpha[1], axis=1) if alpha[1] else c
        return poly.polygrid2d(self.xi, self.eta, c)

    def at(self, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """Exact values on the tensor grid of local coordinates."""
        return poly.polygrid2d(xi, eta, self.coeffs)


def random_polynomial(degree: int, rng: np.random.Generator, total: bool = False) -> np.ndarray:
    """Random coefficients of a polynomial of the given per-axis or total degree."""
    coeffs = rng.standard_normal((degree + 1, degree + 1))
    if total:
        a = np.arange(degree + 1)
        coeffs[a[:, None] + a[None, :] > degree] = 0.0
    return coeffs


class FakeModes:
    """Sum of modes :math:`\\sum_m c_m \\sin(k_m \\cdot x + \\theta_m)`.

    :param grid: The grid.
    :param modes: ``(k1, k2, amplitude, phase)`` tuples; wavenumbers must be
        resolved by the grid.
    """

    def __init__(self, grid: spectral.Grid, modes: list[tuple[int, int, float, float]]):
        self.grid = grid
        self.modes = list(modes)

    def derivative(self, alpha: tuple[int, int]) -> np.ndarray:
        x, y = self.grid.mesh()
        total = np.zeros(self.grid.shape)
        order = alpha[0] + alpha[1]
        for k1, k2, amplitude, phase in self.modes:
            scale = amplitude * k1 ** alpha[0] * k2 ** alpha[1]
            # d^r/dt^r sin(t) = sin(t + r π/2)
            total += scale * np.sin(k1 * x + k2 * y + phase + order * np.pi / 2)
        return total

    def field(self) -> spectral.SpectralField:
        return spectral.SpectralField.from_physical(self.derivative((0, 0)), self.grid)

    def sobolev_norm(self, ell: int) -> float:
        """Closed-form :math:`\\dot H^\\ell` norm, valid for distinct modes with distinct ``±k``."""
        total = 0.0
        for k1, k2, amplitude, _ in self.modes:
            weight = sum(k1 ** (2 * a) * k2 ** (2 * b) for a, b in spectral.multi_indices(ell))
            total += amplitude**2 * weight
        # each sine carries half its squared amplitude over the torus area
        return float(np.sqrt(total * 2 * np.pi**2))


def shear_flow(
    grid: spectral.Grid, amplitude: float = 1.0, wavenumber: int = 1
) -> spectral.VectorField:
    """Divergence-free shear ``u = (A sin(k y), 0)``."""
    _, y = grid.mesh()
    values = np.stack([amplitude * np.sin(wavenumber * y), np.zeros(grid.shape)])
    return spectral.VectorField.from_physical(values, grid)


def taylor_green(grid: spectral.Grid, amplitude: float = 1.0) -> spectral.VectorField:
    """Taylor-Green vortex ``(sin x cos y, -cos x sin y)``, a steady Euler solution."""
    x, y = grid.mesh()
    values = amplitude * np.stack([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)])
    return spectral.VectorField.from_physical(values, grid)


class TestWithTempDir(unittest.TestCase):
    """Boilerplate for tests that need a temporary directory."""

    def setUp(self):
        self.tmp_dir = pathlib.Path(tempfile.mkdtemp())
        self.path = self.tmp_dir / "test.bin"

    def tearDown(self):
        shutil.rmtree(self.tmp_dir)
