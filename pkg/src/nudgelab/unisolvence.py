"""Dual bases for volume-element polynomial reconstruction.

On the unit-interval lattice ``[0, 1], [1, 2], ..., [m-1, m]`` the
functionals :math:`\\sigma_{k-1}(p) = \\int_{k-1}^{k} p` are unisolvent for
polynomials of degree below ``m``.  The matrix
:math:`M_{kj} = \\sigma_{k-1}(x^{j-1})` has the Vandermonde determinant

.. math::

    \\det M = \\prod_{1 \\le \\ell < k \\le m} (k - \\ell),

because :math:`\\sigma_{k-1}(x^{j-1})` is a monic polynomial of degree
``j - 1`` in ``k``.  The closed form with an extra :math:`1/m!` factor
that sometimes appears for this matrix does not hold (``m = 2`` gives 1,
not 1/2); :attr:`DualBasisVolPoly.stated_determinant` keeps it for
comparison.

The columns of :math:`M^{-1}` are the coefficients of the dual basis
:math:`\\xi_\\alpha` with :math:`\\sigma_\\beta(\\xi_\\alpha) = \\delta_\\alpha^\\beta`.
Tensor products of the 1D bases give the 2D dual basis on a square patch
lattice.
"""

import dataclasses
import logging
import math

import numpy as np
import numpy.polynomial.legendre as legendre
import scipy.linalg

from nudgelab.errors import ConditioningError

logger = logging.getLogger("nudgelab.unisolvence")

MAX_DEGREE = 8
"""Largest ``m`` accepted; the monomial Vandermonde is too ill-conditioned beyond."""


def interval_moments(m: int, quadrature_points: int | None = None) -> np.ndarray:
    """:math:`M_{kj} = \\int_{k-1}^{k} x^{j-1}\\,dx` by Gauss-Legendre quadrature.

    :param quadrature_points: Nodes per interval, default ``m`` (exact for
        the degrees involved).
    """
    nodes, weights = legendre.leggauss(quadrature_points or m)
    moments = np.zeros((m, m))
    for k in range(m):
        # map [-1, 1] onto [k, k+1]
        x = k + 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        for j in range(m):
            moments[k, j] = np.sum(w * x**j)
    return moments


def exact_determinant(m: int) -> float:
    return float(math.prod(k - ell for k in range(1, m + 1) for ell in range(1, k)))


@dataclasses.dataclass(frozen=True)
class DualBasisVolPoly:
    """Dual basis of the unit-interval averages for degree below ``m``.

    :param m: Number of functionals.
    :param moments: The matrix ``M``.
    :param inverse: ``M^{-1}``; column ``a`` holds the monomial
        coefficients of :math:`\\xi_a`.
    """

    m: int
    moments: np.ndarray
    inverse: np.ndarray

    @property
    def determinant(self) -> float:
        return float(np.linalg.det(self.moments))

    @property
    def expected_determinant(self) -> float:
        return exact_determinant(self.m)

    @property
    def stated_determinant(self) -> float:
        return exact_determinant(self.m) / math.factorial(self.m)

    @property
    def determinant_error(self) -> float:
        """Relative deviation of the quadrature determinant from the exact one."""
        return abs(self.determinant - self.expected_determinant) / self.expected_determinant

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """:math:`\\xi_a(x)` for every ``a``, shape ``x.shape + (m,)``."""
        x = np.asarray(x, dtype=float)
        powers = x[..., None] ** np.arange(self.m)
        return powers @ self.inverse

    def biorthogonality(self, quadrature_points: int | None = None) -> np.ndarray:
        """:math:`\\sigma_\\beta(\\xi_\\alpha)` recomputed by independent quadrature."""
        nodes, weights = legendre.leggauss(quadrature_points or self.m + 2)
        table = np.zeros((self.m, self.m))
        for beta in range(self.m):
            x = beta + 0.5 * (nodes + 1.0)
            table[beta] = (0.5 * weights) @ self.evaluate(x)
        return table

    def biorthogonality_error(self) -> float:
        return float(np.abs(self.biorthogonality() - np.eye(self.m)).max())

    def tensor_evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """2D dual basis :math:`\\xi_a(x)\\xi_b(y)`, shape ``x.shape + (m, m)``."""
        return self.evaluate(x)[..., :, None] * self.evaluate(y)[..., None, :]


def build_volpoly_dual_basis(m: int) -> DualBasisVolPoly:
    """Build the dual basis for ``m`` unit-interval averages.

    :raises: :class:`ValueError` for ``m < 1`` and
        :class:`ConditioningError` for ``m > 8``.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m > MAX_DEGREE:
        raise ConditioningError(f"dual basis for m={m} is too ill-conditioned (max {MAX_DEGREE})")
    moments = interval_moments(m)
    inverse = scipy.linalg.inv(moments)
    basis = DualBasisVolPoly(m, moments, inverse)
    logger.debug(
        f"dual basis m={m}: det={basis.determinant:.6g}, cond={np.linalg.cond(moments):.3g}"
    )
    return basis
