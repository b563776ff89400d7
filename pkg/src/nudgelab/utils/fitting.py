"""Least-squares fits used by convergence and decay diagnostics."""

import dataclasses
import logging

import numpy as np

logger = logging.getLogger("nudgelab.utils.fitting")


@dataclasses.dataclass(frozen=True)
class LineFit:
    """Straight-line fit ``y = slope * x + intercept``.

    :param slope: Fitted slope.
    :param intercept: Fitted intercept.
    :param residual: Root-mean-square residual of the fit.
    :param points: Number of points used.
    """

    slope: float
    intercept: float
    residual: float
    points: int


def fit_line(x: np.ndarray, y: np.ndarray) -> LineFit:
    """Degree-one :func:`numpy.polyfit` with its RMS residual.

    >>> fit = fit_line(np.array([0.0, 1.0, 2.0]), np.array([1.0, 3.0, 5.0]))
    >>> round(fit.slope, 12), round(fit.intercept, 12)
    (2.0, 1.0)

    :raises: :class:`ValueError` with fewer than two points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError(f"need at least two points to fit a line, got {x.size}")
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return LineFit(float(slope), float(intercept), residual, int(x.size))


@dataclasses.dataclass(frozen=True)
class SlopeFit:
    """Log-log convergence fit of ``errors`` against ``scales``."""

    slope: float
    residual: float
    scales: tuple[float, ...]
    errors: tuple[float, ...]
    excluded: tuple[int, ...]


def loglog_slope(scales, errors, floor: float = 1e-12) -> SlopeFit:
    """Fit ``log(error) = slope * log(scale) + c`` ignoring errors below ``floor``.

    When fewer than two points survive the floor the slope is reported as
    ``nan`` (every error at round-off means the operator is exact).
    """
    scales = np.asarray(scales, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = errors > floor
    excluded = tuple(int(i) for i in np.flatnonzero(~keep))
    if keep.sum() < 2:
        logger.warning(f"only {int(keep.sum())} errors above {floor:g}, slope not fitted")
        return SlopeFit(float("nan"), float("nan"), tuple(scales), tuple(errors), excluded)
    fit = fit_line(np.log(scales[keep]), np.log(errors[keep]))
    return SlopeFit(fit.slope, fit.residual, tuple(scales), tuple(errors), excluded)
