"""Tabular outputs as polars dataframes.

Every builder here returns a :class:`polars.DataFrame` with a fixed
schema, so CSV bytes only depend on the numbers that went in.
"""

import logging
import pathlib
import typing

import numpy as np
import polars as pl

from nudgelab import local
from nudgelab.interpolant import ConvergenceRow, GlobalErrorReport
from nudgelab.solver import AbsorbingBallReport, Sample
from nudgelab.utils import fitting

if typing.TYPE_CHECKING:
    from nudgelab.assimilation import ErrorSeries
    from nudgelab.verify import CheckResult

logger = logging.getLogger("nudgelab.tables")

CONSTANTS_SCHEMA = {
    "cell": pl.Int64,
    "operator": pl.Utf8,
    "ell": pl.Int64,
    "j": pl.Int64,
    "h": pl.Float64,
    "epsilon": pl.Float64,
}

CONVERGENCE_SCHEMA = {
    "operator": pl.Utf8,
    "ell": pl.Int64,
    "cells_per_axis": pl.Int64,
    "h": pl.Float64,
    "error": pl.Float64,
}

SLOPE_SCHEMA = {
    "operator": pl.Utf8,
    "ell": pl.Int64,
    "slope": pl.Float64,
    "expected": pl.Float64,
    "residual": pl.Float64,
}

GLOBAL_ERROR_SCHEMA = {
    "operator": pl.Utf8,
    "ell": pl.Int64,
    "j": pl.Int64,
    "h": pl.Float64,
    "lhs": pl.Float64,
    "rhs": pl.Float64,
    "ratio": pl.Float64,
}

VERIFY_SCHEMA = {
    "check": pl.Utf8,
    "value": pl.Float64,
    "bound": pl.Float64,
    "passed": pl.Boolean,
}


def trajectory_frame(
    samples: typing.Sequence[Sample], residuals: np.ndarray | None = None
) -> pl.DataFrame:
    """One row per saved state.

    Columns are ``t``, ``l2``, ``h1`` .. ``hk``, the energy terms and the
    balance residual.
    """
    k = len(samples[0].norms) - 1 if samples else 0
    names = ["l2"] + [f"h{ell}" for ell in range(1, k + 1)]
    if residuals is None:
        residuals = np.full(len(samples), np.nan)
    schema = {"t": pl.Float64} | {name: pl.Float64 for name in names}
    schema |= {
        "energy": pl.Float64,
        "dissipation": pl.Float64,
        "power": pl.Float64,
        "energy_residual": pl.Float64,
    }
    rows = (
        {
            "t": s.t,
            **dict(zip(names, s.norms)),
            "energy": s.energy,
            "dissipation": s.dissipation,
            "power": s.power,
            "energy_residual": float(r),
        }
        for s, r in zip(samples, residuals)
    )
    return pl.LazyFrame(rows, schema=schema).collect()


def ball_frame(report: AbsorbingBallReport) -> pl.DataFrame:
    """Normalized trajectory against the H1 bound, one row per save."""
    columns = {"t": report.times}
    for j in range(report.k + 1):
        columns[f"h{j}_over_nu"] = report.normalized[:, j]
    columns["within_bound"] = report.within_bound()
    return pl.DataFrame(columns)


def error_frame(series: "ErrorSeries") -> pl.DataFrame:
    """Synchronization errors ``t, e0, e1, ...``."""
    schema = {"t": pl.Float64} | {f"e{ell}": pl.Float64 for ell in series.ells}
    return pl.LazyFrame(series.records(), schema=schema).collect()


def constants_frame(
    constants: typing.Sequence[local.AssociatedConstants], labels: typing.Sequence[str]
) -> pl.DataFrame:
    """Associated constants per cell, in the order of the cover."""
    rows = (
        {"cell": q, "operator": label, **row}
        for q, (c, label) in enumerate(zip(constants, labels))
        for row in c.rows()
    )
    return pl.LazyFrame(rows, schema=CONSTANTS_SCHEMA).collect()


def convergence_frame(
    operator: str, ell: int, rows: typing.Sequence[ConvergenceRow]
) -> pl.DataFrame:
    records = (
        {
            "operator": operator,
            "ell": ell,
            "cells_per_axis": r.cells_per_axis,
            "h": r.h,
            "error": r.error,
        }
        for r in rows
    )
    return pl.LazyFrame(records, schema=CONVERGENCE_SCHEMA).collect()


def slope_frame(entries: typing.Iterable[tuple[str, int, fitting.SlopeFit, float]]) -> pl.DataFrame:
    """Fitted slopes: one ``(operator, ell, fit, expected)`` entry per row."""
    rows = (
        {
            "operator": op,
            "ell": ell,
            "slope": fit.slope,
            "expected": expected,
            "residual": fit.residual,
        }
        for op, ell, fit, expected in entries
    )
    return pl.LazyFrame(rows, schema=SLOPE_SCHEMA).collect()


def global_error_frame(operator: str, reports: typing.Iterable[GlobalErrorReport]) -> pl.DataFrame:
    rows = ({"operator": operator, **row} for report in reports for row in report.records())
    return pl.LazyFrame(rows, schema=GLOBAL_ERROR_SCHEMA).collect()


def verify_frame(results: typing.Iterable["CheckResult"]) -> pl.DataFrame:
    rows = (
        {"check": r.check, "value": r.value, "bound": r.bound, "passed": r.passed} for r in results
    )
    return pl.LazyFrame(rows, schema=VERIFY_SCHEMA).collect()


def write_csv(df: pl.DataFrame, path: pathlib.Path) -> pathlib.Path:
    """Write ``df`` to ``path`` and return the path."""
    path.parent.mkdir(parents=True, exist_ok=True)
    df.write_csv(path)
    logger.info(f"wrote {df.height} rows to {path}")
    return path
