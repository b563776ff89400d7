"""Parameter sweeps over config keys.

A sweep spec lists dotted keys with comma-separated values, separated by
semicolons::

    assimilation.mu=1,2,4;cover.cells=8,16

and expands to the Cartesian product of the values, in the order given
(the last key varies fastest).  Jobs run in separate processes and write
to their own ``job_<id>`` directories.
"""

import concurrent.futures
import itertools
import logging
import pathlib
import typing

from nudgelab.config import parse_scalar
from nudgelab.errors import ConfigError
from nudgelab.utils import misc

logger = logging.getLogger("nudgelab.utils.sweep")

Job = dict[str, object]


def parse_sweep(spec: str) -> list[Job]:
    """Expand a sweep spec into one override mapping per job.

    >>> parse_sweep("run.horizon=1,2;seed=0")
    [{'run.horizon': 1, 'seed': 0}, {'run.horizon': 2, 'seed': 0}]

    :raises: :class:`ConfigError` for empty or malformed entries and
        repeated keys.
    """
    axes: dict[str, list] = {}
    for entry in spec.split(";"):
        entry = entry.strip()
        if not entry:
            continue
        key, sep, values = entry.partition("=")
        key = key.strip()
        if not sep or not key or not values.strip():
            raise ConfigError(f"malformed sweep entry '{entry}'", key or None)
        if key in axes:
            raise ConfigError("key repeated in sweep", key)
        axes[key] = [parse_scalar(v.strip()) for v in values.split(",")]
    if not axes:
        raise ConfigError("empty sweep spec")
    keys = list(axes)
    return [dict(zip(keys, combo)) for combo in itertools.product(*axes.values())]


def job_dirs(out_dir: pathlib.Path, count: int) -> list[pathlib.Path]:
    return [out_dir / misc.job_name(i, count) for i in range(count)]


def run_sweep(
    jobs: typing.Sequence[Job],
    worker: typing.Callable[[int, Job, pathlib.Path], int],
    out_dir: pathlib.Path,
    max_workers: int | None = None,
) -> list[int]:
    """Run ``worker(job_id, overrides, job_dir)`` for every job in a process pool.

    ``worker`` must be picklable (a module-level function) and return an
    exit code.  Results come back in job order.
    """
    dirs = job_dirs(out_dir, len(jobs))
    logger.info(f"dispatching {len(jobs)} sweep jobs under {out_dir}")
    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(worker, i, job, path) for i, (job, path) in enumerate(zip(jobs, dirs))
        ]
        codes = []
        for i, future in enumerate(futures):
            code = future.result()
            logger.info(f"{dirs[i].name} finished with exit code {code}")
            codes.append(code)
    return codes
