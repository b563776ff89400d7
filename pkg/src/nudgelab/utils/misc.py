"""Miscellaneous utility functions."""

import math


def pad_width(total: int) -> int:
    """Digits needed to zero-pad ids ``0..total-1`` so they sort as strings.

    >>> pad_width(1), pad_width(10), pad_width(11), pad_width(1000)
    (1, 1, 2, 3)

    :param total: Number of ids, at least one.
    """
    if total < 1:
        raise ValueError(f"need at least one id, got {total}")
    return max(1, int(math.ceil(math.log10(total))))


def job_name(index: int, total: int) -> str:
    """Directory name of a sweep job.

    >>> job_name(3, 12)
    'job_03'

    :param index: Zero-based job id.
    :param total: Number of jobs in the sweep.
    :return: ``job_<zero-padded id>``.
    """
    return f"job_{str(index).zfill(pad_width(total))}"


def dotted(table: str | None, key: str) -> str:
    """Dotted config key.

    >>> dotted("run", "horizon"), dotted(None, "seed")
    ('run.horizon', 'seed')
    """
    return key if table is None else f"{table}.{key}"
