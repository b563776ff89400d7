"""Binary field snapshots.

A snapshot record is one UTF-8 JSON header line followed by the
row-major, little-endian float64 physical samples:

.. code-block:: text

    {"gamma": 0.0, "kind": "vector", "n": 64, "nu": 0.1, "p": 0.0, "time": 1.5}\\n
    <2 * 64 * 64 doubles>

Several records may be concatenated in one file (the observation log
does this), and :func:`iter_snapshots` reads them back in order.
"""

import dataclasses
import json
import logging
import pathlib
import typing

import numpy as np

from nudgelab import enum
from nudgelab.errors import ShapeError

logger = logging.getLogger("nudgelab.snapshot")

DTYPE = np.dtype("<f8")


class SnapshotKind(enum.CiStrEnum):
    SCALAR = "scalar"
    VECTOR = "vector"
    POU = "pou"


@dataclasses.dataclass
class Snapshot:
    """A decoded snapshot record.

    :param kind: Field kind.
    :param data: Physical samples; ``(n, n)`` for scalars, ``(2, n, n)`` for
        vectors, ``(q, n, n)`` for partition of unity exports.
    :param time: Simulation time of the sample.
    :param meta: Remaining header entries (``nu``, ``gamma``, ``p``, ...).
    """

    kind: SnapshotKind
    data: np.ndarray
    time: float = 0.0
    meta: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.kind = SnapshotKind(self.kind)
        self.data = np.asarray(self.data, dtype=float)
        self.time = float(self.time)

    @property
    def n(self) -> int:
        return self.data.shape[-1]

    def header(self) -> dict:
        header = dict(self.meta)
        header.update(kind=str(self.kind), n=self.n, time=self.time)
        if self.kind is SnapshotKind.POU:
            header["count"] = self.data.shape[0]
        return header


def _leading_shape(kind: SnapshotKind, header: dict) -> tuple[int, ...]:
    if kind is SnapshotKind.SCALAR:
        return ()
    if kind is SnapshotKind.VECTOR:
        return (2,)
    return (int(header["count"]),)


def write_snapshot(stream: typing.BinaryIO, snapshot: Snapshot):
    """Append one record to an open binary stream."""
    expected = _leading_shape(snapshot.kind, {"count": snapshot.data.shape[0]})
    if snapshot.data.shape != expected + (snapshot.n, snapshot.n):
        raise ShapeError(f"{snapshot.kind} snapshot has shape {snapshot.data.shape}")
    line = json.dumps(snapshot.header(), sort_keys=True) + "\n"
    stream.write(line.encode("utf-8"))
    stream.write(np.ascontiguousarray(snapshot.data, dtype=DTYPE).tobytes(order="C"))


def save_snapshot(path: pathlib.Path, snapshot: Snapshot):
    """Write a single-record snapshot file."""
    with open(path, "wb") as stream:
        write_snapshot(stream, snapshot)
    logger.debug(f"Wrote {snapshot.kind} snapshot {path}")


def read_snapshot(stream: typing.BinaryIO) -> Snapshot | None:
    """Read the next record, or ``None`` at end of stream."""
    line = stream.readline()
    if not line:
        return None
    header = json.loads(line.decode("utf-8"))
    kind = SnapshotKind(header.pop("kind"))
    n = int(header.pop("n"))
    time = float(header.pop("time", 0.0))
    shape = _leading_shape(kind, header) + (n, n)
    header.pop("count", None)
    size = int(np.prod(shape)) * DTYPE.itemsize
    payload = stream.read(size)
    if len(payload) != size:
        raise ShapeError(f"truncated snapshot: expected {size} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype=DTYPE).reshape(shape).astype(float)
    return Snapshot(kind, data, time, header)


def load_snapshot(path: pathlib.Path) -> Snapshot:
    with open(path, "rb") as stream:
        snapshot = read_snapshot(stream)
    if snapshot is None:
        raise ShapeError(f"{path} holds no snapshot")
    return snapshot


def iter_snapshots(path: pathlib.Path) -> typing.Iterator[Snapshot]:
    """Yield every record of a concatenated snapshot file."""
    with open(path, "rb") as stream:
        while (snapshot := read_snapshot(stream)) is not None:
            yield snapshot
