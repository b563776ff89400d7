"""Run manifests.

Every output directory gets a ``manifest.json`` recording how it was
produced and a content hash of each file written next to it:

.. code-block:: json

    {
      "command": "simulate",
      "config": {"seed": 0, "grid": {"n": 64}, "...": "..."},
      "finished": "2024-05-01T12:00:03+00:00",
      "job": null,
      "outputs": [{"bytes": 5120, "path": "series.csv", "sha256": "..."}],
      "seed": 0,
      "started": "2024-05-01T12:00:00+00:00",
      "version": "0.1.0"
    }
"""

import dataclasses
import datetime
import hashlib
import json
import logging
import pathlib

from nudgelab.__version__ import __version__

logger = logging.getLogger("nudgelab.manifest")

MANIFEST_NAME = "manifest.json"


def sha256(path: pathlib.Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def write_json(data: dict, path: pathlib.Path) -> pathlib.Path:
    """Dump ``data`` with sorted keys and an indent of 2."""
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"wrote {path}")
    return path


@dataclasses.dataclass
class ExperimentManifest:
    """Provenance of one output directory.

    :param command: Subcommand that produced the directory.
    :param config: Plain echo of the full configuration.
    :param job: Sweep job id, ``None`` outside sweeps.
    """

    command: str
    config: dict
    seed: int
    version: str = __version__
    started: str = dataclasses.field(default_factory=now)
    finished: str | None = None
    job: int | None = None
    outputs: list[dict] = dataclasses.field(default_factory=list)

    def record(self, path: pathlib.Path, root: pathlib.Path):
        """Add a written file, hashed, with its path relative to ``root``."""
        self.outputs.append(
            {
                "path": path.relative_to(root).as_posix(),
                "bytes": path.stat().st_size,
                "sha256": sha256(path),
            }
        )

    def finish(self, root: pathlib.Path) -> pathlib.Path:
        """Stamp the finish time and write ``manifest.json`` into ``root``."""
        self.finished = now()
        self.outputs.sort(key=lambda entry: entry["path"])
        return write_json(dataclasses.asdict(self), root / MANIFEST_NAME)


def load_manifest(path: pathlib.Path) -> ExperimentManifest:
    if path.is_dir():
        path = path / MANIFEST_NAME
    return ExperimentManifest(**json.loads(path.read_text(encoding="utf-8")))


def verify_outputs(manifest: ExperimentManifest, root: pathlib.Path) -> list[str]:
    """Paths whose current hash no longer matches the manifest."""
    changed = []
    for entry in manifest.outputs:
        path = root / entry["path"]
        if not path.exists() or sha256(path) != entry["sha256"]:
            changed.append(entry["path"])
    return changed
