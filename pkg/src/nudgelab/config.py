"""Experiment configuration files.

Configs are TOML.  Every table maps onto a frozen dataclass below and
every key has a default, so an empty file is a valid config:

.. code-block:: toml

    seed = 7

    [grid]
    n = 64

    [dissipation]
    nu = 0.1

    [forcing]
    kind = "kolmogorov"
    grashof = 50.0

    [interpolant]
    kinds = ["Lagrange(2)", "Taylor1"]

Values are layered: file, then ``NUDGELAB_<TABLE>__<KEY>`` environment
variables (``NUDGELAB_SEED`` for the seed), then explicit overrides from
the command line.
"""

import dataclasses
import logging
import os
import pathlib
import re
import tomllib
import types
import typing

from nudgelab import enum
from nudgelab.errors import ConfigError
from nudgelab.solver import ForcingKind

logger = logging.getLogger("nudgelab.config")

ENV_PREFIX = "NUDGELAB_"


class CoverKind(enum.CiStrEnum):
    UNIFORM = "uniform"
    DYADIC = "dyadic"
    FILE = "file"


class ConditionMode(enum.CiStrEnum):
    """Which sufficient condition set :func:`nudgelab.assimilation.check_conditions` evaluates.

    +--------------+----------------------------------------------------------+
    | Value        | Conditions                                               |
    +==============+==========================================================+
    | h1-baseline  | H1 resolution and the lower bound on ``mu``              |
    +--------------+----------------------------------------------------------+
    | general      | higher order sync, per-cell constants                    |
    +--------------+----------------------------------------------------------+
    | uniform      | higher order sync, uniform scale                         |
    +--------------+----------------------------------------------------------+
    | optimal      | sync up to the level of an optimal family                |
    +--------------+----------------------------------------------------------+
    | wellposed    | well-posedness of the observer in higher norms           |
    +--------------+----------------------------------------------------------+
    | h1-general   | H1 sync with the per-cell hyperdissipative sum           |
    +--------------+----------------------------------------------------------+
    | h1-optimal   | H1 sync for an optimal family                            |
    +--------------+----------------------------------------------------------+
    """

    H1_BASELINE = "h1-baseline"
    GENERAL = "general"
    UNIFORM = "uniform"
    OPTIMAL = "optimal"
    WELLPOSED = "wellposed"
    H1_GENERAL = "h1-general"
    H1_OPTIMAL = "h1-optimal"


class ObserverInit(enum.CiStrEnum):
    ZERO = "zero"
    RANDOM = "random"


@dataclasses.dataclass(frozen=True)
class GridConfig:
    n: int = 64


@dataclasses.dataclass(frozen=True)
class DissipationConfig:
    nu: float = 0.1
    gamma: float = 0.0
    p: float = 0.0


@dataclasses.dataclass(frozen=True)
class ForcingConfig:
    kind: ForcingKind = ForcingKind.KOLMOGOROV
    grashof: float = 50.0
    wavenumber: int = 1
    kmin: float = 1.0
    kmax: float = 3.0


@dataclasses.dataclass(frozen=True)
class RunConfig:
    """Time stepping and spin-up.

    :param horizon: Length of the simulated or assimilated interval.
    :param save_interval: Time between saved diagnostics.
    :param spin_up: Truth spin-up time before assimilation starts.
    :param k: Highest Sobolev index recorded.
    :param window: Consecutive saves for absorbing ball entry.
    :param snapshot_every: Saves between velocity snapshots, 0 for the final state only.
    """

    horizon: float = 50.0
    save_interval: float = 0.5
    dt_max: float = 0.05
    k: int = 2
    spin_up: float = 100.0
    initial_energy: float = 1.0
    initial_kmax: float = 8.0
    window: int = 20
    snapshot_every: int = 0


@dataclasses.dataclass(frozen=True)
class CoverConfig:
    kind: CoverKind = CoverKind.UNIFORM
    cells: int = 16
    levels: int = 2
    collar: float = 0.25
    path: str = ""


@dataclasses.dataclass(frozen=True)
class InterpolantConfig:
    """Local operators, assigned to the cells in turn."""

    kinds: tuple[str, ...] = ("volavg0",)


@dataclasses.dataclass(frozen=True)
class AssimilationConfig:
    """Nudging parameters.

    :param mu: Nudging strength; omitted means the lower bound
        :math:`\\nu(1+\\log(1+G))G` times ``mu_factor``.
    :param floor: Relative error floor of the decay fits.
    """

    mu: float | None = None
    mu_factor: float = 1.0
    mode: ConditionMode = ConditionMode.H1_BASELINE
    observe_every: int = 1
    observer_init: ObserverInit = ObserverInit.ZERO
    log_observations: bool = True
    ensemble_size: int = 8
    floor: float = 1e-11


@dataclasses.dataclass(frozen=True)
class StudyConfig:
    operators: tuple[str, ...] = ("volavg0", "lagrange(2)")
    ells: tuple[int, ...] = (0,)
    cells: tuple[int, ...] = (4, 8, 16, 32)
    collar: float = 0.25
    n: int = 128
    kmax: float = 4.0
    global_error: bool = True
    ensemble_size: int = 4


@dataclasses.dataclass(frozen=True)
class VerifyConfig:
    n: int = 64
    checks: tuple[str, ...] = ()
    cover_path: str = ""


@dataclasses.dataclass(frozen=True)
class Config:
    seed: int = 0
    grid: GridConfig = GridConfig()
    dissipation: DissipationConfig = DissipationConfig()
    forcing: ForcingConfig = ForcingConfig()
    run: RunConfig = RunConfig()
    cover: CoverConfig = CoverConfig()
    interpolant: InterpolantConfig = InterpolantConfig()
    assimilation: AssimilationConfig = AssimilationConfig()
    study: StudyConfig = StudyConfig()
    verify: VerifyConfig = VerifyConfig()


TABLES = {
    field.name: field.type for field in dataclasses.fields(Config) if field.name != "seed"
}

_TOML_LINE_RE = re.compile(r"at line (\d+)")
_HEADER_RE = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]\s*(#.*)?$")


def locate(text: str, table: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[table]`` (or of the header when ``key`` is None)."""
    current = None
    key_re = re.compile(rf"^\s*{re.escape(key)}\s*=") if key else None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _HEADER_RE.match(line)
        if header:
            current = header.group(1)
            if key is None and current == table:
                return number
            continue
        if key_re is not None and current == table and key_re.match(line):
            return number
    return None


def _expected(hint) -> str:
    return getattr(hint, "__name__", str(hint))


def _coerce(value, hint, key: str, line: int | None):
    """Convert a TOML value to the annotated type of a config field."""
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], key, line)
    if origin is tuple:
        (item,) = typing.get_args(hint)[:1]
        if isinstance(value, str | int | float):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", key, line)
        return tuple(_coerce(v, item, key, line) for v in value)
    if isinstance(hint, type) and issubclass(hint, enum.CiStrEnum):
        try:
            return hint(str(value))
        except ValueError:
            raise ConfigError(
                f"invalid value '{value}', expected one of {', '.join(hint.choices())}", key, line
            ) from None
    if hint is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected bool, got {type(value).__name__}", key, line)
    if hint is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"expected int, got {type(value).__name__}", key, line)
    if hint is float:
        if isinstance(value, int | float) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"expected float, got {type(value).__name__}", key, line)
    if hint is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected str, got {type(value).__name__}", key, line)
    raise ConfigError(f"unsupported type {_expected(hint)}", key, line)


def _build_table(cls, name: str, values: dict, text: str):
    hints = typing.get_type_hints(cls)
    known = {field.name for field in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        dotted = f"{name}.{key}"
        line = locate(text, name, key)
        if key not in known:
            raise ConfigError("unknown key", dotted, line)
        kwargs[key] = _coerce(value, hints[key], dotted, line)
    return cls(**kwargs)


def parse_scalar(raw: str):
    """Parse an override value as a TOML value, falling back to the raw string.

    >>> parse_scalar("0.5"), parse_scalar("[4, 8]"), parse_scalar("lagrange(2)")
    (0.5, [4, 8], 'lagrange(2)')
    """
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw


def env_overrides(environ: typing.Mapping[str, str]) -> dict[str, object]:
    """Dotted overrides from ``NUDGELAB_<TABLE>__<KEY>`` variables.

    :raises: :class:`ConfigError` for a variable without a table/key split.
    """
    out = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        if rest == "seed":
            out["seed"] = parse_scalar(raw)
            continue
        if rest == "slow_tests":
            continue
        if "__" not in rest:
            raise ConfigError(f"environment variable {name} does not name <TABLE>__<KEY>")
        table, key = rest.split("__", 1)
        out[f"{table}.{key}"] = parse_scalar(raw)
    return out


def apply_overrides(data: dict, overrides: typing.Mapping[str, object]) -> dict:
    """Return a copy of the raw TOML mapping with dotted overrides applied."""
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for dotted, value in overrides.items():
        if "." not in dotted:
            data[dotted] = value
            continue
        table, key = dotted.split(".", 1)
        section = data.setdefault(table, {})
        if not isinstance(section, dict):
            raise ConfigError("not a table", table)
        section[key] = value
    return data


def from_dict(data: dict, text: str = "") -> Config:
    """Build a :class:`Config` from a raw TOML mapping.

    :param text: Source text, used only to report line numbers.
    :raises: :class:`ConfigError` for unknown tables or keys and bad types.
    """
    kwargs = {}
    for name, value in data.items():
        if name == "seed":
            kwargs["seed"] = _coerce(value, int, "seed", locate(text, None, "seed"))
            if kwargs["seed"] < 0:
                raise ConfigError("seed must be non-negative", "seed")
            continue
        if name not in TABLES:
            raise ConfigError("unknown table", name, locate(text, name, None))
        if not isinstance(value, dict):
            raise ConfigError("expected a table", name, locate(text, None, name))
        kwargs[name] = _build_table(TABLES[name], name, value, text)
    return Config(**kwargs)


def loads(text: str, overrides: typing.Mapping[str, object] | None = None) -> Config:
    """Parse config text, then apply dotted overrides.

    :raises: :class:`ConfigError` on TOML syntax errors, with the parser's line.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _TOML_LINE_RE.search(str(exc))
        line = int(match.group(1)) if match else None
        raise ConfigError(f"invalid TOML: {exc}", line=line) from exc
    if overrides:
        data = apply_overrides(data, overrides)
    return from_dict(data, text)


def load_config(
    path: pathlib.Path | None,
    overrides: typing.Mapping[str, object] | None = None,
    environ: typing.Mapping[str, str] | None = None,
) -> Config:
    """Read a config file (or the defaults when ``path`` is None).

    Environment overrides come before ``overrides``.

    :raises: :class:`ConfigError` for unreadable files and invalid content.
    """
    text = ""
    if path is not None:
        try:
            text = pathlib.Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        logger.info(f"reading config {path}")
    layered = env_overrides(os.environ if environ is None else environ)
    layered.update(overrides or {})
    for dotted, value in layered.items():
        logger.debug(f"override {dotted}={value!r}")
    return loads(text, layered)


def to_dict(config) -> dict:
    """Plain JSON-ready echo of a config (enums as strings, tuples as lists)."""

    def plain(value):
        if isinstance(value, enum.CiStrEnum):
            return str(value)
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        return value

    out = {}
    for field in dataclasses.fields(config):
        value = getattr(config, field.name)
        if dataclasses.is_dataclass(value):
            out[field.name] = to_dict(value)
        else:
            out[field.name] = plain(value)
    return out
