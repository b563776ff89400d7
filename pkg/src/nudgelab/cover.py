"""Covers of the torus by rectangles with square collars.

A :class:`Subdomain` is a closed rectangle :math:`Q_q` together with a
collar width :math:`\\delta_q`; its collared version is
:math:`\\tilde Q_q = Q_q + [-\\delta_q, \\delta_q]^2`, capped at the full
torus along any axis, and :math:`h_q = \\mathrm{diam}(\\tilde Q_q)`.

Constructors:

+------------------------+--------------------------------------------------+
| Function               | Description                                      |
+========================+==================================================+
| :func:`uniform_cover`  | ``n x n`` congruent squares, adicity 1           |
+------------------------+--------------------------------------------------+
| :func:`dyadic_cover`   | rectilinear grid whose widths halve towards the  |
|                        | centre line, adicity 2                           |
+------------------------+--------------------------------------------------+
| :func:`staggered_cover`| squares stepped by half a side, multiplicity 4   |
+------------------------+--------------------------------------------------+
"""

import dataclasses
import functools
import json
import logging
import math
import pathlib

import numpy as np

from nudgelab import spectral
from nudgelab.errors import CoverError
from nudgelab.spectral import TWO_PI

logger = logging.getLogger("nudgelab.cover")

MAX_OVERLAP = 9
"""Largest overlap count accepted by :func:`uniform_cover`."""

GEOMETRY_TOL = 1e-12
"""Tolerance for touching versus overlapping intervals."""


@dataclasses.dataclass(frozen=True)
class Rect:
    """Plain rectangle on the torus, used as a quadrature region."""

    anchor: tuple[float, float]
    sides: tuple[float, float]

    @property
    def area(self) -> float:
        return self.sides[0] * self.sides[1]


@dataclasses.dataclass(frozen=True)
class Subdomain:
    """Closed rectangle with a collar.

    :param anchor: Lower-left corner, wrapped into ``[0, 2π)``.
    :param sides: Side lengths, each in ``(0, 2π]``.
    :param collar: Collar width :math:`\\delta_q \\in (0, 2\\pi)`.
    :param ramps: Half-widths of the partition-of-unity ramps on the
        ``(left, right, bottom, top)`` edges.  Defaults to the collar on
        every edge; each must lie in ``(0, collar]``.
    :raises: :class:`CoverError` on invalid geometry.
    """

    anchor: tuple[float, float]
    sides: tuple[float, float]
    collar: float
    ramps: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        anchor = tuple(float(a) % TWO_PI for a in self.anchor)
        sides = tuple(float(s) for s in self.sides)
        if len(anchor) != 2 or len(sides) != 2:
            raise CoverError("anchor and sides need two entries each")
        if any(s <= 0 or s > TWO_PI + GEOMETRY_TOL for s in sides):
            raise CoverError(f"sides must lie in (0, 2π], got {sides}")
        if not 0 < self.collar < TWO_PI:
            raise CoverError(f"collar must lie in (0, 2π), got {self.collar}")
        ramps = self.ramps if self.ramps is not None else (self.collar,) * 4
        ramps = tuple(float(r) for r in ramps)
        if len(ramps) != 4 or any(r <= 0 or r > self.collar + GEOMETRY_TOL for r in ramps):
            raise CoverError(f"ramps must lie in (0, collar], got {ramps}")
        for axis in (0, 1):
            if not self.full_axis_of(sides, axis):
                left, right = ramps[2 * axis], ramps[2 * axis + 1]
                if left + right > sides[axis] + GEOMETRY_TOL:
                    raise CoverError("opposite ramps overlap inside the cell")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "collar", float(self.collar))
        object.__setattr__(self, "ramps", ramps)

    @staticmethod
    def full_axis_of(sides, axis: int) -> bool:
        return sides[axis] >= TWO_PI - GEOMETRY_TOL

    def full_axis(self, axis: int) -> bool:
        """Whether the cell wraps the whole torus along ``axis``."""
        return self.full_axis_of(self.sides, axis)

    def axis_ramps(self, axis: int) -> tuple[float, float]:
        return self.ramps[2 * axis], self.ramps[2 * axis + 1]

    @property
    def area(self) -> float:
        return self.sides[0] * self.sides[1]

    @property
    def center(self) -> tuple[float, float]:
        return tuple((a + s / 2) % TWO_PI for a, s in zip(self.anchor, self.sides))

    @property
    def collared_sides(self) -> tuple[float, float]:
        return tuple(min(s + 2 * self.collar, TWO_PI) for s in self.sides)

    @property
    def diameter(self) -> float:
        """:math:`h_q`, the diameter of the collared cell."""
        return math.hypot(*self.collared_sides)

    def region(self) -> Rect:
        return Rect(self.anchor, self.sides)

    def collared_region(self) -> Rect:
        anchor = tuple(
            0.0 if s >= TWO_PI else (a - self.collar) % TWO_PI
            for a, s in zip(self.anchor, self.collared_sides)
        )
        return Rect(anchor, self.collared_sides)

    def plateau_region(self) -> Rect:
        """Core of the cell where its partition function equals one."""
        anchor, sides = [], []
        for axis in (0, 1):
            if self.full_axis(axis):
                anchor.append(0.0)
                sides.append(TWO_PI)
                continue
            left, right = self.axis_ramps(axis)
            anchor.append((self.anchor[axis] + left) % TWO_PI)
            sides.append(max(self.sides[axis] - left - right, 0.0))
        return Rect(tuple(anchor), tuple(sides))

    def to_dict(self) -> dict:
        return {
            "anchor": list(self.anchor),
            "sides": list(self.sides),
            "collar": self.collar,
            "ramps": list(self.ramps),
        }


def _arcs_meet(a1, l1, a2, l2) -> np.ndarray:
    """Whether open arcs ``(a1, a1+l1)`` and ``(a2, a2+l2)`` of the circle meet."""
    d = np.mod(a2 - a1, TWO_PI)
    full = (l1 >= TWO_PI - GEOMETRY_TOL) | (l2 >= TWO_PI - GEOMETRY_TOL)
    return full | (d < l1 - GEOMETRY_TOL) | (d + l2 > TWO_PI + GEOMETRY_TOL)


def _meet_matrix(anchors: np.ndarray, sides: np.ndarray) -> np.ndarray:
    meet = np.ones((len(anchors), len(anchors)), dtype=bool)
    for axis in (0, 1):
        a = anchors[:, axis]
        s = sides[:, axis]
        meet &= _arcs_meet(a[:, None], s[:, None], a[None, :], s[None, :])
    return meet


@dataclasses.dataclass(frozen=True)
class Cover:
    """Finite cover of the torus.

    :param subdomains: The cells, in a fixed order.
    :param delta: Adicity ratio of neighbouring diameters.
    :param uniform_scale: Common :math:`h` of a uniform cover, else ``None``.
    :param name: Label used in reports.
    """

    subdomains: tuple[Subdomain, ...]
    delta: float = 1.0
    uniform_scale: float | None = None
    name: str = "custom"

    def __post_init__(self):
        subdomains = tuple(self.subdomains)
        if not subdomains:
            raise CoverError("a cover needs at least one subdomain")
        object.__setattr__(self, "subdomains", subdomains)

    def __len__(self) -> int:
        return len(self.subdomains)

    def __iter__(self):
        return iter(self.subdomains)

    def __getitem__(self, q: int) -> Subdomain:
        return self.subdomains[q]

    @functools.cached_property
    def diameters(self) -> np.ndarray:
        return np.array([cell.diameter for cell in self.subdomains])

    @functools.cached_property
    def collar_overlaps(self) -> np.ndarray:
        """Boolean matrix of collared cells that meet (diagonal included)."""
        anchors = np.array([cell.collared_region().anchor for cell in self.subdomains])
        sides = np.array([cell.collared_sides for cell in self.subdomains])
        return _meet_matrix(anchors, sides)

    @functools.cached_property
    def cell_overlaps(self) -> np.ndarray:
        """Boolean matrix of closed cells meeting in positive measure."""
        anchors = np.array([cell.anchor for cell in self.subdomains])
        sides = np.array([cell.sides for cell in self.subdomains])
        return _meet_matrix(anchors, sides)

    @functools.cached_property
    def pi0(self) -> int:
        return overlap_count(self)

    def covers_torus(self) -> bool:
        """Whether the closed cells cover every point of the torus.

        Tests the centre of every elementary rectangle cut out by the cell
        edges, which is exact for rectangles.
        """
        centres = []
        for axis in (0, 1):
            edges = {0.0}
            for cell in self.subdomains:
                if not cell.full_axis(axis):
                    edges.add(cell.anchor[axis])
                    edges.add((cell.anchor[axis] + cell.sides[axis]) % TWO_PI)
            edges = np.sort(np.array(list(edges)))
            gaps = np.diff(np.append(edges, edges[0] + TWO_PI))
            centres.append(np.mod(edges + gaps / 2, TWO_PI))
        px, py = np.meshgrid(*centres, indexing="ij")
        px, py = px.ravel(), py.ravel()
        covered = np.zeros(px.shape, dtype=bool)
        for cell in self.subdomains:
            inside = np.ones(px.shape, dtype=bool)
            for axis, p in ((0, px), (1, py)):
                if not cell.full_axis(axis):
                    inside &= np.mod(p - cell.anchor[axis], TWO_PI) <= cell.sides[axis]
            covered |= inside
        return bool(covered.all())


def overlap_count(cover: Cover) -> int:
    """:math:`\\pi_0`: the most collared cells any one collared cell meets, itself included."""
    return int(cover.collar_overlaps.sum(axis=1).max())


@dataclasses.dataclass(frozen=True)
class DeltaAdicReport:
    delta: float
    worst_ratio: float
    passed: bool


def check_delta_adic(cover: Cover, delta: float | None = None) -> DeltaAdicReport:
    """Check :math:`\\delta^{-1} h_q \\le h_{q'} \\le \\delta h_q` for meeting collars.

    :param delta: Ratio to test; defaults to the cover's own adicity.
    """
    delta = cover.delta if delta is None else delta
    h = cover.diameters
    ratio = np.maximum(h[:, None] / h[None, :], h[None, :] / h[:, None])
    worst = float(np.where(cover.collar_overlaps, ratio, 1.0).max())
    return DeltaAdicReport(delta, worst, worst <= delta * (1 + GEOMETRY_TOL))


def uniform_cover(cells_per_axis: int, collar_fraction: float = 0.25) -> Cover:
    """Tile the torus with ``cells_per_axis**2`` congruent squares.

    Cells are ordered with x outermost.  The collar is
    ``collar_fraction`` times the side.

    :raises: :class:`CoverError` for ``cells_per_axis < 1``, a collar
        fraction outside ``(0, 1/2)``, or an overlap count above 9.
    """
    if cells_per_axis < 1:
        raise CoverError(f"cells_per_axis must be >= 1, got {cells_per_axis}")
    if not 0 < collar_fraction < 0.5:
        raise CoverError(f"collar_fraction must lie in (0, 1/2), got {collar_fraction}")
    side = TWO_PI / cells_per_axis
    collar = collar_fraction * side
    cells = [
        Subdomain((i * side, j * side), (side, side), collar)
        for i in range(cells_per_axis)
        for j in range(cells_per_axis)
    ]
    cover = Cover(
        tuple(cells),
        delta=1.0,
        uniform_scale=cells[0].diameter,
        name=f"uniform-{cells_per_axis}",
    )
    if cover.pi0 > MAX_OVERLAP:
        raise CoverError(f"overlap count {cover.pi0} exceeds {MAX_OVERLAP}")
    return cover


def dyadic_widths(levels: int) -> list[float]:
    """Per-axis cell widths ``[a, a/2, ..., a/2^(L-1), a/2^(L-1), ..., a/2, a]`` summing to 2π."""
    largest = math.pi / (2.0 - 2.0 ** (1 - levels))
    half = [largest / 2**i for i in range(levels)]
    return half + half[::-1]


def dyadic_cover(levels: int, collar_fraction: float = 0.2) -> Cover:
    """Rectilinear cover whose cell widths halve towards the centre lines.

    Each edge ramp is ``collar_fraction`` times the narrower of the two
    cells it separates, so neighbouring ramps are complementary and the
    diameters of meeting cells differ by at most a factor of 2.

    :param levels: Number of halvings; ``1`` gives the single-cell cover.
    """
    if levels < 1:
        raise CoverError(f"levels must be >= 1, got {levels}")
    if levels == 1:
        cover = uniform_cover(1, collar_fraction)
        return dataclasses.replace(cover, name="dyadic-1")
    if not 0 < collar_fraction < 0.5:
        raise CoverError(f"collar_fraction must lie in (0, 1/2), got {collar_fraction}")
    widths = dyadic_widths(levels)
    starts = np.concatenate([[0.0], np.cumsum(widths)[:-1]])
    count = len(widths)
    # ramp on the edge at the start of cell i (between i-1 and i)
    edge_ramps = [
        collar_fraction * min(widths[i - 1], widths[i]) for i in range(count)
    ]
    cells = []
    for i in range(count):
        left_x, right_x = edge_ramps[i], edge_ramps[(i + 1) % count]
        for j in range(count):
            bottom, top = edge_ramps[j], edge_ramps[(j + 1) % count]
            ramps = (left_x, right_x, bottom, top)
            cells.append(
                Subdomain(
                    (starts[i], starts[j]), (widths[i], widths[j]), max(ramps), ramps
                )
            )
    cover = Cover(tuple(cells), delta=2.0, uniform_scale=None, name=f"dyadic-{levels}")
    logger.debug(f"dyadic cover with {len(cover)} cells, pi0={cover.pi0}")
    return cover


def staggered_cover(cells_per_axis: int, collar_fraction: float = 0.25) -> Cover:
    """Squares of side ``2π/cells_per_axis`` anchored every half side.

    Every point is covered by four cells, which makes this the standard
    example of partition multiplicity 4.  It admits no tensor-product
    partition of unity.
    """
    if cells_per_axis < 1:
        raise CoverError(f"cells_per_axis must be >= 1, got {cells_per_axis}")
    side = TWO_PI / cells_per_axis
    step = side / 2
    count = 2 * cells_per_axis
    cells = [
        Subdomain((i * step, j * step), (side, side), collar_fraction * side)
        for i in range(count)
        for j in range(count)
    ]
    return Cover(
        tuple(cells),
        delta=1.0,
        uniform_scale=cells[0].diameter,
        name=f"staggered-{cells_per_axis}",
    )


@dataclasses.dataclass(frozen=True)
class LemmaReport:
    """Measured sandwich ``lower <= value <= upper`` with a relative tolerance."""

    name: str
    lower: float
    value: float
    upper: float
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        scale = max(abs(self.value), 1.0)
        return (
            self.lower <= self.value + self.tol * scale
            and self.value <= self.upper + self.tol * scale
        )

    @property
    def strict(self) -> bool:
        scale = max(abs(self.value), 1.0)
        return (
            self.lower < self.value - self.tol * scale
            and self.value < self.upper - self.tol * scale
        )


@dataclasses.dataclass(frozen=True)
class MultiplicityReport:
    """Greedy partition multiplicity with its witness subcollections.

    :param multiplicity: ``M``, or ``None`` when undetermined.
    :param classes: Cell indices of each subcollection.
    :param sandwich: Per-class check of the multiplicity sandwich.
    """

    multiplicity: int | None
    classes: tuple[tuple[int, ...], ...]
    sandwich: tuple[LemmaReport, ...] = ()

    @property
    def status(self) -> str:
        if self.multiplicity is None:
            return "multiplicity undetermined"
        return "determined"

    @property
    def passed(self) -> bool:
        return self.multiplicity is not None and all(r.passed for r in self.sandwich)


def _cell_integrals(cover: Cover, phi: np.ndarray | None, grid, collared: bool) -> np.ndarray:
    if phi is None:
        if collared:
            return np.array([c.collared_sides[0] * c.collared_sides[1] for c in cover])
        return np.array([c.area for c in cover])
    regions = [c.collared_region() if collared else c.region() for c in cover]
    return np.array([spectral.region_integral(phi, grid, r) for r in regions])


def _total_integral(phi: np.ndarray | None, grid) -> float:
    if phi is None:
        return TWO_PI**2
    return float(phi.sum() * grid.dx**2)


def partition_multiplicity(
    cover: Cover, phi: np.ndarray | None = None, grid: spectral.Grid | None = None
) -> MultiplicityReport:
    """Split the closed cells into measure-disjoint tilings by greedy colouring.

    Cells are coloured in cover order with the smallest colour not used by
    an overlapping earlier cell.  A colour class is a valid tiling when its
    areas sum to :math:`(2\\pi)^2`.  The sandwich
    :math:`M^{-1}\\sum_Q\\int_Q\\phi \\le \\int\\phi \\le \\sum_{Q\\in\\mathcal Q_j}\\int_Q\\phi`
    is then checked for every class.

    :param phi: Non-negative samples on ``grid``; ``None`` means ``phi = 1``
        with exact areas.
    """
    overlaps = cover.cell_overlaps
    colours = np.full(len(cover), -1)
    for q in range(len(cover)):
        used = set(colours[:q][overlaps[q, :q]].tolist())
        colour = 0
        while colour in used:
            colour += 1
        colours[q] = colour
    count = int(colours.max()) + 1
    classes = tuple(tuple(np.flatnonzero(colours == c).tolist()) for c in range(count))
    areas = np.array([cell.area for cell in cover])
    for members in classes:
        if abs(areas[list(members)].sum() - TWO_PI**2) > 1e-10 * TWO_PI**2:
            logger.warning(f"multiplicity undetermined for cover {cover.name}")
            return MultiplicityReport(None, classes)
    integrals = _cell_integrals(cover, phi, grid, collared=False)
    total = _total_integral(phi, grid)
    sandwich = tuple(
        LemmaReport(
            f"multiplicity class {j}",
            integrals.sum() / count,
            total,
            float(integrals[list(members)].sum()),
        )
        for j, members in enumerate(classes)
    )
    return MultiplicityReport(count, classes, sandwich)


def check_multiplicity_lemma(
    cover: Cover, grid: spectral.Grid, phi: np.ndarray | None = None
) -> LemmaReport:
    """Check :math:`\\pi_0^{-1}\\sum_q\\int_{\\tilde Q_q}\\phi \\le \\int\\phi \\le \\sum_q\\int_{\\tilde Q_q}\\phi`.

    :param phi: Non-negative grid samples; defaults to ``1``.
    :raises: :class:`ValueError` if ``phi`` has negative samples.
    """
    if phi is not None:
        grid.check_shape(phi)
        if (phi < 0).any():
            raise ValueError("the multiplicity lemma needs a non-negative function")
    integrals = _cell_integrals(cover, phi, grid, collared=True)
    total = _total_integral(phi, grid)
    report = LemmaReport(
        "collar multiplicity", integrals.sum() / cover.pi0, total, float(integrals.sum())
    )
    if not report.passed:
        logger.error(f"multiplicity lemma violated on cover {cover.name}: {report}")
    return report


def save_cover(cover: Cover, path: pathlib.Path):
    """Write a cover as a JSON list of ``{anchor, sides, collar, ramps}``."""
    payload = [cell.to_dict() for cell in cover]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")


def load_cover(path: pathlib.Path, name: str | None = None) -> Cover:
    """Read a cover file written by :func:`save_cover` or by hand.

    The adicity is measured from the cells, and the uniform scale is set
    when every cell has the same diameter.

    :raises: :class:`CoverError` on malformed entries.
    """
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        cells = tuple(
            Subdomain(
                tuple(entry["anchor"]),
                tuple(entry["sides"]),
                float(entry["collar"]),
                tuple(entry["ramps"]) if entry.get("ramps") is not None else None,
            )
            for entry in payload
        )
    except (KeyError, TypeError, json.JSONDecodeError) as err:
        raise CoverError(f"malformed cover file {path}: {err}") from err
    cover = Cover(cells, name=name or path.stem)
    worst = check_delta_adic(cover, 1.0).worst_ratio
    h = cover.diameters
    uniform = float(h[0]) if np.allclose(h, h[0], rtol=1e-12, atol=0) else None
    return dataclasses.replace(cover, delta=worst, uniform_scale=uniform)
