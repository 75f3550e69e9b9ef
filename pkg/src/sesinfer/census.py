"""Census cells, point-in-cell lookup, income assignment and inequality stats.

Cells file format (JSON lines, UTF-8), one cell per line::

    {"cell_id": "751010101", "rings": [[[48.85, 2.34], [48.85, 2.35], ...]],
     "deciles": [9800, 13100, ..., 61000]}

``rings`` holds one or more rings of ``[lat, lon]`` vertices. Closing the ring
(repeating the first vertex) is optional. With several rings the even-odd
rule applies, so an inner ring is a hole. ``deciles`` are the nine income
cut points d1..d9 in euros/year.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "CensusCell",
    "CensusIndex",
    "IncomeAssignment",
    "load_cells",
    "locate",
    "assign_income",
    "lorenz_curve",
    "gini",
    "label_binary",
    "class_fractions",
]


@dataclass(frozen=True)
class CensusCell:
    cell_id: str
    rings: tuple[np.ndarray, ...]  # each (m, 2) array of (lat, lon), open
    deciles: tuple[float, ...]

    @property
    def median(self) -> float:
        return self.deciles[4]

    @property
    def ninth_decile(self) -> float:
        return self.deciles[8]

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        pts = np.vstack(self.rings)
        return (pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max())


@dataclass(frozen=True)
class IncomeAssignment:
    user_id: str
    cell_id: str
    median_income: float
    ninth_decile: float


def _open_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise ValueError("ring must be a list of [lat, lon] pairs")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise ValueError("ring needs at least 3 distinct vertices")
    if not np.all(np.isfinite(ring)):
        raise ValueError("non-finite vertex")
    return ring


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return int(v > 0) - int(v < 0)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def ring_is_simple(ring: np.ndarray) -> bool:
    """Brute-force check that no two non-adjacent edges touch."""
    m = len(ring)
    if len({tuple(p) for p in ring}) != m:
        return False
    edges = [(ring[i], ring[(i + 1) % m]) for i in range(m)]
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


def validate_cell(cell_id, rings, deciles) -> CensusCell:
    if not isinstance(cell_id, str) or not cell_id:
        raise ValueError("missing cell_id")
    d = [float(x) for x in deciles]
    if len(d) != 9:
        raise ValueError(f"expected 9 deciles, got {len(d)}")
    if not all(math.isfinite(x) and x > 0 for x in d):
        raise ValueError("deciles must be finite and strictly positive")
    if any(b < a for a, b in zip(d, d[1:])):
        raise ValueError("deciles are not non-decreasing")
    if not rings:
        raise ValueError("cell has no ring")
    parsed = tuple(_open_ring(r) for r in rings)
    for r in parsed:
        if not ring_is_simple(r):
            raise ValueError("self-intersecting ring")
    return CensusCell(cell_id, parsed, tuple(d))


def _on_boundary(lat, lon, ring: np.ndarray):
    """Exact on-edge test; works on scalars or arrays of points."""
    lat = np.asarray(lat, dtype=float)[..., None]
    lon = np.asarray(lon, dtype=float)[..., None]
    a = ring
    b = np.roll(ring, -1, axis=0)
    cross = (b[:, 0] - a[:, 0]) * (lon - a[:, 1]) - (b[:, 1] - a[:, 1]) * (lat - a[:, 0])
    inside_box = ((np.minimum(a[:, 0], b[:, 0]) <= lat) & (lat <= np.maximum(a[:, 0], b[:, 0]))
                  & (np.minimum(a[:, 1], b[:, 1]) <= lon) & (lon <= np.maximum(a[:, 1], b[:, 1])))
    return np.any((cross == 0) & inside_box, axis=-1)


def _crossings(lat, lon, ring: np.ndarray):
    """Ray casting towards +lon; works on scalars or arrays of points."""
    lat = np.asarray(lat, dtype=float)[..., None]
    lon = np.asarray(lon, dtype=float)[..., None]
    y1, x1 = ring[:, 0], ring[:, 1]
    y2, x2 = np.roll(ring[:, 0], -1), np.roll(ring[:, 1], -1)
    straddle = (y1 > lat) != (y2 > lat)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
    return np.sum(straddle & (lon < x_at), axis=-1)


def point_in_cell(lat, lon, cell: CensusCell):
    """Closed point-in-polygon test: boundary points count as inside.

    Accepts scalars or equally shaped arrays of coordinates.
    """
    boundary = np.zeros(np.shape(lat), dtype=bool)
    crossings = np.zeros(np.shape(lat), dtype=np.int64)
    for ring in cell.rings:
        boundary |= _on_boundary(lat, lon, ring)
        crossings += _crossings(lat, lon, ring)
    inside = boundary | (crossings % 2 == 1)
    return bool(inside) if inside.ndim == 0 else inside


@dataclass
class CensusIndex:
    """Immutable cell collection with a uniform-grid bounding-box index."""

    cells: list[CensusCell]
    diagnostics: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.cells = sorted(self.cells, key=lambda c: c.cell_id)
        ids = [c.cell_id for c in self.cells]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate cell_id")
        self._by_id = {c.cell_id: c for c in self.cells}
        self._build_grid()

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, cell_id: str) -> CensusCell:
        return self._by_id[cell_id]

    def _build_grid(self):
        self._buckets: dict[tuple[int, int], list[int]] = {}
        if not self.cells:
            self._origin = (0.0, 0.0)
            self._step = (1.0, 1.0)
            self._bboxes = np.zeros((0, 4))
            return
        boxes = np.array([c.bbox for c in self.cells])
        self._bboxes = boxes
        lat0, lon0 = boxes[:, 0].min(), boxes[:, 1].min()
        # bucket size ~ median cell extent keeps candidate lists short
        dlat = max(float(np.median(boxes[:, 2] - boxes[:, 0])), 1e-9)
        dlon = max(float(np.median(boxes[:, 3] - boxes[:, 1])), 1e-9)
        self._origin = (lat0, lon0)
        self._step = (dlat, dlon)
        for k, (a, b, c, d) in enumerate(boxes):
            i0, j0 = self._bucket(a, b)
            i1, j1 = self._bucket(c, d)
            for i in range(i0, i1 + 1):
                for j in range(j0, j1 + 1):
                    self._buckets.setdefault((i, j), []).append(k)

    def _bucket(self, lat: float, lon: float) -> tuple[int, int]:
        return (int(math.floor((lat - self._origin[0]) / self._step[0])),
                int(math.floor((lon - self._origin[1]) / self._step[1])))

    def _candidates(self, lat, lon):
        # floor() is monotone, so any bbox containing the point was
        # registered in the point's own bucket
        return self._buckets.get(self._bucket(lat, lon), ())

    def locate(self, lat: float, lon: float) -> str | None:
        """Cell containing the point; ties on shared edges go to the smallest id."""
        for k in self._candidates(lat, lon):
            a, b, c, d = self._bboxes[k]
            if a <= lat <= c and b <= lon <= d and point_in_cell(lat, lon, self.cells[k]):
                return self.cells[k].cell_id
        return None

    def locate_exhaustive(self, lats, lons) -> list[str | None]:
        """Scan every cell in id order for each point; reference for :meth:`locate`."""
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        out = np.full(lats.shape, None, dtype=object)
        for cell in reversed(self.cells):
            out[point_in_cell(lats, lons, cell)] = cell.cell_id
        return out.tolist()


def parse_cells(lines: Iterable[str]) -> CensusIndex:
    cells, diags = [], []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rec = json.loads(line)
            cells.append(validate_cell(rec.get("cell_id"), rec.get("rings"), rec.get("deciles", ())))
        except (ValueError, TypeError, AttributeError) as exc:
            msg = f"line {lineno}: {exc}"
            diags.append(msg)
            logger.warning("census cell skipped, %s", msg)
    return CensusIndex(cells, diags)


def load_cells(path: str) -> CensusIndex:
    """Load and validate a cells file; invalid cells are skipped with a diagnostic."""
    with open(path, encoding="utf-8") as fh:
        return parse_cells(fh)


def write_cells(cells: Iterable[CensusCell], fh: TextIO) -> None:
    for c in cells:
        rec = {"cell_id": c.cell_id,
               "rings": [r.tolist() for r in c.rings],
               "deciles": list(c.deciles)}
        fh.write(json.dumps(rec) + "\n")


def locate(point: tuple[float, float], index: CensusIndex) -> str | None:
    return index.locate(*point)


def assign_income(home, index: CensusIndex) -> IncomeAssignment | None:
    """Median (d5) and 9th decile of the cell containing ``home.home``."""
    cell_id = index.locate(*home.home)
    if cell_id is None:
        return None
    cell = index[cell_id]
    return IncomeAssignment(home.user_id, cell_id, cell.median, cell.ninth_decile)


def write_assignments(rows: Iterable[IncomeAssignment], fh: TextIO, header: str | None = None) -> None:
    if header:
        fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "cell_id", "median_income", "ninth_decile"])
    for r in rows:
        w.writerow([r.user_id, r.cell_id, repr(r.median_income), repr(r.ninth_decile)])


# --- inequality ---------------------------------------------------------------

def _check_incomes(incomes) -> np.ndarray:
    x = np.asarray(incomes, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("incomes must be non-empty")
    if not np.all(np.isfinite(x)) or np.any(x < 0):
        raise ValueError("incomes must be finite and non-negative")
    if x.sum() <= 0:
        raise ValueError("total income must be positive")
    return x


def lorenz_curve(incomes) -> tuple[np.ndarray, np.ndarray]:
    """Population fractions ``f`` and cumulative income shares ``C(f)``.

    One point per person after sorting ascending; the implicit origin (0, 0)
    is not included, the last point is exactly (1, 1).
    """
    x = np.sort(_check_incomes(incomes))
    n = x.size
    f = np.arange(1, n + 1) / n
    c = np.cumsum(x) / x.sum()
    c[-1] = 1.0
    return f, c


def gini(incomes) -> float:
    """Gini index, one minus twice the trapezoidal area under the Lorenz curve.

    Evaluated in the equivalent closed form ``sum((2i - n - 1) s_i) / n`` over
    sorted income shares ``s_i`` with an exactly rounded sum.
    """
    x = np.sort(_check_incomes(incomes))
    n = x.size
    shares = x / x.sum()
    weights = 2.0 * np.arange(1, n + 1) - n - 1
    return math.fsum(weights * shares) / n


def label_binary(incomes: Mapping[str, float]) -> dict[str, int]:
    """1 (high) iff income is strictly above the mean, else 0 (low)."""
    if not incomes:
        raise ValueError("no incomes to label")
    mean = math.fsum(incomes.values()) / len(incomes)
    return {u: int(v > mean) for u, v in incomes.items()}


def class_fractions(labels: Mapping[str, int]) -> tuple[float, float]:
    n = len(labels)
    high = sum(labels.values())
    return (n - high) / n, high / n
