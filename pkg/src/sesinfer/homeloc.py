"""Geolocated-user selection, home inference and circadian verification profiles."""
from __future__ import annotations

import csv
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .corpus import GeoTweet, UserTimeline, clean_text

EARTH_RADIUS_KM = 6371.0
LOCAL_UTC_OFFSET_H = 1
BIN_DECIMALS = 4

__all__ = [
    "MobilityTrace",
    "HomeInference",
    "HourlyProfile",
    "FilterResult",
    "FilterConfig",
    "haversine_km",
    "traces_from_tweets",
    "eligibility_filter",
    "mobility_filter",
    "infer_home",
    "select_homes",
    "hourly_distance_profile",
    "expression_rate_profile",
    "local_hour",
]


@dataclass
class MobilityTrace:
    """GPS fixes of one user, sorted by time.

    ``points`` is an (n, 3) float array of ``(timestamp, lat, lon)``.
    """

    user_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
        self.points = pts[order]

    def __len__(self) -> int:
        return len(self.points)

    @property
    def timestamps(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def latlon(self) -> np.ndarray:
        return self.points[:, 1:]

    @property
    def observation_span_days(self) -> float:
        if len(self.points) == 0:
            return 0.0
        return float(self.points[-1, 0] - self.points[0, 0]) / 86400.0


@dataclass(frozen=True)
class HomeInference:
    user_id: str
    home: tuple[float, float]
    support_count: int
    total_points: int


@dataclass
class HourlyProfile:
    values: np.ndarray  # 24 floats
    counts: np.ndarray  # 24 ints
    is_rate: bool = False
    empty: bool = False


@dataclass(frozen=True)
class FilterResult:
    passed: bool
    reasons: tuple[str, ...] = ()

    @property
    def reason(self) -> str | None:
        return self.reasons[0] if self.reasons else None


@dataclass(frozen=True)
class FilterConfig:
    min_points: int = 5
    min_points_in_cells: int = 3
    min_span_days: float = 7.0
    max_median_km: float = 30.0
    max_speed_kmh: float = 130.0
    burst_window_s: float = 2.0
    max_burst: int = 3


def haversine_km(a, b) -> float | np.ndarray:
    """Great-circle distance in km; broadcasts over arrays of (lat, lon)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lat1, lon1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lat2, lon2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    h = (np.sin((lat2 - lat1) / 2) ** 2
         + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2)
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def local_hour(ts) -> np.ndarray | int:
    h = (np.floor(np.asarray(ts, dtype=float) / 3600.0).astype(np.int64) + LOCAL_UTC_OFFSET_H) % 24
    return int(h) if h.ndim == 0 else h


def traces_from_tweets(tweets: Iterable[GeoTweet]) -> dict[str, MobilityTrace]:
    """Collect GPS fixes per user; place-tagged and coordinate-less tweets are dropped."""
    per_user = defaultdict(list)
    for t in tweets:
        if t.has_gps:
            per_user[t.user_id].append((t.timestamp, *t.coordinates))
    return {u: MobilityTrace(u, np.array(per_user[u])) for u in sorted(per_user)}


def eligibility_filter(trace: MobilityTrace, census, config: FilterConfig = FilterConfig()) -> FilterResult:
    """Enough GPS points, enough of them inside census cells, long enough span.

    ``census`` is anything exposing ``locate(lat, lon) -> cell_id | None``.
    """
    reasons = []
    if len(trace) < config.min_points:
        reasons.append("too_few_points")
    in_cells = sum(census.locate(lat, lon) is not None for lat, lon in trace.latlon)
    if in_cells < config.min_points_in_cells:
        reasons.append("too_few_in_cells")
    if not trace.observation_span_days > config.min_span_days:
        reasons.append("span_too_short")
    return FilterResult(not reasons, tuple(reasons))


def _consecutive(trace: MobilityTrace) -> tuple[np.ndarray, np.ndarray]:
    ll = trace.latlon
    return haversine_km(ll[:-1], ll[1:]), np.diff(trace.timestamps)


def mobility_filter(trace: MobilityTrace, config: FilterConfig = FilterConfig()) -> FilterResult:
    """Median hop distance, travel speed and tweet-burst checks.

    All three use consecutive points in time. A burst is more than
    ``max_burst`` tweets inside a sliding half-open window of
    ``burst_window_s`` seconds.
    """
    reasons = []
    dist, dt = _consecutive(trace)
    if len(dist) and float(np.median(dist)) > config.max_median_km:
        reasons.append("median_mobility")

    with np.errstate(divide="ignore", invalid="ignore"):
        speed = np.where(dt > 0, dist / (dt / 3600.0), np.where(dist > 0, np.inf, 0.0))
    if np.any(speed > config.max_speed_kmh):
        reasons.append("speed")

    ts = trace.timestamps
    k = config.max_burst
    if len(ts) > k and np.any(ts[k:] - ts[:-k] < config.burst_window_s):
        reasons.append("burst")
    return FilterResult(not reasons, tuple(reasons))


def _is_night(hours: np.ndarray) -> np.ndarray:
    return (hours >= 20) | (hours < 8)


def infer_home(trace: MobilityTrace) -> HomeInference:
    """Most visited location bin (4 decimal degrees).

    Ties go to the bin with the larger night-time (20h-8h local) share of its
    points, then to the smallest (lat, lon).
    """
    n = len(trace)
    if n == 0:
        raise ValueError(f"empty trace for user {trace.user_id!r}")
    keys = np.round(trace.latlon * 10 ** BIN_DECIMALS).astype(np.int64)
    night = _is_night(local_hour(trace.timestamps))
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    night_counts = np.bincount(inverse, weights=night, minlength=len(uniq))
    share = night_counts / counts
    # np.unique sorts rows lexicographically, so ascending index == smallest (lat, lon)
    best = max(range(len(uniq)), key=lambda i: (counts[i], share[i], -i))
    lat, lon = uniq[best] / 10 ** BIN_DECIMALS
    return HomeInference(trace.user_id, (float(lat), float(lon)), int(counts[best]), n)


def select_homes(
    traces: Mapping[str, MobilityTrace],
    census,
    config: FilterConfig = FilterConfig(),
) -> tuple[dict[str, HomeInference], dict[str, FilterResult]]:
    """Run the filter cascade and infer homes of accepted users.

    Returns the homes of accepted users plus every user's filter outcome.
    """
    homes, status = {}, {}
    for uid in sorted(traces):
        tr = traces[uid]
        res = eligibility_filter(tr, census, config)
        if res.passed:
            res = mobility_filter(tr, config)
        status[uid] = res
        if res.passed:
            homes[uid] = infer_home(tr)
    return homes, status


def hourly_distance_profile(
    traces: Mapping[str, MobilityTrace],
    homes: Mapping[str, HomeInference],
) -> HourlyProfile:
    """Mean distance (km) to the user's home per local hour of day."""
    sums = np.zeros(24)
    counts = np.zeros(24, dtype=np.int64)
    for uid in sorted(traces):
        tr = traces[uid]
        if uid not in homes:
            raise KeyError(f"no home for user {uid!r}")
        d = haversine_km(tr.latlon, np.asarray(homes[uid].home))
        h = local_hour(tr.timestamps)
        sums += np.bincount(h, weights=d, minlength=24)
        counts += np.bincount(h, minlength=24)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return HourlyProfile(values, counts)


def expression_rate_profile(
    timelines: Mapping[str, UserTimeline],
    patterns: Sequence[str],
    homes: Mapping[str, HomeInference] | None = None,
) -> HourlyProfile:
    """Hourly distribution of tweets matching any home-related expression.

    Patterns are matched case-insensitively against the cleaned text. With
    ``homes``, only geotagged tweets binned at the user's home count.
    """
    if not patterns:
        raise ValueError("patterns must be non-empty")
    rx = re.compile("|".join(f"(?:{p})" for p in patterns), re.IGNORECASE)
    counts = np.zeros(24, dtype=np.int64)
    scale = 10 ** BIN_DECIMALS
    for uid in sorted(timelines):
        home = None
        if homes is not None:
            if uid not in homes:
                continue
            home = tuple(np.round(np.asarray(homes[uid].home) * scale).astype(np.int64))
        for tw in timelines[uid].tweets:
            if home is not None:
                if not tw.has_gps:
                    continue
                if tuple(np.round(np.asarray(tw.coordinates) * scale).astype(np.int64)) != home:
                    continue
            if rx.search(clean_text(tw.text)):
                counts[local_hour(tw.timestamp)] += 1
    total = counts.sum()
    if total == 0:
        return HourlyProfile(np.zeros(24), counts, is_rate=True, empty=True)
    return HourlyProfile(counts / total, counts, is_rate=True)


def read_patterns(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]


def write_homes(
    status: Mapping[str, FilterResult],
    homes: Mapping[str, HomeInference],
    fh: TextIO,
    header: str | None = None,
) -> None:
    """``user_id, lat, lon, support_count, total_points, filter_status`` table."""
    if header:
        fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "lat", "lon", "support_count", "total_points", "filter_status"])
    for uid in sorted(status):
        res = status[uid]
        h = homes.get(uid)
        if h is None:
            w.writerow([uid, "", "", "", "", "|".join(res.reasons) or "fail"])
        else:
            w.writerow([uid, repr(h.home[0]), repr(h.home[1]), h.support_count, h.total_points, "pass"])


def read_homes(path: str) -> dict[str, HomeInference]:
    homes = {}
    with open(path, encoding="utf-8", newline="") as fh:
        rows = csv.DictReader(ln for ln in fh if not ln.startswith("#"))
        for row in rows:
            if row["filter_status"] != "pass":
                continue
            homes[row["user_id"]] = HomeInference(
                row["user_id"], (float(row["lat"]), float(row["lon"])),
                int(row["support_count"]), int(row["total_points"]))
    return homes
