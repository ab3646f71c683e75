"""Intersection inventory and point-to-intersection assignment."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InventoryError, SchemaError
from .tabular import open_table, write_table

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
DEFAULT_RADIUS_M = 45.72  # 150 ft
CONTROL_TYPES = ("signalized", "unsignalized")


@dataclass(frozen=True)
class IntersectionSite:
    site_id: str
    name: str
    center_lat: float
    center_lon: float
    control: str
    legs: int
    aadt_major: float
    aadt_minor: float
    speed_limit_major: float
    speed_limit_minor: float
    through_lanes_total: int
    left_lanes_total: int
    right_lanes_total: int
    crashes_5yr_total: int
    crashes_5yr_rearend: int

    def validate(self):
        def fail(rule):
            raise InventoryError(f"site {self.site_id!r}: {rule}")

        if not (-90 <= self.center_lat <= 90 and -180 <= self.center_lon <= 180):
            fail("center coordinates out of range")
        if self.control not in CONTROL_TYPES:
            fail(f"control must be one of {CONTROL_TYPES}, got {self.control!r}")
        if self.legs not in (3, 4):
            fail(f"legs must be 3 or 4, got {self.legs}")
        if not self.aadt_major >= self.aadt_minor > 0:
            fail("requires aadt_major >= aadt_minor > 0")
        if self.crashes_5yr_total < 0 or self.crashes_5yr_rearend < 0:
            fail("crash counts must be non-negative")
        if self.crashes_5yr_rearend > self.crashes_5yr_total:
            fail("crashes_5yr_rearend exceeds crashes_5yr_total")
        return self


INVENTORY_COLUMNS = tuple(IntersectionSite.__dataclass_fields__)
_INT_COLUMNS = {"legs", "through_lanes_total", "left_lanes_total", "right_lanes_total",
                "crashes_5yr_total", "crashes_5yr_rearend"}
_FLOAT_COLUMNS = {"center_lat", "center_lon", "aadt_major", "aadt_minor",
                  "speed_limit_major", "speed_limit_minor"}


def _convert(site_id, column, text):
    text = (text or "").strip()
    try:
        if column in _INT_COLUMNS:
            value = float(text)
            if not value.is_integer():
                raise ValueError(text)
            return int(value)
        if column in _FLOAT_COLUMNS:
            return float(text)
    except ValueError:
        raise InventoryError(f"site {site_id!r}: column {column!r} is not numeric: {text!r}") from None
    return text


def load_inventory(path):
    """Load and validate an intersection inventory; duplicate ids are fatal."""
    reader, handle = open_table(path)
    with handle:
        if reader.fieldnames is None:
            log.warning("inventory %s is empty", path)
            return []
        missing = [c for c in INVENTORY_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise SchemaError(f"{path}: inventory missing column {missing[0]!r}")
        sites, seen = [], set()
        for row in reader:
            site_id = row["site_id"].strip()
            values = {c: _convert(site_id, c, row[c]) for c in INVENTORY_COLUMNS}
            site = IntersectionSite(**values).validate()
            if site_id in seen:
                raise InventoryError(f"site {site_id!r}: duplicate site_id")
            seen.add(site_id)
            sites.append(site)
    if not sites:
        log.warning("inventory %s has no rows", path)
    return sites


def write_inventory(path, sites):
    write_table(path, INVENTORY_COLUMNS, ([getattr(s, c) for c in INVENTORY_COLUMNS] for s in sites))


def haversine_m(lat1, lon1, lat2, lon2):
    """Vectorised haversine distance in meters."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    h = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


def great_circle_distance(a, b):
    """Great-circle distance in meters between two ``(lat, lon)`` pairs."""
    return float(haversine_m(a[0], a[1], b[0], b[1]))


def _unit_vectors(lat, lon):
    phi, lmb = np.radians(lat), np.radians(lon)
    return np.column_stack([np.cos(phi) * np.cos(lmb), np.cos(phi) * np.sin(lmb), np.sin(phi)])


class SiteIndex:
    """Read-only spatial index over intersection centers.

    Centers live on the unit sphere in a k-d tree; candidate sites come from a
    chord-length ball query slightly larger than the match radius and are then
    confirmed with the exact haversine distance.
    """

    def __init__(self, sites):
        self.sites = list(sites)
        self.site_ids = np.array([s.site_id for s in self.sites], dtype=object)
        self.lat = np.array([s.center_lat for s in self.sites], dtype=float)
        self.lon = np.array([s.center_lon for s in self.sites], dtype=float)
        self._id_rank = np.argsort(np.argsort(self.site_ids.astype(str), kind="stable"))
        self._tree = cKDTree(_unit_vectors(self.lat, self.lon)) if self.sites else None

    def assign(self, lat, lon, radius=DEFAULT_RADIUS_M):
        """Index of the assigned site for each point, or -1 when unmatched."""
        if radius <= 0:
            raise ValueError("radius must be positive")
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        out = np.full(lat.shape, -1, dtype=np.int64)
        if self._tree is None or lat.size == 0:
            return out
        chord = 2.0 * math.sin(min(radius / EARTH_RADIUS_M, math.pi) / 2.0)
        candidates = self._tree.query_ball_point(_unit_vectors(lat, lon), chord * (1 + 1e-9) + 1e-12)
        counts = np.fromiter((len(c) for c in candidates), dtype=np.int64, count=len(candidates))
        if counts.sum() == 0:
            return out
        point = np.repeat(np.arange(lat.size), counts)
        site = np.fromiter((j for c in candidates for j in c), dtype=np.int64, count=int(counts.sum()))
        dist = haversine_m(lat[point], lon[point], self.lat[site], self.lon[site])
        ok = dist <= radius
        point, site, dist = point[ok], site[ok], dist[ok]
        # nearest center first, ties to the smallest site_id
        order = np.lexsort((self._id_rank[site], dist, point))
        point, site = point[order], site[order]
        first = np.ones(point.size, dtype=bool)
        first[1:] = point[1:] != point[:-1]
        out[point[first]] = site[first]
        return out


@dataclass(frozen=True, slots=True)
class MatchedPoint:
    site_id: str
    speed: float
    accel_long: float
    timestamp: float
    device_id: str


MATCHED_COLUMNS = ("site_id", "speed", "accel_long", "timestamp", "device_id")


def match_points(records, sites, radius=DEFAULT_RADIUS_M, index=None):
    """Assign each record to at most one site within ``radius`` meters.

    Overlapping radii resolve to the nearest center, ties to the smallest
    site_id. Unmatched records are dropped and counted in the log.
    """
    records = list(records)
    index = index or SiteIndex(sites)
    which = index.assign([r.latitude for r in records], [r.longitude for r in records], radius)
    matched = [
        MatchedPoint(index.site_ids[j], r.speed, r.accel_long, r.timestamp, r.device_id)
        for r, j in zip(records, which)
        if j >= 0
    ]
    log.info("matched %d of %d records; %d unmatched", len(matched), len(records),
             len(records) - len(matched))
    return matched


def write_matched(path, points):
    write_table(path, MATCHED_COLUMNS, (
        (p.site_id, p.speed, p.accel_long, p.timestamp, p.device_id) for p in points))


def read_matched(path):
    reader, handle = open_table(path)
    with handle:
        missing = [c for c in MATCHED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing required column {missing[0]!r}")
        return [
            MatchedPoint(row["site_id"], float(row["speed"]), float(row["accel_long"]),
                         float(row["timestamp"]), row["device_id"])
            for row in reader
        ]
