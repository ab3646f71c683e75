"""Streaming parser and data-quality audit for raw Basic Safety Message logs."""

import glob
import json
import logging
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError
from .tabular import format_cell, open_table, parse_optional_float, write_table

log = logging.getLogger(__name__)

CANONICAL_FIELDS = (
    "device_id",
    "trip_id",
    "timestamp",
    "latitude",
    "longitude",
    "speed",
    "heading",
    "accel_long",
    "accel_lat",
)
OPTIONAL_FIELDS = ("elevation",)

LATERAL_SATURATION = 19.6  # m/s^2, the 2g recording cap of the DSRC units
MAX_SPEED = 80.0
MAX_ACCEL_LONG = 15.0
DEFAULT_CONSISTENCY_TOLERANCE = 1.0

MPH = 0.44704
FT = 0.3048
UNIT_FACTORS = {
    "si": {"speed": 1.0, "accel": 1.0},
    "us": {"speed": MPH, "accel": FT},
}

REJECT_RULES = (
    "missing_field",
    "parse_error",
    "latitude_out_of_range",
    "longitude_out_of_range",
    "speed_negative",
    "speed_excessive",
    "heading_out_of_range",
    "accel_long_excessive",
    "timestamp_regression",
    "accel_inconsistent",
)


@dataclass(frozen=True, slots=True)
class BsmRecord:
    device_id: str
    trip_id: str
    timestamp: float
    latitude: float
    longitude: float
    speed: float
    heading: float
    accel_long: float
    accel_lat: float | None = None


@dataclass
class IngestAudit:
    records_read: int = 0
    records_accepted: int = 0
    rejects_by_rule: Counter = field(default_factory=Counter)
    lateral_saturated: int = 0
    accel_flagged: int = 0

    @property
    def lateral_saturated_fraction(self):
        if self.records_read == 0:
            return 0.0
        return self.lateral_saturated / self.records_read

    @property
    def records_rejected(self):
        return sum(self.rejects_by_rule.values())

    def reject(self, rule):
        self.rejects_by_rule[rule] += 1

    def __add__(self, other):
        return IngestAudit(
            records_read=self.records_read + other.records_read,
            records_accepted=self.records_accepted + other.records_accepted,
            rejects_by_rule=self.rejects_by_rule + other.rejects_by_rule,
            lateral_saturated=self.lateral_saturated + other.lateral_saturated,
            accel_flagged=self.accel_flagged + other.accel_flagged,
        )

    def as_dict(self):
        out = {
            "records_read": self.records_read,
            "records_accepted": self.records_accepted,
            "records_rejected": self.records_rejected,
            "lateral_saturated": self.lateral_saturated,
            "lateral_saturated_fraction": self.lateral_saturated_fraction,
            "accel_flagged": self.accel_flagged,
        }
        for rule in REJECT_RULES:
            out[f"reject.{rule}"] = self.rejects_by_rule.get(rule, 0)
        return out

    def to_text(self):
        return "".join(f"{k} = {format_cell(v)}\n" for k, v in self.as_dict().items())

    def write(self, path):
        """Write the key-value report to ``path`` and its JSON twin to ``path + '.json'``."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_schema(path=None):
    """Read a schema file of ``canonical_name = column header`` lines.

    A ``units = si|us`` line declares the source units. Missing entries map to
    the canonical name itself. Returns ``(column_map, units or None)``.
    """
    mapping = {name: name for name in CANONICAL_FIELDS + OPTIONAL_FIELDS}
    units = None
    if path is None:
        return mapping, units
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected 'name = column'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "units":
                units = value
            elif key in mapping:
                mapping[key] = value
            else:
                raise SchemaError(f"{path}:{lineno}: unknown canonical field {key!r}")
    return mapping, units


def _check_units(units):
    if units not in UNIT_FACTORS:
        raise SchemaError(f"unknown units {units!r}; expected one of {sorted(UNIT_FACTORS)}")
    return UNIT_FACTORS[units]


def iter_bsm_records(path, schema=None, units="si", audit=None):
    """Yield accepted records from ``path`` in file order, updating ``audit``."""
    schema = dict(schema or load_schema()[0])
    factors = _check_units(units)
    audit = audit if audit is not None else IngestAudit()
    reader, handle = open_table(path)
    with handle:
        header = reader.fieldnames or []
        for name in CANONICAL_FIELDS:
            if schema.get(name, name) not in header:
                raise SchemaError(
                    f"{path}: missing required column {schema.get(name, name)!r} "
                    f"(canonical field {name!r})"
                )
        cols = {name: schema.get(name, name) for name in CANONICAL_FIELDS}
        last_ts = {}
        for row in reader:
            audit.records_read += 1
            rec = _validate_row(row, cols, factors, last_ts, audit)
            if rec is not None:
                audit.records_accepted += 1
                yield rec


def _validate_row(row, cols, factors, last_ts, audit):
    raw = {name: (row.get(col) or "").strip() for name, col in cols.items()}
    for name in CANONICAL_FIELDS:
        if name != "accel_lat" and raw[name] == "":
            audit.reject("missing_field")
            return None
    try:
        ts = float(raw["timestamp"])
        lat = float(raw["latitude"])
        lon = float(raw["longitude"])
        speed = float(raw["speed"]) * factors["speed"]
        heading = float(raw["heading"])
        along = float(raw["accel_long"]) * factors["accel"]
        alat = parse_optional_float(raw["accel_lat"])
    except ValueError:
        audit.reject("parse_error")
        return None
    if not all(np.isfinite([ts, lat, lon, speed, heading, along])):
        audit.reject("parse_error")
        return None
    if not -90.0 <= lat <= 90.0:
        rule = "latitude_out_of_range"
    elif not -180.0 <= lon <= 180.0:
        rule = "longitude_out_of_range"
    elif speed < 0:
        rule = "speed_negative"
    elif speed > MAX_SPEED:
        rule = "speed_excessive"
    elif not 0.0 <= heading < 360.0:
        rule = "heading_out_of_range"
    elif abs(along) > MAX_ACCEL_LONG:
        rule = "accel_long_excessive"
    elif raw["trip_id"] in last_ts and ts <= last_ts[raw["trip_id"]]:
        rule = "timestamp_regression"
    else:
        rule = None
    if rule is not None:
        audit.reject(rule)
        return None
    last_ts[raw["trip_id"]] = ts
    if alat is not None:
        alat *= factors["accel"]
        if abs(alat) >= LATERAL_SATURATION:
            audit.lateral_saturated += 1
            alat = None
    return BsmRecord(raw["device_id"], raw["trip_id"], ts, lat, lon, speed, heading, along, alat)


def parse_bsm_file(path, schema=None, units="si", drop_inconsistent=False,
                   tolerance=DEFAULT_CONSISTENCY_TOLERANCE):
    """Parse one BSM log into ``(records, audit)``.

    Records failing the speed/acceleration consistency check are counted in
    ``audit.accel_flagged``; they are only removed when ``drop_inconsistent``.
    """
    audit = IngestAudit()
    records = list(iter_bsm_records(path, schema, units, audit))
    flagged = set()
    for trip in group_trips(records).values():
        flagged.update((trip[0].trip_id, ts) for ts in check_accel_consistency(trip, tolerance))
    audit.accel_flagged = len(flagged)
    if drop_inconsistent and flagged:
        kept = [r for r in records if (r.trip_id, r.timestamp) not in flagged]
        dropped = len(records) - len(kept)
        audit.records_accepted -= dropped
        audit.rejects_by_rule["accel_inconsistent"] += dropped
        records = kept
    return records, audit


def _parse_task(args):
    return parse_bsm_file(*args)


def parse_bsm_files(paths, schema=None, units="si", drop_inconsistent=False,
                    tolerance=DEFAULT_CONSISTENCY_TOLERANCE, workers=1):
    """Parse several files, optionally in worker processes; records keep path order."""
    paths = list(paths)
    tasks = [(p, schema, units, drop_inconsistent, tolerance) for p in paths]
    if workers > 1 and len(paths) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_parse_task, tasks))
    else:
        results = [_parse_task(t) for t in tasks]
    records, audit = [], IngestAudit()
    for recs, file_audit in results:
        records.extend(recs)
        audit = audit + file_audit
    return records, audit


def expand_inputs(pattern):
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no input files match {pattern!r}")
    return paths


def group_trips(records):
    trips = defaultdict(list)
    for rec in records:
        trips[rec.trip_id].append(rec)
    return trips


def check_accel_consistency(trip, tolerance=DEFAULT_CONSISTENCY_TOLERANCE):
    """Timestamps of interior records whose reported longitudinal acceleration
    disagrees with the central difference of speed by more than ``tolerance``."""
    if len(trip) < 3:
        return []
    t = np.array([r.timestamp for r in trip])
    v = np.array([r.speed for r in trip])
    a = np.array([r.accel_long for r in trip])
    estimated = (v[2:] - v[:-2]) / (t[2:] - t[:-2])
    bad = np.abs(estimated - a[1:-1]) > tolerance
    return [float(ts) for ts in t[1:-1][bad]]


def write_records(path, records):
    write_table(path, CANONICAL_FIELDS, (
        (r.device_id, r.trip_id, r.timestamp, r.latitude, r.longitude, r.speed,
         r.heading, r.accel_long, r.accel_lat) for r in records))


def read_records(path):
    """Read a canonical record stream written by :func:`write_records`."""
    reader, handle = open_table(path)
    with handle:
        missing = [c for c in CANONICAL_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing required column {missing[0]!r}")
        return [
            BsmRecord(
                row["device_id"], row["trip_id"], float(row["timestamp"]),
                float(row["latitude"]), float(row["longitude"]), float(row["speed"]),
                float(row["heading"]), float(row["accel_long"]),
                parse_optional_float(row["accel_lat"]),
            )
            for row in reader
        ]
