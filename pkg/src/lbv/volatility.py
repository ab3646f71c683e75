"""Location-based volatility: coefficients of variation of longitudinal
acceleration and deceleration magnitudes in two speed bins per intersection."""

import math
from collections import defaultdict
from dataclasses import dataclass, fields

import numpy as np

from .errors import InsufficientDataError, JoinError, SchemaError
from .tabular import open_table, parse_optional_float, write_table

DEFAULT_MIN_QUADRANT_N = 30
QUADRANTS = ("al", "ah", "dl", "dh")


def coefficient_of_variation(values):
    """100 * sample sd / mean of positive magnitudes; ``None`` for empty input."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return None
    if np.any(x <= 0):
        raise ValueError("coefficient of variation needs strictly positive magnitudes")
    if x.size == 1:
        return 0.0
    mean = x.mean()
    sd = math.sqrt(np.sum((x - mean) ** 2) / (x.size - 1))
    return float(100.0 * sd / mean)


@dataclass(frozen=True)
class LbvSummary:
    site_id: str
    mean_speed: float
    n_points: int
    cv_al: float | None
    cv_ah: float | None
    cv_dl: float | None
    cv_dh: float | None
    n_al: int
    n_ah: int
    n_dl: int
    n_dh: int
    sufficient: bool

    def cv(self, quadrant):
        return getattr(self, f"cv_{quadrant}")

    def defined_cvs(self):
        return {q: self.cv(q) for q in QUADRANTS if self.cv(q) is not None}


LBV_COLUMNS = tuple(f.name for f in fields(LbvSummary))


def quadrant_masks(speed, accel):
    """Boolean masks for the four quadrants plus the bin-edge mean speed."""
    speed = np.asarray(speed, dtype=float)
    accel = np.asarray(accel, dtype=float)
    mean_speed = speed.mean()
    low = speed <= mean_speed
    masks = {
        "al": (accel > 0) & low,
        "ah": (accel > 0) & ~low,
        "dl": (accel < 0) & low,
        "dh": (accel < 0) & ~low,
    }
    return masks, mean_speed


def compute_lbv(points, min_quadrant_n=DEFAULT_MIN_QUADRANT_N, site_id=None):
    """Summarise one site's matched points into the four quadrant CVs.

    The speed bin edge is the mean speed of all points; a point at exactly the
    mean falls in the low bin. Zero accelerations belong to no quadrant. A
    quadrant with fewer than ``min_quadrant_n`` points has an undefined CV and
    makes the site insufficient.
    """
    points = list(points)
    if not points:
        raise InsufficientDataError(f"site {site_id!r}: no matched points")
    ids = {p.site_id for p in points}
    if len(ids) != 1:
        raise ValueError(f"points span several sites: {sorted(ids)}")
    site_id = ids.pop()
    speed = np.array([p.speed for p in points])
    accel = np.array([p.accel_long for p in points])
    masks, mean_speed = quadrant_masks(speed, accel)
    cvs, counts = {}, {}
    for q, mask in masks.items():
        counts[q] = int(mask.sum())
        cvs[q] = (coefficient_of_variation(np.abs(accel[mask]))
                  if counts[q] >= max(min_quadrant_n, 1) else None)
    return LbvSummary(
        site_id=site_id,
        mean_speed=float(mean_speed),
        n_points=len(points),
        cv_al=cvs["al"], cv_ah=cvs["ah"], cv_dl=cvs["dl"], cv_dh=cvs["dh"],
        n_al=counts["al"], n_ah=counts["ah"], n_dl=counts["dl"], n_dh=counts["dh"],
        sufficient=all(v is not None for v in cvs.values()),
    )


def compute_all(points, min_quadrant_n=DEFAULT_MIN_QUADRANT_N):
    """LBV summaries for every site present in ``points``, sorted by site_id."""
    by_site = defaultdict(list)
    for p in points:
        by_site[p.site_id].append(p)
    return [compute_lbv(by_site[s], min_quadrant_n) for s in sorted(by_site)]


def write_lbv(path, summaries):
    write_table(path, LBV_COLUMNS, ([getattr(s, c) for c in LBV_COLUMNS] for s in summaries))


def read_lbv(path):
    reader, handle = open_table(path)
    with handle:
        missing = [c for c in LBV_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing required column {missing[0]!r}")
        out = []
        for row in reader:
            out.append(LbvSummary(
                site_id=row["site_id"],
                mean_speed=float(row["mean_speed"]),
                n_points=int(row["n_points"]),
                **{f"cv_{q}": parse_optional_float(row[f"cv_{q}"]) for q in QUADRANTS},
                **{f"n_{q}": int(row[f"n_{q}"]) for q in QUADRANTS},
                sufficient=row["sufficient"].strip().lower() in ("1", "true", "yes"),
            ))
        return out


# (label, getter) pairs; getters return None for a missing value.
SUMMARY_VARIABLES = (
    ("Average crashes (5 years)", lambda s, l: s.crashes_5yr_total),
    ("Average rear-end crashes (5 years)", lambda s, l: s.crashes_5yr_rearend),
    ("CV_AL (percent)", lambda s, l: l.cv_al),
    ("CV_AH (percent)", lambda s, l: l.cv_ah),
    ("CV_DL (percent)", lambda s, l: l.cv_dl),
    ("CV_DH (percent)", lambda s, l: l.cv_dh),
    ("AADT major road", lambda s, l: s.aadt_major),
    ("AADT minor road", lambda s, l: s.aadt_minor),
    ("Ln (AADT major road)", lambda s, l: math.log(s.aadt_major)),
    ("Ln (AADT minor road)", lambda s, l: math.log(s.aadt_minor)),
    ("Speed limit major", lambda s, l: s.speed_limit_major),
    ("Speed limit minor", lambda s, l: s.speed_limit_minor),
    ("4-legged intersection", lambda s, l: 1.0 if s.legs == 4 else 0.0),
    ("Total through lanes", lambda s, l: s.through_lanes_total),
    ("Total left turn lanes", lambda s, l: s.left_lanes_total),
    ("Total right turn lanes", lambda s, l: s.right_lanes_total),
)
STRATA = ("all", "signalized", "unsignalized")
STAT_NAMES = ("mean", "sd", "min", "max")


def describe(values):
    """Mean, sample sd, min, max; ``None`` wherever the statistic is undefined."""
    x = np.array([v for v in values if v is not None], dtype=float)
    if x.size == 0:
        return dict.fromkeys(STAT_NAMES)
    return {
        "mean": float(x.mean()),
        "sd": float(x.std(ddof=1)) if x.size > 1 else None,
        "min": float(x.min()),
        "max": float(x.max()),
    }


def summarize_lbv(summaries, sites):
    """Stratified descriptive statistics table.

    Returns ``{"n": {stratum: count}, "rows": [{"variable", "<stratum>_<stat>", ...}]}``.
    """
    by_id = {s.site_id: s for s in sites}
    pairs = []
    for lbv in summaries:
        if lbv.site_id not in by_id:
            raise JoinError(f"site {lbv.site_id!r} has volatility data but no inventory row")
        pairs.append((by_id[lbv.site_id], lbv))
    members = {
        "all": pairs,
        "signalized": [p for p in pairs if p[0].control == "signalized"],
        "unsignalized": [p for p in pairs if p[0].control == "unsignalized"],
    }
    rows = []
    for label, getter in SUMMARY_VARIABLES:
        row = {"variable": label}
        for stratum in STRATA:
            stats = describe([getter(s, l) for s, l in members[stratum]])
            row.update({f"{stratum}_{k}": v for k, v in stats.items()})
        rows.append(row)
    return {"n": {k: len(v) for k, v in members.items()}, "rows": rows}


def summary_columns():
    return ["variable"] + [f"{s}_{k}" for s in STRATA for k in STAT_NAMES]


def write_summary(path, table):
    n_row = {"variable": "N"}
    n_row.update({f"{s}_mean": table["n"][s] for s in STRATA})
    write_table(path, summary_columns(), table["rows"] + [n_row])
