import numpy as np
import pytest

from lbv.geomatch import IntersectionSite
from lbv.geomatch import MatchedPoint
from lbv.ingest import CANONICAL_FIELDS


def make_site(site_id="A", lat=42.28, lon=-83.74, control="signalized", crashes=5, **kw):
    values = dict(
        site_id=site_id, name=f"site {site_id}", center_lat=lat, center_lon=lon, control=control,
        legs=4, aadt_major=20000.0, aadt_minor=8000.0, speed_limit_major=35.0,
        speed_limit_minor=30.0, through_lanes_total=4, left_lanes_total=2, right_lanes_total=1,
        crashes_5yr_total=crashes, crashes_5yr_rearend=min(crashes, 2),
    )
    values.update(kw)
    return IntersectionSite(**values)


def points(site_id, speeds, accels):
    return [MatchedPoint(site_id, float(v), float(a), float(i), "dev")
            for i, (v, a) in enumerate(zip(speeds, accels))]


def bsm_row(**overrides):
    row = dict(device_id="d1", trip_id="t1", timestamp="100.0", latitude="42.28",
               longitude="-83.74", speed="10.0", heading="90.0", accel_long="0.5",
               accel_lat="0.1")
    row.update({k: str(v) for k, v in overrides.items()})
    return row


def write_bsm(path, rows, columns=CANONICAL_FIELDS, delimiter=","):
    lines = [delimiter.join(columns)]
    for r in rows:
        lines.append(delimiter.join(str(r.get(c, "")) for c in columns))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20170101)
