"""Synthetic BSM trajectories and crash counts with known ground truth.

Random streams: every generator takes a master ``seed``; sub-streams are
``numpy.random.default_rng([seed, stream, index])`` where ``stream`` is a
small fixed integer per purpose (see the ``_STREAM_*`` constants) and
``index`` enumerates sites or vehicles. Outputs are pure functions of the seed.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

from .geomatch import EARTH_RADIUS_M, IntersectionSite
from .ingest import BsmRecord
from .volatility import QUADRANTS

TRUNCATION = 0.05  # m/s^2, smallest generated acceleration magnitude
SAMPLE_DT = 0.1

_STREAM_VEHICLE = 1
_STREAM_INVENTORY = 2
_STREAM_COUNTS = 3


@dataclass(frozen=True)
class Regime:
    """Target mean and sd of the acceleration magnitudes in one quadrant."""

    mean: float = 1.0
    sd: float = 0.5

    @property
    def cv(self):
        return 100.0 * self.sd / self.mean


@dataclass(frozen=True)
class TrajectoryProfile:
    mean_speed: float = 15.0
    regimes: dict = field(default_factory=lambda: {q: Regime() for q in QUADRANTS})
    vehicles: int = 100
    samples_per_vehicle: int = 20
    speed_offset: tuple = (4.0, 8.0)
    seed: int = 0
    start_time: float = 1_334_000_000.0


@lru_cache(maxsize=256)
def truncated_normal_params(mean, sd, lower=TRUNCATION):
    """Location/scale of a normal that, truncated below at ``lower``, has the
    requested mean and sd."""
    if sd == 0:
        return mean, 0.0
    if mean <= lower:
        raise ValueError("mean magnitude must exceed the truncation point")

    def moments(theta):
        loc, log_scale = theta
        scale = math.exp(log_scale)
        a = (lower - loc) / scale
        m, v = stats.truncnorm.stats(a, np.inf, loc=loc, scale=scale, moments="mv")
        return [float(m) - mean, math.sqrt(float(v)) - sd]

    sol = optimize.root(moments, [mean, math.log(sd)], method="hybr", options={"xtol": 1e-13})
    if not sol.success or max(abs(r) for r in moments(sol.x)) > 1e-9:
        raise ValueError(f"no truncated normal with mean {mean} and sd {sd} above {lower}")
    return float(sol.x[0]), math.exp(sol.x[1])


def draw_magnitudes(rng, regime, size):
    """Acceleration magnitudes whose distribution has exactly the regime's mean and sd."""
    loc, scale = truncated_normal_params(regime.mean, regime.sd)
    if scale == 0:
        return np.full(size, regime.mean)
    a = (TRUNCATION - loc) / scale
    return stats.truncnorm.rvs(a, np.inf, loc=loc, scale=scale, size=size, random_state=rng)


def destination(lat, lon, bearing_deg, distance_m):
    """Point reached from ``(lat, lon)`` along a great circle; distance may be negative."""
    phi1, lmb1 = math.radians(lat), math.radians(lon)
    theta = math.radians(bearing_deg)
    delta = np.asarray(distance_m, dtype=float) / EARTH_RADIUS_M
    sin_phi2 = math.sin(phi1) * np.cos(delta) + math.cos(phi1) * np.sin(delta) * math.cos(theta)
    phi2 = np.arcsin(sin_phi2)
    lmb2 = lmb1 + np.arctan2(math.sin(theta) * np.sin(delta) * math.cos(phi1),
                             np.cos(delta) - math.sin(phi1) * sin_phi2)
    return np.degrees(phi2), (np.degrees(lmb2) + 540.0) % 360.0 - 180.0


def generate_trajectories(site, profile):
    """10 Hz passes through ``site`` with one constant acceleration per vehicle.

    Vehicle ``v`` drives quadrant ``QUADRANTS[v % 4]``: its midpoint speed sits
    ``speed_offset`` below (low bin) or above (high bin) the profile mean
    speed, and its acceleration magnitude comes from that quadrant's regime.
    Speeds integrate the acceleration exactly and positions integrate speed
    along the heading, centred on the intersection.
    """
    n, nv = profile.samples_per_vehicle, profile.vehicles
    rng = np.random.default_rng([profile.seed, _STREAM_VEHICLE])
    quadrant = np.arange(nv) % 4
    accel = np.empty(nv)
    for qi, q in enumerate(QUADRANTS):
        idx = np.flatnonzero(quadrant == qi)
        sign = 1.0 if q[0] == "a" else -1.0
        accel[idx] = sign * draw_magnitudes(rng, profile.regimes[q], idx.size)
    offset = rng.uniform(*profile.speed_offset, size=nv)
    high = np.isin(quadrant, [QUADRANTS.index("ah"), QUADRANTS.index("dh")])
    v_mid = profile.mean_speed + np.where(high, offset, -offset)
    heading = rng.uniform(0.0, 360.0, size=nv)
    accel_lat = rng.normal(0.0, 0.5, size=(nv, n))

    rel_t = (np.arange(n) - (n - 1) / 2.0) * SAMPLE_DT
    speed = v_mid[:, None] + accel[:, None] * rel_t[None, :]
    if speed.min() < 0:
        raise ValueError("profile produces negative speeds; raise mean_speed")
    along = v_mid[:, None] * rel_t + 0.5 * accel[:, None] * rel_t ** 2
    records = []
    for v in range(nv):
        lat, lon = destination(site.center_lat, site.center_lon, heading[v], along[v])
        t0 = profile.start_time + 60.0 * v
        device = f"{site.site_id}-veh{v:05d}"
        trip = f"{device}-trip"
        for j in range(n):
            records.append(BsmRecord(
                device, trip, round(t0 + j * SAMPLE_DT, 3), float(lat[j]), float(lon[j]),
                float(speed[v, j]), float(heading[v]), float(accel[v]), float(accel_lat[v, j])))
    return records


def generate_counts(X, beta, sigma=None, seed=0):
    """Poisson counts with ``lambda_i = exp(beta_i . x_i)``.

    ``sigma`` maps column index to the sd of a normal random coefficient
    (``beta_i = beta + phi_i``); omitted columns are fixed.
    """
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng([seed, _STREAM_COUNTS])
    b = np.tile(np.asarray(beta, dtype=float), (X.shape[0], 1))
    for k, s in (sigma or {}).items():
        b[:, k] += s * rng.standard_normal(X.shape[0])
    with np.errstate(over="ignore"):
        lam = np.exp(np.sum(X * b, axis=1))
    return rng.poisson(lam)


def generate_inventory(n_sites, seed=0, origin=(42.28, -83.74), spacing_m=400.0):
    """Sites on a square grid ``spacing_m`` apart with plausible covariates.

    Crash columns are left at zero; fill them with :func:`generate_counts`.
    """
    rng = np.random.default_rng([seed, _STREAM_INVENTORY])
    side = math.ceil(math.sqrt(n_sites))
    sites = []
    for i in range(n_sites):
        row, col = divmod(i, side)
        lat, _ = destination(origin[0], origin[1], 0.0, row * spacing_m)
        lat, lon = destination(float(lat), origin[1], 90.0, col * spacing_m)
        signalized = bool(rng.random() < 0.45)
        major = float(np.round(rng.uniform(5000, 40000), -2))
        minor = float(np.round(rng.uniform(1000, major * 0.6), -2))
        sites.append(IntersectionSite(
            site_id=f"S{i:03d}", name=f"Synthetic {i}", center_lat=float(lat), center_lon=float(lon),
            control="signalized" if signalized else "unsignalized",
            legs=int(rng.choice([3, 4])), aadt_major=major, aadt_minor=minor,
            speed_limit_major=float(rng.choice([25, 30, 35, 40, 45])),
            speed_limit_minor=float(rng.choice([25, 30])),
            through_lanes_total=int(rng.integers(2, 7)), left_lanes_total=int(rng.integers(0, 4)),
            right_lanes_total=int(rng.integers(0, 3)), crashes_5yr_total=0, crashes_5yr_rearend=0,
        ))
    return sites


def site_profile(site_index, base, seed, sd_range=(0.3, 0.7)):
    """Per-site profile with its own acceleration sd, so sites differ in volatility."""
    rng = np.random.default_rng([seed, _STREAM_INVENTORY, 1_000_000 + site_index])
    sds = {q: float(rng.uniform(*sd_range)) for q in QUADRANTS}
    return TrajectoryProfile(
        mean_speed=base.mean_speed,
        regimes={q: Regime(base.regimes[q].mean, sds[q]) for q in QUADRANTS},
        vehicles=base.vehicles, samples_per_vehicle=base.samples_per_vehicle,
        speed_offset=base.speed_offset, seed=seed * 100_003 + site_index,
        start_time=base.start_time,
    )
