"""Proactive screening: rank sites by how far their volatility percentile
runs ahead of their crash percentile."""

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InsufficientDataError, JoinError
from .tabular import write_table
from .volatility import QUADRANTS

FLAGS = ("known_hotspot", "latent_hotspot", "normal", "insufficient_data")


@dataclass(frozen=True)
class Thresholds:
    latent_discrepancy: float = 30.0
    latent_max_crash_percentile: float = 50.0
    known_crash_percentile: float = 80.0


@dataclass(frozen=True)
class HotspotRow:
    site_id: str
    crashes_5yr: int
    crash_percentile: float | None
    volatility_score: float | None
    volatility_percentile: float | None
    discrepancy: float | None
    flag: str
    model_residual: float | None = None


HOTSPOT_COLUMNS = tuple(HotspotRow.__dataclass_fields__)


def volatility_score(summary, weights=None):
    """Weighted mean of the defined CVs, weights renormalised over those."""
    weights = weights or dict.fromkeys(QUADRANTS, 1.0)
    defined = summary.defined_cvs()
    total = sum(weights.get(q, 0.0) for q in defined)
    if not defined or total <= 0:
        raise InsufficientDataError(f"site {summary.site_id!r}: no defined coefficient of variation")
    return sum(weights.get(q, 0.0) * v for q, v in defined.items()) / total


def percentile_ranks(values):
    """``100 * (rank - 1) / (N - 1)`` with average ranks for ties."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InsufficientDataError("percentile ranks need at least two sites")
    return 100.0 * (rankdata(values, method="average") - 1.0) / (values.size - 1)


def classify(crash_pct, discrepancy, thresholds):
    if crash_pct >= thresholds.known_crash_percentile:
        return "known_hotspot"
    if (discrepancy >= thresholds.latent_discrepancy
            and crash_pct <= thresholds.latent_max_crash_percentile):
        return "latent_hotspot"
    return "normal"


def rank_sites(summaries, sites, thresholds=None, weights=None, fit=None):
    """Screening table sorted by descending discrepancy, then site_id.

    Sites whose volatility summary is insufficient are flagged
    ``insufficient_data``, left out of the percentile pool, and listed last.
    When ``fit`` is given, observed minus fitted crashes is added per site.
    """
    thresholds = thresholds or Thresholds()
    by_id = {s.site_id: s for s in sites}
    residuals = {}
    if fit is not None:
        lam = dict(zip(fit.ids, np.asarray(fit.fitted_lambda, dtype=float)))
        residuals = {sid: float(by_id[sid].crashes_5yr_total - lam[sid]) for sid in lam if sid in by_id}
    pool, rest = [], []
    for lbv in summaries:
        if lbv.site_id not in by_id:
            raise JoinError(f"site {lbv.site_id!r} has volatility data but no inventory row")
        (pool if lbv.sufficient else rest).append(lbv)
    crash_pct = percentile_ranks([by_id[s.site_id].crashes_5yr_total for s in pool])
    scores = [volatility_score(s, weights) for s in pool]
    vol_pct = percentile_ranks(scores)
    rows = []
    for lbv, cp, score, vp in zip(pool, crash_pct, scores, vol_pct):
        disc = float(vp - cp)
        rows.append(HotspotRow(lbv.site_id, by_id[lbv.site_id].crashes_5yr_total, float(cp),
                               float(score), float(vp), disc, classify(cp, disc, thresholds),
                               residuals.get(lbv.site_id)))
    rows.sort(key=lambda r: (-r.discrepancy, r.site_id))
    tail = []
    for lbv in sorted(rest, key=lambda s: s.site_id):
        try:
            score = volatility_score(lbv, weights)
        except InsufficientDataError:
            score = None
        tail.append(HotspotRow(lbv.site_id, by_id[lbv.site_id].crashes_5yr_total, None, score,
                               None, None, "insufficient_data", residuals.get(lbv.site_id)))
    return rows + tail


def write_hotspots(path, rows):
    write_table(path, HOTSPOT_COLUMNS, ([getattr(r, c) for c in HOTSPOT_COLUMNS] for r in rows))


PLOT_COLUMNS = ("site_id", "lon", "lat", "control", "crash_radius", "cv_al_radius", "cv_dl_radius")


def plot_table(summaries, sites):
    """Circle radii for map overlays, each scaled linearly to its maximum
    within the site's control stratum (largest circle = 1)."""
    by_id = {s.site_id: s for s in sites}
    pairs = [(by_id[s.site_id], s) for s in summaries if s.site_id in by_id]

    def stratum_max(control, getter):
        vals = [getter(site, lbv) for site, lbv in pairs if site.control == control]
        vals = [v for v in vals if v is not None]
        return max(vals) if vals else None

    getters = {
        "crash_radius": lambda site, lbv: site.crashes_5yr_total,
        "cv_al_radius": lambda site, lbv: lbv.cv_al,
        "cv_dl_radius": lambda site, lbv: lbv.cv_dl,
    }
    maxima = {(c, k): stratum_max(c, g) for c in ("signalized", "unsignalized")
              for k, g in getters.items()}
    out = []
    for site, lbv in sorted(pairs, key=lambda p: p[0].site_id):
        row = {"site_id": site.site_id, "lon": site.center_lon, "lat": site.center_lat,
               "control": site.control}
        for key, getter in getters.items():
            value, top = getter(site, lbv), maxima[(site.control, key)]
            row[key] = None if value is None or not top else float(value) / top
        out.append(row)
    return out


def write_plot_table(path, rows):
    write_table(path, PLOT_COLUMNS, rows)
