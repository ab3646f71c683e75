"""Config-driven synthetic scenarios: inventory, BSM log, counts, and a
ready-to-run pipeline config."""

import configparser
import math
import os

import numpy as np

from . import synth
from .errors import ValidationError
from .geomatch import IntersectionSite, load_inventory, write_inventory
from .ingest import write_records
from .reports import _pairs, site_variables
from .volatility import QUADRANTS

DEFAULTS = {
    "seed": "0",
    "n_sites": "20",
    "vehicles": "1000",
    "samples_per_vehicle": "20",
    "mean_speed": "15.0",
    "accel_mean": "1.0",
    "accel_sd": "0.5",
    "sd_min": "",
    "sd_max": "",
    "beta": "constant=-2.5, ln(aadt_major)=0.4, cv_dh=0.01",
    "sigma": "",
    "rearend_share": "0.55",
    "inventory": "",
}


def load_synth_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict({"synth": DEFAULTS})
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh, source=str(path))
    sec = parser["synth"]
    base = os.path.dirname(os.path.abspath(path))
    inv = sec.get("inventory").strip()
    return {
        "seed": sec.getint("seed"),
        "n_sites": sec.getint("n_sites"),
        "vehicles": sec.getint("vehicles"),
        "samples_per_vehicle": sec.getint("samples_per_vehicle"),
        "mean_speed": sec.getfloat("mean_speed"),
        "accel_mean": sec.getfloat("accel_mean"),
        "accel_sd": sec.getfloat("accel_sd"),
        "sd_range": ((sec.getfloat("sd_min"), sec.getfloat("sd_max"))
                     if sec.get("sd_min").strip() and sec.get("sd_max").strip() else None),
        "beta": {k: float(v) for k, v in _pairs(sec.get("beta")).items()},
        "sigma": {k: float(v) for k, v in _pairs(sec.get("sigma")).items()},
        "rearend_share": sec.getfloat("rearend_share"),
        "inventory": (inv if os.path.isabs(inv) else os.path.join(base, inv)) if inv else None,
    }


def scenario_sites(cfg):
    if cfg["inventory"]:
        return load_inventory(cfg["inventory"])
    return synth.generate_inventory(cfg["n_sites"], seed=cfg["seed"])


def profiles(cfg, sites):
    per_site = max(4, cfg["vehicles"] // max(len(sites), 1))
    base = synth.TrajectoryProfile(
        mean_speed=cfg["mean_speed"],
        regimes={q: synth.Regime(cfg["accel_mean"], cfg["accel_sd"]) for q in QUADRANTS},
        vehicles=per_site, samples_per_vehicle=cfg["samples_per_vehicle"], seed=cfg["seed"])
    out = []
    for i, _site in enumerate(sites):
        if cfg["sd_range"]:
            out.append(synth.site_profile(i, base, cfg["seed"], cfg["sd_range"]))
        else:
            out.append(synth.TrajectoryProfile(
                base.mean_speed, base.regimes, base.vehicles, base.samples_per_vehicle,
                base.speed_offset, seed=cfg["seed"] * 100_003 + i, start_time=base.start_time))
    return out


def trajectories(cfg, sites):
    records = []
    for site, profile in zip(sites, profiles(cfg, sites)):
        records.extend(synth.generate_trajectories(site, profile))
    return records


def _covariate(name, variables):
    if name.startswith("ln(") and name.endswith(")"):
        return math.log(variables[name[3:-1]])
    if name == "constant":
        return 1.0
    if name not in variables:
        raise ValidationError(f"unknown synthetic covariate {name!r}")
    return float(variables[name])


def with_counts(cfg, sites):
    """Sites with crash counts drawn from the configured coefficients.

    Volatility covariates ``cv_*`` take each site's target CV.
    """
    names = list(cfg["beta"])
    rows = []
    for site, profile in zip(sites, profiles(cfg, sites)):
        variables = site_variables(site)
        variables.update({f"cv_{q}": profile.regimes[q].cv for q in QUADRANTS})
        rows.append([_covariate(n, variables) for n in names])
    X = np.array(rows)
    sigma = {names.index(k): v for k, v in cfg["sigma"].items()}
    total = synth.generate_counts(X, [cfg["beta"][n] for n in names], sigma, cfg["seed"])
    rng = np.random.default_rng([cfg["seed"], 4])
    rear = rng.binomial(total, cfg["rearend_share"])
    fields = IntersectionSite.__dataclass_fields__
    return [IntersectionSite(**{**{f: getattr(s, f) for f in fields},
                                "crashes_5yr_total": int(t), "crashes_5yr_rearend": int(r)})
            for s, t, r in zip(sites, total, rear)]


MODELS_INI = """\
[model all_fixed]
response = crashes_5yr_total
covariates = aadt_major, cv_dh
transforms = aadt_major=log
stratum = all
family = auto

[model all_random]
response = crashes_5yr_total
covariates = aadt_major, cv_dh
transforms = aadt_major=log
stratum = all
family = random-poisson
random_columns = cv_dh
"""

PIPELINE_INI = """\
[pipeline]
output_dir = out
seed = {seed}
workers = 1

[ingest]
input = bsm.csv
units = si

[match]
inventory = inventory.csv
radius_m = 45.72

[compute]
min_quadrant_n = 30

[fit]
spec = models.ini

[rank]
fit_model = all_fixed
"""


def write_scenario(cfg, out_dir):
    """Write inventory.csv, bsm.csv, models.ini and pipeline.ini into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    sites = with_counts(cfg, scenario_sites(cfg))
    write_inventory(os.path.join(out_dir, "inventory.csv"), sites)
    write_records(os.path.join(out_dir, "bsm.csv"), trajectories(cfg, sites))
    with open(os.path.join(out_dir, "models.ini"), "w", encoding="utf-8") as fh:
        fh.write(MODELS_INI)
    with open(os.path.join(out_dir, "pipeline.ini"), "w", encoding="utf-8") as fh:
        fh.write(PIPELINE_INI.format(seed=cfg["seed"]))
    return os.path.join(out_dir, "pipeline.ini")
