"""Model specs (INI text) and estimation reports (JSON and aligned text)."""

import configparser
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .countmodel import LM_CRITICAL, build_design, column_label, fit_count_model
from .errors import ValidationError
from .randparam import DEFAULT_DRAWS, DEFAULT_SKIP, RandomParamSpec, fit_random_poisson
from .volatility import QUADRANTS

FAMILIES = ("poisson", "negbin", "auto", "random-poisson")
STRATA = ("all", "signalized", "unsignalized")


@dataclass
class ModelSpec:
    name: str
    response: str
    covariates: list
    transforms: dict = field(default_factory=dict)
    stratum: str = "all"
    family: str = "auto"
    random_columns: list = field(default_factory=list)
    draws: int = DEFAULT_DRAWS
    halton_skip: int = DEFAULT_SKIP
    seed: int | None = None
    lm_critical: float = LM_CRITICAL


def _split(text):
    return [part.strip() for part in (text or "").replace("\n", ",").split(",") if part.strip()]


def _pairs(text):
    out = {}
    for item in _split(text):
        key, sep, value = item.partition("=")
        if not sep:
            key, sep, value = item.partition(":")
        if not sep:
            raise ValidationError(f"expected 'name=value' in {item!r}")
        out[key.strip()] = value.strip()
    return out


def parse_model_specs(text, source="<spec>", defaults=None):
    """Read ``[model <name>]`` sections from INI text.

    ``defaults`` may supply ``draws``, ``halton_skip`` and ``lm_critical`` for
    sections that leave them out.
    """
    defaults = defaults or {}
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text, source=source)
    specs = []
    for section in parser.sections():
        if not section.startswith("model"):
            continue
        sec = parser[section]
        name = section[len("model"):].strip() or f"model{len(specs) + 1}"
        if "response" not in sec or "covariates" not in sec:
            raise ValidationError(f"{source} [{section}]: 'response' and 'covariates' are required")
        spec = ModelSpec(
            name=name,
            response=sec["response"].strip(),
            covariates=_split(sec["covariates"]),
            transforms=_pairs(sec.get("transforms", "")),
            stratum=sec.get("stratum", "all").strip(),
            family=sec.get("family", "auto").strip(),
            random_columns=_split(sec.get("random_columns", "")),
            draws=sec.getint("draws", defaults.get("draws", DEFAULT_DRAWS)),
            halton_skip=sec.getint("halton_skip", defaults.get("halton_skip", DEFAULT_SKIP)),
            seed=sec.getint("seed") if "seed" in sec else None,
            lm_critical=sec.getfloat("lm_critical", defaults.get("lm_critical", LM_CRITICAL)),
        )
        if spec.stratum not in STRATA:
            raise ValidationError(f"{source} [{section}]: stratum must be one of {STRATA}")
        if spec.family not in FAMILIES:
            raise ValidationError(f"{source} [{section}]: family must be one of {FAMILIES}")
        specs.append(spec)
    if not specs:
        raise ValidationError(f"{source}: no [model ...] sections")
    return specs


def load_model_specs(path, defaults=None):
    with open(path, encoding="utf-8") as fh:
        return parse_model_specs(fh.read(), source=str(path), defaults=defaults)


def site_variables(site, lbv=None):
    """Every modelling variable available for one site."""
    out = {
        "site_id": site.site_id,
        "crashes_5yr_total": site.crashes_5yr_total,
        "crashes_5yr_rearend": site.crashes_5yr_rearend,
        "aadt_major": site.aadt_major,
        "aadt_minor": site.aadt_minor,
        "speed_limit_major": site.speed_limit_major,
        "speed_limit_minor": site.speed_limit_minor,
        "through_lanes_total": site.through_lanes_total,
        "left_lanes_total": site.left_lanes_total,
        "right_lanes_total": site.right_lanes_total,
        "four_legged": 1.0 if site.legs == 4 else 0.0,
        "signalized": 1.0 if site.control == "signalized" else 0.0,
    }
    if lbv is not None:
        out["mean_speed"] = lbv.mean_speed
        out.update({f"cv_{q}": lbv.cv(q) for q in QUADRANTS})
    return out


def model_rows(spec, sites, summaries):
    """Per-site variable mappings for ``spec``'s stratum, dropping sites
    with any required value missing. Returns ``(rows, n_dropped)``."""
    lbv_by_id = {s.site_id: s for s in summaries}
    rows, dropped = [], 0
    needed = [spec.response] + list(spec.covariates)
    for site in sorted(sites, key=lambda s: s.site_id):
        if spec.stratum != "all" and site.control != spec.stratum:
            continue
        if site.site_id not in lbv_by_id:
            dropped += 1
            continue
        row = site_variables(site, lbv_by_id.get(site.site_id))
        unknown = [v for v in needed if v not in row]
        if unknown:
            raise ValidationError(f"model {spec.name!r}: unknown variable {unknown[0]!r}")
        if any(row[v] is None for v in needed):
            dropped += 1
            continue
        rows.append(row)
    return rows, dropped


def run_model(spec, sites, summaries, default_seed=0):
    rows, dropped = model_rows(spec, sites, summaries)
    if len(rows) <= len(spec.covariates) + 1:
        raise ValidationError(
            f"model {spec.name!r}: {len(rows)} usable sites for {len(spec.covariates) + 1} parameters")
    design = build_design(rows, spec.response, spec.covariates, spec.transforms)
    if spec.family == "random-poisson":
        labels = {c: column_label(c, spec.transforms.get(c, "identity")) for c in spec.covariates}
        labels["constant"] = "constant"
        cols = [labels.get(c, c) for c in spec.random_columns]
        rp = RandomParamSpec(tuple(cols), draws=spec.draws, halton_skip=spec.halton_skip,
                             seed=default_seed if spec.seed is None else spec.seed)
        fit = fit_random_poisson(design, rp)
    else:
        fit = fit_count_model(design, spec.family, critical=spec.lm_critical)
    return fit, design, dropped


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) or math.isinf(x) else x


def fit_to_dict(spec, fit, dropped=0):
    sd = getattr(fit, "sd_estimates", {}) or {}
    me = getattr(fit, "marginal_effects", {}) or {}
    table = []
    for name in fit.names:
        row = {"name": name, "estimate": _num(fit.coefficients[name]),
               "std_error": _num(fit.std_errors[name]), "t_stat": _num(fit.t_stats[name])}
        if name in sd:
            row["sd_estimate"] = _num(sd[name]["estimate"])
            row["sd_std_error"] = _num(sd[name]["std_error"])
            row["sd_t_stat"] = _num(sd[name]["t_stat"])
        if name in me:
            row["marginal_effect"] = _num(me[name])
        table.append(row)
    return {
        "name": spec.name,
        "family": fit.family,
        "stratum": spec.stratum,
        "response": spec.response,
        "n_obs": len(fit.ids),
        "n_dropped": dropped,
        "coefficients": table,
        "loglik_zero": _num(fit.loglik_zero),
        "loglik_conv": _num(fit.loglik_conv),
        "mcfadden_rho2": _num(fit.mcfadden_rho2),
        "lm_stat": _num(fit.lm_stat),
        "lm_decision": fit.lm_decision,
        "lm_critical": spec.lm_critical,
        "alpha": _num(fit.alpha),
        "alpha_std_error": _num(fit.alpha_se),
        "collapsed_to_poisson": fit.collapsed,
        "collapsed_to_fixed": list(getattr(fit, "collapsed_columns", []) or []),
        "draws": getattr(fit, "draws_used", None) or None,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "fitted_lambda": {str(i): _num(v) for i, v in zip(fit.ids, fit.fitted_lambda)},
    }


def _fmt(x, width=11):
    return f"{'---':>{width}}" if x is None else f"{x:>{width}.4f}"


def render_text(report):
    """Aligned coefficient table with sd rows under random coefficients."""
    lines = [f"Model {report['name']}  family={report['family']}  stratum={report['stratum']}  "
             f"N={report['n_obs']}"]
    lines.append(f"{'Variable':<28}{'Estimate':>11}{'SE':>11}{'t-stat':>11}{'ME':>11}")
    for row in report["coefficients"]:
        lines.append(f"{row['name']:<28}{_fmt(row['estimate'])}{_fmt(row['std_error'])}"
                     f"{_fmt(row['t_stat'])}{_fmt(row.get('marginal_effect'))}")
        if "sd_estimate" in row:
            lines.append(f"{'  standard deviation':<28}{_fmt(row['sd_estimate'])}"
                         f"{_fmt(row['sd_std_error'])}{_fmt(row['sd_t_stat'])}{_fmt(None)}")
    lines.append(f"{'Log-lik. at zero L(0)':<28}{_fmt(report['loglik_zero'])}")
    lines.append(f"{'Log-lik. at convergence':<28}{_fmt(report['loglik_conv'])}")
    lines.append(f"{'McFadden rho^2':<28}{_fmt(report['mcfadden_rho2'])}")
    if report["lm_stat"] is not None:
        lines.append(f"{'LM over-dispersion':<28}{_fmt(report['lm_stat'])}  {report['lm_decision']}")
    if report["alpha"] is not None:
        lines.append(f"{'NB alpha':<28}{_fmt(report['alpha'])}"
                     + ("  (collapses to Poisson)" if report["collapsed_to_poisson"] else ""))
    if report["collapsed_to_fixed"]:
        lines.append("collapsed to fixed: " + ", ".join(report["collapsed_to_fixed"]))
    return "\n".join(lines) + "\n"


def write_reports(path, reports):
    """JSON at ``path``; aligned text alongside it with a ``.txt`` suffix."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"models": reports}, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    text_path = path[:-5] + ".txt" if path.endswith(".json") else path + ".txt"
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(render_text(r) for r in reports))


@dataclass
class FittedCounts:
    """Just enough of a fit to compute residuals during screening."""

    ids: list
    fitted_lambda: np.ndarray


def load_fitted(path, model=None):
    with open(path, encoding="utf-8") as fh:
        reports = json.load(fh)["models"]
    chosen = next((r for r in reports if model is None or r["name"] == model), None)
    if chosen is None:
        raise ValidationError(f"{path}: no model named {model!r}")
    ids = list(chosen["fitted_lambda"])
    return FittedCounts(ids, np.array([chosen["fitted_lambda"][i] for i in ids], dtype=float))
