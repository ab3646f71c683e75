"""End-to-end orchestration: ingest, match, compute, summarize, fit, rank."""

import configparser
import hashlib
import json
import logging
import os

from . import hotspot, ingest, reports, volatility
from .countmodel import LM_CRITICAL
from .errors import LbvError, ValidationError
from .geomatch import DEFAULT_RADIUS_M, SiteIndex, load_inventory, match_points, write_matched
from .randparam import DEFAULT_DRAWS, DEFAULT_SKIP

log = logging.getLogger(__name__)

DEFAULTS = {
    "pipeline": {"output_dir": "lbv_out", "seed": "0", "workers": "1"},
    "ingest": {"schema": "", "units": "si", "drop_inconsistent": "false",
               "consistency_tolerance": str(ingest.DEFAULT_CONSISTENCY_TOLERANCE)},
    "match": {"radius_m": str(DEFAULT_RADIUS_M)},
    "compute": {"min_quadrant_n": str(volatility.DEFAULT_MIN_QUADRANT_N)},
    "fit": {"spec": "", "lm_critical": str(LM_CRITICAL), "draws": str(DEFAULT_DRAWS),
            "halton_skip": str(DEFAULT_SKIP)},
    "rank": {"latent_discrepancy": "30", "latent_max_crash_percentile": "50",
             "known_crash_percentile": "80", "weights": "", "fit_model": ""},
}
REQUIRED = (("ingest", "input"), ("match", "inventory"))
# keys that change how a run executes but not what it produces
EXECUTION_KEYS = (("pipeline", "output_dir"), ("pipeline", "workers"))


class StageError(LbvError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 4 if isinstance(cause, OSError) else 1)


def load_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_dict(DEFAULTS)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh, source=str(path))
    for section, key in REQUIRED:
        if not parser.get(section, key, fallback="").strip():
            raise ValidationError(f"config {path}: missing required key [{section}] {key}")
    return parser


def config_digest(parser):
    """SHA-256 over the sorted effective config, execution-only keys excluded."""
    lines = []
    for section in sorted(parser.sections()):
        for key, value in sorted(parser.items(section)):
            if (section, key) not in EXECUTION_KEYS:
                lines.append(f"[{section}] {key} = {value.strip()}")
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _resolve(base, path):
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base, path))


def _weights(text):
    pairs = reports._pairs(text)
    return {k: float(v) for k, v in pairs.items()} or None


def run_pipeline(config_path, output_dir=None, workers=None):
    """Run every stage and write the report bundle; returns the manifest dict."""
    cfg = load_config(config_path)
    base = os.path.dirname(os.path.abspath(config_path))
    out = output_dir or _resolve(base, cfg.get("pipeline", "output_dir"))
    workers = workers or cfg.getint("pipeline", "workers")
    seed = cfg.getint("pipeline", "seed")
    os.makedirs(out, exist_ok=True)
    manifest = {"config_sha256": config_digest(cfg), "seed": seed, "complete": False,
                "stages": [], "counts": {}, "inputs": {}, "outputs": []}

    def path(name):
        manifest["outputs"].append(name)
        return os.path.join(out, name)

    state = {}

    def stage_ingest():
        paths = ingest.expand_inputs(_resolve(base, cfg.get("ingest", "input")))
        for p in paths:
            manifest["inputs"][os.path.basename(p)] = _sha256(p)
        schema_file = cfg.get("ingest", "schema").strip()
        schema, schema_units = ingest.load_schema(_resolve(base, schema_file) if schema_file else None)
        units = schema_units or cfg.get("ingest", "units")
        records, audit = ingest.parse_bsm_files(
            paths, schema, units, cfg.getboolean("ingest", "drop_inconsistent"),
            cfg.getfloat("ingest", "consistency_tolerance"), workers=workers)
        audit.write(path("ingest_audit.txt"))
        manifest["outputs"].append("ingest_audit.txt.json")
        ingest.write_records(path("records.csv"), records)
        manifest["counts"].update(records_read=audit.records_read,
                                  records_accepted=audit.records_accepted,
                                  records_rejected=audit.records_rejected)
        state["records"] = records

    def stage_match():
        inv_path = _resolve(base, cfg.get("match", "inventory"))
        manifest["inputs"][os.path.basename(inv_path)] = _sha256(inv_path)
        sites = load_inventory(inv_path)
        matched = match_points(state["records"], sites, cfg.getfloat("match", "radius_m"),
                               index=SiteIndex(sites))
        write_matched(path("matched.csv"), matched)
        manifest["counts"].update(sites=len(sites), matched=len(matched),
                                  unmatched=len(state["records"]) - len(matched))
        state.update(sites=sites, matched=matched)

    def stage_compute():
        summaries = volatility.compute_all(state["matched"], cfg.getint("compute", "min_quadrant_n"))
        volatility.write_lbv(path("lbv.csv"), summaries)
        manifest["counts"].update(
            lbv_sites=len(summaries),
            lbv_points=sum(s.n_points for s in summaries),
            sufficient_sites=sum(s.sufficient for s in summaries))
        state["summaries"] = summaries

    def stage_summarize():
        table = volatility.summarize_lbv(state["summaries"], state["sites"])
        volatility.write_summary(path("summary.csv"), table)

    def stage_fit():
        spec_file = cfg.get("fit", "spec").strip()
        state["fits"] = {}
        if not spec_file:
            return
        specs = reports.load_model_specs(_resolve(base, spec_file), defaults={
            "draws": cfg.getint("fit", "draws"),
            "halton_skip": cfg.getint("fit", "halton_skip"),
            "lm_critical": cfg.getfloat("fit", "lm_critical")})
        results = []
        for spec in specs:
            fit, _design, dropped = reports.run_model(spec, state["sites"], state["summaries"], seed)
            state["fits"][spec.name] = fit
            results.append(reports.fit_to_dict(spec, fit, dropped))
            manifest["counts"][f"model.{spec.name}.n_obs"] = len(fit.ids)
        reports.write_reports(path("models.json"), results)
        manifest["outputs"].append("models.txt")

    def stage_rank():
        thresholds = hotspot.Thresholds(
            cfg.getfloat("rank", "latent_discrepancy"),
            cfg.getfloat("rank", "latent_max_crash_percentile"),
            cfg.getfloat("rank", "known_crash_percentile"))
        fit_model = cfg.get("rank", "fit_model").strip()
        fit = None
        if state["fits"]:
            fit = state["fits"].get(fit_model) if fit_model else next(iter(state["fits"].values()))
            if fit is None:
                raise ValidationError(f"[rank] fit_model {fit_model!r} is not a fitted model")
        rows = hotspot.rank_sites(state["summaries"], state["sites"], thresholds,
                                  _weights(cfg.get("rank", "weights")), fit)
        hotspot.write_hotspots(path("hotspots.csv"), rows)
        hotspot.write_plot_table(path("hotspots_plot.csv"),
                                 hotspot.plot_table(state["summaries"], state["sites"]))
        manifest["counts"].update(hotspot_rows=len(rows),
                                  latent_hotspots=sum(r.flag == "latent_hotspot" for r in rows))

    stages = [("ingest", stage_ingest), ("match", stage_match), ("compute", stage_compute),
              ("summarize", stage_summarize), ("fit", stage_fit), ("rank", stage_rank)]
    try:
        for name, func in stages:
            try:
                func()
            except (LbvError, OSError, ValueError) as exc:
                manifest["stages"].append({"name": name, "status": "failed", "error": str(exc)})
                manifest["failed_stage"] = name
                raise StageError(name, exc) from exc
            manifest["stages"].append({"name": name, "status": "ok"})
        manifest["complete"] = True
    finally:
        with open(os.path.join(out, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return manifest
