"""``lbv`` command-line interface.

Exit codes: 0 success, 2 validation error, 3 estimation non-convergence,
4 I/O error.
"""

import argparse
import logging
import sys

from . import hotspot, ingest, pipeline, reports, scenario, volatility
from .errors import LbvError
from .geomatch import DEFAULT_RADIUS_M, load_inventory, match_points, read_matched, write_inventory, write_matched

log = logging.getLogger("lbv")


def cmd_ingest(args):
    schema, schema_units = ingest.load_schema(args.schema)
    records, audit = ingest.parse_bsm_files(
        ingest.expand_inputs(args.input), schema, schema_units or args.units,
        args.drop_inconsistent, args.tolerance, workers=args.workers)
    audit.write(args.audit_out)
    if args.out:
        ingest.write_records(args.out, records)
    sys.stdout.write(audit.to_text())


def cmd_match(args):
    matched = match_points(ingest.read_records(args.bsm), load_inventory(args.inventory), args.radius_m)
    write_matched(args.out, matched)


def cmd_compute(args):
    volatility.write_lbv(args.out, volatility.compute_all(read_matched(args.matched), args.min_quadrant_n))


def cmd_summarize(args):
    table = volatility.summarize_lbv(volatility.read_lbv(args.lbv), load_inventory(args.inventory))
    volatility.write_summary(args.out, table)


def cmd_fit(args):
    sites = load_inventory(args.inventory)
    summaries = volatility.read_lbv(args.lbv)
    results = []
    for spec in reports.load_model_specs(args.spec):
        fit, _design, dropped = reports.run_model(spec, sites, summaries, args.seed)
        results.append(reports.fit_to_dict(spec, fit, dropped))
    reports.write_reports(args.out, results)
    sys.stdout.write("\n".join(reports.render_text(r) for r in results))


def cmd_rank(args):
    fit = reports.load_fitted(args.fit, args.model) if args.fit else None
    thresholds = hotspot.Thresholds(args.latent_discrepancy, args.latent_max_crash_percentile,
                                    args.known_crash_percentile)
    summaries = volatility.read_lbv(args.lbv)
    sites = load_inventory(args.inventory)
    hotspot.write_hotspots(args.out, hotspot.rank_sites(summaries, sites, thresholds, fit=fit))
    if args.plot_out:
        hotspot.write_plot_table(args.plot_out, hotspot.plot_table(summaries, sites))


def cmd_synth(args):
    cfg = scenario.load_synth_config(args.config)
    sites = scenario.scenario_sites(cfg)
    if args.what == "trajectories":
        ingest.write_records(args.out, scenario.trajectories(cfg, sites))
    elif args.what == "counts":
        write_inventory(args.out, scenario.with_counts(cfg, sites))
    else:
        print(scenario.write_scenario(cfg, args.out))


def cmd_run(args):
    manifest = pipeline.run_pipeline(args.config, args.out, args.workers)
    for key, value in sorted(manifest["counts"].items()):
        print(f"{key} = {value}")


def build_parser():
    p = argparse.ArgumentParser(prog="lbv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse and audit raw BSM logs")
    s.add_argument("--input", required=True, help="file glob")
    s.add_argument("--schema", help="column-name map file")
    s.add_argument("--units", choices=sorted(ingest.UNIT_FACTORS), default="si")
    s.add_argument("--audit-out", required=True)
    s.add_argument("--out", help="canonical record stream to write")
    s.add_argument("--drop-inconsistent", action="store_true")
    s.add_argument("--tolerance", type=float, default=ingest.DEFAULT_CONSISTENCY_TOLERANCE)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("match", help="assign records to intersections")
    s.add_argument("--bsm", required=True)
    s.add_argument("--inventory", required=True)
    s.add_argument("--radius-m", type=float, default=DEFAULT_RADIUS_M)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_match)

    s = sub.add_parser("compute", help="per-site volatility")
    s.add_argument("--matched", required=True)
    s.add_argument("--min-quadrant-n", type=int, default=volatility.DEFAULT_MIN_QUADRANT_N)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compute)

    s = sub.add_parser("summarize", help="stratified descriptive statistics")
    s.add_argument("--lbv", required=True)
    s.add_argument("--inventory", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("fit", help="crash-frequency models")
    s.add_argument("--lbv", required=True)
    s.add_argument("--inventory", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("rank", help="hotspot screening table")
    s.add_argument("--lbv", required=True)
    s.add_argument("--inventory", required=True)
    s.add_argument("--fit")
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.add_argument("--plot-out")
    s.add_argument("--latent-discrepancy", type=float, default=30.0)
    s.add_argument("--latent-max-crash-percentile", type=float, default=50.0)
    s.add_argument("--known-crash-percentile", type=float, default=80.0)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("synth", help="synthetic data with known ground truth")
    s.add_argument("what", choices=("trajectories", "counts", "scenario"))
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="full pipeline from one config")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except LbvError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
