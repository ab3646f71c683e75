import csv
import json
import os

import pytest

from lbv import scenario
from lbv.cli import main
from lbv.errors import ValidationError
from lbv.pipeline import StageError, load_config, run_pipeline

SYNTH_INI = """\
[synth]
seed = 7
n_sites = 20
vehicles = 1000
sd_min = 0.3
sd_max = 0.7
rearend_share = {share}
"""


def bundle(out_dir):
    return {name: open(os.path.join(out_dir, name), "rb").read() for name in sorted(os.listdir(out_dir))}


def make_scenario(tmp_path, share=0.55, files=1):
    cfg_path = tmp_path / "synth.ini"
    cfg_path.write_text(SYNTH_INI.format(share=share))
    data = tmp_path / "data"
    assert main(["synth", "scenario", "--config", str(cfg_path), "--out", str(data)]) == 0
    if files > 1:
        with open(data / "bsm.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        trips = sorted({r[1] for r in body})
        for k in range(files):
            keep = set(trips[k::files])
            with open(data / f"bsm_part{k}.csv", "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerows([header] + [r for r in body if r[1] in keep])
        os.remove(data / "bsm.csv")
        ini = (data / "pipeline.ini").read_text().replace("input = bsm.csv", "input = bsm_part*.csv")
        (data / "pipeline.ini").write_text(ini)
    return data


@pytest.fixture(scope="module")
def scenario_dir(tmp_path_factory):
    return make_scenario(tmp_path_factory.mktemp("scen"))


def test_full_run_reconciles(scenario_dir, tmp_path):
    manifest = run_pipeline(str(scenario_dir / "pipeline.ini"), output_dir=str(tmp_path / "out"))
    c = manifest["counts"]
    assert manifest["complete"]
    assert c["records_read"] == c["records_accepted"] + c["records_rejected"] == 20_000
    assert c["records_accepted"] == c["matched"] + c["unmatched"]
    assert c["matched"] == c["lbv_points"]
    assert c["sites"] == c["lbv_sites"] == c["hotspot_rows"] == 20
    assert c["model.all_fixed.n_obs"] == c["sufficient_sites"]
    assert [s["status"] for s in manifest["stages"]] == ["ok"] * 6
    for name in manifest["outputs"]:
        assert (tmp_path / "out" / name).exists()
    models = json.loads((tmp_path / "out" / "models.json").read_text())["models"]
    assert {m["name"]: m["family"] for m in models} == {"all_fixed": "poisson", "all_random": "random-poisson"}


def test_rerun_is_byte_identical(scenario_dir, tmp_path):
    run_pipeline(str(scenario_dir / "pipeline.ini"), output_dir=str(tmp_path / "a"))
    run_pipeline(str(scenario_dir / "pipeline.ini"), output_dir=str(tmp_path / "b"))
    assert bundle(tmp_path / "a") == bundle(tmp_path / "b")


def test_parallel_ingest_is_byte_identical(tmp_path):
    data = make_scenario(tmp_path, files=3)
    run_pipeline(str(data / "pipeline.ini"), output_dir=str(tmp_path / "w1"), workers=1)
    run_pipeline(str(data / "pipeline.ini"), output_dir=str(tmp_path / "w3"), workers=3)
    assert bundle(tmp_path / "w1") == bundle(tmp_path / "w3")


def test_missing_inventory_key(tmp_path):
    cfg = tmp_path / "p.ini"
    cfg.write_text("[ingest]\ninput = x.csv\n")
    with pytest.raises(ValidationError, match=r"\[match\] inventory"):
        load_config(cfg)
    assert main(["run", "--config", str(cfg)]) == 2


def test_stage_failure_marks_manifest_incomplete(scenario_dir, tmp_path):
    cfg = tmp_path / "p.ini"
    bad_inv = tmp_path / "inv.csv"
    lines = (scenario_dir / "inventory.csv").read_text().splitlines()
    bad_inv.write_text("\n".join(lines + [lines[1]]) + "\n")  # duplicate site
    cfg.write_text((scenario_dir / "pipeline.ini").read_text()
                   .replace("input = bsm.csv", f"input = {scenario_dir / 'bsm.csv'}")
                   .replace("inventory = inventory.csv", f"inventory = {bad_inv}")
                   .replace("spec = models.ini", ""))
    with pytest.raises(StageError) as err:
        run_pipeline(str(cfg), output_dir=str(tmp_path / "out"))
    assert err.value.stage == "match"
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["complete"] is False and manifest["failed_stage"] == "match"
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out2")]) == 2


def test_stagewise_cli_matches_pipeline(scenario_dir, tmp_path):
    out = tmp_path / "stages"
    out.mkdir()
    run_pipeline(str(scenario_dir / "pipeline.ini"), output_dir=str(tmp_path / "pipe"))
    inv = str(scenario_dir / "inventory.csv")
    assert main(["ingest", "--input", str(scenario_dir / "bsm.csv"), "--units", "si",
                 "--audit-out", str(out / "audit.txt"), "--out", str(out / "records.csv")]) == 0
    assert main(["match", "--bsm", str(out / "records.csv"), "--inventory", inv,
                 "--radius-m", "45.72", "--out", str(out / "matched.csv")]) == 0
    assert main(["compute", "--matched", str(out / "matched.csv"), "--min-quadrant-n", "30",
                 "--out", str(out / "lbv.csv")]) == 0
    assert main(["summarize", "--lbv", str(out / "lbv.csv"), "--inventory", inv,
                 "--out", str(out / "summary.csv")]) == 0
    assert main(["fit", "--lbv", str(out / "lbv.csv"), "--inventory", inv, "--seed", "7",
                 "--spec", str(scenario_dir / "models.ini"), "--out", str(out / "models.json")]) == 0
    assert main(["rank", "--lbv", str(out / "lbv.csv"), "--inventory", inv,
                 "--fit", str(out / "models.json"), "--model", "all_fixed",
                 "--out", str(out / "hotspots.csv"), "--plot-out", str(out / "hotspots_plot.csv")]) == 0
    for name in ("records.csv", "matched.csv", "lbv.csv", "summary.csv", "models.json",
                 "models.txt", "hotspots.csv", "hotspots_plot.csv"):
        assert (out / name).read_bytes() == (tmp_path / "pipe" / name).read_bytes(), name
    assert (out / "audit.txt").read_bytes() == (tmp_path / "pipe" / "ingest_audit.txt").read_bytes()


def test_exit_code_for_missing_input(tmp_path):
    assert main(["ingest", "--input", str(tmp_path / "none*.csv"), "--audit-out",
                 str(tmp_path / "a.txt")]) == 4


def test_exit_code_for_non_convergence(tmp_path):
    data = make_scenario(tmp_path, share=0.0)
    (data / "rear.ini").write_text(
        "[model rear]\nresponse = crashes_5yr_rearend\ncovariates = cv_dh\nfamily = poisson\n")
    assert main(["compute", "--matched", "/dev/null", "--out", str(tmp_path / "x.csv")]) == 2
    run_pipeline(str(data / "pipeline.ini"), output_dir=str(tmp_path / "out"))
    assert main(["fit", "--lbv", str(tmp_path / "out" / "lbv.csv"), "--inventory",
                 str(data / "inventory.csv"), "--spec", str(data / "rear.ini"),
                 "--out", str(tmp_path / "rear.json")]) == 3


def test_synth_subcommands(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[synth]\nseed = 2\nn_sites = 4\nvehicles = 40\n")
    assert main(["synth", "counts", "--config", str(cfg), "--out", str(tmp_path / "inv.csv")]) == 0
    cfg.write_text(f"[synth]\nseed = 2\nvehicles = 40\ninventory = {tmp_path / 'inv.csv'}\n")
    assert main(["synth", "trajectories", "--config", str(cfg), "--out", str(tmp_path / "bsm.csv")]) == 0
    loaded = scenario.load_synth_config(cfg)
    assert len(scenario.scenario_sites(loaded)) == 4
    with open(tmp_path / "bsm.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 40 * 20
