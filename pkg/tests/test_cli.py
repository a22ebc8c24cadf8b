import json
import shutil
import subprocess

import pytest

from capbound import cli
from capbound import scene as scn


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def coarse_annulus(tmp_path_factory):
    d = json.loads(scn.shipped("annulus").read_text())
    d["h"] = d["h"] * 4
    p = tmp_path_factory.mktemp("scenes") / "annulus_coarse.json"
    p.write_text(json.dumps(d))
    return p


def test_capacity_csv_and_manifest(tmp_path, coarse_annulus):
    out = tmp_path / "cap.csv"
    assert run("capacity", "--scene", coarse_annulus, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "value,h_list,error_indicator,iterations,extrapolated,raw_values,manifest"
    row = lines[1].split(",")
    assert abs(float(row[0]) - 6.2832) < 0.3
    assert row[-1] == "cap.manifest.json"
    m = json.loads((tmp_path / "cap.manifest.json").read_text())
    assert m["command"] == "capacity" and m["scene"] == "annulus" and len(m["scene_hash"]) == 64
    assert "cap.csv" in m["files"] and "capacity" in m["wall_times"]


def test_capacity_byte_identical(tmp_path, coarse_annulus):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("capacity", "--scene", coarse_annulus, "--out", a) == 0
    assert run("capacity", "--scene", coarse_annulus, "--out", b) == 0
    assert a.read_text().replace("a.manifest", "X") == b.read_text().replace("b.manifest", "X")


def test_timings_flag_adds_column(tmp_path, coarse_annulus):
    out = tmp_path / "t.csv"
    assert run("capacity", "--scene", coarse_annulus, "--out", out, "--timings") == 0
    assert out.read_text().splitlines()[0].endswith("wall_time,manifest")


def test_distance_with_pairs_svg_and_jobs(tmp_path, monkeypatch):
    pairs = tmp_path / "pairs.csv"
    pairs.write_text("x1,y1,x2,y2\n0.6,0.0,0.6,0.1\n0.5,0.5,-0.5,0.5\n")
    common = ["--scene", scn.shipped("disk_distance"), "--pairs", pairs, "--h", 1 / 32]
    d1 = tmp_path / "one"
    d2 = tmp_path / "two"
    assert run("distance", *common, "--out", d1 / "d.csv", "--svg", d1, "--jobs", 1) == 0
    monkeypatch.setenv("CAPBOUND_JOBS", "2")
    assert run("distance", *common, "--out", d2 / "d.csv") == 0
    assert (d1 / "d.csv").read_bytes() == (d2 / "d.csv").read_bytes()
    assert (d1 / "d_curves.csv").read_bytes() == (d2 / "d_curves.csv").read_bytes()
    head = (d1 / "d.csv").read_text().splitlines()[0]
    assert head == "x1,y1,x2,y2,value,term_F,term_boundary,curve_id,manifest"
    svg = (d1 / "distance_disk_distance.svg").read_text()
    assert svg.startswith("<svg") and "<polyline" in svg


def test_bad_jobs_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CAPBOUND_JOBS", "many")
    assert run("distance", "--scene", scn.shipped("disk_distance"), "--h", 1 / 32, "--out", tmp_path / "x.csv") == 2


def test_malformed_scene_exit_2(tmp_path, capsys):
    d = json.loads(scn.shipped("annulus").read_text())
    d["domain"]["params"]["radius"] = -1
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(d))
    assert run("capacity", "--scene", p, "--out", tmp_path / "c.csv") == 2
    err = capsys.readouterr().err
    assert "SceneError" in err and "$.domain.params.radius" in err


def test_missing_scene_exit_2(tmp_path):
    assert run("capacity", "--out", tmp_path / "c.csv") == 2
    assert run("capacity", "--scene", tmp_path / "none.json") == 2


def test_numerical_failure_exit_3(tmp_path, capsys):
    code = run("trace", "--scene", scn.shipped("sqrt_luzin"), "--function", "radial_log", "--eps", 1.0,
               "--out", tmp_path / "t.csv")
    assert code == 3
    assert "InfiniteEnergy" in capsys.readouterr().err


def test_trace_luzin_csv(tmp_path):
    out = tmp_path / "t.csv"
    assert run("trace", "--scene", scn.shipped("sqrt_luzin"), "--eps", 0.0, 40.0, "--out", out) == 0
    rows = (tmp_path / "t_luzin.csv").read_text().splitlines()
    assert rows[0].startswith("epsilon,status,n_cells,cap_U")
    assert rows[1].split(",")[1] == "budget_exceeded" and rows[2].split(",")[1] == "ok"
    assert (tmp_path / "trace_sqrt_singularity-luzin1.svg").exists()


def test_invariance_map_flag(tmp_path):
    out = tmp_path / "inv.csv"
    assert run("invariance", "--scene", scn.shipped("invariance"), "--h", 1 / 32, "--refine", 0,
               "--map", '{"kind": "affine_stretch", "params": [2.0]}', "--out", out) == 0
    head, row = out.read_text().splitlines()
    assert head.startswith("map,K,conformal,source_value,image_value,ratio")
    assert row.split(",")[-2] == "true"
    assert run("invariance", "--scene", scn.shipped("invariance"), "--map", "{not json", "--out", out) == 2
    assert run("invariance", "--scene", scn.shipped("invariance"), "--map", '{"kind": "warp"}',
               "--out", out) == 2


@pytest.fixture(scope="module")
def fan_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fan")
    assert run("boundary", "--scene", scn.shipped("fan_boundary"), "--out", d) == 0
    return d


def test_boundary_outputs(fan_dir):
    for name in ("verdicts.csv", "profiles.csv", "realizations.csv", "checks.csv", "elements.json",
                 "fan_impressions.svg", "manifest.json"):
        assert (fan_dir / name).exists(), name
    m = json.loads((fan_dir / "manifest.json").read_text())
    assert m["checks"] and all(m["checks"].values())
    assert len(json.loads((fan_dir / "elements.json").read_text())["elements"]) == 4


def test_trace_over_elements(fan_dir, tmp_path):
    out = tmp_path / "ft.csv"
    assert run("trace", "--scene", scn.shipped("fan_boundary"), "--function", "constant", "--elements", fan_dir,
               "--out", out) == 0
    rows = out.read_text().splitlines()
    assert len(rows) == 5 and all(",CONSISTENT," in r for r in rows[1:])


def test_report(fan_dir, tmp_path, coarse_annulus):
    cap = tmp_path / "cap"
    assert run("capacity", "--scene", coarse_annulus, "--out", cap / "c.csv") == 0
    out = tmp_path / "report.md"
    assert run("report", fan_dir, cap, "--out", out) == 0
    text = out.read_text()
    assert "check pairwise_distinct: PASS" in text and "### c.csv" in text
    assert text.rstrip().endswith("2 runs, 0 failed checks.")
    assert run("report", tmp_path / "empty", "--out", out) == 2


@pytest.mark.skipif(shutil.which("capbound") is None, reason="console script not installed")
def test_console_script(tmp_path, coarse_annulus):
    r = subprocess.run(["capbound", "capacity", "--scene", str(coarse_annulus), "--out", str(tmp_path / "c.csv")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run(["capbound", "--version"], capture_output=True, text=True)
    assert r.stdout.startswith("capbound ")
