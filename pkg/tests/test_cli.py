import json
import subprocess
import sys

import numpy as np

from geocut.cli import main

RUN = lambda *args: main(list(args))


def run_capture(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_geodesic_sphere_antipode(tmp_path):
    out = tmp_path / "traj.csv"
    code = RUN(
        "geodesic", "--scheme", "del", "--ellipsoid", "1,1,1", "--q0", "1,0,0",
        "--p0", "0,3.14159265358979,0", "--steps", "100", "--out", str(out),
    )
    assert code == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "t,q1,q2,q3,lambda1"
    last = [float(x) if x != "nan" else np.nan for x in rows[-1].split(",")]
    assert last[0] == 1.0
    assert np.linalg.norm(np.array(last[1:4]) - np.array([-1.0, 0.0, 0.0])) < 1e-2


def test_geodesic_zero_steps_usage_error():
    assert RUN("geodesic", "--steps", "0", "--p0", "0,1,0") == 64


def test_unknown_flag_usage_error():
    assert RUN("geodesic", "--nonsense", "1") == 64


def test_malformed_box_usage_error():
    assert RUN("locus", "--box", "oops") == 64


def test_geodesic_del_vs_sympeuler_columns(tmp_path):
    frames = {}
    for scheme in ("del", "sympeuler"):
        out = tmp_path / f"{scheme}.csv"
        code = RUN(
            "geodesic", "--scheme", scheme, "--ellipsoid", "1,0.9,0.8",
            "--p0", "0,1.3,-0.4", "--steps", "60", "--out", str(out),
        )
        assert code == 0
        rows = [r.split(",") for r in out.read_text().strip().splitlines()[1:]]
        frames[scheme] = np.array([[float(c) for c in r[1:4]] for r in rows])
    assert np.max(np.abs(frames["del"] - frames["sympeuler"])) <= 1e-10


def test_geodesic_json_roundtrip(tmp_path):
    out = tmp_path / "traj.json"
    code = RUN(
        "geodesic", "--format", "json", "--ellipsoid", "1,1,1", "--q0", "1,0,0",
        "--p0", "0,1,0", "--steps", "20", "--out", str(out),
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["qs"]) == 21
    assert doc["meta"]["scheme"] == "del"
    # 17-significant-digit round trip
    q = np.array(doc["qs"])
    assert abs(np.linalg.norm(q[-1]) - 1.0) < 1e-11


def test_kkt_scheme_via_cli(tmp_path):
    out = tmp_path / "kkt.csv"
    code = RUN(
        "geodesic", "--scheme", "kkt", "--ellipsoid", "1,1,1", "--q0", "1,0,0",
        "--qN", "0,1,0", "--steps", "20", "--out", str(out),
    )
    assert code == 0
    rows = out.read_text().strip().splitlines()
    assert len(rows) == 22


def test_connect_emits_solutions(tmp_path):
    out = tmp_path / "sols.json"
    code = RUN(
        "connect", "--ellipsoid", "1,1,1", "--from", "1,0,0", "--to", "0,1,0",
        "--bound", "4.712388980384690", "--seeds", "24", "--steps", "40", "--out", str(out),
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["solutions"]) == 2
    lengths = sorted(s["length"] for s in doc["solutions"])
    assert abs(lengths[0] - np.pi / 2) < 5e-3
    assert "n_seeds" in doc["diagnostics"]


def test_locus_sphere_degenerate(tmp_path):
    out = tmp_path / "sphere.json"
    code = RUN(
        "locus", "--ellipsoid", "1,1,1", "--mesh", "24", "--box=-3.3:3.3",
        "--steps", "30", "--out", str(out),
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["cusps"] == []
    assert doc["degenerate_cusps"] is True


def test_locus_default_run_four_cusps(tmp_path):
    out = tmp_path / "ell.json"
    code = RUN("locus", "--mesh", "64", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    assert len(doc["cusps"]) == 4
    assert len(doc["critical_set"]) == len(doc["locus"])
    assert len(doc["labels"]) == len(doc["critical_set"])
    assert doc["meta"]["axes"] == [1.0, 0.9, 0.8]


def test_locus_determinism_across_threads(tmp_path):
    outs = []
    for threads in ("1", "4"):
        f = tmp_path / f"t{threads}.json"
        code = RUN("locus", "--mesh", "32", "--steps", "30", "--threads", threads, "--out", str(f))
        assert code == 0
        outs.append(f.read_bytes())
    assert outs[0] == outs[1]


def test_compare_identical_schemes_zero_diff(tmp_path):
    out = tmp_path / "cmp.json"
    code = RUN(
        "compare", "--schemes", "del,sympeuler", "--mesh", "24", "--steps", "30", "--out", str(out)
    )
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["diff"]["det_max_abs_diff"] <= 1e-10


def test_compare_same_scheme_twice_exact_zero(tmp_path):
    out = tmp_path / "cmp.json"
    code = RUN("compare", "--schemes", "del,del", "--mesh", "16", "--steps", "20", "--out", str(out))
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["diff"]["det_max_abs_diff"] == 0.0
    assert doc["diff"]["min_sigma2"]["del"] == doc["diff"]["min_sigma2"]["del_2"]


def test_convergence_plane_exact(tmp_path):
    out = tmp_path / "conv.csv"
    code = RUN("convergence", "--plane", "3", "--schemes", "del", "--steps-list", "10,20", "--out", str(out))
    assert code == 0
    rows = out.read_text().strip().splitlines()[1:]
    errs = [float(r.split(",")[2]) for r in rows]
    assert max(errs) < 1e-13


def test_convergence_sphere_orders(tmp_path):
    out = tmp_path / "conv.csv"
    code = RUN(
        "convergence", "--ellipsoid", "1,1,1", "--schemes", "del,rk2",
        "--steps-list", "25,50,100", "--out", str(out),
    )
    assert code == 0
    rows = [r.split(",") for r in out.read_text().strip().splitlines()[1:]]
    orders = [float(r[3]) for r in rows if r[3] != ""]
    assert all(1.7 <= o <= 2.3 for o in orders)


def test_classify_roundtrip(tmp_path):
    diagram = tmp_path / "diag.json"
    assert RUN("locus", "--mesh", "32", "--steps", "30", "--out", str(diagram)) == 0
    out = tmp_path / "classified.json"
    assert RUN("classify", "--in", str(diagram), "--out", str(out)) == 0
    doc = json.loads(out.read_text())
    orig = json.loads(diagram.read_text())
    assert len(doc["labels"]) == len(orig["critical_set"])
    # reclassification from the self-describing meta reproduces the labels
    assert doc["labels"] == orig["labels"]


def test_json_floats_roundtrip_exactly():
    from geocut._jsonio import dump_bytes

    rng = np.random.default_rng(3)
    values = list(rng.normal(size=20)) + [1.0, -2.5, 1e-17, 3.141592653589793]
    doc = json.loads(dump_bytes({"x": values}).decode())
    assert all(a == b for a, b in zip(doc["x"], values))


def test_cli_entry_point_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "geocut.cli", "geodesic", "--steps", "0", "--p0", "1,0,0"],
        capture_output=True,
    )
    assert proc.returncode == 64
