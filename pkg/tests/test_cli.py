import json
import subprocess
import sys

import pytest

from minlab.cli import dumps, main


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_gallery_listing(capsys):
    code, out, _ = run(["gallery"], capsys)
    assert code == 0
    rows = {r["name"]: r for r in json.loads(out)["surfaces"]}
    assert rows["catenoid"]["known_index"] == 1
    assert rows["jorge-meeks-3"]["known_index"] == 3
    assert rows["plane"]["known_index"] == 0
    assert json.loads(out)["schema_version"] == 1


def test_index_plane(capsys):
    code, out, _ = run(["index", "--surface", "plane", "--level", "3", "--radii", "10", "20"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["index"] == 0 and rep["pass"]
    assert [t["negative_count"] for t in rep["truncated"]] == [0, 0]


def test_index_catenoid_outputs(tmp_path, capsys):
    argv = ["index", "--surface", "catenoid", "--level", "4", "--radii", "10", "20",
            "--format", "json", "csv", "svg", "--out", str(tmp_path)]
    code, out, _ = run(argv, capsys)
    rep = json.loads(out)
    assert code == 0 and rep["index"] == 1 and rep["nullity_band"] == 3
    assert (tmp_path / "index.json").read_text() == out
    assert (tmp_path / "eigenvalues.csv").read_text().startswith("index,eigenvalue,residual\n")
    assert (tmp_path / "spectrum.svg").read_text().lstrip().startswith("<?xml")


def test_outputs_are_byte_identical(tmp_path, capsys):
    texts = []
    for k in range(2):
        out_dir = tmp_path / str(k)
        argv = ["index", "--surface", "jorge-meeks-3", "--level", "3", "--radii", "20",
                "--format", "json", "csv", "svg", "--out", str(out_dir)]
        assert run(argv, capsys)[0] == 0
        texts.append({p.name: p.read_bytes() for p in sorted(out_dir.iterdir())})
    assert texts[0] == texts[1]


def test_convergence_study(capsys):
    code, out, _ = run(["convergence", "--surface", "catenoid", "--level", "5"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["from_above"] and rep["fitted_order"] >= 1
    assert all(b < a for a, b in zip(rep["recommended_tol"], rep["recommended_tol"][1:]))


def test_convergence_plane(capsys):
    code, out, _ = run(["convergence", "--surface", "plane", "--level", "5", "--radii", "10"], capsys)
    assert code == 0 and json.loads(out)["all_nonnegative"]


def test_certify(tmp_path, capsys):
    code, out, _ = run(["certify", "--surface", "catenoid", "--R", "10", "--out", str(tmp_path)], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["negative_count"] == 1 and rep["sound"]
    assert (tmp_path / "certificate_trace.txt").read_text().rstrip().endswith("sound")


def test_verify_theorems_one_surface(capsys):
    code, out, _ = run(["verify-theorems", "--surface", "jorge-meeks-4", "--level", "4"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["pass"] and rep["surfaces"] == {"jorge-meeks-4": True}


def test_validation_errors_exit_2(capsys):
    for argv in (["index", "--surface", "nope"],
                 ["index", "--surface", "plane", "--level", "9"],
                 ["index", "--surface", "plane", "--radii", "20", "10"],
                 ["certify", "--surface", "catenoid", "--delta", "1.5"],
                 ["index"]):
        code, _, err = run(argv, capsys)
        assert code == 2
        assert json.loads(err)["exit_code"] == 2


def test_bad_gallery_file_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\"gauss\": 1}")
    code, _, err = run(["index", "--gallery-file", str(path)], capsys)
    assert code == 2 and json.loads(err)["error"]


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"surface": "plane", "level": 3, "radii": [10]}))
    code, out, _ = run(["index", "--config", str(cfg), "--radii", "10", "15"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["level"] == 3 and [t["R"] for t in rep["truncated"]] == [10, 15]
    cfg.write_text(json.dumps({"colour": "red"}))
    assert run(["index", "--config", str(cfg)], capsys)[0] == 2


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_dumps_formats_floats():
    assert dumps({"b": 0.1, "a": [1, None, True]}) == '{"a": [1, null, true], "b": 0.10000000000000001}\n'


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "minlab.cli", "gallery", "--format", "csv"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and "catenoid" in proc.stdout
