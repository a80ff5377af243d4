import json
import subprocess
import sys

import pytest

from asahi.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from asahi.formats import parse_detections

COMMANDS = ["plan", "slice", "redundancy", "scenegen", "detect", "eval", "saf-build", "bench"]


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def body(text):
    return [l for l in text.splitlines() if l and not l.startswith("#")]


def test_plan_window_counts(capsys):
    code, out, _ = run(["plan", "--dims", "1920x1080"], capsys)
    assert code == EXIT_OK and len(body(out)) == 12
    code, out, _ = run(["plan", "--dims", "960x540", "--format", "csv"], capsys)
    assert code == EXIT_OK and len(out.splitlines()) == 7
    code, out, _ = run(["plan", "--dims", "960x540", "--strategy", "fixed"], capsys)
    assert len(body(out)) == 6


@pytest.mark.parametrize("dims", ["960by540", "0x10", "-5x5", ""])
def test_malformed_dims(dims, capsys):
    code, _, err = run(["plan", "--dims", dims], capsys)
    assert code == EXIT_USAGE and "error" in err


def test_bad_config_value(capsys):
    code, _, err = run(["plan", "--dims", "960x540", "--overlap", "1.5"], capsys)
    assert code == EXIT_USAGE and "overlap" in err


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help(cmd, capsys):
    code, out, _ = run([cmd, "--help"], capsys)
    assert code == 0 and "usage:" in out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "asahi", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("asahi ")


def test_redundancy_table(capsys):
    code, out, _ = run(["redundancy", "--format", "csv"], capsys)
    assert code == EXIT_OK and len(out.splitlines()) == 7
    code, out, _ = run(["redundancy", "--dims", "960x540"], capsys)
    assert len(out.splitlines()) == 2


@pytest.fixture
def scene_dir(tmp_path, capsys):
    out = tmp_path / "scenes"
    code, _, _ = run(["scenegen", "--out", str(out), "--count", "2", "--dims", "960x540", "--objects", "40",
                      "--render", "--seed", "5"], capsys)
    assert code == EXIT_OK
    return out


def test_scenegen_outputs(scene_dir):
    data = json.loads((scene_dir / "annotations.json").read_text())
    assert len(data["images"]) == 2 and len(data["annotations"]) == 80
    assert (scene_dir / "000001.ppm").is_file()


def test_detect_eval_round_trip(scene_dir, tmp_path, capsys):
    dets = tmp_path / "dets.txt"
    code, out, _ = run(["detect", "--scenes", str(scene_dir / "annotations.json"), "--out", str(dets),
                        "--parallelism", "4"], capsys)
    assert code == EXIT_OK and "image_id" in out
    records = parse_detections(dets.read_text())
    assert {i for i, _ in records} == {1, 2}
    serial = tmp_path / "serial.txt"
    run(["detect", "--scenes", str(scene_dir / "annotations.json"), "--out", str(serial), "--parallelism", "1"],
        capsys)
    assert serial.read_bytes() == dets.read_bytes()
    code, out, _ = run(["eval", "--dets", str(dets), "--gt", str(scene_dir / "annotations.json"),
                        "--format", "csv", "--output", str(tmp_path / "r.csv")], capsys)
    assert code == EXIT_OK
    rows = dict(l.split(",") for l in out.splitlines()[1:])
    assert float(rows["mAP50"]) == 1.0
    assert (tmp_path / "r.csv").read_text() == out


def test_detect_external_stub(scene_dir, tmp_path, capsys):
    cmd = sys.executable + " -c \"print('0 1 0.9 0 0 10 10')\" {input}"
    code, out, _ = run(["detect", "--scenes", str(scene_dir / "annotations.json"), "--images", str(scene_dir),
                        "--detector", "external", "--command", cmd, "--parallelism", "2"], capsys)
    assert code == EXIT_OK
    records = parse_detections(out)
    assert records and all(d.class_id == 1 for _, d in records)


def test_detect_failure_exit_code(scene_dir, tmp_path, capsys):
    cmd = sys.executable + " -c \"import sys; sys.exit(4)\" {input}"
    code, _, err = run(["detect", "--scenes", str(scene_dir / "annotations.json"), "--images", str(scene_dir),
                        "--detector", "external", "--command", cmd, "--summary", str(tmp_path / "s.txt")], capsys)
    assert code == EXIT_RUNTIME and "status 4" in err
    assert "# failures" in (tmp_path / "s.txt").read_text()


def test_detect_usage_errors(scene_dir, tmp_path, capsys):
    ann = str(scene_dir / "annotations.json")
    assert run(["detect", "--scenes", str(tmp_path / "missing.json")], capsys)[0] == EXIT_USAGE
    assert run(["detect", "--scenes", ann, "--images", str(tmp_path / "nope")], capsys)[0] == EXIT_USAGE
    assert run(["detect", "--scenes", ann, "--detector", "external"], capsys)[0] == EXIT_USAGE
    assert run(["detect", "--scenes", ann, "--miss-rate", "2"], capsys)[0] == EXIT_USAGE


def test_eval_malformed_detections(scene_dir, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("1 0 0.5 0 0 1\n")
    code, _, err = run(["eval", "--dets", str(bad), "--gt", str(scene_dir / "annotations.json")], capsys)
    assert code == EXIT_RUNTIME and "bad.txt:1:" in err


def test_slice_writes_patches(scene_dir, tmp_path, capsys):
    out = tmp_path / "patches"
    code, _, _ = run(["slice", "--image", str(scene_dir / "000001.ppm"), "--out", str(out)], capsys)
    assert code == EXIT_OK
    assert len(list(out.glob("*.ppm"))) == 6 and (out / "000001_plan.txt").is_file()


def test_saf_build(scene_dir, tmp_path, capsys):
    out = tmp_path / "saf"
    code, stdout, _ = run(["saf-build", "--annotations", str(scene_dir / "annotations.json"), "--images",
                           str(scene_dir), "--out", str(out), "--format", "csv"], capsys)
    assert code == EXIT_OK
    rows = dict(l.split(",") for l in stdout.splitlines()[1:])
    assert rows["records"] == "14" and rows["violations"] == "0"
    code, _, _ = run(["saf-build", "--annotations", str(scene_dir / "annotations.json"), "--out", str(out)],
                     capsys)
    assert code == EXIT_USAGE


def test_bench_rows(capsys):
    code, out, _ = run(["bench", "--resolutions", "960x540", "--strategies", "asahi", "--scenes", "1",
                        "--objects", "20", "--format", "csv"], capsys)
    assert code == EXIT_OK and len(out.splitlines()) == 2
    code, out, _ = run(["bench", "--resolutions", "", "--format", "csv"], capsys)
    assert code == EXIT_OK and len(out.splitlines()) == 1
    assert run(["bench", "--strategies", "nope"], capsys)[0] == EXIT_USAGE
