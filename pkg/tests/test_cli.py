import csv
import io
import json
import re

import pytest

from credscore.cli import main
from credscore.core import GroundTruthBox
from credscore.dataset_io import format_kitti_labels, format_predictions, read_image, write_image
from credscore.metrics import CORRUPTIONS
from credscore.report import ReportDocument, check_self_consistency

from helpers import det, fixture_image, gt, reference_tables, write_ap_dataset

LEVELS = ("low", "medium", "high")


def run(*argv):
    return main([str(a) for a in argv])


def write_images(d, n=3):
    d.mkdir(parents=True, exist_ok=True)
    for i in range(n):
        write_image(fixture_image(24 + i, 16), d / f"{i:06d}.png")
    return d

# ---- corrupt -------------------------------------------------------------------


def test_corrupt_writes_outputs_and_sidecar(tmp_path):
    src = write_images(tmp_path / "in")
    assert run("corrupt", src, tmp_path / "out", "--kind", "fog", "--level", "high", "--seed", 9) == 0
    names = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert names == ["000000.png", "000001.png", "000002.png", "corruption.json"]
    side = json.loads((tmp_path / "out" / "corruption.json").read_text())
    assert len(side["files"]) == 3
    assert {f["spec"]["kind"] for f in side["files"]} == {"fog"}
    assert len({f["spec"]["seed"] for f in side["files"]}) == 3
    assert read_image(tmp_path / "out" / "000001.png").width == 25


def test_corrupt_rerun_is_byte_identical(tmp_path):
    src = write_images(tmp_path / "in")
    for out in ("a", "b"):
        assert run("--seed", 4, "corrupt", src, tmp_path / out, "--kind", "snow", "--level", "medium",
                   "--jobs", 3) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_corrupt_unknown_kind_is_usage_error(tmp_path, capsys):
    src = write_images(tmp_path / "in", 1)
    with pytest.raises(SystemExit) as exc:
        run("corrupt", src, tmp_path / "out", "--kind", "rain", "--level", "low")
    assert exc.value.code == 2
    err = capsys.readouterr().err
    for kind in ("fog", "snow", "sunflare", "gaussian_noise", "gaussian_blur"):
        assert kind in err


def test_corrupt_bad_level_and_bad_file(tmp_path, capsys):
    src = write_images(tmp_path / "in", 2)
    assert run("corrupt", src, tmp_path / "out", "--kind", "snow", "--level", "3") == 2
    (src / "000001.png").write_bytes(b"not a png")
    assert run("corrupt", src, tmp_path / "out", "--kind", "gaussian_noise", "--level", "2") == 1
    assert "000001.png" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()
    assert [p.name for p in tmp_path.iterdir()] == ["in"]  # staging dir removed

# ---- mock-detect ---------------------------------------------------------------


def write_truth(d, n=4):
    d.mkdir(parents=True)
    for i in range(n):
        boxes = [gt("Car", 0, 0, 10, 10), gt("Van", 20 + i, 0, 30 + i, 10)]
        (d / f"{i:06d}.txt").write_text(format_kitti_labels(boxes))
    return d


def test_mock_detect_zero_rate_copies_truth(tmp_path):
    gt_dir = write_truth(tmp_path / "gt")
    assert run("mock-detect", gt_dir, tmp_path / "pred") == 0
    text = (tmp_path / "pred" / "000002.txt").read_text()
    assert text == format_predictions([det("Car", 0.95, 0, 0, 10, 10), det("Van", 0.95, 22, 0, 32, 10)])


def test_mock_detect_seeded_and_drop_all(tmp_path):
    gt_dir = write_truth(tmp_path / "gt")
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps({"drop_rate": 0.5, "label_flip_rate": 0.5, "bbox_jitter": 2.0}))
    for out in ("a", "b"):
        assert run("mock-detect", gt_dir, tmp_path / out, "--profile", prof, "--kind", "fog", "--level", "high",
                   "--seed", 3) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_text() == (tmp_path / "b" / p.name).read_text()
    prof.write_text(json.dumps({"drop_rate": 1.0}))
    assert run("mock-detect", gt_dir, tmp_path / "c", "--profile", prof, "--kind", "snow", "--level", "high") == 0
    assert all(p.read_text() == "" for p in (tmp_path / "c").iterdir())


def test_mock_detect_bad_labels(tmp_path, capsys):
    gt_dir = write_truth(tmp_path / "gt")
    (gt_dir / "000001.txt").write_text("Car 0 0 0 1 1 2 2 0 0 0 0 0 0 0\nCar 0 0 0 5 1 2 2 0 0 0 0 0 0 0\n")
    assert run("mock-detect", gt_dir, tmp_path / "pred") == 1
    err = capsys.readouterr().err
    assert "000001.txt" in err and "2" in err

# ---- evaluate ------------------------------------------------------------------


def reference_manifest(tmp_path, drop=()):
    t = reference_tables()
    cell_aps = {f"{c}/{lvl}": t["per_class_ap"][c][lvl] for c in CORRUPTIONS for lvl in LEVELS}
    gt_dir, pred_dirs = write_ap_dataset(tmp_path, cell_aps, t["classes"])
    cells = [{"kind": k.split("/")[0], "level": k.split("/")[1], "ground_truth": str(gt_dir), "predictions": str(d)}
             for k, d in pred_dirs.items() if k not in drop]
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"class_registry": t["classes"], "cells": cells}))
    return path


@pytest.fixture(scope="module")
def reference_report(tmp_path_factory):
    root = tmp_path_factory.mktemp("reference")
    assert run("--no-timestamp", "evaluate", reference_manifest(root), "-o", root / "report.json") == 0
    return root / "report.json"


def test_evaluate_reference_fixture(reference_report):
    doc = json.loads(reference_report.read_text())
    assert len(doc["cells"]) == 9
    assert doc["aggregate"]["incomplete"] == []
    assert abs(doc["aggregate"]["mcmap"] - 1.750) <= 0.002
    fog_low = next(c for c in doc["cells"] if c["kind"] == "fog" and c["level"] == "low")
    assert abs(fog_low["map"] - 0.793) <= 0.0005


def test_evaluate_missing_cell_is_incomplete(tmp_path):
    path = reference_manifest(tmp_path, drop=("snow/high",))
    assert run("evaluate", path, "-o", tmp_path / "r.json") == 0
    doc = json.loads((tmp_path / "r.json").read_text())
    assert len(doc["cells"]) == 8
    assert doc["aggregate"]["incomplete"] == ["snow/high"]
    assert doc["aggregate"]["mcmap"] is None


def test_evaluate_env_manifest_and_errors(tmp_path, monkeypatch, capsys):
    gt_dir = write_truth(tmp_path / "gt", 2)
    m = tmp_path / "m.json"
    m.write_text(json.dumps({"cells": [{"kind": "clean", "ground_truth": "gt", "predictions": "gt"}]}))
    monkeypatch.setenv("CREDSCORE_MANIFEST", str(m))
    # KITTI label files are not prediction files
    assert run("evaluate", "-o", tmp_path / "r.json") == 1
    assert "000000.txt" in capsys.readouterr().err
    assert run("mock-detect", gt_dir, tmp_path / "pred") == 0
    m.write_text(json.dumps({"cells": [{"kind": "clean", "ground_truth": "gt", "predictions": "pred"}]}))
    assert run("--no-timestamp", "evaluate", "-o", tmp_path / "r.json") == 0
    first = (tmp_path / "r.json").read_bytes()
    assert run("--no-timestamp", "evaluate", m, "-o", tmp_path / "r.json", "--jobs", 2) == 0
    assert (tmp_path / "r.json").read_bytes() == first
    cell = json.loads(first)["cells"][0]
    assert cell["map"] == 1.0 and cell["avg_confidence"] == 0.95
    m.write_text(json.dumps({"iou_threshold": 2, "cells": []}))
    assert run("evaluate", "-o", tmp_path / "r.json") == 1
    assert "/iou_threshold" in capsys.readouterr().err
    monkeypatch.delenv("CREDSCORE_MANIFEST")
    assert run("evaluate") == 2

# ---- flip ----------------------------------------------------------------------


def flip_fixture(tmp_path, frames_labels, name="clean"):
    """frames_labels[j] is the label predicted for the single object in frame j."""
    gt_dir = tmp_path / name / "gt"
    gt_dir.mkdir(parents=True)
    (gt_dir / "000000.txt").write_text(format_kitti_labels([GroundTruthBox("Car", gt("Car", 0, 0, 10, 10).bbox)]))
    frames = []
    for j, label in enumerate(frames_labels):
        d = tmp_path / name / f"f{j}"
        d.mkdir()
        (d / "000000.txt").write_text(format_predictions([det(label, 0.9, 0, 0, 10, 10)]))
        frames.append(str(d))
    return {"name": name, "ground_truth": str(gt_dir), "frames": frames}


def run_flip(tmp_path, cells):
    m = tmp_path / "flip.json"
    m.write_text(json.dumps({"cells": cells}))
    code = run("flip", m, "-o", tmp_path / "out.json")
    return code, (json.loads((tmp_path / "out.json").read_text()) if code == 0 else None)


def test_flip_identical_and_single_sequence(tmp_path):
    code, doc = run_flip(tmp_path, [flip_fixture(tmp_path, ["Car"] * 3, "same"),
                                    flip_fixture(tmp_path, ["Car", "Car", "Truck"], "flipped")])
    assert code == 0
    by_name = {c["name"]: c for c in doc["cells"]}
    assert by_name["same"]["flip_probability"] == 0
    assert by_name["flipped"]["flip_probability"] == 0.5
    assert doc["overall"]["flip_probability"] == 0.25


def test_flip_empty_cell_is_undefined(tmp_path):
    empty = tmp_path / "empty"
    (empty / "gt").mkdir(parents=True)
    (empty / "f0").mkdir()
    (empty / "f1").mkdir()
    cell = {"name": "empty", "ground_truth": str(empty / "gt"), "frames": [str(empty / "f0"), str(empty / "f1")]}
    code, doc = run_flip(tmp_path, [flip_fixture(tmp_path, ["Car", "Car"]), cell])
    assert code == 0
    assert doc["cells"][1]["flip_probability"] is None
    assert doc["overall"]["flip_probability"] == 0


def test_flip_ragged_names_image_ids(tmp_path, capsys):
    cell = flip_fixture(tmp_path, ["Car", "Car", "Car"])
    (tmp_path / "clean" / "f1" / "000000.txt").unlink()
    code, _ = run_flip(tmp_path, [cell])
    assert code == 1
    assert "000000" in capsys.readouterr().err

# ---- report --------------------------------------------------------------------


def test_report_text_fog_difference_and_bold(reference_report, capsys):
    assert run("report", reference_report) == 0
    text = capsys.readouterr().out
    fog = text.split("with fog applied")[1].split("\n\n")[0]
    diffs = {}
    for line in fog.splitlines()[2:]:
        cols = line.split()
        diffs[cols[0]] = cols[-1]
    t = reference_tables()
    for label, printed in t["printed_difference"]["fog"].items():
        assert diffs[label].strip("*") == f"{printed:.3f}"
    marked = {k for k, v in diffs.items() if v.startswith("**")}
    assert marked == set(t["bold_difference"]["fog"])
    assert "MCmAP: 1.750" in text


def test_report_csv_round_trips_json(reference_report, tmp_path):
    assert run("report", reference_report, "--format", "csv", "-o", tmp_path / "r.csv") == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "r.csv").read_text())))
    doc = json.loads(reference_report.read_text())
    cells = {(c["kind"], c["level"] or ""): c for c in doc["cells"]}
    seen = 0
    for r in rows:
        if r["table"] == "ap":
            assert float(r["value"]) == cells[(r["kind"], r["level"])]["per_class_ap"][r["class"]]
            seen += 1
        elif r["table"] == "cell" and r["metric"] == "map":
            assert float(r["value"]) == cells[(r["kind"], r["level"])]["map"]
        elif r["metric"] == "mcmap":
            assert float(r["value"]) == doc["aggregate"]["mcmap"]
    assert seen == 9 * 8


def test_report_empty_and_schema_mismatch(tmp_path, capsys):
    empty = {"schema_version": "1.0", "manifest": {}, "cells": [],
             "aggregate": {"cmap": {}, "mcmap": None, "flip_probability": None, "incomplete": []}}
    (tmp_path / "e.json").write_text(json.dumps(empty))
    assert run("report", tmp_path / "e.json") == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "Evaluation cells"
    assert re.match(r"cell\s+images\s+mAP", out.splitlines()[1])
    assert len(out.splitlines()) == 2
    assert run("report", tmp_path / "e.json", "--format", "csv") == 0
    assert capsys.readouterr().out == "table,kind,level,class,metric,value\n"
    empty["schema_version"] = "0.9"
    (tmp_path / "old.json").write_text(json.dumps(empty))
    assert run("report", tmp_path / "old.json") == 1
    assert "schema_version" in capsys.readouterr().err


def test_report_document_is_self_consistent(reference_report):
    doc = ReportDocument.from_dict(json.loads(reference_report.read_text()))
    assert check_self_consistency(doc) == []
    assert ReportDocument.from_dict(doc.to_dict()).to_dict() == doc.to_dict()
    doc.aggregate.cmap["fog"] += 0.01
    problems = check_self_consistency(doc)
    assert len(problems) == 1 and problems[0].startswith("cmap[fog]")
    doc.aggregate.mcmap = 3.0
    assert check_self_consistency(doc)[1].startswith("mcmap")
