import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lodforge.cli import main


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def box_obj(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert run_cli("synth", "--scene", "box", "--step", "0.1",
                   "--out", str(d / "box")) == 0
    return d / "box.obj"


class TestSynthCommand:
    def test_writes_mesh_and_truth(self, box_obj):
        assert box_obj.exists()
        truth = json.loads(box_obj.with_suffix(".truth.json").read_text())
        assert truth["volume"] == 1.0
        assert truth["levels"] == 0

    def test_unknown_scene_usage_error(self, tmp_path):
        assert run_cli("synth", "--scene", "nope",
                       "--out", str(tmp_path / "x")) == 2


class TestStagedPipeline:
    def test_stages_chain(self, box_obj, tmp_path):
        out = str(tmp_path / "out")
        assert run_cli("detect", "--input", str(box_obj), "--out", out) == 0
        assert run_cli("analyze", "--out", out) == 0
        assert run_cli("build", "--out", out) == 0
        assert run_cli("traverse", "--out", out) == 0
        manifest = json.loads((Path(out) / "manifest.json").read_text())
        assert manifest["levels"] == 0
        assert len(manifest["models"]) >= 1
        assert (Path(out) / manifest["models"][0]["file"]).exists()
        assert run_cli("metrics", "--input", str(box_obj), "--out", out) == 0
        manifest = json.loads((Path(out) / "manifest.json").read_text())
        for entry in manifest["models"]:
            assert "e1" in entry and "e2" in entry and entry["s"] is not None
        assert (Path(out) / "metrics.csv").exists()

    def test_analyze_without_detect_is_usage_error(self, tmp_path, capsys):
        rc = run_cli("analyze", "--out", str(tmp_path / "fresh"))
        assert rc == 2
        msg = capsys.readouterr().err
        assert "detect.json" in msg

    def test_missing_input_is_usage_error(self, tmp_path):
        rc = run_cli("pipeline", "--input", str(tmp_path / "missing.obj"),
                     "--out", str(tmp_path / "o"))
        assert rc == 2


class TestPipelineCommand:
    def test_one_shot(self, box_obj, tmp_path):
        out = tmp_path / "out"
        assert run_cli("pipeline", "--input", str(box_obj),
                       "--out", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["models"]) >= 1
        objs = list(out.glob("model_*.obj"))
        assert len(objs) == len(manifest["models"])
        summary = json.loads((out / "pipeline.summary.json").read_text())
        for key in ("T1", "T2", "T3"):
            assert key in summary

    def test_manifest_deterministic(self, box_obj, tmp_path):
        out1 = tmp_path / "a"
        out2 = tmp_path / "b"
        for out in (out1, out2):
            assert run_cli("pipeline", "--input", str(box_obj),
                           "--out", str(out), "--seed", "3") == 0
        b1 = (out1 / "manifest.json").read_bytes()
        b2 = (out2 / "manifest.json").read_bytes()
        assert b1 == b2

    def test_selection_roundtrip(self, box_obj, tmp_path):
        out = tmp_path / "sel"
        assert run_cli("pipeline", "--input", str(box_obj), "--out", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        picks = [m["steps"] for m in manifest["models"]][:2]
        sel = out / "selection.json"
        sel.write_text(json.dumps({"selected": picks}))
        assert run_cli("metrics", "--input", str(box_obj), "--out", str(out),
                       "--selection", str(sel)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        for entry in manifest["models"]:
            if entry["steps"] in picks:
                assert "e1" in entry
            else:
                assert "e1" not in entry

    def test_invalid_params_usage_error(self, box_obj, tmp_path):
        rc = run_cli("pipeline", "--input", str(box_obj),
                     "--out", str(tmp_path / "x"), "--epsilon", "-1")
        assert rc == 2


class TestEntryPoint:
    def test_module_invocation(self, box_obj, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "lodforge", "synth", "--scene", "box",
             "--out", str(tmp_path / "m")],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
