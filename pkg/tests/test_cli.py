"""Tests for the ``ehm`` command-line interface."""

import json

import numpy as np
import pytest

from ehm_tools.body import read_obj_vertices
from ehm_tools.cli import EXIT_GRADCHECK, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, SCHEMAS, main


@pytest.fixture
def synth_file(tmp_path):
    path = tmp_path / "model.ehma"
    assert main(["synth-model", "--seed", "5", "-o", str(path), "--log-level", "ERROR"]) == EXIT_OK
    return path


def _last_json_line(text: str) -> dict:
    return json.loads(text.strip().splitlines()[-1])


class TestSynthModel:
    """Test the synth-model command."""

    def test_same_seed_same_bytes(self, tmp_path, capsys):
        """Test a fixed seed gives byte-identical files."""
        a, b = tmp_path / "a.ehma", tmp_path / "b.ehma"
        assert main(["synth-model", "--seed", "9", "--v", "150", "-o", str(a)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out)
        assert main(["synth-model", "--seed", "9", "--v", "150", "-o", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()

        assert summary["kind"] == "composite"
        assert summary["vertices"] == 150

    def test_invalid_spec_is_runtime_error(self, tmp_path):
        """Test a spec the generator rejects exits with status 1."""
        code = main(["synth-model", "--v", "10", "--head-v", "80", "-o", str(tmp_path / "x.ehma")])
        assert code == EXIT_RUNTIME


class TestErrors:
    """Test exit codes and error reporting."""

    def test_unknown_flag(self, capsys):
        """Test an unknown flag is a usage error."""
        assert main(["forward", "model.ehma", "--bogus"]) == EXIT_USAGE
        assert "ehm: ConfigurationError" in capsys.readouterr().err

    def test_missing_command(self):
        """Test calling without a command is a usage error."""
        assert main([]) == EXIT_USAGE

    def test_missing_asset(self, tmp_path, capsys):
        """Test a missing asset file exits with status 1."""
        assert main(["forward", str(tmp_path / "absent.ehma")]) == EXIT_RUNTIME
        assert "AssetIoError" in capsys.readouterr().err

    def test_json_errors(self, tmp_path, capsys):
        """Test --json-errors writes an error document to stderr."""
        code = main(["forward", str(tmp_path / "absent.ehma"), "--json-errors"])
        assert code == EXIT_RUNTIME

        error = _last_json_line(capsys.readouterr().err)
        assert error["error_type"] == "AssetIoError"
        assert error["details"]["path"].endswith("absent.ehma")

    def test_invalid_document(self, synth_file, tmp_path, capsys):
        """Test a malformed params document is a configuration error."""
        params = tmp_path / "params.json"
        params.write_text(json.dumps({"head_scale": [1.0, -1.0, 1.0]}))
        code = main(["forward", str(synth_file), "--params", str(params), "--json-errors"])

        assert code == EXIT_USAGE
        assert _last_json_line(capsys.readouterr().err)["error_type"] == "ConfigurationError"


class TestCommands:
    """Test individual commands end to end."""

    def test_forward_writes_obj(self, synth_file, tmp_path, capsys):
        """Test forward exports a mesh and keypoints."""
        obj, keypoints = tmp_path / "mesh.obj", tmp_path / "kp.json"
        capsys.readouterr()
        code = main(
            ["forward", str(synth_file), "--obj", str(obj), "--keypoints", str(keypoints)]
        )
        assert code == EXIT_OK

        assert read_obj_vertices(obj).shape == (200, 3)
        document = json.loads(keypoints.read_text())
        assert len(document["body_keypoints2d"]) == 12
        assert len(document["face_keypoints3d"]) == 8
        assert json.loads(capsys.readouterr().out) == document

    def test_eval(self, tmp_path, capsys):
        """Test eval reports metrics from JSON documents."""
        gt = {"joints": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]}
        pred = {"joints": [[0, 0, 0], [1, 0, 0.01], [0, 1, 0], [0, 0, 1]]}
        (tmp_path / "gt.json").write_text(json.dumps(gt))
        (tmp_path / "pred.json").write_text(json.dumps(pred))
        out = tmp_path / "report.json"

        code = main(
            ["eval", "--pred", str(tmp_path / "pred.json"), "--gt", str(tmp_path / "gt.json"),
             "-o", str(out)]
        )
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["metrics"]["mpjpe"] == pytest.approx(0.0025)
        assert report["units"]["pa_mpjpe"] == "m"
        assert json.loads(capsys.readouterr().out)["counts"] == {"joints": 4}

    def test_eval_alignment_flags(self, tmp_path):
        """Test --no-align drops PA metrics and --align requires them."""
        gt = {"vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]}
        (tmp_path / "gt.json").write_text(json.dumps(gt))
        files = ["--pred", str(tmp_path / "gt.json"), "--gt", str(tmp_path / "gt.json")]

        out = tmp_path / "report.json"
        assert main(["eval", *files, "--no-align", "-o", str(out)]) == EXIT_OK
        assert set(json.loads(out.read_text())["metrics"]) == {"mve", "lve"}

        assert main(["eval", *files, "--region", "0,1", "-o", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["skipped"] == ["pa_pve"]
        assert main(["eval", *files, "--region", "0,1", "--align"]) == EXIT_RUNTIME

    def test_eval_without_common_block(self, tmp_path):
        """Test eval with nothing to compare is a usage error."""
        (tmp_path / "a.json").write_text(json.dumps({"joints": [[0, 0, 0]] * 3}))
        (tmp_path / "b.json").write_text(json.dumps({"keypoints2d": [[0, 0]] * 3}))
        code = main(["eval", "--pred", str(tmp_path / "a.json"), "--gt", str(tmp_path / "b.json")])
        assert code == EXIT_USAGE

    def test_transfer_round_trip(self, synth_file, tmp_path):
        """Test deriving a self offset and applying it keeps the pose."""
        offset = tmp_path / "offset.json"
        assert main(["transfer", "derive", str(synth_file), str(synth_file), "-o", str(offset)]) == 0

        pose = [[0.1, 0.0, -0.2]] * 8
        (tmp_path / "pose.json").write_text(json.dumps({"pose": pose}))
        out = tmp_path / "target.json"
        code = main(
            ["transfer", "apply", "--offset", str(offset), "--pose", str(tmp_path / "pose.json"),
             "-o", str(out)]
        )
        assert code == EXIT_OK
        np.testing.assert_allclose(json.loads(out.read_text())["pose"], pose, atol=1e-7)

    def test_schema_listing(self, capsys):
        """Test schema without a name lists the documents."""
        assert main(["schema"]) == EXIT_OK
        assert json.loads(capsys.readouterr().out) == sorted(SCHEMAS)

    def test_schema_params(self, capsys):
        """Test schema prints a JSON schema for a document."""
        assert main(["schema", "params"]) == EXIT_OK
        schema = json.loads(capsys.readouterr().out)
        assert "body_pose" in schema["properties"]

    def test_bench(self, capsys):
        """Test bench prints a JSON report and a table."""
        code = main(["bench", "--iterations", "3", "--warmup", "1", "--v", "120", "--head-v", "40"])
        assert code == EXIT_OK
        captured = capsys.readouterr()
        report = json.loads(captured.out)
        assert report["iterations"] == 3
        assert "forward" in captured.err


class TestGradCheck:
    """Test the grad-check command."""

    def test_passes(self, tmp_path, capsys):
        """Test the default seeded problem passes."""
        out = tmp_path / "grad.json"
        assert main(["grad-check", "-o", str(out)]) == EXIT_OK
        assert json.loads(out.read_text())["passed"] is True

    def test_zero_tolerance_fails(self, capsys):
        """Test an impossible tolerance exits with status 3."""
        assert main(["grad-check", "--tolerance", "0", "--json-errors"]) == EXIT_GRADCHECK
        error = _last_json_line(capsys.readouterr().err)
        assert error["error_type"] == "GradCheckFailed"
        assert error["details"]["seeds"] == [0]
