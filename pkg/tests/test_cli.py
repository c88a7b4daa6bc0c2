import json

import numpy as np
import pytest
from PIL import Image

from submap_frontier.cli import EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from submap_frontier.config import ConfigError, RunConfig
from submap_frontier.eventlog import read_event_log
from submap_frontier.events import ScanInserted, SubmapFinished
from submap_frontier.geometry import RigidTransform2
from submap_frontier.grid import CellClass
from submap_frontier.render import COLORS, FRONTIER_COLOR, raster

from conftest import make_submap

SMALL = ["--resolution", "0.1", "--n-scans", "20", "--verification", "--seed", "1"]


def simulate(out, *extra):
    return main(["simulate", "--out", str(out), *SMALL, *extra])


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert simulate(out, "--steps", "50") == EXIT_OK
    return out


class TestSimulate:
    def test_outputs(self, run_dir):
        for name in ("config.json", "events.jsonl", "events.jsonl.bin", "frontier.jsonl", "metrics.json"):
            assert (run_dir / name).exists()

    def test_fifty_scans_logged(self, run_dir):
        _, events = read_event_log(run_dir / "events.jsonl")
        assert sum(isinstance(e, ScanInserted) for e in events) == 50
        assert sum(isinstance(e, SubmapFinished) for e in events) >= 1

    def test_metrics_have_latency_fields(self, run_dir):
        metrics = json.loads((run_dir / "metrics.json").read_text())
        assert metrics["submap_update_events"] == 50
        assert metrics["mean_update_latency_ms"] > 0

    def test_zero_scans(self, tmp_path):
        assert simulate(tmp_path, "--steps", "0") == EXIT_OK
        _, events = read_event_log(tmp_path / "events.jsonl")
        assert events == []

    def test_logs_are_reproducible(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert simulate(a, "--steps", "30") == EXIT_OK
        assert simulate(b, "--steps", "30") == EXIT_OK
        for name in ("events.jsonl", "events.jsonl.bin"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_forced_skip_runs(self, tmp_path):
        assert simulate(tmp_path, "--steps", "30", "--skip-policy", "forced") == EXIT_OK


class TestVerify:
    def test_live_replay_passes(self, run_dir, capsys):
        assert main(["verify", str(run_dir / "events.jsonl")]) == EXIT_OK
        assert capsys.readouterr().out.strip().splitlines()[-1].startswith("OK")

    def test_recorded_stream_passes(self, run_dir, tmp_path):
        report = tmp_path / "report.json"
        code = main(["verify", str(run_dir / "events.jsonl"),
                     "--frontier", str(run_dir / "frontier.jsonl"), "--report", str(report)])
        assert code == EXIT_OK
        data = json.loads(report.read_text())
        assert data["totals"]["missing"] == 0 and data["totals"]["checked"] > 0

    def test_corrupted_stream_fails(self, run_dir, tmp_path):
        lines = (run_dir / "frontier.jsonl").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        target = max(i for i, r in enumerate(records) if any(u["count"] for u in r["updates"]))
        for u in records[target]["updates"]:
            u["points"], u["count"] = [], 0
        bad = tmp_path / "frontier.jsonl"
        bad.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        code = main(["verify", str(run_dir / "events.jsonl"), "--frontier", str(bad)])
        assert code == EXIT_VERIFY

    def test_missing_log(self, tmp_path):
        assert main(["verify", str(tmp_path / "nope.jsonl")]) == EXIT_USAGE


class TestReplay:
    def test_replay_writes_stream(self, run_dir, tmp_path, capsys):
        out = tmp_path / "stream.jsonl"
        assert main(["replay", str(run_dir / "events.jsonl"), "--out", str(out), *SMALL]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["submap_update_events"] == 50
        assert out.read_text().count("\n") == report["processed_events"]


class TestRender:
    def test_png_dimensions(self, run_dir, tmp_path):
        out = tmp_path / "map.png"
        assert main(["render", str(run_dir / "events.jsonl"), "--out", str(out), "--scale", "2"]) == EXIT_OK
        with Image.open(out) as img:
            assert img.width % 2 == 0 and img.height % 2 == 0 and img.width > 20

    def test_svg(self, run_dir, tmp_path):
        out = tmp_path / "map.svg"
        assert main(["render", str(run_dir / "events.jsonl"), "--out", str(out), "--at", "5"]) == EXIT_OK
        assert out.read_text().startswith("<svg")

    def test_empty_state(self):
        img = raster({}, {}, np.zeros((0, 2)), 0.1)
        assert img.shape == (1, 1, 3)

    def test_colors_and_orientation(self):
        # column b = 0 free, b = 1 occupied; y grows upward so occupied is the top row
        sm = make_submap([[0.2, 0.8]], resolution=0.5)
        img = raster({0: sm}, {0: RigidTransform2.identity()}, np.array([[0.25, 0.25]]), 0.5)
        assert img.shape == (2, 1, 3)
        assert tuple(img[0, 0]) == COLORS[CellClass.OCCUPIED]
        assert tuple(img[1, 0]) == FRONTIER_COLOR


class TestBench:
    def test_quick_report_schema(self, tmp_path, capsys):
        out = tmp_path / "bench.json"
        assert main(["bench", "--quick", "--out", str(out), "--steps", "40"]) == EXIT_OK
        report = json.loads(out.read_text())
        for key in ("without_skip", "with_skip"):
            assert set(report["fields"]) <= set(report[key])
        assert report["skip_equivalence"]["identical_final_frontier"]
        assert {"area_ratio", "perimeter_ratio", "optimization_time_ratio",
                "oracle_time_ratio"} <= set(report["scaling"])


class TestUsageErrors:
    def test_bad_subcommand(self):
        assert main(["fly"]) == EXIT_USAGE

    def test_bad_config_value(self, tmp_path):
        assert simulate(tmp_path, "--n-scans", "1") == EXIT_USAGE

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"resolution": 0.1, "warp_drive": true}')
        assert main(["simulate", "--out", str(tmp_path), "--config", str(cfg)]) == EXIT_USAGE

    def test_unparseable_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{")
        assert main(["simulate", "--out", str(tmp_path), "--config", str(cfg)]) == EXIT_USAGE


class TestRunConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(resolution=0.1, n_scans=20, seed=5)
        cfg.drift.bias = (0.001, 0.0, 0.0005)
        path = tmp_path / "c.json"
        cfg.save(path)
        assert RunConfig.load(path) == cfg

    def test_flags_override_file(self, tmp_path, run_dir):
        cfg = RunConfig.load(run_dir / "config.json")
        assert cfg.resolution == 0.1 and cfg.n_scans == 20 and cfg.verification

    def test_from_dict_leaves_input_alone(self):
        data = {"drift": {"bias": [0.1, 0, 0]}}
        RunConfig.from_dict(data)
        assert data == {"drift": {"bias": [0.1, 0, 0]}}

    @pytest.mark.parametrize("field,value", [
        ("resolution", 0.0), ("epsilon", 0.5), ("skip", "never"), ("baking", -1),
        ("correction", "teleport"), ("step_length", 0.5), ("oracle_every", 0),
    ])
    def test_validation(self, field, value):
        with pytest.raises(ConfigError):
            RunConfig.from_dict({field: value})

    def test_verification_detector_config(self):
        det = RunConfig(verification=True, epsilon=0.04, baking=4).detector_config()
        assert (det.epsilon, det.baking, det.smoothing) == (0.0, 0, False)
