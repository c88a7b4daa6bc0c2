import json

import numpy as np
import pytest

from submap_frontier.events import OptimizationDone, PoseGraphSolution, ScanInserted, SubmapFinished
from submap_frontier.eventlog import (
    EventLogError,
    EventLogWriter,
    event_record,
    iter_event_log,
    read_event_log,
    write_event_log,
)
from submap_frontier.geometry import RigidTransform2
from submap_frontier.harness import BuilderConfig, EnvironmentSpec, LidarConfig, ScenarioConfig, simulate

from conftest import U, make_submap


def three_events():
    sm = make_submap([[U, 0.2, 0.7], [0.4, U, 0.9]], resolution=0.1, submap_id=2)
    pose = RigidTransform2(0.1, -0.3, 0.25)
    return [
        ScanInserted((sm,), {2: pose}, 0),
        SubmapFinished(2, 0),
        OptimizationDone(PoseGraphSolution({2: RigidTransform2(1 / 3, 2 / 7, -1.0)}, 1)),
    ]


class TestRoundTrip:
    def test_empty_log(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        assert write_event_log([], path, 0.1, 20) == 0
        header, events = read_event_log(path)
        assert events == []
        assert (header.resolution, header.n_scans) == (0.1, 20)

    def test_three_events_bit_exact(self, tmp_path):
        path = tmp_path / "log.jsonl"
        original = three_events()
        write_event_log(original, path, 0.1, 20)
        _, events = read_event_log(path)
        assert [event_record(e) for e in events] == [event_record(e) for e in original]
        assert np.array_equal(events[0].submaps[0].storage, original[0].submaps[0].storage)
        assert events[2].solution.poses[2].x == 1 / 3

    def test_simulated_run(self, tmp_path):
        cfg = ScenarioConfig(
            environment=EnvironmentSpec(kind="room", width=5, height=4, resolution=0.1),
            n_steps=40, lidar=LidarConfig(max_range=4.0),
            builder=BuilderConfig(resolution=0.1, n_scans=10),
        )
        original = list(simulate(cfg))
        path = tmp_path / "sim.jsonl"
        write_event_log(original, path, 0.1, 10)
        _, events = read_event_log(path)
        assert [event_record(e) for e in events] == [event_record(e) for e in original]

    def test_loaded_grids_are_read_only(self, tmp_path):
        path = tmp_path / "log.jsonl"
        write_event_log(three_events(), path, 0.1, 20)
        _, events = read_event_log(path)
        with pytest.raises(ValueError):
            events[0].submaps[0].storage[0, 0] = 5

    def test_writer_rejects_non_events(self, tmp_path):
        with EventLogWriter(tmp_path / "x.jsonl", 0.1, 20) as w:
            with pytest.raises(TypeError):
                w.write("scan")


class TestCorruptLogs:
    def write(self, tmp_path):
        path = tmp_path / "log.jsonl"
        write_event_log(three_events(), path, 0.1, 20)
        return path, path.read_text().splitlines()

    def test_truncated_names_the_record(self, tmp_path):
        path, lines = self.write(tmp_path)
        path.write_text("\n".join(lines[:3]) + "\n")
        with pytest.raises(EventLogError) as err:
            read_event_log(path)
        assert err.value.record == 3
        assert "truncated" in str(err.value)

    def test_corrupt_line(self, tmp_path):
        path, lines = self.write(tmp_path)
        lines[2] = lines[2][:10]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EventLogError) as err:
            read_event_log(path)
        assert err.value.record == 2  # header is record 0

    def test_count_mismatch(self, tmp_path):
        path, lines = self.write(tmp_path)
        del lines[2]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EventLogError):
            read_event_log(path)

    def test_data_after_end(self, tmp_path):
        path, lines = self.write(tmp_path)
        path.write_text("\n".join(lines + [lines[2]]) + "\n")
        with pytest.raises(EventLogError):
            read_event_log(path)

    def test_blob_out_of_range(self, tmp_path):
        path, lines = self.write(tmp_path)
        record = json.loads(lines[1])
        record["submaps"][0]["blob"] = [0, 10_000]
        lines[1] = json.dumps(record)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(EventLogError):
            read_event_log(path)

    def test_not_a_log(self, tmp_path):
        path = tmp_path / "other.jsonl"
        path.write_text('{"format": "something-else", "version": 1}\n')
        with pytest.raises(EventLogError):
            iter_event_log(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "blank.jsonl"
        path.write_text("")
        with pytest.raises(EventLogError):
            iter_event_log(path)
