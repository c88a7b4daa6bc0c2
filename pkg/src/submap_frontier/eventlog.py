"""Line-delimited JSON event log with a binary sidecar for grid payloads.

Layout of ``events.jsonl``::

    {"format": "submap-frontier-events", "version": 1, "resolution": ..., "n_scans": ..., "blob": "events.jsonl.bin"}
    {"type": "scan", "epoch": 0, "poses": [[id, x, y, theta], ...], "submaps": [{...grid record..., "blob": [offset, length]}]}
    {"type": "finished", "epoch": 0, "id": 3}
    {"type": "optimized", "epoch": 1, "poses": [[id, x, y, theta], ...]}
    {"type": "end", "count": 3}

Grid storage goes into the sidecar as row-major little-endian uint16.  The
closing ``end`` record lets readers tell a complete log from a truncated one.
"""

from __future__ import annotations

import json
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

from .events import Event, OptimizationDone, PoseGraphSolution, ScanInserted, SubmapFinished
from .geometry import RigidTransform2
from .grid import Submap

FORMAT_NAME = "submap-frontier-events"
FORMAT_VERSION = 1


class EventLogError(ValueError):
    """Malformed or truncated log; ``record`` is the 0-based line index."""

    def __init__(self, record: int, message: str):
        super().__init__(f"record {record}: {message}")
        self.record = record


@dataclass(frozen=True)
class LogHeader:
    resolution: float
    n_scans: int
    version: int = FORMAT_VERSION


def _blob_path(path: Path) -> Path:
    return path.with_name(path.name + ".bin")


def _poses_record(poses) -> list:
    return [[int(i), *p.as_tuple()] for i, p in sorted(poses.items())]


def _poses_from(record: list) -> dict[int, RigidTransform2]:
    return {int(i): RigidTransform2(x, y, theta) for i, x, y, theta in record}


class EventLogWriter:
    """Incremental writer; use as a context manager."""

    def __init__(self, path: str | os.PathLike, resolution: float, n_scans: int):
        self.path = Path(path)
        self._lines = open(self.path, "w", encoding="utf-8")
        self._blob = open(_blob_path(self.path), "wb")
        self._offset = 0
        self.count = 0
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "resolution": resolution,
            "n_scans": n_scans,
            "blob": _blob_path(self.path).name,
        }
        self._write(header)

    def _write(self, record: dict) -> None:
        self._lines.write(json.dumps(record, separators=(",", ":")) + "\n")

    def _grid(self, submap: Submap) -> dict:
        payload = submap.storage_bytes()
        self._blob.write(payload)
        record = submap.to_record()
        record["blob"] = [self._offset, len(payload)]
        self._offset += len(payload)
        return record

    def write(self, event: Event) -> None:
        if isinstance(event, ScanInserted):
            record = {
                "type": "scan",
                "epoch": event.epoch,
                "poses": _poses_record(event.poses),
                "submaps": [self._grid(s) for s in event.submaps],
            }
        elif isinstance(event, SubmapFinished):
            record = {"type": "finished", "epoch": event.epoch, "id": event.submap_id}
        elif isinstance(event, OptimizationDone):
            record = {"type": "optimized", "epoch": event.epoch,
                      "poses": _poses_record(event.solution.poses)}
        else:
            raise TypeError(f"not an event: {event!r}")
        self._write(record)
        self.count += 1

    def close(self) -> None:
        if self._lines.closed:
            return
        self._write({"type": "end", "count": self.count})
        self._lines.close()
        self._blob.close()

    def __enter__(self) -> EventLogWriter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_event_log(events: Iterable[Event], path: str | os.PathLike,
                    resolution: float, n_scans: int) -> int:
    """Write a complete log; returns the number of events written."""
    with EventLogWriter(path, resolution, n_scans) as writer:
        for event in events:
            writer.write(event)
    return writer.count


def _decode(index: int, record: dict, blob: bytes) -> Event:
    kind = record.get("type")
    epoch = record.get("epoch")
    if not isinstance(epoch, int):
        raise EventLogError(index, "missing epoch")
    if kind == "scan":
        submaps = []
        for grid in record["submaps"]:
            offset, length = grid["blob"]
            if offset < 0 or offset + length > len(blob):
                raise EventLogError(index, "grid payload lies outside the sidecar blob")
            submaps.append(Submap.from_record(grid, blob[offset:offset + length]))
        return ScanInserted(tuple(submaps), _poses_from(record["poses"]), epoch)
    if kind == "finished":
        return SubmapFinished(int(record["id"]), epoch)
    if kind == "optimized":
        return OptimizationDone(PoseGraphSolution(_poses_from(record["poses"]), epoch))
    raise EventLogError(index, f"unknown record type {kind!r}")


def iter_event_log(path: str | os.PathLike) -> tuple[LogHeader, Iterator[Event]]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise EventLogError(0, f"not a text log: {exc}") from None
    if not lines:
        raise EventLogError(0, "empty file, header missing")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise EventLogError(0, f"bad header: {exc}") from None
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise EventLogError(0, "not a submap frontier event log")
    if head.get("version") != FORMAT_VERSION:
        raise EventLogError(0, f"unsupported version {head.get('version')}")
    header = LogHeader(float(head["resolution"]), int(head["n_scans"]), head["version"])
    blob_file = path.with_name(head.get("blob", _blob_path(path).name))
    blob = blob_file.read_bytes() if blob_file.exists() else b""

    def events() -> Iterator[Event]:
        count = 0
        for index, line in enumerate(lines[1:], start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EventLogError(index, f"unparseable line: {exc}") from None
            if not isinstance(record, dict):
                raise EventLogError(index, "record is not an object")
            if record.get("type") == "end":
                if record.get("count") != count:
                    raise EventLogError(index, f"end record says {record.get('count')} events, found {count}")
                if index != len(lines) - 1:
                    raise EventLogError(index + 1, "data after end record")
                return
            try:
                event = _decode(index, record, blob)
            except EventLogError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise EventLogError(index, f"malformed {record.get('type')} record: {exc}") from None
            count += 1
            yield event
        raise EventLogError(len(lines), "log is truncated (no end record)")

    return header, events()


def read_event_log(path: str | os.PathLike) -> tuple[LogHeader, list[Event]]:
    header, events = iter_event_log(path)
    return header, list(events)


def event_record(event: Event) -> dict:
    """Plain-data view of an event, grids included; handy for equality checks."""
    if isinstance(event, ScanInserted):
        return {
            "type": "scan",
            "epoch": event.epoch,
            "poses": _poses_record(event.poses),
            "submaps": [{**s.to_record(), "storage": s.storage_bytes()} for s in event.submaps],
        }
    if isinstance(event, SubmapFinished):
        return {"type": "finished", "epoch": event.epoch, "id": event.submap_id}
    return {"type": "optimized", "epoch": event.epoch, "poses": _poses_record(event.solution.poses)}
