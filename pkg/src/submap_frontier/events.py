"""SLAM events consumed by the frontier detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from .geometry import RigidTransform2
from .grid import Submap


@dataclass(frozen=True)
class PoseGraphSolution:
    """Global submap poses produced by one pose-graph optimization."""

    poses: dict[int, RigidTransform2]
    epoch: int


@dataclass(frozen=True)
class ScanInserted:
    """A scan went into the active submaps; carries immutable snapshots."""

    submaps: tuple[Submap, ...]
    poses: dict[int, RigidTransform2]
    epoch: int = 0

    @property
    def has_final_update(self) -> bool:
        return any(s.finished for s in self.submaps)


@dataclass(frozen=True)
class SubmapFinished:
    submap_id: int
    epoch: int = 0


@dataclass(frozen=True)
class OptimizationDone:
    solution: PoseGraphSolution = field(default_factory=lambda: PoseGraphSolution({}, 0))

    @property
    def epoch(self) -> int:
        return self.solution.epoch


Event = Union[ScanInserted, SubmapFinished, OptimizationDone]


class MalformedEventError(ValueError):
    pass
