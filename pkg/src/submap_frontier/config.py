"""Run configuration shared by the CLI commands."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

from .frontier import SKIP_POLICIES, DetectorConfig
from .grid import DEFAULT_N_SCANS, DEFAULT_RESOLUTION
from .harness import (
    CORRECTION_POLICIES,
    INSERTION_MODES,
    BuilderConfig,
    DriftModel,
    EnvironmentSpec,
    LidarConfig,
    ScenarioConfig,
)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    resolution: float = DEFAULT_RESOLUTION
    n_scans: int = DEFAULT_N_SCANS
    epsilon: float = 0.04
    smoothing: bool = False
    baking: int = 4
    skip: str = "adaptive"
    optimize_every: int = 3
    correction: str = "snap"
    insertion: str = "odometry"
    seed: int = 0
    drift_seed: int = 0
    steps: int | None = None
    laps: float = 1.0
    step_length: float = 0.15
    verification: bool = False
    oracle_every: int = 1
    final_optimization: bool = True
    environment: EnvironmentSpec = field(default_factory=EnvironmentSpec)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    drift: DriftModel = field(default_factory=DriftModel)

    def validate(self) -> RunConfig:
        checks = [
            (self.resolution > 0 and math.isfinite(self.resolution), "resolution must be positive"),
            (self.n_scans >= 2, "n_scans must be at least 2"),
            (0.0 <= self.epsilon < 0.4, "epsilon must be in [0, 0.4)"),
            (self.baking >= 0, "baking must be non-negative"),
            (self.skip in SKIP_POLICIES, f"skip must be one of {SKIP_POLICIES}"),
            (self.optimize_every >= 0, "optimize_every must be non-negative"),
            (self.correction in CORRECTION_POLICIES, f"correction must be one of {CORRECTION_POLICIES}"),
            (self.insertion in INSERTION_MODES, f"insertion must be one of {INSERTION_MODES}"),
            (self.steps is None or self.steps >= 0, "steps must be non-negative"),
            (self.laps > 0, "laps must be positive"),
            (0 < self.step_length <= 0.2, "step_length must be in (0, 0.2]"),
            (self.oracle_every >= 1, "oracle_every must be at least 1"),
            (self.lidar.n_beams >= 1 and self.lidar.max_range > 0, "lidar needs beams and range"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self

    def detector_config(self) -> DetectorConfig:
        if self.verification:
            return DetectorConfig.verification()
        return DetectorConfig(self.epsilon, self.smoothing, self.baking)

    def scenario(self) -> ScenarioConfig:
        env = dataclasses.replace(self.environment, resolution=self.resolution)
        drift = dataclasses.replace(self.drift, seed=self.drift_seed)
        builder = BuilderConfig(
            resolution=self.resolution,
            n_scans=self.n_scans,
            optimize_every=self.optimize_every,
            correction=self.correction,
            insertion=self.insertion,
        )
        return ScenarioConfig(
            environment=env,
            seed=self.seed,
            step=self.step_length,
            laps=self.laps,
            n_steps=self.steps,
            lidar=self.lidar,
            drift=drift,
            builder=builder,
            final_optimization=self.final_optimization,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        data = dict(data)
        nested = {"environment": EnvironmentSpec, "lidar": LidarConfig, "drift": DriftModel}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, kind in nested.items():
            if key in data:
                if not isinstance(data[key], dict):
                    raise ConfigError(f"bad {key} section")
                sub = dict(data[key])
                sub_known = {f.name for f in dataclasses.fields(kind)}
                if set(sub) - sub_known:
                    raise ConfigError(f"unknown keys in {key}: {sorted(set(sub) - sub_known)}")
                for name in ("bias", "sigma"):
                    if name in sub:
                        sub[name] = tuple(sub[name])
                data[key] = kind(**sub)
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> RunConfig:
        with open(path, encoding="utf-8") as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
