"""Scenario configuration: defaults, validation, file parsing, canonical hashing.

Scenario files are flat key/value text: one ``key = value`` per line,
``#`` comments, keys matching the ScenarioConfig field names. Pairs and
position lists are space-separated numbers, e.g.::

    grid = 1000 1000
    speed_range = 15 45
    rsu_positions = 500 500
    attacker_profile = false-warning

Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Invalid scenario configuration or run specification."""


ATTACKER_PROFILES = ("false-warning", "conflicting-info", "far-event-claim")
PIPELINES = ("irs", "accept-all")


@dataclass
class ScenarioConfig:
    """One experiment's parameters. Defaults describe the stock highway scenario."""

    grid: tuple[float, float] = (1000.0, 1000.0)
    duration: float = 300.0
    vehicle_count: int = 100
    attacker_count: int = 0
    attacker_profile: str = "false-warning"
    attacker_rate: float = 0.08  # attacks per attacker per second
    lanes_per_direction: int = 3
    speed_range: tuple[float, float] = (15.0, 45.0)
    transmission_range: float = 300.0
    delivery_loss_probability: float = 0.05
    beacon_interval: tuple[float, float] = (0.1, 0.1)
    rsu_positions: tuple[tuple[float, float], ...] = ((500.0, 500.0),)
    rsu_coverage_radius: float = 440.0
    seed: int = 0
    pending_ttl: float = 2.0
    neighbor_ttl: float = 1.5
    suspicion_ttl: float = 30.0
    broadcast_period: float = 1.0
    rrl_request_period: float = 1.0
    event_rate_per_min: float = 18.0  # true hazards per minute
    sensing_radius: float = 300.0
    witness_count: int = 3
    warning_jitter: float = 0.5
    ranging_noise_sigma: float = 5.0
    ranging_noise_per_meter: float = 0.25  # ranging error growth with range
    corroboration_tolerance_m: float = 20.0
    initial_points: int = 5
    # Ledger-only anchor entries in the roadside unit's initial ledger:
    # long-standing trusted agents and already-confirmed misbehavers. They
    # pin the relative band geometry to the full points scale.
    trusted_anchors: int = 2
    flagged_anchors: int = 2
    anchor_top_points: int = 13
    anchor_low_points: int = 1
    strict_top_heuristic: bool = False

    def validate(self) -> None:
        def positive(name: str, value: float) -> None:
            if value <= 0:
                raise ConfigError(f"{name} must be > 0, got {value!r}")

        def non_negative(name: str, value: float) -> None:
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value!r}")

        positive("grid width", self.grid[0])
        positive("grid height", self.grid[1])
        non_negative("duration", self.duration)
        non_negative("vehicle_count", self.vehicle_count)
        non_negative("attacker_count", self.attacker_count)
        if self.attacker_count > self.vehicle_count:
            raise ConfigError(
                f"attacker_count ({self.attacker_count}) must be <= vehicle_count ({self.vehicle_count})"
            )
        if self.attacker_profile not in ATTACKER_PROFILES:
            raise ConfigError(
                f"attacker_profile must be one of {ATTACKER_PROFILES}, got {self.attacker_profile!r}"
            )
        non_negative("attacker_rate", self.attacker_rate)
        positive("lanes_per_direction", self.lanes_per_direction)
        if not 0 < self.speed_range[0] <= self.speed_range[1]:
            raise ConfigError(f"speed_range must satisfy 0 < min <= max, got {self.speed_range!r}")
        positive("transmission_range", self.transmission_range)
        if not 0.0 <= self.delivery_loss_probability <= 1.0:
            raise ConfigError(
                f"delivery_loss_probability must be in [0, 1], got {self.delivery_loss_probability!r}"
            )
        if not 0 < self.beacon_interval[0] <= self.beacon_interval[1]:
            raise ConfigError(f"beacon_interval must satisfy 0 < min <= max, got {self.beacon_interval!r}")
        for pos in self.rsu_positions:
            if not (0 <= pos[0] <= self.grid[0] and 0 <= pos[1] <= self.grid[1]):
                raise ConfigError(f"rsu_positions entry {pos!r} outside the grid")
        positive("rsu_coverage_radius", self.rsu_coverage_radius)
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed!r}")
        positive("pending_ttl", self.pending_ttl)
        positive("neighbor_ttl", self.neighbor_ttl)
        positive("suspicion_ttl", self.suspicion_ttl)
        positive("broadcast_period", self.broadcast_period)
        positive("rrl_request_period", self.rrl_request_period)
        non_negative("event_rate_per_min", self.event_rate_per_min)
        positive("sensing_radius", self.sensing_radius)
        non_negative("witness_count", self.witness_count)
        non_negative("warning_jitter", self.warning_jitter)
        non_negative("ranging_noise_sigma", self.ranging_noise_sigma)
        non_negative("ranging_noise_per_meter", self.ranging_noise_per_meter)
        non_negative("corroboration_tolerance_m", self.corroboration_tolerance_m)
        non_negative("initial_points", self.initial_points)
        non_negative("trusted_anchors", self.trusted_anchors)
        non_negative("flagged_anchors", self.flagged_anchors)
        non_negative("anchor_top_points", self.anchor_top_points)
        non_negative("anchor_low_points", self.anchor_low_points)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["grid"] = list(self.grid)
        out["speed_range"] = list(self.speed_range)
        out["beacon_interval"] = list(self.beacon_interval)
        out["rsu_positions"] = [list(p) for p in self.rsu_positions]
        return out

    def canonical_hash(self) -> str:
        """Seed-independent digest identifying the scenario."""
        payload = self.to_dict()
        payload.pop("seed")
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


_INT_FIELDS = {
    "vehicle_count",
    "attacker_count",
    "lanes_per_direction",
    "seed",
    "witness_count",
    "initial_points",
    "trusted_anchors",
    "flagged_anchors",
    "anchor_top_points",
    "anchor_low_points",
}
_FLOAT_FIELDS = {
    "duration",
    "attacker_rate",
    "transmission_range",
    "delivery_loss_probability",
    "rsu_coverage_radius",
    "pending_ttl",
    "neighbor_ttl",
    "suspicion_ttl",
    "broadcast_period",
    "rrl_request_period",
    "event_rate_per_min",
    "sensing_radius",
    "warning_jitter",
    "ranging_noise_sigma",
    "ranging_noise_per_meter",
    "corroboration_tolerance_m",
}
_PAIR_FIELDS = {"grid", "speed_range", "beacon_interval"}
_STR_FIELDS = {"attacker_profile"}
_BOOL_FIELDS = {"strict_top_heuristic"}


def parse_scenario_text(text: str, source: str = "<scenario>") -> dict:
    """Parse scenario key/value text into a field-override mapping."""
    overrides: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            overrides[key] = _parse_value(key, value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
    return overrides


def _parse_value(key: str, value: str):
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    if key in _STR_FIELDS:
        return value
    if key in _BOOL_FIELDS:
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected boolean, got {value!r}")
    if key in _PAIR_FIELDS:
        parts = [float(p) for p in value.split()]
        if len(parts) != 2:
            raise ValueError(f"expected two numbers, got {value!r}")
        return (parts[0], parts[1])
    if key == "rsu_positions":
        parts = [float(p) for p in value.split()]
        if not parts or len(parts) % 2:
            raise ValueError(f"expected an even number of coordinates, got {value!r}")
        return tuple((parts[i], parts[i + 1]) for i in range(0, len(parts), 2))
    raise ConfigError(f"unknown scenario field: {key}")


def load_scenario_file(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    return parse_scenario_text(path.read_text(encoding="utf-8"), source=str(path))


def make_config(overrides: dict) -> ScenarioConfig:
    """Build and validate a config from field overrides on top of defaults."""
    valid = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(overrides) - valid
    if unknown:
        raise ConfigError(f"unknown scenario field: {sorted(unknown)[0]}")
    config = ScenarioConfig(**overrides)
    config.validate()
    return config
