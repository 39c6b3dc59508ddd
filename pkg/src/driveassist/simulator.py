"""Deterministic kinematic ego vehicle and world scene.

First-order lag dynamics toward the cruise target: each tick moves speed by
gain * (target - speed) * dt, clamped to [0, max]. With cruise control
disabled the vehicle coasts toward 0 with the same gain. Good enough to make
the closed loop observable; not a physics model.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from enum import Enum

MPH_TO_MPS = 0.44704


class OutOfRange(Exception):
    """Commanded speed outside the vehicle's allowed range."""


class SimulatorUnavailable(Exception):
    """Telemetry could not be read."""


class RoadType(Enum):
    HIGHWAY = "highway"
    DOWNTOWN = "downtown"


class Weather(Enum):
    CLEAR = "clear"
    RAINY = "rainy"
    FOGGY = "foggy"


class Traffic(Enum):
    LIGHT = "light"
    MODERATE = "moderate"
    HEAVY = "heavy"


@dataclass(frozen=True, slots=True)
class WorldScene:
    road_type: RoadType
    weather: Weather
    traffic: Traffic


def scene_from_strings(road_type: str, weather: str, traffic: str) -> WorldScene:
    """Build a scene from plain strings; raises ValueError on unknown values."""
    return WorldScene(RoadType(road_type), Weather(weather), Traffic(traffic))


@dataclass(frozen=True, slots=True)
class EgoState:
    speed_mph: float
    target_speed_mph: float
    odometer_m: float = 0.0
    acc_enabled: bool = True
    sim_time_s: float = 0.0

    def __post_init__(self) -> None:
        if self.speed_mph < 0 or self.target_speed_mph < 0:
            raise ValueError("speeds must be >= 0")
        if self.odometer_m < 0 or self.sim_time_s < 0:
            raise ValueError("odometer and sim time must be >= 0")


@dataclass(frozen=True, slots=True)
class SimConfig:
    tick_dt_s: float = 0.05
    accel_gain_per_s: float = 0.5
    max_speed_mph: float = 85.0

    def __post_init__(self) -> None:
        if not 0 < self.tick_dt_s <= 1:
            raise ValueError("tick_dt_s must be in (0, 1]")
        if self.accel_gain_per_s <= 0:
            raise ValueError("accel_gain_per_s must be > 0")
        if self.max_speed_mph <= 0:
            raise ValueError("max_speed_mph must be > 0")


@dataclass(frozen=True, slots=True)
class Telemetry:
    """Immutable vehicle/world snapshot streamed to clients."""

    speed_mph: float
    target_speed_mph: float
    acc_enabled: bool
    road_type: RoadType
    weather: Weather
    traffic: Traffic
    sim_time_s: float

    def as_payload(self) -> dict:
        return {
            "speed_mph": self.speed_mph,
            "target_speed_mph": self.target_speed_mph,
            "acc_enabled": self.acc_enabled,
            "road_type": self.road_type.value,
            "weather": self.weather.value,
            "traffic": self.traffic.value,
            "sim_time_s": self.sim_time_s,
        }


def tick(state: EgoState, config: SimConfig) -> EgoState:
    """Advance one timestep of first-order lag toward the effective target."""
    target = state.target_speed_mph if state.acc_enabled else 0.0
    speed = state.speed_mph + config.accel_gain_per_s * (target - state.speed_mph) * config.tick_dt_s
    speed = min(max(speed, 0.0), config.max_speed_mph)
    return EgoState(
        speed_mph=speed,
        target_speed_mph=state.target_speed_mph,
        odometer_m=state.odometer_m + state.speed_mph * MPH_TO_MPS * config.tick_dt_s,
        acc_enabled=state.acc_enabled,
        sim_time_s=state.sim_time_s + config.tick_dt_s,
    )


def apply_set_speed(state: EgoState, speed_mph: float, config: SimConfig) -> EgoState:
    """Set the cruise target and engage cruise control; current speed is untouched."""
    if not 0 <= speed_mph <= config.max_speed_mph:
        raise OutOfRange(f"speed {speed_mph} outside [0, {config.max_speed_mph}] MPH")
    return replace(state, target_speed_mph=float(speed_mph), acc_enabled=True)


def snapshot_telemetry(state: EgoState, scene: WorldScene) -> Telemetry:
    return Telemetry(
        speed_mph=state.speed_mph,
        target_speed_mph=state.target_speed_mph,
        acc_enabled=state.acc_enabled,
        road_type=scene.road_type,
        weather=scene.weather,
        traffic=scene.traffic,
        sim_time_s=state.sim_time_s,
    )


class VehicleSimulator:
    """Owns the mutable ego state behind a lock.

    Commands, ticks, and snapshots are serialized through the lock; the
    state itself is an immutable value, so readers always get a consistent
    snapshot. The vehicle starts cruising steadily at the initial speed.
    """

    def __init__(
        self,
        scene: WorldScene,
        initial_speed_mph: float = 0.0,
        config: SimConfig | None = None,
    ) -> None:
        self._config = config or SimConfig()
        if not 0 <= initial_speed_mph <= self._config.max_speed_mph:
            raise OutOfRange(f"initial speed {initial_speed_mph} outside vehicle range")
        self._scene = scene
        self._state = EgoState(
            speed_mph=float(initial_speed_mph),
            target_speed_mph=float(initial_speed_mph),
        )
        self._lock = threading.Lock()

    @property
    def config(self) -> SimConfig:
        return self._config

    @property
    def state(self) -> EgoState:
        with self._lock:
            return self._state

    @property
    def scene(self) -> WorldScene:
        with self._lock:
            return self._scene

    def set_scene(self, scene: WorldScene) -> None:
        with self._lock:
            self._scene = scene

    def set_speed(self, speed_mph: float) -> None:
        with self._lock:
            self._state = apply_set_speed(self._state, speed_mph, self._config)

    def tick_once(self) -> EgoState:
        with self._lock:
            self._state = tick(self._state, self._config)
            return self._state

    def advance(self, seconds: float) -> EgoState:
        """Run whole ticks covering the given sim-time span."""
        ticks = round(seconds / self._config.tick_dt_s)
        state = self.state
        for _ in range(ticks):
            state = self.tick_once()
        return state

    def telemetry(self) -> Telemetry:
        with self._lock:
            return snapshot_telemetry(self._state, self._scene)
