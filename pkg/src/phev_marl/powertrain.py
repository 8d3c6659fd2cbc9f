"""Quasi-static energy-flow model of the multi-mode hybrid powertrain.

Conventions: powers in W, torques in N*m, shaft speeds in rpm, SoC as a
fraction.  Wheel torque demand is referred to the wheels; component torques
are shaft torques and reach the wheels through ``ratio_i1`` (engine/MG1 path)
and ``ratio_i2`` (MG2 path).  MG1 torque is positive when generating.
"""

from __future__ import annotations

import bisect
import dataclasses
import enum
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from .maps import (
    DEFAULT_HEAT_VALUE,
    ConfigurationError,
    Map2D,
    default_fuel_map,
    default_motor_map,
    fuel_optimal_line,
    lookup2d,
    mech_power_w,
)

RPM_PER_RAD_S = 60.0 / (2.0 * math.pi)


class ModelValidationError(RuntimeError):
    """The physical model produced an impossible result (e.g. efficiency > 1)."""


class PowerLimitExceeded(ModelValidationError):
    """Battery discharge power beyond U^2 / (4 R_int)."""


class Mode(str, enum.Enum):
    SERIES = "Series"
    PARALLEL = "Parallel"
    REGEN = "RegenBrake"


@dataclass(frozen=True)
class VehicleConfig:
    mass_kg: float = 1500.0
    gravity: float = 9.81
    rolling_coeff: float = 0.015
    air_density: float = 1.206
    frontal_area: float = 2.2
    drag_coeff: float = 0.30
    wheel_radius: float = 0.31
    ratio_i1: float = 3.0
    ratio_i2: float = 4.0
    t_mot1_max: float = 120.0
    t_mot2_max: float = 250.0
    t_eng_max: float = 150.0
    engine_speed_range: tuple[float, float] = (800.0, 5000.0)

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if f.name == "engine_speed_range":
                continue
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigurationError(f"{f.name} must be a positive finite number, got {value!r}")
        lo, hi = self.engine_speed_range
        if not 0 < lo < hi:
            raise ConfigurationError(f"engine_speed_range must satisfy 0 < min < max, got {self.engine_speed_range!r}")
        object.__setattr__(self, "engine_speed_range", (float(lo), float(hi)))

    @classmethod
    def from_dict(cls, data: dict) -> "VehicleConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown vehicle config key(s): {', '.join(unknown)}")
        data = dict(data)
        if "engine_speed_range" in data:
            data["engine_speed_range"] = tuple(data["engine_speed_range"])
        return cls(**data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["engine_speed_range"] = list(self.engine_speed_range)
        return d

    @classmethod
    def load(cls, path) -> "VehicleConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"vehicle config not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def wheel_rpm(self, v: float) -> float:
        return v / self.wheel_radius * RPM_PER_RAD_S


@dataclass(frozen=True)
class EngineSpec:
    fuel_map: Map2D
    optimal_line: tuple[tuple[float, float], ...]
    heat_value: float = DEFAULT_HEAT_VALUE

    def __post_init__(self):
        if len(self.optimal_line) < 2:
            raise ConfigurationError("optimal_line needs at least two points")
        powers = [p for p, _ in self.optimal_line]
        if any(b <= a for a, b in zip(powers, powers[1:])):
            raise ConfigurationError("optimal_line powers must be strictly increasing")
        if min(min(row) for row in self.fuel_map.values) < 0:
            raise ConfigurationError("fuel map has negative fuel rates")


@dataclass(frozen=True)
class MotorSpec:
    efficiency_map: Map2D
    torque_max: float
    speed_max: float

    def __post_init__(self):
        flat = [v for row in self.efficiency_map.values for v in row]
        if min(flat) <= 0 or max(flat) > 1:
            raise ConfigurationError("motor efficiency must lie in (0, 1]")


@dataclass(frozen=True)
class BatterySpec:
    ocv: float = 350.0
    resistance: float = 0.15
    capacity_ah: float = 54.3
    soc_min: float = 0.20
    soc_max: float = 0.80

    def __post_init__(self):
        if self.ocv <= 0 or self.resistance <= 0 or self.capacity_ah <= 0:
            raise ConfigurationError("battery ocv, resistance and capacity must be positive")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ConfigurationError("battery SoC window must satisfy 0 <= min < max <= 1")

    @property
    def max_discharge_power(self) -> float:
        return self.ocv**2 / (4.0 * self.resistance)


@dataclass(frozen=True)
class PowertrainSpecs:
    engine: EngineSpec
    mg1: MotorSpec
    mg2: MotorSpec
    battery: BatterySpec


def default_engine_spec(cfg: VehicleConfig | None = None) -> EngineSpec:
    cfg = cfg or VehicleConfig()
    return _default_engine(cfg.t_eng_max, *cfg.engine_speed_range)


@lru_cache(maxsize=8)
def _default_engine(t_max, n_min, n_max) -> EngineSpec:
    fuel_map = default_fuel_map(t_max, n_max)
    return EngineSpec(fuel_map, fuel_optimal_line(fuel_map, n_min, n_max, t_max))


def default_specs(cfg: VehicleConfig | None = None, battery: BatterySpec | None = None) -> PowertrainSpecs:
    cfg = cfg or VehicleConfig()
    return PowertrainSpecs(
        engine=default_engine_spec(cfg),
        mg1=MotorSpec(default_motor_map(cfg.t_mot1_max), cfg.t_mot1_max, 10000.0),
        mg2=MotorSpec(default_motor_map(cfg.t_mot2_max), cfg.t_mot2_max, 10000.0),
        battery=battery or BatterySpec(),
    )


@dataclass(frozen=True)
class PowertrainState:
    time_s: float = 0.0
    speed_mps: float = 0.0
    accel_mps2: float = 0.0
    grade_rad: float = 0.0
    soc: float = 0.5
    mode: Mode = Mode.SERIES
    n_eng: float = 0.0
    n_mot1: float = 0.0
    n_mot2: float = 0.0
    T_eng: float = 0.0
    T_mot1: float = 0.0
    T_mot2: float = 0.0
    P_eng: float = 0.0
    P_mot1: float = 0.0
    P_mot2: float = 0.0
    P_batt: float = 0.0
    I_batt: float = 0.0
    fuel_rate: float = 0.0
    cumulative_fuel: float = 0.0
    loss_eng: float = 0.0
    loss_batt: float = 0.0
    P_loss: float = 0.0
    T_dem: float = 0.0
    T_dem_served: float = 0.0
    T_brake: float = 0.0
    infeasible: bool = False


# -- component submodels --------------------------------------------------

def demand(v: float, a: float, grade: float, cfg: VehicleConfig) -> tuple[float, float, float]:
    """Force, power and wheel torque demand; grade enters as m*g*grade."""
    if v < 0:
        raise ValueError(f"vehicle speed must be non-negative, got {v}")
    m, g = cfg.mass_kg, cfg.gravity
    f_dem = (
        m * g * cfg.rolling_coeff
        + 0.5 * cfg.air_density * cfg.frontal_area * cfg.drag_coeff * v * v
        + m * g * grade
        + m * a
    )
    return f_dem, f_dem * v, f_dem * cfg.wheel_radius


def engine_fuel_rate(n_eng: float, t_eng: float, spec: EngineSpec) -> float:
    if n_eng == 0.0 and t_eng == 0.0:
        return 0.0
    return lookup2d(spec.fuel_map, n_eng, t_eng)


def engine_loss(fuel_rate: float, n_eng: float, t_eng: float, heat_value: float = DEFAULT_HEAT_VALUE) -> float:
    """Fuel chemical power minus shaft power, in W."""
    if fuel_rate < 0:
        raise ValueError(f"fuel rate must be non-negative, got {fuel_rate}")
    loss = fuel_rate / 1000.0 * heat_value - mech_power_w(n_eng, t_eng)
    if loss < -1e-9 * max(1.0, abs(loss)):
        raise ModelValidationError(
            f"negative engine loss {loss:.3f} W at n={n_eng} rpm, T={t_eng} N*m: fuel map implies efficiency > 1"
        )
    return max(loss, 0.0)


def mg1_power(n: float, torque: float, spec: MotorSpec) -> float:
    """Electrical output of MG1 acting as generator (mechanical input times efficiency)."""
    if torque == 0.0:
        return 0.0
    return mech_power_w(n, torque) * lookup2d(spec.efficiency_map, n, torque)


def mg2_power(n: float, torque: float, spec: MotorSpec) -> float:
    """Electrical power drawn by MG2; negative while regenerating."""
    if torque == 0.0:
        return 0.0
    eta = lookup2d(spec.efficiency_map, n, abs(torque))
    if eta <= 0:
        raise ConfigurationError(f"MG2 efficiency map is zero at n={n}, T={torque}")
    mech = mech_power_w(n, torque)
    return mech / eta if torque > 0 else mech * eta


def battery_step(p_batt: float, soc: float, dt: float, spec: BatterySpec) -> tuple[float, float, float]:
    """Solve U*I - R*I^2 = P for the current; returns (I, soc_next, loss)."""
    u, r = spec.ocv, spec.resistance
    disc = u * u - 4.0 * r * p_batt
    if disc < 0:
        raise PowerLimitExceeded(
            f"battery power {p_batt:.1f} W exceeds the limit {spec.max_discharge_power:.1f} W"
        )
    root = math.sqrt(disc)
    # rationalised root avoids cancellation for small |P|
    current = 2.0 * p_batt / (u + root)
    soc_next = soc - current * dt / (spec.capacity_ah * 3600.0)
    return current, soc_next, r * current * current


def optimal_engine_speed(p_req: float, spec: EngineSpec) -> float:
    """Engine speed on the optimal operating line for a power request (0 when off)."""
    if p_req < 0:
        raise ValueError(f"engine power request must be non-negative, got {p_req}")
    if p_req == 0:
        return 0.0
    powers = [p for p, _ in spec.optimal_line]
    speeds = [n for _, n in spec.optimal_line]
    if p_req >= powers[-1]:
        return speeds[-1]
    if p_req <= powers[0]:
        return speeds[0]
    i = bisect.bisect_right(powers, p_req) - 1
    w = (p_req - powers[i]) / (powers[i + 1] - powers[i])
    return speeds[i] + w * (speeds[i + 1] - speeds[i])


def series_engine_speed(torque: float, spec: EngineSpec) -> float:
    """Speed n with n = optimal_engine_speed(P(n, torque)) for a fixed shaft torque."""
    if torque <= 0:
        return 0.0
    speeds = [n for _, n in spec.optimal_line]
    lo, hi = min(speeds), max(speeds)

    def excess(n):
        return optimal_engine_speed(mech_power_w(n, torque), spec) - n

    if excess(lo) <= 0:
        return lo
    if excess(hi) >= 0:
        return hi
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def power_loss(state: PowertrainState) -> float:
    return state.loss_eng + state.loss_batt


# -- per-mode energy flow -------------------------------------------------

def _finish(
    prev: PowertrainState,
    *,
    v: float,
    a: float,
    grade: float,
    dt: float,
    mode: Mode,
    n_eng: float,
    n_mot2: float,
    t_eng: float,
    t_mot1: float,
    t_mot2: float,
    t_dem: float,
    t_served: float,
    t_brake: float,
    infeasible: bool,
    specs: PowertrainSpecs,
) -> PowertrainState:
    p_eng = mech_power_w(n_eng, t_eng)
    p_mot1 = mg1_power(n_eng, t_mot1, specs.mg1)
    p_mot2 = mg2_power(n_mot2, t_mot2, specs.mg2)
    p_batt = p_mot2 - p_mot1
    p_limit = specs.battery.max_discharge_power
    if p_batt > p_limit:
        p_batt = p_limit
        infeasible = True
    current, soc_next, loss_batt = battery_step(p_batt, prev.soc, dt, specs.battery)
    fuel_rate = engine_fuel_rate(n_eng, t_eng, specs.engine) if t_eng > 0 else 0.0
    loss_eng = engine_loss(fuel_rate, n_eng, t_eng, specs.engine.heat_value)
    return PowertrainState(
        time_s=prev.time_s + dt,
        speed_mps=v,
        accel_mps2=a,
        grade_rad=grade,
        soc=soc_next,
        mode=mode,
        n_eng=n_eng,
        n_mot1=n_eng,
        n_mot2=n_mot2,
        T_eng=t_eng,
        T_mot1=t_mot1,
        T_mot2=t_mot2,
        P_eng=p_eng,
        P_mot1=p_mot1,
        P_mot2=p_mot2,
        P_batt=p_batt,
        I_batt=current,
        fuel_rate=fuel_rate,
        cumulative_fuel=prev.cumulative_fuel + fuel_rate * dt,
        loss_eng=loss_eng,
        loss_batt=loss_batt,
        P_loss=loss_eng + loss_batt,
        T_dem=t_dem,
        T_dem_served=t_served,
        T_brake=t_brake,
        infeasible=infeasible,
    )


def step_series(
    t_dem: float,
    u_mot1: float,
    v: float,
    state: PowertrainState,
    cfg: VehicleConfig,
    specs: PowertrainSpecs,
    dt: float = 1.0,
    a: float = 0.0,
    grade: float = 0.0,
    regen: bool = False,
) -> PowertrainState:
    """Clutch open: MG2 alone drives the wheels, engine+MG1 generate.

    With ``regen`` the step is a braking step: MG2 recovers up to its torque
    limit and friction brakes take the remainder without an infeasibility flag.
    """
    infeasible = False
    t_mot2 = t_dem / cfg.ratio_i2
    t_brake = 0.0
    if t_mot2 > cfg.t_mot2_max:
        t_mot2 = cfg.t_mot2_max
        infeasible = True
    elif t_mot2 < -cfg.t_mot2_max:
        t_mot2 = -cfg.t_mot2_max
        if not regen:
            infeasible = True
    t_served = cfg.ratio_i2 * t_mot2
    if regen:
        t_brake = t_dem - t_served
        t_served = t_dem
    t_mot1 = min(max(u_mot1, 0.0), 1.0) * cfg.t_mot1_max
    n_eng = series_engine_speed(t_mot1, specs.engine) if t_mot1 > 0 else 0.0
    return _finish(
        state,
        v=v,
        a=a,
        grade=grade,
        dt=dt,
        mode=Mode.REGEN if regen else Mode.SERIES,
        n_eng=n_eng,
        n_mot2=cfg.wheel_rpm(v) * cfg.ratio_i2,
        t_eng=t_mot1,
        t_mot1=t_mot1,
        t_mot2=t_mot2,
        t_dem=t_dem,
        t_served=t_served,
        t_brake=t_brake,
        infeasible=infeasible,
        specs=specs,
    )


def step_parallel(
    t_dem: float,
    u_mot1: float,
    u_mot2: float,
    v: float,
    state: PowertrainState,
    cfg: VehicleConfig,
    specs: PowertrainSpecs,
    dt: float = 1.0,
    a: float = 0.0,
    grade: float = 0.0,
) -> PowertrainState:
    """Clutch closed: engine torque net of MG1 reaches the wheels beside MG2.

    The commanded split is rebalanced (and flagged) when the engine cannot run
    at the clutch-locked speed or a component limit is hit; MG2 always closes
    the wheel torque balance within its own limit.
    """
    i1, i2 = cfg.ratio_i1, cfg.ratio_i2
    n_eng = cfg.wheel_rpm(v) * i1
    n_mot2 = cfg.wheel_rpm(v) * i2
    t_mot1 = min(max(u_mot1, 0.0), 1.0) * cfg.t_mot1_max
    t_mot2 = min(max(u_mot2, -1.0), 1.0) * cfg.t_mot2_max
    t_gb = (t_dem - i2 * t_mot2) / i1
    t_eng = t_mot1 + t_gb
    infeasible = False

    n_lo, n_hi = cfg.engine_speed_range
    if not n_lo <= n_eng <= n_hi or t_eng < 0:
        # engine cannot deliver: fuel cut, MG1 idle, MG2 takes the full demand
        t_eng = t_mot1 = 0.0
        t_mot2 = t_dem / i2
        infeasible = True
    elif t_eng > cfg.t_eng_max:
        t_mot1 = max(0.0, cfg.t_eng_max - t_gb)
        t_eng = min(t_mot1 + t_gb, cfg.t_eng_max)
        if t_gb > cfg.t_eng_max:
            t_mot2 = (t_dem - i1 * (t_eng - t_mot1)) / i2
            infeasible = True
    if abs(t_mot2) > cfg.t_mot2_max:
        t_mot2 = math.copysign(cfg.t_mot2_max, t_mot2)
        infeasible = True

    return _finish(
        state,
        v=v,
        a=a,
        grade=grade,
        dt=dt,
        mode=Mode.PARALLEL,
        n_eng=n_eng,
        n_mot2=n_mot2,
        t_eng=t_eng,
        t_mot1=t_mot1,
        t_mot2=t_mot2,
        t_dem=t_dem,
        t_served=i1 * (t_eng - t_mot1) + i2 * t_mot2,
        t_brake=0.0,
        infeasible=infeasible,
        specs=specs,
    )
