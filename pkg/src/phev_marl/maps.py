"""2-D lookup tables, their CSV format, and the default synthetic component maps.

CSV layout: optional ``#`` comment lines, then a header row whose first cell
is a label and whose remaining cells are the torque breakpoints; every body
row starts with a speed breakpoint followed by the table values.  Floats are
written with ``repr`` so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import bisect
import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RPM_NM_TO_KW = 1.0 / 9550.0

# Willans-line generator parameters for the default engine
WILLANS_ETA_IND = 0.40
FRICTION_LINEAR = 0.9      # W per rpm
FRICTION_QUADRATIC = 3.0e-4  # W per rpm^2
DEFAULT_HEAT_VALUE = 43.5e6  # J/kg

# motor efficiency bowl
MOTOR_ETA_PEAK = 0.95
MOTOR_SPEED_OPT_FRAC = 0.35
MOTOR_TORQUE_OPT_FRAC = 0.30
MOTOR_SPEED_PENALTY = 0.20
MOTOR_TORQUE_PENALTY = 0.15


class ConfigurationError(ValueError):
    """A table or configuration file is malformed."""


def mech_power_w(n_rpm: float, torque_nm: float) -> float:
    """Shaft power in watts from rpm and N*m (the 9550 rule yields kW)."""
    return n_rpm * torque_nm * RPM_NM_TO_KW * 1000.0


@dataclass(frozen=True)
class Map2D:
    """Bilinear lookup table over (speed, torque) with boundary clamping."""

    speeds: tuple[float, ...]
    torques: tuple[float, ...]
    values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        for name, axis in (("speed", self.speeds), ("torque", self.torques)):
            if len(axis) < 2:
                raise ConfigurationError(f"{name} axis needs at least 2 breakpoints")
            if any(b <= a for a, b in zip(axis, axis[1:])):
                raise ConfigurationError(f"{name} axis must be strictly increasing")
        if len(self.values) != len(self.speeds) or any(
            len(row) != len(self.torques) for row in self.values
        ):
            raise ConfigurationError("table body does not match breakpoint axes")
        if not all(math.isfinite(v) for row in self.values for v in row):
            raise ConfigurationError("table contains non-finite values")

    @classmethod
    def from_arrays(cls, speeds, torques, values) -> "Map2D":
        values = np.asarray(values, dtype=float)
        return cls(
            tuple(float(s) for s in speeds),
            tuple(float(t) for t in torques),
            tuple(tuple(float(v) for v in row) for row in values),
        )

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def __call__(self, x: float, y: float) -> float:
        return lookup2d(self, x, y)


def _bracket(axis, q):
    """Index i and weight w with q = (1-w)*axis[i] + w*axis[i+1], clamped."""
    if q <= axis[0]:
        return 0, 0.0
    if q >= axis[-1]:
        return len(axis) - 2, 1.0
    i = bisect.bisect_right(axis, q) - 1
    return i, (q - axis[i]) / (axis[i + 1] - axis[i])


def lookup2d(table: Map2D, x: float, y: float) -> float:
    """Bilinear interpolation; queries outside the grid clamp to the boundary."""
    i, wx = _bracket(table.speeds, x)
    j, wy = _bracket(table.torques, y)
    v = table.values
    lo = v[i][j] * (1.0 - wy) + v[i][j + 1] * wy
    hi = v[i + 1][j] * (1.0 - wy) + v[i + 1][j + 1] * wy
    return lo * (1.0 - wx) + hi * wx


# -- CSV -----------------------------------------------------------------

def dumps_map(table: Map2D, header: list[str] | None = None, label: str = "speed_rpm\\torque_nm") -> str:
    buf = io.StringIO()
    for line in header or []:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([label] + [repr(t) for t in table.torques])
    for s, row in zip(table.speeds, table.values):
        writer.writerow([repr(s)] + [repr(v) for v in row])
    return buf.getvalue()


def write_map(table: Map2D, path, header: list[str] | None = None) -> Path:
    path = Path(path)
    path.write_text(dumps_map(table, header))
    return path


def loads_map(text: str) -> Map2D:
    rows = [r for r in csv.reader(line for line in text.splitlines() if line.strip() and not line.startswith("#"))]
    if len(rows) < 3:
        raise ConfigurationError("map CSV needs a header row and at least two body rows")
    try:
        torques = [float(c) for c in rows[0][1:]]
        speeds = [float(r[0]) for r in rows[1:]]
        body = [[float(c) for c in r[1:]] for r in rows[1:]]
    except ValueError as exc:
        raise ConfigurationError(f"non-numeric cell in map CSV: {exc}") from None
    return Map2D.from_arrays(speeds, torques, body)


def read_map(path) -> Map2D:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"map file not found: {path}")
    return loads_map(path.read_text())


# -- default synthetic maps ---------------------------------------------

def friction_power_w(n_rpm: float) -> float:
    return FRICTION_LINEAR * n_rpm + FRICTION_QUADRATIC * n_rpm**2


def willans_fuel_rate(n_rpm: float, torque_nm: float, heat_value: float = DEFAULT_HEAT_VALUE) -> float:
    """Fuel rate in g/s: (P_mech / eta_ind + P_friction(n)) / H_f."""
    p_chem = mech_power_w(n_rpm, torque_nm) / WILLANS_ETA_IND + friction_power_w(n_rpm)
    return p_chem / heat_value * 1000.0


def default_fuel_map(t_max: float = 150.0, n_max: float = 5000.0, heat_value: float = DEFAULT_HEAT_VALUE) -> Map2D:
    speeds = np.arange(0.0, n_max + 1.0, 250.0)
    torques = np.arange(0.0, t_max + 1e-9, 10.0)
    body = [[willans_fuel_rate(s, t, heat_value) for t in torques] for s in speeds]
    return Map2D.from_arrays(speeds, torques, body)


def motor_efficiency(n_rpm: float, torque_nm: float, t_max: float, n_max: float) -> float:
    ds = (n_rpm - MOTOR_SPEED_OPT_FRAC * n_max) / n_max
    dt = (abs(torque_nm) - MOTOR_TORQUE_OPT_FRAC * t_max) / t_max
    return MOTOR_ETA_PEAK - MOTOR_SPEED_PENALTY * ds**2 - MOTOR_TORQUE_PENALTY * dt**2


def default_motor_map(t_max: float, n_max: float = 10000.0) -> Map2D:
    speeds = np.linspace(0.0, n_max, 21)
    torques = np.linspace(-t_max, t_max, 21)
    body = [[motor_efficiency(s, t, t_max, n_max) for t in torques] for s in speeds]
    return Map2D.from_arrays(speeds, torques, body)


def fuel_optimal_line(
    fuel_map: Map2D, n_min: float, n_max: float, t_max: float, points: int = 41
) -> tuple[tuple[float, float], ...]:
    """(power W, speed rpm) pairs minimising fuel rate for each power level.

    Speeds are searched on a 10 rpm grid inside the engine speed range, with
    torque capped at ``t_max``.
    """
    grid = np.arange(n_min, n_max + 1e-9, 10.0)
    p_top = mech_power_w(n_max, t_max)
    line = []
    for p in np.linspace(0.0, p_top, points):
        best_n, best_fuel = n_max, math.inf
        for n in grid:
            torque = p / mech_power_w(n, 1.0)
            if torque > t_max + 1e-9:
                continue
            fuel = lookup2d(fuel_map, n, torque)
            if fuel < best_fuel - 1e-15:
                best_n, best_fuel = float(n), fuel
        line.append((float(p), best_n))
    return tuple(line)


def provenance_lines(kind: str) -> list[str]:
    if kind == "engine":
        return [
            "default synthetic engine fuel map, values in g/s",
            "generator: m_f = (n*T/9550*1000 / eta_ind + k1*n + k2*n^2) / H_f * 1000",
            f"eta_ind={WILLANS_ETA_IND!r} k1={FRICTION_LINEAR!r} k2={FRICTION_QUADRATIC!r} H_f={DEFAULT_HEAT_VALUE!r}",
        ]
    return [
        "default synthetic motor efficiency map",
        "generator: eta = peak - ks*((n - fs*n_max)/n_max)^2 - kt*((|T| - ft*T_max)/T_max)^2",
        f"peak={MOTOR_ETA_PEAK!r} ks={MOTOR_SPEED_PENALTY!r} kt={MOTOR_TORQUE_PENALTY!r} "
        f"fs={MOTOR_SPEED_OPT_FRAC!r} ft={MOTOR_TORQUE_OPT_FRAC!r}",
    ]
