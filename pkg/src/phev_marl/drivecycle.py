"""Drive-cycle traces, phase extraction and randomised composite learning cycles."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SEPARATOR_S = 2.0
TAPER_S = 5.0


class CycleParseError(ValueError):
    pass


class PhaseLabel(str, enum.Enum):
    LOW_SPEED_RURAL = "LowSpeedRural"
    MAX_ACCEL_RTS95 = "MaxAccelRTS95"
    MEDIUM_SPEED_UDDS = "MediumSpeedUDDS"
    HIGH_SPEED_WLTP = "HighSpeedWLTP"


@dataclass(frozen=True)
class DriveCycle:
    name: str
    dt: float
    speeds: tuple[float, ...]
    grades: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        speeds = tuple(float(v) for v in self.speeds)
        if any(v < 0 or not math.isfinite(v) for v in speeds):
            raise ValueError("cycle speeds must be finite and non-negative")
        grades = tuple(float(g) for g in self.grades) if self.grades else (0.0,) * len(speeds)
        if len(grades) != len(speeds):
            raise ValueError("speeds and grades differ in length")
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "grades", grades)

    def __len__(self):
        return len(self.speeds)

    @property
    def duration(self) -> float:
        return len(self.speeds) * self.dt

    @property
    def distance_m(self) -> float:
        """Trapezoidal distance over the sampled trace."""
        v = self.speeds
        return sum(0.5 * (a + b) * self.dt for a, b in zip(v, v[1:]))


@dataclass(frozen=True)
class CyclePhase:
    label: PhaseLabel
    trace: DriveCycle

    def __post_init__(self):
        if len(self.trace) < 2:
            raise ValueError("a phase needs at least two samples")


@dataclass(frozen=True)
class CompositeCycleSpec:
    phases: tuple[CyclePhase, ...]
    seed: int = 0

    def __post_init__(self):
        labels = [p.label for p in self.phases]
        if len(labels) != 4 or set(labels) != set(PhaseLabel):
            raise ValueError("a composite cycle needs exactly one phase per label")
        dts = {p.trace.dt for p in self.phases}
        if len(dts) != 1:
            raise ValueError("all phases must share one sampling interval")

    @property
    def dt(self) -> float:
        return self.phases[0].trace.dt


# -- loading ------------------------------------------------------------

def load_cycle(path, dt: float = 1.0, name: str | None = None) -> DriveCycle:
    """Read a two-column (time, speed) CSV and resample it to a uniform grid.

    The speed column header selects the unit: it must mention ``kmh``/``km/h``
    for km/h, otherwise m/s is assumed.
    """
    path = Path(path)
    if not path.exists():
        raise CycleParseError(f"cycle file not found: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise CycleParseError(f"{path}: empty cycle file")
    header, body = rows[0], rows[1:]
    try:
        float(header[0])
        body, header = rows, ["time_s", "speed_mps"]
    except ValueError:
        pass
    if not body:
        raise CycleParseError(f"{path}: no samples")
    unit = header[1].lower().replace(" ", "") if len(header) > 1 else "speed_mps"
    scale = 1.0 / 3.6 if ("kmh" in unit or "km/h" in unit or "kph" in unit) else 1.0
    try:
        t = np.array([float(r[0]) for r in body])
        v = np.array([float(r[1]) for r in body]) * scale
    except (ValueError, IndexError) as exc:
        raise CycleParseError(f"{path}: malformed row ({exc})") from None
    if np.any(np.diff(t) <= 0):
        raise CycleParseError(f"{path}: time column is not strictly increasing")
    n = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n)
    speeds = np.maximum(np.interp(grid, t, v), 0.0)
    return DriveCycle(name or path.stem, dt, tuple(speeds.tolist()))


def write_cycle(cycle: DriveCycle, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time_s", "speed_mps", "grade_rad"])
        for k, (v, g) in enumerate(zip(cycle.speeds, cycle.grades)):
            w.writerow([repr(k * cycle.dt), repr(v), repr(g)])
    return path


# -- phases and composites ------------------------------------------------

def extract_phase(cycle: DriveCycle, start_s: float, end_s: float, label: PhaseLabel | str) -> CyclePhase:
    """Slice [start_s, end_s] and taper both ends linearly to standstill."""
    if not 0 <= start_s < end_s <= cycle.duration:
        raise ValueError(f"phase window [{start_s}, {end_s}] outside cycle of {cycle.duration} s")
    i0 = int(round(start_s / cycle.dt))
    i1 = min(int(round(end_s / cycle.dt)), len(cycle))
    v = np.array(cycle.speeds[i0:i1])
    g = cycle.grades[i0:i1]
    if len(v) < 2:
        raise ValueError("phase window must contain at least two samples")
    n = len(v)
    taper = min(int(round(TAPER_S / cycle.dt)), (n - 1) // 2)
    if taper == 0:
        v[:] = 0.0
    else:
        k = np.arange(n)
        w = np.minimum(1.0, np.minimum(k, n - 1 - k) / taper)
        v = v * w
    trace = DriveCycle(f"{cycle.name}[{start_s}:{end_s}]", cycle.dt, tuple(v.tolist()), g)
    return CyclePhase(PhaseLabel(label), trace)


def phase_order(seed: int, episode_index: int) -> list[int]:
    rng = np.random.default_rng([int(seed), int(episode_index)])
    return [int(i) for i in rng.permutation(4)]


def concatenate(phases, dt: float, name: str) -> DriveCycle:
    gap = (0.0,) * int(round(SEPARATOR_S / dt))
    speeds: list[float] = []
    grades: list[float] = []
    for k, phase in enumerate(phases):
        if k:
            speeds.extend(gap)
            grades.extend(gap)
        speeds.extend(phase.trace.speeds)
        grades.extend(phase.trace.grades)
    return DriveCycle(name, dt, tuple(speeds), tuple(grades))


def build_learning_cycle(spec: CompositeCycleSpec, episode_index: int) -> DriveCycle:
    """Random permutation of the four phases joined by 2 s standstill gaps."""
    order = phase_order(spec.seed, episode_index)
    phases = [spec.phases[i] for i in order]
    name = "learning[" + ",".join(p.label.value for p in phases) + f"]seed{spec.seed}ep{episode_index}"
    return concatenate(phases, spec.dt, name)


def canonical_cycle(spec: CompositeCycleSpec) -> DriveCycle:
    """The four phases in label order; used as the fixed evaluation cycle."""
    by_label = {p.label: p for p in spec.phases}
    return concatenate([by_label[label] for label in PhaseLabel], spec.dt, "evaluation")


def kinematics(cycle: DriveCycle) -> list[tuple[float, float]]:
    v = cycle.speeds
    acc = [(b - a) / cycle.dt for a, b in zip(v, v[1:])] + [0.0]
    return list(zip(v, acc))


# -- bundled synthetic phases --------------------------------------------

def _segments(spec, dt):
    """Piecewise-linear speed profile from (duration s, end speed m/s) knots."""
    t_knots, v_knots = [0.0], [0.0]
    for duration, v_end in spec:
        t_knots.append(t_knots[-1] + duration)
        v_knots.append(v_end)
    t = np.arange(0.0, t_knots[-1] + 1e-9, dt)
    return np.interp(t, t_knots, v_knots)


_SYNTHETIC = {
    PhaseLabel.LOW_SPEED_RURAL: [(15, 8.0), (20, 12.0), (25, 12.0), (15, 9.0), (20, 11.0), (24, 0.0)],
    PhaseLabel.MAX_ACCEL_RTS95: [(10, 25.0), (40, 26.0), (15, 14.0), (8, 24.0), (25, 24.0), (21, 0.0)],
    PhaseLabel.MEDIUM_SPEED_UDDS: [(12, 14.0), (20, 15.0), (12, 0.0), (6, 0.0), (15, 18.0), (25, 17.0), (29, 0.0)],
    PhaseLabel.HIGH_SPEED_WLTP: [(25, 28.0), (20, 33.0), (35, 34.0), (15, 30.0), (24, 0.0)],
}


def synthetic_phases(dt: float = 1.0) -> tuple[CyclePhase, ...]:
    """Four 120 s ramp/hold traces standing in for the standard-cycle phases."""
    phases = []
    for label, knots in _SYNTHETIC.items():
        v = _segments(knots, dt)[: int(round(120.0 / dt))]
        v[-1] = 0.0
        phases.append(CyclePhase(label, DriveCycle(f"synthetic-{label.value}", dt, tuple(v.tolist()))))
    return tuple(phases)


@dataclass(frozen=True)
class PhaseSource:
    """Where a phase comes from: a cycle CSV and a window inside it."""

    label: PhaseLabel
    path: str
    start_s: float
    end_s: float


def phases_from_sources(sources, dt: float = 1.0) -> tuple[CyclePhase, ...]:
    out = []
    for src in sources:
        cycle = load_cycle(src.path, dt)
        out.append(extract_phase(cycle, src.start_s, src.end_s, src.label))
    return tuple(out)
