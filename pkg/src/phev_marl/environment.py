"""Episode environment: observations, action mapping, rewards and metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .drivecycle import DriveCycle
from .powertrain import (
    Mode,
    PowertrainSpecs,
    PowertrainState,
    VehicleConfig,
    demand,
    step_parallel,
    step_series,
)

TRACE_SCHEMA = "phev-trace/1"
TRACE_COLUMNS = [
    "time_s", "speed_mps", "mode", "T_dem", "T_eng", "T_mot1", "T_mot2",
    "soc", "fuel_rate_gps", "P_loss_w", "reward_single", "r_global",
    "r_local1", "r_local2", "r_m1", "r_m2", "infeasible",
]


class EpisodeFinished(RuntimeError):
    pass


@dataclass(frozen=True)
class Observation:
    T_dem: float
    soc: float


@dataclass(frozen=True)
class ActionSingle:
    u_mot1: float


@dataclass(frozen=True)
class ActionMulti:
    u_mot1: float
    u_mot2: float


@dataclass(frozen=True)
class RewardSpec:
    alpha: float = 1e-4
    soc_ref: float | None = None
    r_ind: float = 0.2
    beta_high: float = 2.0
    alpha_global: float | None = None
    termination_penalty: float = -10.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.soc_ref is not None and not 0 < self.soc_ref < 1:
            raise ValueError("soc_ref must lie in (0, 1)")
        if not 0 <= self.r_ind <= 1:
            raise ValueError("r_ind must lie in [0, 1]")

    @property
    def global_scale(self) -> float:
        return self.alpha if self.alpha_global is None else self.alpha_global


@dataclass(frozen=True)
class StepOutcome:
    observation_next: Observation
    reward_single: float
    r_global: float
    r_local1: float
    r_local2: float
    r_m1: float
    r_m2: float
    done: bool
    P_loss: float
    fuel_g: float
    infeasible: bool
    mode: Mode
    state: PowertrainState


# -- action mapping -------------------------------------------------------

def map_actions(u_mot1: float, u_mot2: float, t_dem: float, cfg: VehicleConfig):
    """Mode and torque commands from the two normalised actions.

    Returns (mode, T_mot1, T_mot2, T_eng, T_GB, u_eng) with T_GB the engine
    output-shaft torque that covers what MG2 leaves of the wheel demand.
    """
    u_mot1 = min(max(u_mot1, 0.0), 1.0)
    u_mot2 = min(max(u_mot2, -1.0), 1.0)
    t_mot1 = u_mot1 * cfg.t_mot1_max
    if t_dem < 0:
        mode = Mode.REGEN
        t_mot2 = max(t_dem / cfg.ratio_i2, -cfg.t_mot2_max)
        t_gb = 0.0
    else:
        t_gb_wheel = max(0.0, t_dem - u_mot2 * cfg.t_mot2_max * cfg.ratio_i2)
        t_gb = t_gb_wheel / cfg.ratio_i1
        if t_gb == 0.0:
            mode = Mode.SERIES
            t_mot2 = t_dem / cfg.ratio_i2
        else:
            mode = Mode.PARALLEL
            t_mot2 = u_mot2 * cfg.t_mot2_max
    t_eng = t_mot1 + t_gb
    u_eng = min(max(t_eng / cfg.t_eng_max, 0.0), 1.0)
    return mode, t_mot1, t_mot2, t_eng, t_gb, u_eng


def close_single_action(u_mot1: float, t_dem: float, cfg: VehicleConfig) -> ActionMulti:
    """MG2 command for the single-agent baseline: cover the whole wheel demand.

    The engine contributes nothing at the wheels before the split is known, so
    MG2 is asked for all of it; demand beyond MG2's limit spills to the engine.
    """
    u_mot2 = min(max(t_dem / (cfg.t_mot2_max * cfg.ratio_i2), -1.0), 1.0)
    return ActionMulti(min(max(u_mot1, 0.0), 1.0), u_mot2)


# -- rewards --------------------------------------------------------------

def soc_weight(soc: float, spec: RewardSpec) -> float:
    return 0.0 if soc >= spec.soc_ref else spec.beta_high


def reward_single(p_loss: float, soc: float, spec: RewardSpec) -> float:
    return -spec.alpha * p_loss - soc_weight(soc, spec) * abs(spec.soc_ref - soc)


def reward_components(p_loss: float, loss_eng: float, soc: float, spec: RewardSpec):
    """(r_global, r_local1, r_local2): shared loss, SoC keeping, engine usage."""
    r_global = -spec.global_scale * p_loss
    r_local1 = -soc_weight(soc, spec) * abs(spec.soc_ref - soc)
    r_local2 = -spec.alpha * loss_eng
    return r_global, r_local1, r_local2


def handshake(r_global: float, r_local1: float, r_local2: float, r_ind: float):
    return r_ind * r_global + r_local1, r_ind * r_global + r_local2


# -- metrics --------------------------------------------------------------

def soc_error(soc_initial: float, soc_end: float) -> float:
    """SoC deviation in percent of the initial value."""
    if soc_initial == 0:
        raise ValueError("initial SoC must be non-zero")
    return abs(soc_end - soc_initial) / soc_initial * 100.0


def fuel_saving(fuel_single: float, fuel_multi: float) -> float:
    """Relative fuel difference in percent of the single-agent consumption."""
    if fuel_single == 0:
        raise ValueError("single-agent fuel consumption must be non-zero")
    return abs(fuel_multi - fuel_single) / fuel_single * 100.0


# -- environment ----------------------------------------------------------

@dataclass
class PhevEnv:
    """One episode over a drive cycle.

    Each step spans one sampling interval; the powertrain is evaluated at the
    interval's mean speed with the forward-difference acceleration, so traction
    energy matches the kinetic-energy change of the trace.
    """

    cfg: VehicleConfig
    specs: PowertrainSpecs
    reward: RewardSpec
    cycle: DriveCycle | None = None
    initial_soc: float = 0.28
    t_dem_scale: float = 1000.0
    soc_scale: float = 0.05
    state: PowertrainState = field(init=False)
    index: int = field(init=False, default=0)
    done: bool = field(init=False, default=True)
    trace: list | None = field(init=False, default=None)
    active: RewardSpec = field(init=False, default=None)

    def reset(self, cycle: DriveCycle | None = None, initial_soc: float | None = None,
              soc_ref: float | None = None, record: bool = False) -> Observation:
        if cycle is not None:
            self.cycle = cycle
        if self.cycle is None or len(self.cycle) < 2:
            raise ValueError("environment needs a cycle with at least two samples")
        if initial_soc is not None:
            self.initial_soc = initial_soc
        if soc_ref is None:
            soc_ref = self.reward.soc_ref if self.reward.soc_ref is not None else self.initial_soc
        # reference defaults to the episode's initial SoC (charge sustaining)
        self.active = replace(self.reward, soc_ref=soc_ref)
        self.state = PowertrainState(soc=self.initial_soc)
        self.index = 0
        self.done = False
        self.trace = [] if record else None
        return self.observation()

    def _interval(self, k: int):
        c = self.cycle
        v0, v1 = c.speeds[k], c.speeds[k + 1]
        return 0.5 * (v0 + v1), (v1 - v0) / c.dt, c.grades[k]

    def observation(self) -> Observation:
        k = min(self.index, len(self.cycle) - 2)
        v, a, grade = self._interval(k)
        _, _, t_dem = demand(v, a, grade, self.cfg)
        return Observation(t_dem, self.state.soc)

    def encode(self, obs: Observation) -> np.ndarray:
        """Network input: scaled torque demand and SoC deviation from the reference."""
        return np.array([obs.T_dem / self.t_dem_scale, (obs.soc - self.active.soc_ref) / self.soc_scale])

    @property
    def distance_m(self) -> float:
        return self.cycle.distance_m

    def step(self, action: ActionSingle | ActionMulti) -> StepOutcome:
        if self.done:
            raise EpisodeFinished("episode is finished; call reset()")
        cfg, dt = self.cfg, self.cycle.dt
        v, a, grade = self._interval(self.index)
        _, _, t_dem = demand(v, a, grade, cfg)
        if isinstance(action, ActionSingle):
            action = close_single_action(action.u_mot1, t_dem, cfg)
        mode, *_ = map_actions(action.u_mot1, action.u_mot2, t_dem, cfg)
        prev = self.state
        if mode is Mode.PARALLEL:
            st = step_parallel(t_dem, action.u_mot1, action.u_mot2, v, prev, cfg, self.specs, dt, a, grade)
        else:
            st = step_series(t_dem, action.u_mot1, v, prev, cfg, self.specs, dt, a, grade,
                             regen=mode is Mode.REGEN)
        self.state = st
        self.index += 1

        spec = self.active
        r_s = reward_single(st.P_loss, st.soc, spec)
        r_g, r_l1, r_l2 = reward_components(st.P_loss, st.loss_eng, st.soc, spec)
        bat = self.specs.battery
        done = self.index >= len(self.cycle) - 1
        if not bat.soc_min <= st.soc <= bat.soc_max:
            done = True
            p = spec.termination_penalty
            r_s, r_l1, r_l2 = r_s + p, r_l1 + p, r_l2 + p
        r_m1, r_m2 = handshake(r_g, r_l1, r_l2, spec.r_ind)
        self.done = done
        out = StepOutcome(
            observation_next=self.observation(),
            reward_single=r_s,
            r_global=r_g,
            r_local1=r_l1,
            r_local2=r_l2,
            r_m1=r_m1,
            r_m2=r_m2,
            done=done,
            P_loss=st.P_loss,
            fuel_g=st.fuel_rate * dt,
            infeasible=st.infeasible,
            mode=st.mode,
            state=st,
        )
        if self.trace is not None:
            self.trace.append(out)
        return out


def write_trace(outcomes, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={TRACE_SCHEMA}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for o in outcomes:
            s = o.state
            w.writerow([
                repr(s.time_s), repr(s.speed_mps), s.mode.value, repr(s.T_dem), repr(s.T_eng),
                repr(s.T_mot1), repr(s.T_mot2), repr(s.soc), repr(s.fuel_rate), repr(s.P_loss),
                repr(o.reward_single), repr(o.r_global), repr(o.r_local1), repr(o.r_local2),
                repr(o.r_m1), repr(o.r_m2), int(o.infeasible),
            ])
