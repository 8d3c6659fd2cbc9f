"""Experiment orchestration: training loops, the independence-ratio sweep,
evaluation rollouts and Table-II-style metrics."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddpg import Agent, AgentConfig, Transition
from .drivecycle import (
    CompositeCycleSpec,
    DriveCycle,
    PhaseLabel,
    PhaseSource,
    build_learning_cycle,
    canonical_cycle,
    phases_from_sources,
    synthetic_phases,
)
from .environment import ActionMulti, ActionSingle, PhevEnv, RewardSpec, fuel_saving, soc_error
from .maps import ConfigurationError, read_map
from .neural import CHECKPOINT_VERSION, TrainingError
from .powertrain import (
    BatterySpec,
    EngineSpec,
    MotorSpec,
    PowertrainSpecs,
    VehicleConfig,
    default_specs,
)

log = logging.getLogger(__name__)

FUEL_DENSITY_KG_PER_L = 0.745
DEFAULT_RATIOS = (0.0, 0.2, 0.4, 0.6, 0.8)
SMOOTHING_WINDOW = 5

RUNLOG_COLUMNS = [
    "episode", "reward_agent1", "reward_agent2", "combined_reward",
    "fuel_l_per_100km", "end_soc", "infeasible_steps", "steps",
]


# -- configuration --------------------------------------------------------

def _from_dict(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


@dataclass
class MapPaths:
    engine: str | None = None
    mg1: str | None = None
    mg2: str | None = None


@dataclass
class ExperimentConfig:
    mode: str = "Multi"
    r_ind: float = 0.2
    episodes: int = 80
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    initial_soc: float = 0.28
    dt: float = 1.0
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    battery: BatterySpec = field(default_factory=BatterySpec)
    reward: RewardSpec = field(default_factory=lambda: RewardSpec(alpha=1e-6))
    agent: AgentConfig = field(default_factory=AgentConfig)
    maps: MapPaths = field(default_factory=MapPaths)
    phases: tuple[PhaseSource, ...] = ()
    evaluation_socs: tuple[float, ...] = (0.25, 0.28, 0.30)

    def __post_init__(self):
        if self.mode not in ("Single", "Multi"):
            raise ConfigurationError(f"mode must be 'Single' or 'Multi', got {self.mode!r}")
        if not (isinstance(self.episodes, int) and self.episodes > 0):
            raise ConfigurationError("episodes must be a positive integer")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if not 0 < self.initial_soc < 1:
            raise ConfigurationError("initial_soc must lie in (0, 1)")
        if not 0 <= self.r_ind <= 1:
            raise ConfigurationError("r_ind must lie in [0, 1]")
        self.evaluation_socs = tuple(float(s) for s in self.evaluation_socs)
        for p in self.phases:
            if not Path(p.path).exists():
                raise ConfigurationError(f"phase source not found: {p.path}")
        for name in ("engine", "mg1", "mg2"):
            path = getattr(self.maps, name)
            if path is not None and not Path(path).exists():
                raise ConfigurationError(f"{name} map not found: {path}")

    # serialisation -----------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigurationError(f"unknown experiment config key(s): {', '.join(unknown)}")
        d = dict(data)
        if "vehicle" in d:
            d["vehicle"] = VehicleConfig.from_dict(d["vehicle"] or {})
        for key, sub in (("battery", BatterySpec), ("reward", RewardSpec), ("agent", AgentConfig), ("maps", MapPaths)):
            if key in d:
                d[key] = _from_dict(sub, d[key], key)
        if "phases" in d:
            try:
                d["phases"] = tuple(
                    PhaseSource(PhaseLabel(p["label"]), p["path"], float(p["start_s"]), float(p["end_s"]))
                    for p in d["phases"]
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigurationError(f"phases: malformed entry ({exc})") from None
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "r_ind": self.r_ind,
            "episodes": self.episodes,
            "seeds": list(self.seeds),
            "initial_soc": self.initial_soc,
            "dt": self.dt,
            "vehicle": self.vehicle.to_dict(),
            "battery": dataclasses.asdict(self.battery),
            "reward": dataclasses.asdict(self.reward),
            "agent": dataclasses.asdict(self.agent),
            "maps": dataclasses.asdict(self.maps),
            "phases": [
                {"label": p.label.value, "path": p.path, "start_s": p.start_s, "end_s": p.end_s} for p in self.phases
            ],
            "evaluation_socs": list(self.evaluation_socs),
        }
        d["agent"]["hidden"] = list(self.agent.hidden)
        return d

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # derived objects ---------------------------------------------------

    def build_specs(self) -> PowertrainSpecs:
        base = default_specs(self.vehicle, self.battery)
        engine, mg1, mg2 = base.engine, base.mg1, base.mg2
        if self.maps.engine:
            engine = EngineSpec(read_map(self.maps.engine), base.engine.optimal_line, base.engine.heat_value)
        if self.maps.mg1:
            mg1 = MotorSpec(read_map(self.maps.mg1), mg1.torque_max, mg1.speed_max)
        if self.maps.mg2:
            mg2 = MotorSpec(read_map(self.maps.mg2), mg2.torque_max, mg2.speed_max)
        return PowertrainSpecs(engine, mg1, mg2, self.battery)

    def cycle_spec(self, seed: int) -> CompositeCycleSpec:
        phases = phases_from_sources(self.phases, self.dt) if self.phases else synthetic_phases(self.dt)
        return CompositeCycleSpec(phases, seed)

    def make_env(self, r_ind: float | None = None) -> PhevEnv:
        reward = dataclasses.replace(self.reward, r_ind=self.r_ind if r_ind is None else r_ind)
        return PhevEnv(self.vehicle, self.build_specs(), reward, initial_soc=self.initial_soc)


# -- logs -----------------------------------------------------------------

@dataclass
class EpisodeRecord:
    episode: int
    reward_agent1: float
    reward_agent2: float | None
    combined_reward: float
    fuel_l_per_100km: float
    end_soc: float
    infeasible_steps: int
    steps: int
    wall_time_s: float = field(default=0.0, compare=False)

    def row(self) -> list:
        return [
            self.episode, repr(self.reward_agent1),
            "" if self.reward_agent2 is None else repr(self.reward_agent2),
            repr(self.combined_reward), repr(self.fuel_l_per_100km), repr(self.end_soc),
            self.infeasible_steps, self.steps,
        ]


@dataclass
class RunLog:
    mode: str
    r_ind: float
    seed: int
    config_hash: str
    records: list[EpisodeRecord] = field(default_factory=list)
    step_rewards: list | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def final_mean(self, name: str = "combined_reward", last: int = 10) -> float:
        return float(np.mean(self.column(name)[-last:]))

    def to_csv(self, path) -> None:
        """Wall-clock times are left out so identical runs give identical files."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RUNLOG_COLUMNS)
            for r in self.records:
                w.writerow(r.row())

    def to_json(self, path) -> None:
        data = {
            "mode": self.mode, "r_ind": self.r_ind, "seed": self.seed, "config_hash": self.config_hash,
            "records": [{k: v for k, v in dataclasses.asdict(r).items() if k != "wall_time_s"} for r in self.records],
        }
        Path(path).write_text(json.dumps(data, indent=1) + "\n")

    @classmethod
    def from_json(cls, path) -> "RunLog":
        data = json.loads(Path(path).read_text())
        records = [EpisodeRecord(**r) for r in data.pop("records")]
        return cls(records=records, **data)


@dataclass
class MetricsRow:
    initial_soc: float
    method: str
    end_soc: float
    fuel_l_per_100km: float
    saving_pct: float | None = None

    @property
    def soc_error_pct(self) -> float:
        return soc_error(self.initial_soc, self.end_soc)


METRICS_COLUMNS = ["initial_soc", "method", "end_soc", "soc_error_pct", "fuel_l_per_100km", "saving_pct"]


def write_metrics(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([repr(r.initial_soc), r.method, repr(r.end_soc), repr(r.soc_error_pct),
                        repr(r.fuel_l_per_100km), "" if r.saving_pct is None else repr(r.saving_pct)])


def read_metrics(path) -> list[MetricsRow]:
    """Read raw columns only; derived columns are always recomputed."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(line for line in fh if not line.startswith("#")):
            rows.append(MetricsRow(float(rec["initial_soc"]), rec["method"], float(rec["end_soc"]),
                                   float(rec["fuel_l_per_100km"])))
    return rows


# -- training ---------------------------------------------------------------

def _make_agents(config: ExperimentConfig, seed: int) -> list[Agent]:
    ss = np.random.SeedSequence([seed, 7])
    agent_seeds = [int(s.generate_state(1)[0]) for s in ss.spawn(2)]
    if config.mode == "Single":
        return [Agent(2, [0.0], [1.0], config.agent, agent_seeds[0])]
    return [
        Agent(2, [0.0], [1.0], config.agent, agent_seeds[0]),
        Agent(2, [-1.0], [1.0], config.agent, agent_seeds[1]),
    ]


def _env_action(mode: str, a) -> ActionSingle | ActionMulti:
    if mode == "Single":
        return ActionSingle(float(a[0]))
    return ActionMulti(float(a[0]), float(a[1]))


def fuel_l_per_100km(fuel_g: float, distance_m: float) -> float:
    if distance_m <= 0:
        raise ValueError("distance travelled must be positive")
    return fuel_g / 1000.0 / FUEL_DENSITY_KG_PER_L / (distance_m / 100_000.0)


def train(config: ExperimentConfig, seed: int | None = None, record_steps: bool = False,
          checkpoint_dir=None) -> RunLog:
    """Train one (mode, r_ind, seed) cell on freshly permuted learning cycles.

    Transitions are stored as terminal only when the SoC window is violated;
    the end of a cycle is a time limit and keeps its bootstrap target.
    """
    seed = config.seeds[0] if seed is None else seed
    cfg = config.agent
    rng = np.random.default_rng([seed, 1])
    env = config.make_env()
    agents = _make_agents(config, seed)
    cycle_spec = config.cycle_spec(seed)
    runlog = RunLog(config.mode, config.r_ind, seed, config.config_hash(),
                    step_rewards=[] if record_steps else None)
    total_steps = 0
    for episode in range(config.episodes):
        t0 = time.perf_counter()
        for ag in agents:
            ag.noise_sigma = cfg.noise_sigma(episode)
        cycle = build_learning_cycle(cycle_spec, episode)
        obs = env.reset(cycle, config.initial_soc)
        x = env.encode(obs)
        sums = np.zeros(3)
        fuel = distance = 0.0
        infeasible = steps = 0
        done = False
        while not done:
            if total_steps < cfg.warmup_steps:
                acts = [ag.random_action(rng) for ag in agents]
            else:
                acts = [ag.act(x, True, rng) for ag in agents]
            out = env.step(_env_action(config.mode, np.concatenate(acts)))
            x2 = env.encode(out.observation_next)
            terminal = out.done and env.index < len(cycle) - 1
            if config.mode == "Single":
                rewards = [out.reward_single]
            else:
                rewards = [out.r_m1, out.r_m2]
            for ag, a, r in zip(agents, acts, rewards):
                ag.remember(Transition(x, a, r, x2, terminal))
            if record_steps:
                runlog.step_rewards.append((episode, out.r_global, out.r_local1, out.r_local2, *rewards))
            total_steps += 1
            if total_steps >= cfg.warmup_steps:
                for ag in agents:
                    try:
                        ag.learn_step(cfg.batch_size, rng)
                    except TrainingError as exc:
                        raise TrainingError(f"seed {seed} episode {episode} step {steps}: {exc}") from None
            sums += (rewards[0], rewards[1] if len(rewards) > 1 else 0.0,
                     out.r_global + out.r_local1 + out.r_local2)
            fuel += out.fuel_g
            distance += out.state.speed_mps * cycle.dt
            infeasible += int(out.infeasible)
            steps += 1
            done = out.done
            x = x2
        runlog.records.append(EpisodeRecord(
            episode=episode,
            reward_agent1=float(sums[0]),
            reward_agent2=None if config.mode == "Single" else float(sums[1]),
            combined_reward=float(sums[2]),
            fuel_l_per_100km=fuel_l_per_100km(fuel, distance) if distance > 0 else 0.0,
            end_soc=env.state.soc,
            infeasible_steps=infeasible,
            steps=steps,
            wall_time_s=time.perf_counter() - t0,
        ))
        log.debug("seed %d episode %d combined %.3f soc %.4f", seed, episode, sums[2], env.state.soc)
    if checkpoint_dir is not None:
        save_checkpoint(checkpoint_dir, config, agents, seed)
    return runlog


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(path, config: ExperimentConfig, agents, seed: int) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for k, ag in enumerate(agents, start=1):
        ag.save(path / f"agent{k}.npz")
    meta = {"version": CHECKPOINT_VERSION, "mode": config.mode, "r_ind": config.r_ind, "seed": seed,
            "config": config.to_dict()}
    (path / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def load_checkpoint(path):
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise ConfigurationError(f"not a checkpoint directory: {path}")
    meta = json.loads(meta_path.read_text())
    config = ExperimentConfig.from_dict(meta["config"])
    n = 1 if meta["mode"] == "Single" else 2
    agents = [Agent.load(path / f"agent{k}.npz", config.agent) for k in range(1, n + 1)]
    return config, agents


# -- evaluation -----------------------------------------------------------------

def rollout(env: PhevEnv, policy, cycle: DriveCycle, initial_soc: float, record: bool = False):
    """Deterministic episode; ``policy`` maps the encoded observation to an env action."""
    obs = env.reset(cycle, initial_soc, record=record)
    fuel = distance = p_loss_j = 0.0
    while not env.done:
        out = env.step(policy(env.encode(obs), obs))
        obs = out.observation_next
        fuel += out.fuel_g
        distance += out.state.speed_mps * cycle.dt
        p_loss_j += out.P_loss * cycle.dt
    return {"fuel_g": fuel, "distance_m": distance, "end_soc": env.state.soc, "p_loss_j": p_loss_j,
            "steps": env.index, "trace": env.trace}


def agent_policy(mode: str, agents):
    def policy(x, obs):
        return _env_action(mode, np.concatenate([ag.act(x) for ag in agents]))
    return policy


def zero_policy(x, obs):
    return ActionSingle(0.0)


def evaluate(checkpoint, cycle: DriveCycle | None = None, initial_socs=None) -> list[MetricsRow]:
    """Noise-free rollouts of a trained checkpoint from each initial SoC."""
    config, agents = load_checkpoint(checkpoint)
    return evaluate_agents(config, agents, cycle, initial_socs)


def evaluate_agents(config: ExperimentConfig, agents, cycle=None, initial_socs=None) -> list[MetricsRow]:
    cycle = cycle if cycle is not None else canonical_cycle(config.cycle_spec(0))
    if cycle.distance_m <= 0:
        raise ValueError("evaluation cycle covers zero distance")
    socs = config.evaluation_socs if initial_socs is None else tuple(initial_socs)
    env = config.make_env()
    policy = agent_policy(config.mode, agents)
    method = "Single" if config.mode == "Single" else "Multi-agent"
    rows = []
    for soc in socs:
        res = rollout(env, policy, cycle, soc)
        rows.append(MetricsRow(soc, method, res["end_soc"], fuel_l_per_100km(res["fuel_g"], res["distance_m"])))
    return rows


def compare(rows_single, rows_multi) -> list[MetricsRow]:
    """Interleave single/multi rows by initial SoC and fill the saving column."""
    single = {r.initial_soc: r for r in rows_single}
    multi = {r.initial_soc: r for r in rows_multi}
    if set(single) != set(multi):
        raise ValueError(f"initial SoC keys differ: {sorted(single)} vs {sorted(multi)}")
    out = []
    for key in sorted(single):
        s, m = single[key], multi[key]
        out.append(dataclasses.replace(s, saving_pct=None))
        out.append(dataclasses.replace(m, saving_pct=fuel_saving(s.fuel_l_per_100km, m.fuel_l_per_100km)))
    return out


# -- sweep ------------------------------------------------------------------

def _run_cell(args):
    config, ratio, seed, cell_dir = args
    cell_config = config.replace(mode="Multi", r_ind=ratio)
    cell_dir = Path(cell_dir)
    cell_dir.mkdir(parents=True, exist_ok=True)
    try:
        runlog = train(cell_config, seed, checkpoint_dir=cell_dir / "checkpoint")
    except Exception as exc:  # a failed cell must not stop the sweep
        return ratio, seed, None, f"{type(exc).__name__}: {exc}"
    runlog.to_csv(cell_dir / "runlog.csv")
    runlog.to_json(cell_dir / "runlog.json")
    return ratio, seed, runlog, "ok"


def cell_name(ratio: float, seed: int) -> str:
    return f"rind_{ratio:.2f}_seed_{seed}"


def sweep_rind(config: ExperimentConfig, ratios=DEFAULT_RATIOS, out_dir=None, jobs: int = 1):
    """One multi-agent training per (ratio, seed); returns {ratio: {seed: RunLog}}.

    With ``out_dir`` every cell writes its run log and checkpoint, learning
    curves are written per agent per ratio and ``manifest.json`` indexes it all.
    """
    ratios = [float(r) for r in ratios]
    if not ratios or any(not 0 <= r <= 1 for r in ratios):
        raise ValueError("ratios must be a non-empty list of values in [0, 1]")
    import tempfile

    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        out = Path(tmp.name)
    else:
        out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(config, r, s, str(out / "cells" / cell_name(r, s))) for r in ratios for s in config.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks))
    else:
        results = [_run_cell(t) for t in tasks]

    logs: dict[float, dict[int, RunLog]] = {r: {} for r in ratios}
    cells = []
    for ratio, seed, runlog, status in results:
        cdir = out / "cells" / cell_name(ratio, seed)
        cells.append({
            "ratio": ratio, "seed": seed, "status": status,
            "config_hash": config.replace(mode="Multi", r_ind=ratio).config_hash(),
            "runlog_csv": str((cdir / "runlog.csv").relative_to(out)),
            "runlog_json": str((cdir / "runlog.json").relative_to(out)),
            "checkpoint": str((cdir / "checkpoint").relative_to(out)),
        })
        if runlog is not None:
            logs[ratio][seed] = runlog
    curves = write_learning_curves(logs, out / "curves", config.episodes)
    manifest = {
        "kind": "sweep",
        "ratios": ratios,
        "seeds": list(config.seeds),
        "config": config.to_dict(),
        "cells": cells,
        "curves": [str(p.relative_to(out)) for p in curves],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    if tmp is not None:
        tmp.cleanup()
    failed = [c for c in cells if c["status"] != "ok"]
    return logs, failed


def moving_average(x, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing mean over up to ``window`` episodes (shorter at the start)."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    for i in range(len(x)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def write_learning_curves(logs, out_dir, episodes: int) -> list[Path]:
    """Per ratio and agent: episode, one raw column per seed, mean, smoothed mean."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ratio, by_seed in logs.items():
        seeds = sorted(by_seed)
        for agent, col in (("agent1", "reward_agent1"), ("agent2", "reward_agent2"), ("combined", "combined_reward")):
            path = out_dir / f"rind_{ratio:.2f}_{agent}.csv"
            raw = np.array([by_seed[s].column(col) for s in seeds]) if seeds else np.zeros((0, episodes))
            mean = raw.mean(axis=0) if seeds else np.full(episodes, math.nan)
            smooth = moving_average(mean)
            with path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["episode"] + [f"seed_{s}" for s in seeds] + ["mean", "mean_smoothed"])
                for e in range(episodes):
                    w.writerow([e] + [repr(float(raw[i, e])) for i in range(len(seeds))]
                               + [repr(float(mean[e])), repr(float(smooth[e]))])
            paths.append(path)
    return paths
