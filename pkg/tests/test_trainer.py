import csv
import dataclasses
import json

import numpy as np
import pytest

from phev_marl import trainer
from phev_marl.ddpg import AgentConfig
from phev_marl.drivecycle import DriveCycle
from phev_marl.environment import soc_error
from phev_marl.maps import ConfigurationError
from phev_marl.neural import TrainingError
from phev_marl.trainer import (
    ExperimentConfig,
    MetricsRow,
    RunLog,
    cell_name,
    compare,
    evaluate,
    evaluate_agents,
    fuel_l_per_100km,
    load_checkpoint,
    moving_average,
    read_metrics,
    sweep_rind,
    train,
    write_metrics,
)

SMALL = AgentConfig(hidden=(16, 16), warmup_steps=50, batch_size=16, buffer_size=5000)


def small_config(**kw):
    base = dict(episodes=2, seeds=(0,), agent=SMALL)
    base.update(kw)
    return ExperimentConfig(**base)


# -- config -----------------------------------------------------------------

def test_config_json_round_trip(tmp_path):
    cfg = small_config(mode="Single", r_ind=0.4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ExperimentConfig.load(path)
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(r_ind=0.6).config_hash() != cfg.config_hash()


@pytest.mark.parametrize("data", [
    {"episodez": 3},
    {"reward": {"alpha": 1.0, "gamma": 2}},
    {"mode": "Triple"},
    {"episodes": 0},
    {"r_ind": 1.5},
    {"maps": {"engine": "/no/such/file.csv"}},
])
def test_config_rejects_bad_input(data):
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict(data)


def test_missing_config_file_names_the_path(tmp_path):
    with pytest.raises(ConfigurationError, match="missing.json"):
        ExperimentConfig.load(tmp_path / "missing.json")


# -- metrics ----------------------------------------------------------------

def test_fuel_conversion():
    # 745 g of gasoline is one litre; over 100 km that is 1 L/100km
    assert fuel_l_per_100km(745.0, 100_000.0) == pytest.approx(1.0)
    assert fuel_l_per_100km(0.0, 5000.0) == 0.0
    with pytest.raises(ValueError):
        fuel_l_per_100km(1.0, 0.0)


TABLE_SINGLE = [MetricsRow(0.25, "Single", 0.272, 4.534), MetricsRow(0.28, "Single", 0.305, 4.547),
                MetricsRow(0.30, "Single", 0.328, 4.534)]
TABLE_MULTI = [MetricsRow(0.25, "Multi-agent", 0.241, 4.419), MetricsRow(0.28, "Multi-agent", 0.271, 4.450),
               MetricsRow(0.30, "Multi-agent", 0.286, 4.418)]


def test_compare_fills_savings():
    rows = compare(TABLE_SINGLE, TABLE_MULTI)
    assert [r.method for r in rows] == ["Single", "Multi-agent"] * 3
    savings = [r.saving_pct for r in rows if r.saving_pct is not None]
    assert savings == pytest.approx([2.538, 2.130, 2.554], abs=0.01)


def test_compare_identical_and_mismatched():
    assert compare(TABLE_SINGLE, [dataclasses.replace(r, method="Multi-agent") for r in TABLE_SINGLE])[1].saving_pct == 0
    with pytest.raises(ValueError):
        compare(TABLE_SINGLE, TABLE_MULTI[:2])


def test_metrics_csv_recomputes_derived_columns(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics(compare(TABLE_SINGLE, TABLE_MULTI), path)
    text = path.read_text().replace(",8.8", ",99.0")  # corrupt a stored derived value
    path.write_text(text)
    rows = read_metrics(path)
    assert rows[0].soc_error_pct == pytest.approx(8.80, abs=0.01)
    for r in rows:
        assert r.soc_error_pct == soc_error(r.initial_soc, r.end_soc)


def test_moving_average_examples():
    assert moving_average([1, 2, 3, 4, 5, 6], 5) == pytest.approx([1, 1.5, 2, 2.5, 3, 4])
    assert moving_average([7.0], 5) == pytest.approx([7.0])


# -- training ---------------------------------------------------------------

def test_single_episode_log_is_deterministic(tmp_path):
    cfg = small_config(episodes=1)
    a, b = train(cfg, 0), train(cfg, 0)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(a.records) == 1 and a.records[0].steps > 400


def test_training_runs_are_reproducible_past_warmup(tmp_path):
    cfg = small_config(episodes=2)
    a, b = train(cfg, 3), train(cfg, 3)
    a.to_json(tmp_path / "a.json")
    b.to_json(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert train(cfg, 4).records[0].combined_reward != a.records[0].combined_reward


def test_zero_ratio_logs_pure_local_rewards():
    log = train(small_config(episodes=1, r_ind=0.0), 0, record_steps=True)
    for _, g, l1, l2, r1, r2 in log.step_rewards:
        assert r1 == l1 and r2 == l2


def test_handshake_rewards_in_log():
    log = train(small_config(episodes=1, r_ind=0.4), 0, record_steps=True)
    for _, g, l1, l2, r1, r2 in log.step_rewards:
        assert r1 == 0.4 * g + l1 and r2 == 0.4 * g + l2
    rec = log.records[0]
    assert rec.combined_reward == pytest.approx(sum(g + l1 + l2 for _, g, l1, l2, _, _ in log.step_rewards))


def test_runlog_json_round_trip(tmp_path):
    log = train(small_config(episodes=1, mode="Single"), 0)
    log.to_json(tmp_path / "r.json")
    back = RunLog.from_json(tmp_path / "r.json")
    assert back.records[0].reward_agent2 is None
    assert back.records[0].combined_reward == log.records[0].combined_reward
    assert back.config_hash == log.config_hash


def test_non_finite_learning_aborts_with_location(monkeypatch):
    def boom(self, batch_size, rng):
        raise TrainingError("critic loss became non-finite")

    monkeypatch.setattr(trainer.Agent, "learn_step", boom)
    with pytest.raises(TrainingError, match=r"seed 0 episode 0 step \d+"):
        train(small_config(episodes=1), 0)


# -- evaluation -------------------------------------------------------------

class StillAgent:
    """Never asks the engine for torque."""

    def act(self, x):
        return np.array([0.0])


GENTLE = DriveCycle("gentle", 1.0, tuple(float(v) for v in np.concatenate([np.linspace(0, 8, 20), [8.0] * 40,
                                                                            np.linspace(8, 0, 20)])))


def test_policy_without_engine_burns_no_fuel():
    rows = evaluate_agents(small_config(mode="Single"), [StillAgent()], GENTLE)
    assert [r.initial_soc for r in rows] == [0.25, 0.28, 0.30]
    assert all(r.fuel_l_per_100km == 0.0 for r in rows)
    assert all(r.end_soc < r.initial_soc for r in rows)


def test_evaluation_rejects_zero_distance():
    with pytest.raises(ValueError):
        evaluate_agents(small_config(mode="Single"), [StillAgent()], DriveCycle("idle", 1.0, (0.0,) * 10))


def test_checkpoint_evaluation_matches_in_memory(tmp_path):
    cfg = small_config(episodes=1)
    train(cfg, 0, checkpoint_dir=tmp_path / "ck")
    config, agents = load_checkpoint(tmp_path / "ck")
    assert config == cfg
    first = evaluate(tmp_path / "ck")
    assert first == evaluate_agents(config, agents)
    assert first == evaluate(tmp_path / "ck")
    for r in first:
        assert r.soc_error_pct == soc_error(r.initial_soc, r.end_soc)


def test_missing_checkpoint_is_a_config_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_checkpoint(tmp_path)


# -- sweep ------------------------------------------------------------------

def test_one_cell_sweep_equals_direct_training(tmp_path):
    cfg = small_config(episodes=1)
    logs, failed = sweep_rind(cfg, [0.2], tmp_path)
    assert not failed
    direct = train(cfg.replace(r_ind=0.2), 0)
    assert logs[0.2][0].records == direct.records


def test_default_grid_manifest_and_curves(tmp_path):
    cfg = small_config(episodes=2, seeds=(0, 1))
    logs, failed = sweep_rind(cfg, out_dir=tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["cells"]) == 10 and not failed
    assert {(c["ratio"], c["seed"]) for c in manifest["cells"]} == {(r, s) for r in (0, .2, .4, .6, .8) for s in (0, 1)}
    for c in manifest["cells"]:
        assert (tmp_path / c["runlog_csv"]).exists() and (tmp_path / c["checkpoint"] / "meta.json").exists()
    assert len(manifest["curves"]) == 15
    with open(tmp_path / manifest["curves"][0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["episode", "seed_0", "seed_1", "mean", "mean_smoothed"]
    assert len(rows) == 1 + 2


def test_parallel_cells_match_serial(tmp_path):
    cfg = small_config(episodes=2, seeds=(0, 1))
    serial, _ = sweep_rind(cfg, [0.0, 0.6], tmp_path / "a", jobs=1)
    parallel, _ = sweep_rind(cfg, [0.0, 0.6], tmp_path / "b", jobs=2)
    for ratio in serial:
        for seed in serial[ratio]:
            assert serial[ratio][seed].records == parallel[ratio][seed].records
            a = (tmp_path / "a" / "cells" / cell_name(ratio, seed) / "runlog.csv").read_bytes()
            assert a == (tmp_path / "b" / "cells" / cell_name(ratio, seed) / "runlog.csv").read_bytes()


def test_failed_cell_is_marked_and_others_continue(tmp_path, monkeypatch):
    real = trainer.train

    def flaky(config, seed=None, **kw):
        if config.r_ind == 0.4:
            raise TrainingError("synthetic failure")
        return real(config, seed, **kw)

    monkeypatch.setattr(trainer, "train", flaky)
    logs, failed = sweep_rind(small_config(episodes=1), [0.2, 0.4], tmp_path)
    assert [(c["ratio"], c["status"]) for c in failed] == [(0.4, "TrainingError: synthetic failure")]
    assert 0 in logs[0.2] and not logs[0.4]
