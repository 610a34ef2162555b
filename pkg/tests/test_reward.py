import math

import pytest

from minedispatch import reward
from minedispatch.dispatchers import run_episode
from minedispatch.reward import RewardConfig, step_reward
from minedispatch.scenario import reduced_scenario
from minedispatch.sim import MineSim, StepInfo


def info(**kw):
    base = dict(delta_tons=0.0, wait_duration=0.0, service_duration=0.0, jam_duration=0.0,
                move_duration=0.0, episode_done=False, final_tons=0.0)
    base.update(kw)
    return StepInfo(**base)


def test_dense_coefficients():
    cfg = reward.dense()
    assert (cfg.final_tons, cfg.delta_tons, cfg.wait, cfg.service, cfg.jam, cfg.move) == \
        (0.1, 2.0, -0.5, -0.1, -0.1, -0.01)


def test_sparse_keeps_only_final_term():
    cfg = reward.sparse()
    assert cfg.final_tons == 0.1
    assert step_reward(info(delta_tons=40, wait_duration=3, move_duration=9), cfg) == 0.0
    assert step_reward(info(episode_done=True, final_tons=520.0), cfg) == pytest.approx(52.0)


def test_dense_worked_example():
    i = info(delta_tons=40.0, wait_duration=3.0, service_duration=5.0, jam_duration=2.0,
             move_duration=10.0)
    expect = 2.0 * math.log(41.0) - 1.5 - 0.5 - 0.2 - 0.1
    assert step_reward(i, reward.dense()) == pytest.approx(expect, abs=1e-12)


def test_dense_terminal_adds_final_bonus():
    i = info(episode_done=True, final_tons=100.0)
    assert step_reward(i, reward.dense()) == pytest.approx(10.0)


def test_zero_production_contributes_nothing():
    assert step_reward(info(), reward.dense()) == 0.0


def test_overrides_and_bad_mode():
    assert reward.make("dense", wait=-1.0).wait == -1.0
    assert reward.make("sparse").delta_tons == 0.0
    with pytest.raises(ValueError):
        reward.make("shaped")
    with pytest.raises(ValueError):
        RewardConfig(mode="other")


def test_sparse_episode_sum_is_tenth_of_tons():
    sim = MineSim(reduced_scenario(2, 2, 6, 60))
    req = sim.reset(3)
    total = 0.0
    cfg = reward.sparse()
    while not sim.done:
        req, i = sim.step(0)
        total += step_reward(i, cfg)
    assert total == pytest.approx(0.1 * sim.produced_tons, abs=1e-9)
    assert sim.produced_tons == run_episode(MineSim(sim.config), "naive", 3).produced_tons
