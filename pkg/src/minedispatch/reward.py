"""Per-decision rewards in sparse and dense mode."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .sim import StepInfo


@dataclass(frozen=True)
class RewardConfig:
    mode: str = "dense"
    final_tons: float = 0.1
    delta_tons: float = 2.0
    wait: float = -0.5
    service: float = -0.1
    jam: float = -0.1
    move: float = -0.01

    def __post_init__(self):
        if self.mode not in ("sparse", "dense"):
            raise ValueError(f"reward mode must be 'sparse' or 'dense', got {self.mode!r}")


def sparse(**overrides) -> RewardConfig:
    """Only the terminal production bonus is kept."""
    cfg = replace(RewardConfig(mode="sparse"), delta_tons=0.0, wait=0.0, service=0.0,
                  jam=0.0, move=0.0)
    return replace(cfg, **overrides)


def dense(**overrides) -> RewardConfig:
    return replace(RewardConfig(mode="dense"), **overrides)


def make(mode: str, **overrides) -> RewardConfig:
    if mode == "sparse":
        return sparse(**overrides)
    if mode == "dense":
        return dense(**overrides)
    raise ValueError(f"reward mode must be 'sparse' or 'dense', got {mode!r}")


def step_reward(info: StepInfo, config: RewardConfig) -> float:
    r = 0.0
    if config.delta_tons and info.delta_tons:
        r += config.delta_tons * math.log(info.delta_tons + 1.0)
    r += config.wait * info.wait_duration
    r += config.service * info.service_duration
    r += config.jam * info.jam_duration
    r += config.move * info.move_duration
    if info.episode_done:
        r += config.final_tons * info.final_tons
    return r
