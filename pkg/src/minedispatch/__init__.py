"""Truck dispatch for open-pit mines: a discrete-event haulage simulator,
rule-based dispatchers and a numpy PPO learner with teacher guidance."""
from .dispatchers import DISPATCHERS, decide, run_episode
from .errors import (EpisodeNotFinished, EpisodeOver, IllegalAction, MineDispatchError,
                     ParseError, ShapeMismatch, UnsealedBuffer, ValidationError)
from .observation import encode, obs_dim
from .policy import PolicyNet
from .ppo import TrainConfig, evaluate, train
from .reward import RewardConfig, step_reward
from .scenario import (ScenarioConfig, ShovelSpec, TruckSpec, default_scenario, load_scenario,
                       reduced_scenario, save_scenario)
from .sim import DispatchRequest, EpisodeMetrics, MineSim, StepInfo

__version__ = "0.1.0"
