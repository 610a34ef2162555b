"""PPO with elapsed-time discounting and adaptive teacher guidance.

Dispatch decisions arrive at uneven clock intervals, so every transition
records ``delta_t``, the minutes until the next decision of the same
worker.  Discounting and trace decay are applied per minute:

    delta_t-step TD target   r + gamma**dt * V(s')
    advantage recursion      A_t = delta_t + (gamma*lam)**dt_t * A_{t+1}

The learner is pulled toward the SPTF teacher by adding
``-guide_coef * mean(log pi(a_teacher|s))`` to the loss, with
``guide_coef = alpha * (1 - c_teacher)`` where ``c_teacher`` is the mean
probability the policy already gives the teacher's choice.  Guidance is
switched off for good once an episode reaches ``base_tons``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dispatchers import run_episode, sptf_choice
from .errors import ShapeMismatch, UnsealedBuffer
from .observation import encode, obs_dim
from .policy import LossSpec, Minibatch, PolicyNet, clip_by_global_norm
from .reward import RewardConfig, step_reward
from .scenario import ScenarioConfig
from .sim import MineSim

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "episode", "produced_tons", "mean_reward", "c_teacher",
                  "guide_coef", "guide_active", "policy_loss", "value_loss", "entropy", "kl")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 256
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lr: float = 3e-4
    rollout_length: int = 2048
    alpha: float = 0.5
    base_tons: float | None = None
    normalize_advantages: bool = True
    max_grad_norm: float = 0.5
    hidden: int = 128
    gae_mode: str = "recursive"  # or "literal"
    normalize_rewards: bool = True
    eval_every: int = 0
    checkpoint_every: int = 10

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in (0, 1]")
        if self.clip_eps <= 0 or self.alpha < 0:
            raise ValueError("clip_eps must be > 0 and alpha >= 0")
        if self.gae_mode not in ("recursive", "literal"):
            raise ValueError("gae_mode must be 'recursive' or 'literal'")


@dataclass
class Transition:
    obs: np.ndarray
    mask: np.ndarray
    action: int
    log_prob: float
    value: float
    reward: float
    delta_t: float
    done: bool
    teacher_action: int


# -- elapsed-time TD / GAE -------------------------------------------------------

def td_target(reward, gamma, delta_t, next_value, done):
    return reward + gamma ** delta_t * next_value * (1.0 - float(done))


def gae(rewards, values, delta_ts, dones, last_value, gamma, lam, mode="recursive"):
    """Advantages and returns for one ordered stream of transitions.

    ``last_value`` bootstraps the state after the final transition and is
    ignored when that transition is terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    delta_ts = np.asarray(delta_ts, dtype=float)
    dones = np.asarray(dones, dtype=float)
    T = len(rewards)
    next_values = np.append(values[1:], last_value)
    disc = gamma ** delta_ts
    deltas = rewards + disc * next_values * (1.0 - dones) - values
    adv = np.zeros(T)
    if mode == "recursive":
        running = 0.0
        for t in range(T - 1, -1, -1):
            running = deltas[t] + disc[t] * lam ** delta_ts[t] * (1.0 - dones[t]) * running
            adv[t] = running
    elif mode == "literal":
        # sum_l (gamma**dt_{t+l} * lam**dt_{t+l})**l * delta_{t+l}, truncated at episode ends
        for t in range(T):
            total = 0.0
            for l in range(T - t):
                i = t + l
                total += (disc[i] * lam ** delta_ts[i]) ** l * deltas[i]
                if dones[i]:
                    break
            adv[t] = total
    else:
        raise ValueError(f"unknown gae mode {mode!r}")
    return adv, adv + values


class RolloutBuffer:
    """Transitions of one rollout, one ordered stream per worker."""

    def __init__(self, workers: int = 1):
        self.streams = [[] for _ in range(workers)]
        self.bootstrap = [0.0] * workers
        self.sealed = False

    def add(self, worker: int, transition: Transition) -> None:
        if self.sealed:
            raise RuntimeError("buffer is sealed")
        self.streams[worker].append(transition)

    def seal(self, bootstrap_values) -> None:
        self.bootstrap = [float(v) for v in bootstrap_values]
        self.sealed = True

    def __len__(self):
        return sum(len(s) for s in self.streams)

    def transitions(self):
        for stream in self.streams:
            yield from stream

    def arrays(self) -> dict:
        ts = list(self.transitions())
        return {
            "obs": np.array([t.obs for t in ts]),
            "mask": np.array([t.mask for t in ts]),
            "actions": np.array([t.action for t in ts]),
            "log_probs": np.array([t.log_prob for t in ts]),
            "values": np.array([t.value for t in ts]),
            "rewards": np.array([t.reward for t in ts]),
            "teacher_actions": np.array([t.teacher_action for t in ts]),
        }


def compute_gae(buffer: RolloutBuffer, config: TrainConfig):
    """Flat (advantages, returns) over the buffer; advantages normalised if configured."""
    if not buffer.sealed:
        raise UnsealedBuffer("seal the buffer with bootstrap values first")
    advs, rets = [], []
    for stream, boot in zip(buffer.streams, buffer.bootstrap):
        if not stream:
            continue
        a, r = gae([t.reward for t in stream], [t.value for t in stream],
                   [t.delta_t for t in stream], [t.done for t in stream],
                   boot, config.gamma, config.lam, config.gae_mode)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs) if advs else np.zeros(0)
    ret = np.concatenate(rets) if rets else np.zeros(0)
    if config.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, ret


# -- loss terms ----------------------------------------------------------------

def ppo_policy_loss(new_log_probs, old_log_probs, advantages, clip_eps) -> float:
    ratio = np.exp(np.asarray(new_log_probs) - np.asarray(old_log_probs))
    adv = np.asarray(advantages, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return float(-np.mean(np.minimum(ratio * adv, clipped * adv)))


def guide_loss(teacher_log_probs) -> float:
    """Mean log-likelihood of the teacher's actions (maximised during training)."""
    return float(np.mean(teacher_log_probs))


def c_teacher(teacher_log_probs) -> float:
    return float(np.mean(np.exp(teacher_log_probs)))


@dataclass
class GuidanceState:
    c_teacher: float = 0.0
    guide_coef: float = 0.0
    last_episode_tons: float | None = None
    active: bool = True


def guide_coef(tons, base_tons, alpha, c, state: GuidanceState) -> float:
    """Adaptive guidance weight; latches to zero once ``tons`` reaches ``base_tons``."""
    state.c_teacher = c
    state.last_episode_tons = tons
    if state.active and tons is not None and base_tons is not None and tons >= base_tons:
        state.active = False
    state.guide_coef = alpha * (1.0 - c) if state.active else 0.0
    return state.guide_coef


class ReturnScaler:
    """Divides rewards by the running std of the elapsed-time discounted return.

    One return accumulator per worker; it restarts at episode ends.
    """

    def __init__(self, workers: int, gamma: float):
        self.gamma = gamma
        self.acc = np.zeros(workers)
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def __call__(self, worker: int, reward: float, delta_t: float, done: bool) -> float:
        self.acc[worker] = self.acc[worker] * self.gamma ** delta_t + reward
        x = self.acc[worker]
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)
        if done:
            self.acc[worker] = 0.0
        var = self.m2 / self.count if self.count > 1 else 1.0
        return reward / math.sqrt(var + 1e-8) if var > 1e-8 else reward

    def state(self) -> dict:
        return {"acc": self.acc.tolist(), "count": self.count, "mean": self.mean, "m2": self.m2}

    def load(self, state: dict) -> None:
        self.acc = np.array(state["acc"], dtype=float)
        self.count, self.mean, self.m2 = state["count"], state["mean"], state["m2"]


# -- optimisation ----------------------------------------------------------------

def update(buffer: RolloutBuffer, net: PolicyNet, config: TrainConfig,
           guidance: GuidanceState, rng, tons=None, advantages=None) -> dict:
    """Run the PPO epochs over ``buffer``; returns averaged statistics.

    ``tons`` is the production of the latest completed episode and feeds
    the guidance latch.  Precomputed ``advantages`` may be passed as an
    (advantages, returns) pair.
    """
    adv, ret = advantages if advantages is not None else compute_gae(buffer, config)
    arr = buffer.arrays()
    data = Minibatch(arr["obs"], arr["mask"], arr["actions"], arr["log_probs"],
                     adv, ret, arr["teacher_actions"])
    n = len(data)
    spec = LossSpec(clip_eps=config.clip_eps, value_coef=config.value_coef,
                    entropy_coef=config.entropy_coef)
    keys = ("policy_loss", "value_loss", "entropy", "kl", "c_teacher", "guide_coef", "guide_loss")
    sums = dict.fromkeys(keys, 0.0)
    count = 0
    mb = max(1, min(config.minibatch_size, n))
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            batch = data.subset(order[start:start + mb])
            fw = net.forward_batch(batch.obs, batch.mask)
            rows = np.arange(len(batch))
            c = c_teacher(fw[0][rows, batch.teacher_actions.astype(int)])
            spec.guide_coef = guide_coef(tons, config.base_tons, config.alpha, c, guidance)
            _, stats, grads = net.loss_and_grads(batch, spec, forward=fw)
            net.optimizer_step(clip_by_global_norm(grads, config.max_grad_norm), config.lr)
            stats["guide_coef"] = spec.guide_coef
            for k in keys:
                sums[k] += stats[k]
            count += 1
    return {k: v / max(count, 1) for k, v in sums.items()}


# -- rollouts, training and evaluation ------------------------------------------

class _Worker:
    def __init__(self, scenario, seed_seq):
        self.sim = MineSim(scenario)
        self.rng = np.random.default_rng(seed_seq)
        self.request = None
        self.episodes = 0

    def new_episode(self):
        self.request = self.sim.reset(int(self.rng.integers(2 ** 31)))


@dataclass
class TrainResult:
    net: PolicyNet
    metrics: list
    episodes: list
    evaluations: list
    base_tons: float | None
    guidance: GuidanceState
    steps: int
    interrupted: bool = False


def sptf_baseline(scenario: ScenarioConfig, seeds) -> float:
    sim = MineSim(scenario)
    return float(np.mean([run_episode(sim, "sptf", s).produced_tons for s in seeds]))


def greedy_action(net: PolicyNet, sim: MineSim, request) -> int:
    return net.greedy(encode(sim, request), sim.legal_mask(request))


def evaluate(net: PolicyNet, scenario: ScenarioConfig, seeds) -> list:
    """Greedy (argmax) episodes, one per seed; returns EpisodeMetrics list."""
    m, n = scenario.num_load_sites, scenario.num_dump_sites
    if net.obs_dim != obs_dim(m, n) or net.action_dim != max(m, n):
        raise ShapeMismatch(
            f"network ({net.obs_dim} inputs, {net.action_dim} actions) does not fit "
            f"scenario ({obs_dim(m, n)} inputs, {max(m, n)} actions)")
    sim = MineSim(scenario)
    out = []
    for seed in seeds:
        req = sim.reset(int(seed))
        while not sim.done:
            req, _ = sim.step(greedy_action(net, sim, req))
        out.append(sim.metrics())
    return out


def summarize(metrics) -> dict:
    rows = [asdict(m) for m in metrics]
    keys = rows[0].keys() if rows else ()
    return {k: (float(np.mean([r[k] for r in rows])), float(np.std([r[k] for r in rows])))
            for k in keys}


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def _read_csv(path: Path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ints = {"step", "episode", "worker", "guide_active"}
    return [{k: (int(v) if k in ints else float(v)) for k, v in r.items()} for r in rows]


def train(scenario: ScenarioConfig, reward_config: RewardConfig, train_config: TrainConfig,
          guided: bool, total_steps: int, seed: int = 0, workers: int = 1,
          out_dir=None, eval_seeds=None, resume: bool = False) -> TrainResult:
    """Alternate rollout collection and PPO updates for ``total_steps`` decisions.

    Each worker owns an independent simulator whose episodes draw their
    seeds from a per-worker stream, so results depend only on ``seed`` and
    ``workers``.  With ``out_dir`` the run writes ``metrics.csv``,
    ``episodes.csv``, ``evaluations.csv``, ``summary.json`` and
    ``checkpoint.npz`` there; ``resume`` continues from that checkpoint,
    restarting the interrupted episodes.
    """
    cfg = train_config
    m, n = scenario.num_load_sites, scenario.num_dump_sites
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    eval_seeds = list(eval_seeds) if eval_seeds else []

    ckpt = out / "checkpoint.npz" if out is not None else None
    if resume and ckpt is not None and ckpt.exists():
        net, meta = PolicyNet.load(ckpt, obs_dim(m, n), max(m, n))
        state = meta["train_state"]
        steps, updates, episode_count = state["steps"], state["updates"], state["episodes"]
        guidance = GuidanceState(**state["guidance"])
        cfg.base_tons = state["base_tons"]
        rng = np.random.default_rng()
        rng.bit_generator.state = state["rng"]
        worker_states = state["workers"]
        scaler_state = state["scaler"]
        metrics = _read_csv(out / "metrics.csv")
        episodes = _read_csv(out / "episodes.csv")
        evaluations = _read_csv(out / "evaluations.csv") if (out / "evaluations.csv").exists() else []
        log.info("resuming from step %d", steps)
    else:
        net = PolicyNet(obs_dim(m, n), max(m, n), cfg.hidden, seed=seed)
        steps = updates = episode_count = 0
        guidance = GuidanceState(active=guided)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        worker_states = scaler_state = None
        metrics, episodes, evaluations = [], [], []
        if guided and cfg.base_tons is None:
            cfg.base_tons = sptf_baseline(scenario, eval_seeds or [seed])
    if not guided:
        guidance.active = False

    scaler = ReturnScaler(workers, cfg.gamma)
    if scaler_state is not None:
        scaler.load(scaler_state)
    seqs = np.random.SeedSequence([seed, 1]).spawn(workers)
    pool = [_Worker(scenario, s) for s in seqs]
    if worker_states is not None:
        for w, st in zip(pool, worker_states):
            w.rng.bit_generator.state = st["rng"]
            w.episodes = st["episodes"]
    for w in pool:
        w.new_episode()
    last_tons = {}
    for row in episodes:
        last_tons[row["worker"]] = row["produced_tons"]

    def save():
        if ckpt is None:
            return
        net.save(ckpt, train_state={
            "steps": steps, "updates": updates, "episodes": episode_count,
            "guidance": asdict(guidance), "base_tons": cfg.base_tons,
            "rng": rng.bit_generator.state, "scaler": scaler.state(),
            "workers": [{"rng": w.rng.bit_generator.state, "episodes": w.episodes} for w in pool],
        }, guided=guided, reward=asdict(reward_config), config=asdict(cfg))
        _write_csv(out / "metrics.csv", METRIC_COLUMNS, metrics)
        _write_csv(out / "episodes.csv", ("step", "worker", "episode", "produced_tons"), episodes)
        _write_csv(out / "evaluations.csv", ("step", "mean_tons", "std_tons"), evaluations)
        summary = {"guided": guided, "base_tons": cfg.base_tons, "steps": steps,
                   "updates": updates, "episodes": episode_count,
                   "guidance_active": guidance.active, "reward": asdict(reward_config),
                   "config": asdict(cfg), "seed": seed, "workers": workers}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")

    interrupted = False
    per_worker = max(1, cfg.rollout_length // workers)
    try:
        while steps < total_steps:
            buf = RolloutBuffer(workers)
            n_steps = min(per_worker, max(1, math.ceil((total_steps - steps) / workers)))
            rewards = []
            for wi, w in enumerate(pool):
                for _ in range(n_steps):
                    sim, req = w.sim, w.request
                    view = sim.targets(req)
                    obs = encode(sim, req, view)
                    mask = sim.legal_mask(req)
                    teacher = sptf_choice(view.travel, view.est_wait, view.service)
                    a, lp, v = net.sample(obs, mask, w.rng)
                    nxt, info = sim.step(a)
                    r = step_reward(info, reward_config)
                    rewards.append(r)
                    dt = nxt.clock - req.clock
                    if cfg.normalize_rewards:
                        r = scaler(wi, r, dt, info.episode_done)
                    buf.add(wi, Transition(obs, mask, a, lp, v, r, dt, info.episode_done, teacher))
                    if info.episode_done:
                        w.episodes += 1
                        episode_count += 1
                        last_tons[wi] = info.final_tons
                        episodes.append({"step": steps + len(buf), "worker": wi,
                                         "episode": w.episodes, "produced_tons": info.final_tons})
                        w.new_episode()
                    else:
                        w.request = nxt
            boot = []
            for w, stream in zip(pool, buf.streams):
                if stream and not stream[-1].done:
                    boot.append(net.forward(encode(w.sim, w.request), w.sim.legal_mask(w.request)).value)
                else:
                    boot.append(0.0)
            buf.seal(boot)
            steps += len(buf)
            tons = max(last_tons.values()) if last_tons else None
            stats = update(buf, net, cfg, guidance, rng, tons=tons)
            updates += 1
            metrics.append({
                "step": steps, "episode": episode_count,
                "produced_tons": float(tons) if tons is not None else 0.0,
                "mean_reward": float(np.mean(rewards)),
                "c_teacher": stats["c_teacher"], "guide_coef": stats["guide_coef"],
                "guide_active": int(guidance.active),
                "policy_loss": stats["policy_loss"], "value_loss": stats["value_loss"],
                "entropy": stats["entropy"], "kl": stats["kl"],
            })
            log.info("step %d tons %s c_teacher %.3f guide %.3f", steps, tons,
                     stats["c_teacher"], stats["guide_coef"])
            if cfg.eval_every and eval_seeds and updates % cfg.eval_every == 0:
                tons_eval = [mm.produced_tons for mm in evaluate(net, scenario, eval_seeds)]
                evaluations.append({"step": steps, "mean_tons": float(np.mean(tons_eval)),
                                    "std_tons": float(np.std(tons_eval))})
            if cfg.checkpoint_every and updates % cfg.checkpoint_every == 0:
                save()
    except KeyboardInterrupt:
        interrupted = True
        log.warning("interrupted at step %d; writing checkpoint", steps)
    save()
    return TrainResult(net, metrics, episodes, evaluations, cfg.base_tons, guidance, steps,
                       interrupted)
