"""Command-line entry point: ``minedispatch {run,train,eval,sweep}``.

Exit codes: 0 success, 2 usage error, 3 scenario or configuration error,
4 checkpoint incompatible with the scenario.  File outputs depend only on
the flags, so repeating a command reproduces its files byte for byte;
wall-clock runtimes are printed but never written.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import reward
from .dispatchers import DISPATCHERS, run_episode
from .errors import MineDispatchError, ParseError, ShapeMismatch, ValidationError
from .policy import PolicyNet
from .ppo import TrainConfig, evaluate, train
from .scenario import resolve_scenario
from .sim import EpisodeMetrics, MineSim

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_CHECKPOINT = 0, 2, 3, 4
METRIC_FIELDS = ("produced_tons", "match_factor", "total_wait_time", "jam_ratio", "trips_completed")
RUN_COLUMNS = ("scenario", "dispatcher", "seed") + METRIC_FIELDS
SWEEP_COLUMNS = ("fleet_size", "dispatcher", "episodes") + METRIC_FIELDS

log = logging.getLogger("minedispatch")


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    scenario: str
    dispatcher: str
    seed: int
    metrics: EpisodeMetrics
    runtime_seconds: float

    def row(self) -> dict:
        return {"scenario": self.scenario, "dispatcher": self.dispatcher, "seed": self.seed,
                **asdict(self.metrics)}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    if path.parent != Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def mean_row(rows, **fixed) -> dict:
    out = dict(fixed)
    for f in METRIC_FIELDS:
        out[f] = float(np.mean([r[f] for r in rows]))
    return out


def parse_int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _scenario(args):
    return resolve_scenario(args.scenario)


def _scenario_id(args) -> str:
    return args.scenario or "default"


def _print_summary(label, row, runtime):
    print(f"{label}: tons={row['produced_tons']:.2f} match={row['match_factor']:.3f} "
          f"wait={row['total_wait_time']:.2f} jam={row['jam_ratio']:.3f} "
          f"trips={row['trips_completed']:.1f} ({runtime:.2f}s)")


# -- commands ------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _scenario(args)
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    sim = MineSim(cfg)
    reports = []
    t0 = time.perf_counter()
    for seed in range(args.seed, args.seed + args.episodes):
        t = time.perf_counter()
        m = run_episode(sim, args.dispatcher, seed)
        reports.append(RunReport(_scenario_id(args), args.dispatcher, seed, m,
                                 time.perf_counter() - t))
    rows = [r.row() for r in reports]
    summary = mean_row(rows, scenario=_scenario_id(args), dispatcher=args.dispatcher, seed="mean")
    if args.out:
        write_csv(args.out, RUN_COLUMNS, rows + [summary])
    _print_summary(args.dispatcher, summary, time.perf_counter() - t0)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    overrides = {k: getattr(args, k) for k in (
        "lr", "rollout_length", "minibatch_size", "epochs", "alpha", "hidden", "gamma", "lam",
        "clip_eps", "entropy_coef", "value_coef", "base_tons", "eval_every", "gae_mode")
        if getattr(args, k) is not None}
    try:
        return TrainConfig(**overrides)
    except ValueError as exc:
        raise ValidationError("train_config", str(exc)) from None


def cmd_train(args) -> int:
    cfg = _scenario(args)
    if args.steps < 1 or args.workers < 1:
        raise UsageError("--steps and --workers must be >= 1")
    tcfg = _train_config(args)
    eval_seeds = parse_int_list(args.eval_seeds) if args.eval_seeds else None
    t0 = time.perf_counter()
    res = train(cfg, reward.make(args.reward), tcfg, args.guide == "on", args.steps,
                seed=args.seed, workers=args.workers, out_dir=args.out, eval_seeds=eval_seeds,
                resume=args.resume)
    last = res.metrics[-1] if res.metrics else {}
    print(f"trained {res.steps} decisions, {len(res.episodes)} episodes, "
          f"last tons {last.get('produced_tons', 0.0):.1f}, "
          f"guidance {'on' if res.guidance.active else 'off'} "
          f"({time.perf_counter() - t0:.1f}s) -> {args.out}")
    return 130 if res.interrupted else EXIT_OK


def _load_checkpoint(path, cfg) -> PolicyNet:
    from .observation import obs_dim

    m, n = cfg.num_load_sites, cfg.num_dump_sites
    try:
        net, _ = PolicyNet.load(path, obs_dim(m, n), max(m, n))
    except (OSError, ValueError, KeyError) as exc:
        raise ShapeMismatch(f"cannot read checkpoint {path}: {exc}") from None
    return net


def cmd_eval(args) -> int:
    cfg = _scenario(args)
    net = _load_checkpoint(args.checkpoint, cfg)
    if args.seeds:
        seeds = parse_int_list(args.seeds)
        if args.episodes is not None:
            if args.episodes > len(seeds):
                raise UsageError(f"--episodes {args.episodes} exceeds the {len(seeds)} seeds given")
            seeds = seeds[:args.episodes]
    else:
        seeds = list(range(args.seed, args.seed + (args.episodes or 1)))
    if not seeds:
        raise UsageError("no evaluation seeds")
    t0 = time.perf_counter()
    metrics = evaluate(net, cfg, seeds)
    rows = [RunReport(_scenario_id(args), "ppo", s, m, 0.0).row() for s, m in zip(seeds, metrics)]
    summary = mean_row(rows, scenario=_scenario_id(args), dispatcher="ppo", seed="mean")
    if args.out:
        write_csv(args.out, RUN_COLUMNS, rows + [summary])
    _print_summary("ppo", summary, time.perf_counter() - t0)
    return EXIT_OK


def cmd_sweep(args) -> int:
    if args.fleet_min < 1 or args.fleet_max < args.fleet_min or args.step < 1:
        raise UsageError("need 1 <= --fleet-min <= --fleet-max and --step >= 1")
    cfg = _scenario(args)
    kinds = [d.strip() for d in args.dispatchers.split(",") if d.strip()] if args.dispatchers \
        else list(DISPATCHERS)
    unknown = [d for d in kinds if d not in DISPATCHERS and d != "ppo"]
    if unknown:
        raise UsageError(f"unknown dispatcher(s) {', '.join(unknown)}; "
                         f"choose from {', '.join(DISPATCHERS)}")
    net = _load_checkpoint(args.checkpoint, cfg) if args.checkpoint else None
    if net is not None and "ppo" not in kinds:
        kinds.append("ppo")
    if "ppo" in kinds and net is None:
        raise UsageError("dispatcher 'ppo' needs --checkpoint")
    seeds = list(range(args.seed, args.seed + args.episodes))
    rows = []
    t0 = time.perf_counter()
    for size in range(args.fleet_min, args.fleet_max + 1, args.step):
        sized = cfg.with_fleet_size(size)
        sim = MineSim(sized)
        for kind in kinds:
            if kind == "ppo":
                ms = evaluate(net, sized, seeds)
            else:
                ms = [run_episode(sim, kind, s) for s in seeds]
            row = mean_row([asdict(m) for m in ms], fleet_size=size, dispatcher=kind,
                           episodes=len(seeds))
            rows.append(row)
            log.info("fleet %d %s tons %.1f", size, kind, row["produced_tons"])
    if args.out:
        write_csv(args.out, SWEEP_COLUMNS, rows)
    print(f"swept {len(rows)} (fleet size, dispatcher) pairs in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minedispatch", description="Mine truck dispatch simulator")
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = "scenario JSON path, 'default', or 'reduced:m,n,k,minutes'"

    r = sub.add_parser("run", help="run a rule dispatcher")
    r.add_argument("--scenario", default=None, help=scen_help)
    r.add_argument("--dispatcher", required=True, choices=DISPATCHERS)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--episodes", type=int, default=1)
    r.add_argument("--out", default=None, help="CSV output path")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("train", help="train a PPO dispatcher")
    t.add_argument("--scenario", default=None, help=scen_help)
    t.add_argument("--reward", choices=("sparse", "dense"), default="dense")
    t.add_argument("--guide", choices=("on", "off"), default="on")
    t.add_argument("--steps", type=int, required=True, help="decision budget")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--out", default="train_out", help="output directory")
    t.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.npz")
    t.add_argument("--eval-seeds", default=None,
                   help="comma-separated seeds for base_tons and periodic evaluation")
    for name, typ in (("lr", float), ("rollout-length", int), ("minibatch-size", int),
                      ("epochs", int), ("alpha", float), ("hidden", int), ("gamma", float),
                      ("lam", float), ("clip-eps", float), ("entropy-coef", float),
                      ("value-coef", float), ("base-tons", float), ("eval-every", int)):
        t.add_argument(f"--{name}", type=typ, default=None)
    t.add_argument("--gae-mode", choices=("recursive", "literal"), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", default=None, help=scen_help)
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--seeds", default=None, help="comma-separated episode seeds")
    e.add_argument("--seed", type=int, default=0, help="first seed when --seeds is absent")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="production versus fleet size")
    s.add_argument("--checkpoint", default=None)
    s.add_argument("--scenario", default=None, help=scen_help)
    s.add_argument("--fleet-min", type=int, required=True)
    s.add_argument("--fleet-max", type=int, required=True)
    s.add_argument("--step", type=int, default=1)
    s.add_argument("--dispatchers", default=None, help="comma-separated; default all rules")
    s.add_argument("--episodes", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_sweep)
    return p


def _setup_logging() -> None:
    level = os.environ.get("MINE_DISPATCH_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ShapeMismatch as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ParseError, ValidationError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except MineDispatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
