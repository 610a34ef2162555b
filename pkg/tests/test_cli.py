import csv
import json

import pytest

from minedispatch.cli import main
from minedispatch.dispatchers import DISPATCHERS
from minedispatch.policy import PolicyNet
from minedispatch.scenario import reduced_scenario, save_scenario

REDUCED = "reduced:2,2,4,30"


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_episode_rows_and_summary(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["run", "--scenario", REDUCED, "--dispatcher", "sptf", "--episodes", "3",
                 "--seed", "5", "--out", str(out)]) == 0
    data = rows(out)
    assert [r["seed"] for r in data] == ["5", "6", "7", "mean"]
    assert list(data[0]) == ["scenario", "dispatcher", "seed", "produced_tons", "match_factor",
                             "total_wait_time", "jam_ratio", "trips_completed"]
    tons = [float(r["produced_tons"]) for r in data]
    assert tons[-1] == pytest.approx(sum(tons[:3]) / 3)


def test_run_naive_below_sptf_on_default(tmp_path):
    for kind in ("naive", "sptf"):
        assert main(["run", "--dispatcher", kind, "--seed", "0", "--out",
                     str(tmp_path / f"{kind}.csv")]) == 0
    naive = float(rows(tmp_path / "naive.csv")[0]["produced_tons"])
    sptf = float(rows(tmp_path / "sptf.csv")[0]["produced_tons"])
    assert naive < sptf


def test_run_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["run", "--scenario", REDUCED, "--dispatcher", "random", "--episodes", "2",
              "--out", str(tmp_path / f"{name}.csv")])
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_unknown_dispatcher_is_usage_error(capsys):
    assert main(["run", "--dispatcher", "bogus"]) == 2
    err = capsys.readouterr().err
    assert all(name in err for name in DISPATCHERS)


def test_scenario_errors_exit_3(tmp_path):
    assert main(["run", "--dispatcher", "naive", "--scenario", str(tmp_path / "none.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{oops", encoding="utf-8")
    assert main(["run", "--dispatcher", "naive", "--scenario", str(bad)]) == 3
    assert main(["run", "--dispatcher", "naive", "--scenario", "reduced:0,1,1,10"]) == 3


def test_scenario_file_accepted(tmp_path):
    path = tmp_path / "s.json"
    save_scenario(reduced_scenario(1, 1, 2, 20), path)
    assert main(["run", "--dispatcher", "naive", "--scenario", str(path)]) == 0


def test_train_requires_steps():
    assert main(["train", "--reward", "dense"]) == 2


@pytest.mark.parametrize("rew,guide", [("sparse", "off"), ("dense", "on"), ("sparse", "on"),
                                       ("dense", "off")])
def test_train_combinations(tmp_path, rew, guide):
    out = tmp_path / "t"
    # the first update precedes the first finished episode, so the latch cannot have fired
    assert main(["train", "--scenario", "reduced:2,2,8,60", "--reward", rew, "--guide", guide,
                 "--steps", "128", "--rollout-length", "64", "--minibatch-size", "32",
                 "--hidden", "16", "--out", str(out)]) == 0
    metrics = rows(out / "metrics.csv")
    coefs = [float(r["guide_coef"]) for r in metrics]
    if guide == "off":
        assert all(c == 0.0 for c in coefs)
    else:
        assert coefs[0] > 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["guided"] == (guide == "on") and summary["reward"]["mode"] == rew
    assert (out / "checkpoint.npz").exists()


def test_train_rejects_bad_config(tmp_path):
    assert main(["train", "--scenario", REDUCED, "--steps", "10", "--gamma", "2",
                 "--out", str(tmp_path)]) == 3
    assert main(["train", "--scenario", REDUCED, "--steps", "0", "--out", str(tmp_path)]) == 2


@pytest.fixture
def checkpoint(tmp_path):
    out = tmp_path / "train"
    main(["train", "--scenario", REDUCED, "--steps", "128", "--rollout-length", "128",
          "--hidden", "8", "--out", str(out)])
    return out / "checkpoint.npz"


def test_eval_rows(tmp_path, checkpoint):
    out = tmp_path / "e.csv"
    assert main(["eval", "--checkpoint", str(checkpoint), "--scenario", REDUCED,
                 "--episodes", "3", "--seeds", "1,2,3", "--out", str(out)]) == 0
    data = rows(out)
    assert len(data) == 4 and data[-1]["seed"] == "mean"
    assert {r["dispatcher"] for r in data} == {"ppo"}


def test_eval_shape_mismatch_exit_4(tmp_path, checkpoint):
    assert main(["eval", "--checkpoint", str(checkpoint), "--scenario", "reduced:3,2,4,30"]) == 4
    junk = tmp_path / "junk.npz"
    junk.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(junk), "--scenario", REDUCED]) == 4
    other = tmp_path / "other.npz"
    PolicyNet(5, 2, hidden=4).save(other)
    assert main(["eval", "--checkpoint", str(other), "--scenario", REDUCED]) == 4


def test_eval_seed_count_mismatch(checkpoint):
    assert main(["eval", "--checkpoint", str(checkpoint), "--scenario", REDUCED,
                 "--episodes", "4", "--seeds", "1,2"]) == 2


def test_sweep_row_count(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--scenario", REDUCED, "--fleet-min", "1", "--fleet-max", "5",
                 "--step", "2", "--dispatchers", "naive,sptf", "--out", str(out)]) == 0
    data = rows(out)
    assert len(data) == 3 * 2
    assert [r["fleet_size"] for r in data] == ["1", "1", "3", "3", "5", "5"]


def test_sweep_single_size_all_dispatchers(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--scenario", REDUCED, "--fleet-min", "1", "--fleet-max", "1",
                 "--out", str(out)]) == 0
    data = rows(out)
    assert len(data) == len(DISPATCHERS)
    assert all(float(r["produced_tons"]) >= 0 for r in data)


def test_sptf_tons_non_decreasing_with_fleet(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--scenario", "reduced:2,2,8,60", "--fleet-min", "1", "--fleet-max",
                 "8", "--dispatchers", "sptf", "--episodes", "3", "--out", str(out)]) == 0
    tons = [float(r["produced_tons"]) for r in rows(out)]
    assert len(tons) == 8
    assert all(b >= a for a, b in zip(tons, tons[1:]))


def test_sweep_with_checkpoint_adds_ppo(tmp_path, checkpoint):
    out = tmp_path / "s.csv"
    assert main(["sweep", "--checkpoint", str(checkpoint), "--scenario", REDUCED,
                 "--fleet-min", "2", "--fleet-max", "3", "--dispatchers", "sptf",
                 "--out", str(out)]) == 0
    assert [r["dispatcher"] for r in rows(out)] == ["sptf", "ppo", "sptf", "ppo"]


@pytest.mark.parametrize("args", [["--fleet-min", "0", "--fleet-max", "3"],
                                  ["--fleet-min", "4", "--fleet-max", "3"],
                                  ["--fleet-min", "1", "--fleet-max", "3", "--step", "0"],
                                  ["--fleet-min", "1", "--fleet-max", "3", "--dispatchers", "x"],
                                  ["--fleet-min", "1", "--fleet-max", "3", "--dispatchers", "ppo"]])
def test_sweep_bad_range_exit_2(args):
    assert main(["sweep", "--scenario", REDUCED] + args) == 2


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "minedispatch", "run", "--dispatcher", "naive",
                           "--scenario", "reduced:1,1,1,10"], capture_output=True, text=True)
    assert proc.returncode == 0 and "tons=" in proc.stdout
