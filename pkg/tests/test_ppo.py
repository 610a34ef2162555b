import numpy as np
import pytest

from minedispatch import reward
from minedispatch.errors import ShapeMismatch, UnsealedBuffer
from minedispatch.policy import LossSpec, Minibatch, PolicyNet
from minedispatch.ppo import (GuidanceState, ReturnScaler, RolloutBuffer, TrainConfig, Transition,
                              c_teacher, compute_gae, evaluate, gae, guide_coef, guide_loss,
                              ppo_policy_loss, td_target, train)
from minedispatch.scenario import reduced_scenario

DTS = (0.25, 0.5, 1.0, 2.0, 5.0)


def random_rollout(rng, length=None, dts=DTS):
    T = length or int(rng.integers(1, 65))
    return (rng.normal(size=T), rng.normal(size=T), rng.choice(dts, size=T),
            rng.random(T) < 0.1, float(rng.normal()))


def elapsed_time_oracle(rewards, values, dts, dones, last_value, gamma, lam):
    """A_t = sum_l (gamma*lam)**(elapsed minutes from t to t+l) * delta_{t+l}, cut at episode ends."""
    T = len(rewards)
    nxt = list(values[1:]) + [last_value]
    deltas = [rewards[i] + gamma ** dts[i] * nxt[i] * (1 - dones[i]) - values[i] for i in range(T)]
    adv = []
    for t in range(T):
        total, elapsed = 0.0, 0.0
        for i in range(t, T):
            total += (gamma * lam) ** elapsed * deltas[i]
            if dones[i]:
                break
            elapsed += dts[i]
        adv.append(total)
    return np.array(adv)


def standard_gae(rewards, values, dones, last_value, gamma, lam):
    T = len(rewards)
    adv = np.zeros(T)
    last = 0.0
    for t in reversed(range(T)):
        nv = last_value if t == T - 1 else values[t + 1]
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * nv * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv


def test_recursive_gae_matches_elapsed_time_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        r, v, dt, d, boot = random_rollout(rng)
        gamma, lam = rng.uniform(0.9, 1.0), rng.uniform(0.8, 1.0)
        adv, ret = gae(r, v, dt, d, boot, gamma, lam)
        assert np.allclose(adv, elapsed_time_oracle(r, v, dt, d, boot, gamma, lam),
                           atol=1e-9, rtol=0)
        assert np.allclose(ret, adv + v)


def test_worked_two_step_example():
    # gamma = lam = 0.5, dt = (1, 2), no terminal
    adv, _ = gae([1.0, 2.0], [0.0, 0.0], [1.0, 2.0], [False, False], 4.0, 0.5, 0.5)
    d1 = 2.0 + 0.25 * 4.0
    assert adv[1] == pytest.approx(d1)
    assert adv[0] == pytest.approx(1.0 + 0.25 * d1)


def test_terminal_cuts_bootstrap():
    adv, ret = gae([1.0, 5.0], [0.5, 0.5], [1.0, 1.0], [True, False], 100.0, 0.9, 0.9)
    assert adv[0] == pytest.approx(0.5)
    assert adv[1] == pytest.approx(5.0 + 0.9 * 100.0 - 0.5)


def test_td_target_uniform_step_is_bitwise_standard():
    rng = np.random.default_rng(1)
    for _ in range(100):
        r, v, g, done = rng.normal(), rng.normal(), rng.uniform(0.5, 1), bool(rng.random() < 0.2)
        assert td_target(r, g, 1.0, v, done) == r + g * v * (1.0 - float(done))


def test_td_target_discounts_by_elapsed_minutes():
    assert td_target(1.0, 0.9, 3.0, 2.0, False) == pytest.approx(1.0 + 0.729 * 2.0)
    assert td_target(1.0, 0.9, 3.0, 2.0, True) == 1.0


def test_uniform_steps_reduce_to_standard_gae():
    rng = np.random.default_rng(2)
    cfg = TrainConfig(normalize_advantages=False, gamma=0.97, lam=0.9)
    for _ in range(100):
        r, v, _, d, boot = random_rollout(rng)
        buf = RolloutBuffer(1)
        for i in range(len(r)):
            buf.add(0, Transition(np.zeros(1), np.ones(1, bool), 0, 0.0, v[i], r[i], 1.0, d[i], 0))
        buf.seal([boot])
        adv, ret = compute_gae(buf, cfg)
        expect = standard_gae(r, v, d, boot, 0.97, 0.9)
        assert np.allclose(adv, expect, atol=1e-12, rtol=0)
        assert np.allclose(ret, expect + v, atol=1e-12, rtol=0)


def test_literal_mode_agrees_for_constant_steps_and_differs_otherwise():
    rng = np.random.default_rng(3)
    r, v, _, d, boot = random_rollout(rng, 30)
    for dt in (0.5, 2.0):
        dts = np.full(30, dt)
        a, _ = gae(r, v, dts, d, boot, 0.95, 0.9)
        b, _ = gae(r, v, dts, d, boot, 0.95, 0.9, mode="literal")
        assert np.allclose(a, b, atol=1e-12)
    dts = rng.choice(DTS, size=30)
    a, _ = gae(r, v, dts, np.zeros(30, bool), boot, 0.95, 0.9)
    b, _ = gae(r, v, dts, np.zeros(30, bool), boot, 0.95, 0.9, mode="literal")
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        gae(r, v, dts, d, boot, 0.95, 0.9, mode="other")


def test_buffer_streams_are_independent():
    buf = RolloutBuffer(2)
    for w in range(2):
        for i in range(3):
            buf.add(w, Transition(np.zeros(1), np.ones(1, bool), 0, 0.0, 0.0, float(w), 1.0,
                                  False, 0))
    with pytest.raises(UnsealedBuffer):
        compute_gae(buf, TrainConfig())
    buf.seal([0.0, 10.0])
    adv, _ = compute_gae(buf, TrainConfig(normalize_advantages=False, gamma=1.0, lam=1.0))
    assert adv[:3].tolist() == [0.0, 0.0, 0.0]
    assert adv[3:].tolist() == [13.0, 12.0, 11.0]
    with pytest.raises(RuntimeError):
        buf.add(0, buf.streams[0][0])


def test_normalised_advantages():
    rng = np.random.default_rng(4)
    buf = RolloutBuffer(1)
    for i in range(50):
        buf.add(0, Transition(np.zeros(1), np.ones(1, bool), 0, 0.0, rng.normal(), rng.normal(),
                              1.0, False, 0))
    buf.seal([0.0])
    adv, _ = compute_gae(buf, TrainConfig())
    assert abs(adv.mean()) < 1e-9 and adv.std() == pytest.approx(1.0, abs=1e-6)


def test_policy_loss_worked_example():
    # ratio 1.5 clipped to 1.2 for a positive advantage, unclipped 0.5 kept for negative
    new = np.log([1.5, 0.5])
    loss = ppo_policy_loss(new, [0.0, 0.0], [2.0, -1.0], 0.2)
    assert loss == pytest.approx(-np.mean([1.2 * 2.0, min(0.5 * -1.0, 0.8 * -1.0)]))


def test_guide_and_teacher_statistics():
    lp = np.log([0.5, 0.25])
    assert guide_loss(lp) == pytest.approx(np.mean(lp))
    assert c_teacher(lp) == pytest.approx(0.375)


def test_guide_coef_examples_and_latch():
    st = GuidanceState()
    assert guide_coef(100.0, 500.0, 0.5, 0.2, st) == pytest.approx(0.4)
    assert guide_coef(None, 500.0, 0.5, 0.6, st) == pytest.approx(0.2)
    assert guide_coef(500.0, 500.0, 0.5, 0.2, st) == 0.0
    assert not st.active
    assert guide_coef(10.0, 500.0, 0.5, 0.0, st) == 0.0


def test_guidance_only_loss_raises_teacher_probability():
    rng = np.random.default_rng(0)
    net = PolicyNet(6, 4, hidden=16, seed=0)
    B = 64
    obs = rng.normal(size=(B, 6))
    mask = np.ones((B, 4), dtype=bool)
    mask[:, 3] = rng.random(B) < 0.5
    teach = rng.integers(3, size=B)
    batch = Minibatch(obs, mask, teach, np.zeros(B), np.zeros(B), np.zeros(B), teach)
    alpha = 1.0
    history = []
    for _ in range(200):
        logp, *_ = net.forward_batch(obs, mask)
        c = c_teacher(logp[np.arange(B), teach])
        history.append(c)
        spec = LossSpec(clip_coef=0.0, value_coef=0.0, entropy_coef=0.0,
                        guide_coef=alpha * (1 - c))
        _, _, g = net.loss_and_grads(batch, spec)
        net.optimizer_step(g, 1e-2)
    assert all(b >= a - 1e-6 for a, b in zip(history[:20], history[1:21]))
    assert max(history) > 0.9


def test_return_scaler():
    sc = ReturnScaler(1, 1.0)
    out = [sc(0, 1.0, 1.0, False) for _ in range(4)]
    # accumulated returns 1, 2, 3, 4
    assert sc.mean == pytest.approx(2.5)
    assert out[-1] == pytest.approx(1.0 / np.sqrt(1.25))
    sc(0, 1.0, 1.0, True)
    assert sc.acc[0] == 0.0
    back = ReturnScaler(1, 1.0)
    back.load(sc.state())
    assert back.state() == sc.state()


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(gamma=1.5)
    with pytest.raises(ValueError):
        TrainConfig(gae_mode="x")


SMALL = dict(rollout_length=128, minibatch_size=64, epochs=2, hidden=16, lr=1e-3)


def test_training_logs_and_determinism(tmp_path):
    sc = reduced_scenario(2, 2, 4, 30)
    runs = []
    for name in ("a", "b"):
        res = train(sc, reward.dense(), TrainConfig(**SMALL), True, 600, seed=3,
                    out_dir=tmp_path / name)
        runs.append(res)
    for f in ("metrics.csv", "episodes.csv", "summary.json", "checkpoint.npz"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    res = runs[0]
    assert res.steps >= 600
    assert len(res.metrics) == 5
    assert all(0.0 <= row["guide_coef"] <= TrainConfig().alpha for row in res.metrics)
    assert res.metrics[0]["guide_coef"] > 0


def test_unguided_training_has_zero_guidance():
    sc = reduced_scenario(2, 2, 4, 30)
    res = train(sc, reward.sparse(), TrainConfig(**SMALL), False, 300, seed=0)
    assert all(row["guide_coef"] == 0.0 for row in res.metrics)
    assert res.base_tons is None


def test_latch_switches_guidance_off_for_good():
    sc = reduced_scenario(2, 2, 4, 30)
    cfg = TrainConfig(base_tons=1.0, **SMALL)
    res = train(sc, reward.dense(), cfg, True, 800, seed=1)
    latched = [i for i, row in enumerate(res.metrics) if not row["guide_active"]]
    assert latched
    assert all(res.metrics[i]["guide_coef"] == 0.0 for i in range(latched[0], len(res.metrics)))
    assert not res.guidance.active


def test_parallel_workers_run(tmp_path):
    sc = reduced_scenario(2, 2, 4, 30)
    res = train(sc, reward.dense(), TrainConfig(**SMALL), True, 256, seed=0, workers=2)
    assert {row["worker"] for row in res.episodes} == {0, 1}


def test_resume_continues_from_checkpoint(tmp_path):
    sc = reduced_scenario(2, 2, 4, 30)
    cfg = dict(SMALL, checkpoint_every=1)
    train(sc, reward.dense(), TrainConfig(**cfg), True, 256, seed=0, out_dir=tmp_path)
    res = train(sc, reward.dense(), TrainConfig(**cfg), True, 512, seed=0, out_dir=tmp_path,
                resume=True)
    assert res.steps == 512
    assert [r["step"] for r in res.metrics] == [128, 256, 384, 512]


def test_evaluate_checks_shapes():
    net = PolicyNet(10, 3, hidden=4)
    with pytest.raises(ShapeMismatch):
        evaluate(net, reduced_scenario(2, 2, 2, 10), [0])


def test_evaluate_is_greedy_and_repeatable():
    sc = reduced_scenario(2, 2, 3, 30)
    from minedispatch.observation import obs_dim
    net = PolicyNet(obs_dim(2, 2), 2, hidden=8, seed=5)
    assert evaluate(net, sc, [1, 2]) == evaluate(net, sc, [1, 2])
