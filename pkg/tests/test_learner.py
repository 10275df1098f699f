import dataclasses
import json

import numpy as np
import pytest

from fairmarket.environment import OBS_DIM, Action, EnvConfig
from fairmarket.errors import ConfigError, TrainingDivergedError
from fairmarket.fairness import ShapingConfig
from fairmarket.learner import (PARAM_NAMES, Adam, Batch, PolicyParams, TrainConfig, Trainer,
                                act, check_compatible, distributions, evaluate, gae,
                                load_checkpoint, load_policies, ppo_loss, ppo_update,
                                save_checkpoint)
from fairmarket.profiles import HouseholdSpec, NoiseConfig

HEADS = (21, 5, 21, 5, 3, 3)


def tiny_env(**kw):
    agents = (HouseholdSpec("P1", peak_load=1.0, peak_pv=5.0, pv_owner=True),
              HouseholdSpec("C1", role="consumer", peak_load=4.0))
    return EnvConfig(agents, horizon_days=1, p_sunny=1.0, noise=NoiseConfig(enabled=False), **kw)


def probe_batch(params, n=12, seed=0, jitter=0.05):
    rng = np.random.default_rng(seed)
    obs = rng.uniform(0, 1, (n, OBS_DIM))
    actions = np.stack([rng.integers(h, size=n) for h in params.head_sizes], axis=1)
    _, info, _ = ppo_loss(params, Batch(obs, actions, np.zeros(n), np.zeros(n), np.zeros(n)),
                          0.2, 0.5, 0.0, with_grad=False)
    # current log-probs plus a small offset keeps every ratio away from the clip kinks
    logp = current_logp(params, obs, actions)
    return Batch(obs, actions, logp + rng.uniform(-jitter, jitter, n),
                 rng.standard_normal(n), rng.standard_normal(n))


def current_logp(params, obs, actions):
    probs = distributions(params, obs)
    rows = np.arange(len(obs))
    return sum(np.log(p[rows, actions[:, k]]) for k, p in enumerate(probs))


@pytest.fixture
def params():
    return PolicyParams.init(HEADS, hidden=16, rng=3)


class TestGradient:
    @pytest.mark.parametrize("name", PARAM_NAMES)
    def test_matches_central_differences(self, params, name):
        batch = probe_batch(params)
        coefs = dict(clip_ratio=0.2, vf_coef=0.5, ent_coef=0.01)
        _, _, grads = ppo_loss(params, batch, **coefs)
        h = 1e-3
        w = params.weights[name]
        fd = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            up = ppo_loss(params, batch, with_grad=False, **coefs)[0]
            w[idx] = old - h
            down = ppo_loss(params, batch, with_grad=False, **coefs)[0]
            w[idx] = old
            fd[idx] = (up - down) / (2 * h)
        err = np.linalg.norm(fd - grads[name]) / max(np.linalg.norm(fd) + np.linalg.norm(grads[name]), 1e-12)
        assert err < 1e-3

    def test_clipped_branch_has_no_policy_gradient(self, params):
        batch = probe_batch(params, n=6)
        # ratios far outside the trust region with advantages pushing further out
        batch = Batch(batch.obs, batch.actions, batch.old_logp - 5.0, np.ones(6), np.zeros(6))
        _, info, grads = ppo_loss(params, batch, 0.2, 0.0, 0.0)
        assert info["clip_frac"] == 1.0
        assert all(np.allclose(g, 0) for g in grads.values())


class TestAct:
    def test_distributions_normalised(self, params):
        obs = np.random.default_rng(1).uniform(-3, 3, (50, OBS_DIM))
        for p in distributions(params, obs):
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)

    def test_saturated_head(self, params):
        params.weights["bp"][:21] = 0.0
        params.weights["bp"][7] = 40.0
        rng = np.random.default_rng(0)
        draws = [act(params, np.zeros(OBS_DIM), rng)[0].ask_price_idx for _ in range(10_000)]
        assert np.mean(np.array(draws) == 7) > 0.999

    def test_uniform_head(self):
        p = PolicyParams.init(HEADS, hidden=8, rng=0)
        p.weights["Wp"][:] = 0.0
        rng = np.random.default_rng(5)
        counts = np.bincount([act(p, np.zeros(OBS_DIM), rng)[0].ask_price_idx
                              for _ in range(100_000)], minlength=21)
        assert np.all(np.abs(counts / 100_000 - 1 / 21) < 0.01)

    def test_seeded_sequence(self, params):
        def draw(seed):
            rng = np.random.default_rng(seed)
            return [act(params, np.full(OBS_DIM, 0.3), rng)[0] for _ in range(20)]
        assert draw(9) == draw(9)

    def test_joint_logp_is_sum_of_heads(self, params):
        obs = np.full(OBS_DIM, 0.2)
        a, logp, _ = act(params, obs, np.random.default_rng(0))
        probs = distributions(params, obs)
        assert logp == pytest.approx(sum(np.log(p[0, i]) for p, i in zip(probs, a.indices())))

    def test_deterministic_is_argmax(self, params):
        obs = np.full(OBS_DIM, 0.7)
        a, _, _ = act(params, obs, deterministic=True)
        assert list(a.indices()) == [int(np.argmax(p[0])) for p in distributions(params, obs)]

    def test_non_finite_output(self, params):
        params.weights["W1"][0, 0] = np.nan
        with pytest.raises(TrainingDivergedError):
            act(params, np.ones(OBS_DIM), np.random.default_rng(0))


class TestGAE:
    def test_suffix_sums(self):
        adv, ret = gae([1, 1, 1], [0, 0, 0], 0.0, 1.0, 1.0)
        assert list(adv) == [3, 2, 1] and list(ret) == [3, 2, 1]

    def test_zeros(self):
        adv, _ = gae([0] * 5, [0] * 5, 0.0, 0.99, 0.95)
        assert not adv.any()

    def test_single_step(self):
        adv, ret = gae([2.0], [0.5], 0.0, 0.99, 0.95)
        assert adv[0] == pytest.approx(1.5) and ret[0] == pytest.approx(2.0)

    def test_lambda_zero_is_td_error(self):
        r, v = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.1, -0.4])
        adv, _ = gae(r, v, 0.7, 0.9, 0.0)
        assert np.allclose(adv, r + 0.9 * np.array([0.1, -0.4, 0.7]) - v)

    def test_done_cuts_bootstrap(self):
        adv, _ = gae([1.0, 1.0], [0.0, 0.0], 100.0, 1.0, 1.0, dones=[0, 1])
        assert list(adv) == [2.0, 1.0]

    def test_misaligned(self):
        with pytest.raises(ValueError):
            gae([1, 2], [0], 0.0, 0.9, 0.9)


def bandit_batch(n=64, dominant=3, seed=0):
    # one context; head 0 action `dominant` earns +1, everything else -1
    rng = np.random.default_rng(seed)
    actions = np.stack([rng.integers(h, size=n) for h in HEADS], axis=1)
    adv = np.where(actions[:, 0] == dominant, 1.0, -1.0)
    return np.zeros((n, OBS_DIM)), actions, adv


class TestUpdate:
    cfg = TrainConfig(epochs=1, minibatch_size=64, lr=1e-2)

    def test_ratio_one_surrogate_is_mean_advantage(self, params):
        b = probe_batch(params, jitter=0.0)
        _, info, _ = ppo_loss(params, b, 0.2, 0.0, 0.0)
        assert info["policy_loss"] == pytest.approx(-b.advantages.mean())

    def test_one_step_moves_towards_positive_advantage(self, params):
        obs, actions, adv = bandit_batch()
        b = Batch(obs, actions, current_logp(params, obs, actions), adv, np.zeros(len(adv)))
        before = distributions(params, obs[:1])[0][0, 3]
        new, _ = ppo_update(params, b, self.cfg, rng=0)
        assert distributions(new, obs[:1])[0][0, 3] > before

    def test_zero_advantage_leaves_policy_head(self, params):
        b = probe_batch(params, jitter=0.0)
        b = Batch(b.obs, b.actions, b.old_logp, np.zeros(len(b)), b.returns)
        cfg = dataclasses.replace(self.cfg, ent_coef=0.0)
        _, info, grads = ppo_loss(params, b, 0.2, 0.5, 0.0)
        assert info["policy_loss"] == 0.0
        assert not grads["Wp"].any() and not grads["bp"].any()
        new, _ = ppo_update(params, b, cfg, rng=0)
        assert np.array_equal(new.weights["Wp"], params.weights["Wp"])
        assert not np.array_equal(new.weights["Wv"], params.weights["Wv"])

    def test_dominant_action_learned(self, params):
        # on-policy: each update sees 64 draws from the current policy
        cfg = TrainConfig(minibatch_size=64, lr=3e-3)
        opt = Adam(params, cfg.lr)
        rng = np.random.default_rng(0)
        obs = np.zeros((64, OBS_DIM))
        for k in range(50):
            drawn = [act(params, obs[0], rng) for _ in range(64)]
            actions = np.array([a.indices() for a, _, _ in drawn])
            adv = np.where(actions[:, 0] == 3, 1.0, -1.0)
            b = Batch(obs, actions, np.array([lp for _, lp, _ in drawn]), adv, np.zeros(64))
            ppo_update(params, b, cfg, opt, rng=k)
        p = distributions(params, np.zeros((1, OBS_DIM)))[0][0, 3]
        assert p > 0.9

    def test_degenerate_head_is_noop(self):
        p = PolicyParams.init((1, 1, 1, 5, 1, 1), hidden=8, rng=2)
        b = probe_batch(p)
        _, _, grads = ppo_loss(p, b, 0.2, 0.5, 0.0)
        single = [lo for (lo, hi), n in zip(p.offsets, p.head_sizes) if n == 1]
        assert not grads["Wp"][:, single].any() and not grads["bp"][single].any()

    def test_constant_shift_invariance(self, params):
        obs, actions, adv = bandit_batch()
        logp = current_logp(params, obs, actions)
        a, _ = ppo_update(params, Batch(obs, actions, logp, adv, np.zeros(64)), self.cfg, rng=0)
        b, _ = ppo_update(params, Batch(obs, actions, logp, adv + 17.0, np.zeros(64)), self.cfg, rng=0)
        probe = np.random.default_rng(0).uniform(0, 1, (8, OBS_DIM))
        for pa, pb in zip(distributions(a, probe), distributions(b, probe)):
            assert np.array_equal(pa.argmax(axis=1), pb.argmax(axis=1))
            assert np.allclose(pa, pb, atol=1e-6)

    def test_stats_keys(self, params):
        _, stats = ppo_update(params, probe_batch(params), self.cfg, rng=0)
        assert {"policy_loss", "value_loss", "entropy", "clip_frac", "grad_norm"} <= set(stats)

    def test_grad_norm_clipped(self, params):
        obs, actions, adv = bandit_batch()
        b = Batch(obs, actions, current_logp(params, obs, actions), adv * 1e6, np.full(64, 1e6))
        cfg = dataclasses.replace(self.cfg, lr=1e-3, max_grad_norm=0.5)
        new, stats = ppo_update(params, b, cfg, rng=0)
        assert stats["grad_norm"] > 0.5
        for k in PARAM_NAMES:
            # Adam's first step moves every weight by at most lr
            assert np.max(np.abs(new.weights[k] - params.weights[k])) <= 1e-3 + 1e-12

    def test_nan_aborts(self, params):
        b = probe_batch(params)
        b = Batch(b.obs, b.actions, b.old_logp, b.advantages, np.full(len(b), np.nan))
        with pytest.raises(TrainingDivergedError) as exc:
            ppo_update(params, b, self.cfg, rng=0)
        assert "info" in exc.value.args[1] if len(exc.value.args) > 1 else True

    def test_empty_batch(self, params):
        e = np.zeros((0, OBS_DIM))
        with pytest.raises(ValueError):
            ppo_update(params, Batch(e, np.zeros((0, 6), int), np.zeros(0), np.zeros(0), np.zeros(0)),
                       self.cfg)


class TestTrainConfig:
    @pytest.mark.parametrize("kw", [{"gamma": 0.0}, {"gamma": 1.5}, {"clip_ratio": 0.0},
                                    {"lr": -1.0}, {"epochs": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw)


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, params):
        opt = Adam(params, 1e-3)
        ppo_update(params, probe_batch(params), TrainConfig(epochs=1), opt, rng=0)
        save_checkpoint(tmp_path / "P1", params, opt, {"episode": 7})
        p2, opt2, meta = load_checkpoint(tmp_path / "P1")
        assert meta["episode"] == 7 and opt2.t == opt.t
        for k in PARAM_NAMES:
            assert np.array_equal(p2.weights[k], params.weights[k])
            assert np.array_equal(opt2.m[k], opt.m[k])

    def test_sidecar_is_versioned_json(self, tmp_path, params):
        save_checkpoint(tmp_path / "x", params)
        meta = json.loads((tmp_path / "x.json").read_text())
        assert meta["version"] == 1 and meta["head_sizes"] == list(HEADS)

    def test_bad_magic(self, tmp_path, params):
        save_checkpoint(tmp_path / "x", params)
        (tmp_path / "x.bin").write_bytes(b"garbage!" * 4)
        with pytest.raises(ConfigError):
            load_checkpoint(tmp_path / "x")

    def test_load_policies_checks_menus(self, tmp_path):
        cfg = tiny_env()
        save_checkpoint(tmp_path / "P1", PolicyParams.init((3, 3, 3, 3, 1, 1), hidden=8))
        with pytest.raises(ConfigError):
            load_policies(tmp_path, cfg)

    def test_load_policies_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_policies(tmp_path, tiny_env())

    def test_check_compatible(self):
        cfg = tiny_env()
        with pytest.raises(ConfigError):
            check_compatible(cfg, {})
        with pytest.raises(ConfigError):
            check_compatible(cfg, {"P1": PolicyParams.init((2,) * 6, hidden=4)})


class TestTrainer:
    def test_curve_records(self):
        tc = TrainConfig(total_episodes=3, seed=4)
        curves = Trainer(tiny_env(), ShapingConfig(total_episodes=3), tc).train()
        assert [r["episode"] for r in curves] == [0, 1, 2]
        assert {"episode", "agent", "total_reward", "ftg", "fbs", "fpp", "lambda_grid",
                "lambda_price", "lambda_peer"} <= set(curves[0])

    def test_unshaped_curves_are_raw(self):
        tc = TrainConfig(total_episodes=1)
        curves = Trainer(tiny_env(), ShapingConfig(total_episodes=1, enabled=False), tc).train()
        assert curves[0]["total_reward"] == curves[0]["raw_reward"]
        assert curves[0]["lambda_grid"] == curves[0]["lambda_peer"] == 0.0

    def test_deterministic(self):
        def run():
            tc = TrainConfig(total_episodes=4, seed=2)
            return Trainer(tiny_env(), ShapingConfig(total_episodes=4), tc).train()
        assert run() == run()

    def test_resume_matches_uninterrupted(self, tmp_path):
        tc = TrainConfig(total_episodes=6, seed=1, checkpoint_every=3)
        sh = ShapingConfig(total_episodes=6)
        full = Trainer(tiny_env(), sh, tc)
        full_curves = full.train()

        first = Trainer(tiny_env(), sh, tc)
        head = first.train(episodes=3, checkpoint_dir=tmp_path)
        assert (tmp_path / "ep000003" / "P1.json").exists()
        resumed = Trainer(tiny_env(), sh, tc)
        resumed.restore(tmp_path / "ep000003")
        tail = resumed.train()
        assert head + tail == full_curves
        for k in PARAM_NAMES:
            assert np.array_equal(resumed.policies["P1"].weights[k], full.policies["P1"].weights[k])

    def test_nan_weights_abort_training(self):
        tr = Trainer(tiny_env(), ShapingConfig(total_episodes=2), TrainConfig(total_episodes=2))
        tr.policies["P1"].weights["b2"][:] = np.nan
        with pytest.raises(TrainingDivergedError):
            tr.train()

    def test_evaluate_rejects_missing_prosumer(self):
        with pytest.raises(ConfigError):
            evaluate(tiny_env(), {}, seed=0)

    def test_evaluate_deterministic(self):
        tr = Trainer(tiny_env(), ShapingConfig(total_episodes=2), TrainConfig(total_episodes=2))
        tr.train()
        a = evaluate(tiny_env(), tr.policies, seed=5)
        b = evaluate(tiny_env(), tr.policies, seed=5)
        assert [l.trades for l in a.ledgers] == [l.trades for l in b.ledgers]


@pytest.mark.slow
def test_shaping_does_not_lower_toy_ftg(toy_runs):
    from conftest import TOY_SEEDS
    shaped = np.mean([toy_runs(s, True).ftg for s in TOY_SEEDS])
    raw = np.mean([toy_runs(s, False).ftg for s in TOY_SEEDS])
    assert shaped >= raw - 1e-12
