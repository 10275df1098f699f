import numpy as np
import pytest

from fairmarket.auction import GRID
from fairmarket.environment import (OBS_DIM, Action, EnvConfig, MarketConfig, MarketEnv,
                                    RawRewards, apply_storage, episode_return, feasible_ask_max,
                                    feasible_bid_max, head_sizes, net_position, storage_limits)
from fairmarket.errors import ConfigError
from fairmarket.profiles import HouseholdSpec, NoiseConfig

BATTERY = dict(has_storage=True, batt_capacity=10.0, batt_p_ch_max=3.0, batt_p_dis_max=3.0)


def prosumer(aid="P1", **kw):
    base = dict(peak_load=1.0, peak_pv=5.0, pv_owner=True)
    base.update(kw)
    return HouseholdSpec(aid, **base)


def consumer(aid="C1", load=4.0):
    return HouseholdSpec(aid, role="consumer", peak_load=load)


@pytest.fixture
def community():
    agents = (prosumer("P1", **BATTERY), prosumer("P2", peak_pv=3.0), consumer("C1"),
              consumer("C2", 2.0))
    return EnvConfig(agents, horizon_days=2)


def random_actions(env, rng):
    actions = []
    for i, a in enumerate(env.agents):
        sizes = head_sizes(a, env.config)
        actions.append(Action.from_indices([rng.integers(n) for n in sizes]))
    return actions


class TestFeasibility:
    @pytest.mark.parametrize("g, l, cap, expected", [(5, 3, 10, 2.0), (1, 3, 10, 0.0), (9, 1, 5, 5.0)])
    def test_ask(self, g, l, cap, expected):
        assert feasible_ask_max(l, g, cap) == expected

    @pytest.mark.parametrize("l, g, cap, expected", [(3, 5, 10, 0.0), (2, 0, 10, 2.0), (8, 1, 4, 4.0)])
    def test_bid(self, l, g, cap, expected):
        assert feasible_bid_max(l, g, cap) == expected

    @pytest.mark.parametrize("args, expected", [
        ((3, 1, 0, 0, 0), 2.0), ((3, 1, 1, 0, 1), 1.0), ((2, 0, 0, 0, 0), 2.0),
    ])
    def test_net_position(self, args, expected):
        assert net_position(*args) == expected


class TestStorage:
    spec = HouseholdSpec("B", **BATTERY)

    def test_charge(self):
        soc, q_ch, q_dis = apply_storage("charge", 2.0, 5.0, self.spec)
        assert (soc, q_ch, q_dis) == (pytest.approx(6.9), 2.0, 0.0)

    def test_discharge_clamped(self):
        soc, q_ch, q_dis = apply_storage("discharge", 2.0, 1.0, self.spec)
        assert q_dis == pytest.approx(0.95) and soc == pytest.approx(0.0, abs=1e-12)

    def test_charge_clamped_at_capacity(self):
        soc, q_ch, _ = apply_storage("charge", 3.0, 9.8, self.spec)
        assert q_ch == pytest.approx(0.2 / 0.95) and soc == pytest.approx(10.0)

    def test_rate_limit(self):
        _, q_ch, _ = apply_storage("charge", 5.0, 0.0, self.spec)
        assert q_ch == 3.0

    def test_non_storage_coerced_to_idle(self):
        assert apply_storage("charge", 2.0, 0.0, HouseholdSpec("X")) == (0.0, 0.0, 0.0)

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            apply_storage("sell", 1.0, 1.0, self.spec)

    def test_limits_never_truncate(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            soc = rng.uniform(0, 10)
            ch, dis = storage_limits(soc, self.spec)
            assert soc + 0.95 * ch <= 10 + 1e-12
            assert soc - dis / 0.95 >= -1e-12


class TestReset:
    def test_initial_soc(self, community):
        env = MarketEnv(community)
        s = env.reset(0)
        assert s.soc[0] == 5.0 and s.soc[1] == 0.0
        assert s.t == 0 and s.hour == 0 and s.day == 0

    def test_deterministic(self, community):
        env = MarketEnv(community)
        a, b = env.reset(3), env.reset(3)
        for k in ("load", "pv", "load_fc", "pv_fc", "soc"):
            assert np.array_equal(getattr(a, k), getattr(b, k))
        assert a.weather == b.weather

    def test_all_consumer_config(self):
        env = MarketEnv(EnvConfig((consumer("C1"), consumer("C2")), horizon_days=1))
        s = env.reset(0)
        assert np.all(s.pv == 0)
        assert env.learners() == []

    @pytest.mark.parametrize("kwargs", [
        {"horizon_days": 0}, {"p_sunny": 1.5}, {"alpha": 1.0}, {"initial_soc_frac": 2.0},
        {"pv_scale": -1.0},
    ])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ConfigError):
            EnvConfig((prosumer(),), **kwargs)

    def test_duplicate_ids(self):
        with pytest.raises(ConfigError):
            EnvConfig((prosumer("A"), consumer("A")))

    def test_grid_id_reserved(self):
        with pytest.raises(ConfigError):
            EnvConfig((prosumer(GRID),))

    def test_market_config_validation(self):
        with pytest.raises(ConfigError):
            MarketConfig(retail=10, feed_in=20)
        assert len(MarketConfig().price_grid) == 21


class TestObserve:
    def test_shape_and_pre_normalisation(self):
        cfg = EnvConfig((HouseholdSpec("P", peak_load=3.0, peak_pv=1.0, pv_owner=True),),
                        noise=NoiseConfig(enabled=False), p_sunny=1.0, horizon_days=1)
        env = MarketEnv(cfg)
        s = env.reset(0)
        s.load_fc[0], s.pv_fc[0] = 3.0, 1.0
        raw = env.observe(s, 0, normalize=False)
        assert raw.shape == (OBS_DIM,)
        assert list(raw[:3]) == [2.0, 3.0, 1.0]
        assert raw[3] == 0.0

    def test_non_storage_soc_component_zero(self, community):
        env = MarketEnv(community)
        s = env.reset(0)
        assert env.observe(s, 1)[3] == 0.0
        assert env.observe(s, 0)[3] == 0.5

    def test_hour_normalised(self, community):
        env = MarketEnv(community)
        s = env.reset(0)
        s.t = 23
        assert env.observe(s, 0)[4] == 1.0

    def test_pure(self, community):
        env = MarketEnv(community)
        s = env.reset(0)
        assert np.array_equal(env.observe(s, 0), env.observe(s, 0))


class TestStep:
    def test_all_idle_night_is_grid_served(self):
        cfg = EnvConfig((prosumer(), consumer()), noise=NoiseConfig(enabled=False), horizon_days=1)
        env = MarketEnv(cfg)
        s = env.reset(0)
        load_c = s.load[1]
        s, ledger, raw = env.step(s, [Action(), None])
        assert ledger.trades == []
        assert raw.cost["C1"] == pytest.approx(30 * load_c)

    def test_same_inputs_same_outputs(self, community):
        env = MarketEnv(community)
        rng = np.random.default_rng(1)
        s = env.reset(5)
        s.t = 12
        acts = random_actions(env, rng)
        a = env.settle(s, acts)
        b = env.settle(s.copy(), acts)
        assert a.ledger.trades == b.ledger.trades
        assert a.rewards == b.rewards

    def test_sell_and_export_profit(self):
        # noise-free midday: P1 has 5 kWh PV, 0.4 kWh load; C1 demands 2 kWh
        cfg = EnvConfig((prosumer(peak_load=0.4), consumer(load=2.0)),
                        noise=NoiseConfig(enabled=False), p_sunny=1.0, horizon_days=1)
        env = MarketEnv(cfg)
        s = env.reset(0)
        s.t = 12
        s.load[:] = [0.0, 2.0]
        s.pv[:] = [3.0, 0.0]
        s.load_fc[:], s.pv_fc[:] = s.load, s.pv
        # ask 20 c for the full 3 kWh; 2 kWh clear, 1 kWh exported at feed-in
        out = env.settle(s, [Action(ask_price_idx=10, ask_qty_frac_idx=4), None])
        assert out.rewards.profit["P1"] == pytest.approx(2 * 20 + 1 * 10)

    def test_conservation_over_random_episode(self, community):
        env = MarketEnv(community)
        rng = np.random.default_rng(2)
        s = env.reset(11)
        while not s.done:
            s, led, raw = env.step(s, random_actions(env, rng))
            assert abs(sum(led.cash_flows().values())) < 1e-6
            for c in raw.cost.values():
                assert c >= 0
            assert 0 <= s.soc[0] <= 10

    def test_submitted_quantities_within_bounds(self, community):
        env = MarketEnv(community)
        rng = np.random.default_rng(4)
        s = env.reset(2)
        while not s.done:
            acts = random_actions(env, rng)
            out = env.settle(s, acts)
            for i, a in enumerate(env.agents):
                if not a.is_prosumer:
                    continue
                lf = s.load_fc[i] + out.q_ch[i]
                gf = s.pv_fc[i] + out.q_dis[i]
                assert out.ledger.submitted_asks.get(a.id, 0) <= feasible_ask_max(lf, gf, a.q_sell_max) + 1e-6
                assert out.ledger.submitted_bids.get(a.id, 0) <= feasible_bid_max(lf, gf, a.q_buy_max) + 1e-6
            env.advance(s, out)

    def test_day_rollover_resamples_weather(self, community):
        env = MarketEnv(community)
        s = env.reset(0)
        flags = []
        for _ in range(48):
            if s.hour == 0:
                flags.append(s.kappa)
            s, _, _ = env.step(s, [Action(), Action(), None, None])
        assert s.done and len(flags) == 2

    def test_step_after_done(self, community):
        env = MarketEnv(community)
        s = env.reset(0, days=1)
        for _ in range(24):
            s, _, _ = env.step(s, [Action(), Action(), None, None])
        with pytest.raises(RuntimeError):
            env.step(s, [Action(), Action(), None, None])

    def test_prosumer_action_required(self, community):
        env = MarketEnv(community)
        with pytest.raises(ValueError):
            env.settle(env.reset(0), [None, None, None, None])

    def test_scales_apply_to_realisations(self, community):
        base = MarketEnv(community).reset(0)
        scaled_cfg = EnvConfig(community.agents, horizon_days=2, pv_scale=1.2, load_scale=1.1)
        scaled = MarketEnv(scaled_cfg).reset(0)
        assert np.allclose(scaled.load, base.load * 1.1)
        assert np.allclose(scaled.pv, base.pv * 1.2)


class TestEpisodeReturn:
    def test_zero(self):
        assert episode_return([RawRewards({"P": 0.0}, {"C": 0.0})] * 24, 24) == {"P": 0.0, "C": 0.0}

    def test_consumer_cost_negated(self):
        assert episode_return([RawRewards({}, {"C": 10.0})] * 24, 24) == {"C": -240.0}

    def test_prosumer_sum(self):
        r = [RawRewards({"P": 5.0}, {}), RawRewards({"P": -2.0}, {})]
        assert episode_return(r, 2) == {"P": 3.0}

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            episode_return([RawRewards({}, {})], 24)


def test_head_sizes(community):
    assert head_sizes(community.agents[0], community) == (21, 5, 21, 5, 3, 3)
    assert head_sizes(community.agents[1], community) == (21, 5, 21, 5, 1, 1)
    assert head_sizes(community.agents[2], community) == (1, 1, 1, 5, 1, 1)
