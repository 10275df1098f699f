"""Partially observable multi-agent P2P market environment.

One slot is one hour. Per slot: storage decisions are applied, prosumers
post asks/bids (projected onto their forecast feasibility bounds),
consumers bid at the retail tariff, the book is cleared, and each agent's
realised imbalance is settled with the grid. Raw rewards are cash flows in
cents.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import auction
from .auction import Order, SlotLedger
from .errors import ConfigError
from .profiles import (
    DEFAULT_ALPHA, DEFAULT_P_SUNNY, DEFAULT_TEMPLATE, HOURS, EmpiricalSeries,
    HouseholdSpec, NoiseConfig, ProfileTemplate, forecast, intensity,
    realize_load, realize_pv, sample_weather,
)

HEADS = ("ask_price", "ask_qty", "bid_price", "bid_qty", "storage_op", "storage_frac")
STORAGE_OPS = ("idle", "charge", "discharge")
QTY_FRACS = (0.0, 0.25, 0.5, 0.75, 1.0)
STORAGE_FRACS = (0.25, 0.5, 1.0)
OBS_DIM = 7


@dataclass(frozen=True)
class MarketConfig:
    retail: float = 30.0
    feed_in: float = 10.0
    p_min: float = 10.0
    p_max: float = 30.0
    price_step: float = 1.0

    def __post_init__(self):
        if self.feed_in > self.retail:
            raise ConfigError("feed-in tariff must not exceed the retail tariff")
        if not self.p_min < self.p_max or self.price_step <= 0:
            raise ConfigError("price band must satisfy p_min < p_max with a positive step")
        if self.retail < self.p_min:
            raise ConfigError("retail tariff must lie at or above the bottom of the price band")

    @property
    def price_grid(self) -> tuple[float, ...]:
        n = int(round((self.p_max - self.p_min) / self.price_step))
        return tuple(self.p_min + k * self.price_step for k in range(n + 1))


@dataclass(frozen=True)
class EnvConfig:
    agents: tuple[HouseholdSpec, ...]
    market: MarketConfig = MarketConfig()
    alpha: float = DEFAULT_ALPHA
    p_sunny: float = DEFAULT_P_SUNNY
    horizon_days: int = 30
    noise: NoiseConfig = NoiseConfig()
    template: ProfileTemplate = DEFAULT_TEMPLATE
    qty_fracs: tuple[float, ...] = QTY_FRACS
    storage_fracs: tuple[float, ...] = STORAGE_FRACS
    initial_soc_frac: float = 0.5
    learn_consumers: bool = False
    load_scale: float = 1.0
    pv_scale: float = 1.0
    empirical: dict[str, EmpiricalSeries] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.agents:
            raise ConfigError("at least one household is required")
        if self.horizon_days < 1:
            raise ConfigError("horizon_days must be >= 1")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids) or auction.GRID in ids:
            raise ConfigError(f"agent ids must be unique and not {auction.GRID!r}")
        intensity(1, self.alpha)  # validates alpha
        if not 0 <= self.p_sunny <= 1:
            raise ConfigError("p_sunny must lie in [0, 1]")
        if not 0 <= self.initial_soc_frac <= 1:
            raise ConfigError("initial_soc_frac must lie in [0, 1]")
        if self.load_scale < 0 or self.pv_scale < 0:
            raise ConfigError("scales must be non-negative")


@dataclass(frozen=True)
class Action:
    ask_price_idx: int = 0
    ask_qty_frac_idx: int = 0
    bid_price_idx: int = 0
    bid_qty_frac_idx: int = 0
    storage_op: int = 0
    storage_frac_idx: int = 0

    @classmethod
    def from_indices(cls, idx) -> "Action":
        return cls(*(int(i) for i in idx))

    def indices(self) -> tuple[int, ...]:
        return (self.ask_price_idx, self.ask_qty_frac_idx, self.bid_price_idx,
                self.bid_qty_frac_idx, self.storage_op, self.storage_frac_idx)


@dataclass
class RawRewards:
    profit: dict[str, float]  # prosumers, cents
    cost: dict[str, float]  # consumers, cents


@dataclass
class EpisodeState:
    t: int
    start_day: int
    horizon_slots: int
    weather: int
    kappa: float
    load: np.ndarray
    pv: np.ndarray
    load_fc: np.ndarray
    pv_fc: np.ndarray
    soc: np.ndarray
    streams: dict

    @property
    def hour(self) -> int:
        return self.t % HOURS

    @property
    def day(self) -> int:
        return self.start_day + self.t // HOURS

    @property
    def done(self) -> bool:
        return self.t >= self.horizon_slots

    def copy(self) -> "EpisodeState":
        return copy.deepcopy(self)


@dataclass
class SlotOutcome:
    ledger: SlotLedger
    rewards: RawRewards
    soc: np.ndarray
    q_ch: np.ndarray
    q_dis: np.ndarray


def feasible_ask_max(load_fc: float, pv_fc: float, q_sell_max: float) -> float:
    return min(q_sell_max, max(0.0, pv_fc - load_fc))


def feasible_bid_max(load_fc: float, pv_fc: float, q_buy_max: float) -> float:
    return min(q_buy_max, max(0.0, load_fc - pv_fc))


def net_position(load: float, pv: float, q_dis: float, q_ch: float, s: int) -> float:
    return load - pv - s * q_dis + s * q_ch


def storage_limits(soc: float, spec: HouseholdSpec) -> tuple[float, float]:
    """Largest charge and discharge (kWh) that respect rate limits and never hit the SOC clamp."""
    if not spec.has_storage:
        return 0.0, 0.0
    ch = min(spec.batt_p_ch_max, (spec.batt_capacity - soc) / spec.eta_c)
    dis = min(spec.batt_p_dis_max, spec.eta_d * soc)
    return max(0.0, ch), max(0.0, dis)


def apply_storage(op: str, request: float, soc: float,
                  spec: HouseholdSpec) -> tuple[float, float, float]:
    """Clamp a charge/discharge request and update SOC.

    Returns ``(new_soc, q_ch, q_dis)``. Non-storage agents are coerced to idle.
    """
    if op not in STORAGE_OPS:
        raise ValueError(f"unknown storage op {op!r}")
    if not spec.has_storage or op == "idle" or request <= 0:
        return soc, 0.0, 0.0
    ch_max, dis_max = storage_limits(soc, spec)
    q_ch = min(request, ch_max) if op == "charge" else 0.0
    q_dis = min(request, dis_max) if op == "discharge" else 0.0
    new_soc = soc + spec.eta_c * q_ch - q_dis / spec.eta_d
    return min(spec.batt_capacity, max(0.0, new_soc)), q_ch, q_dis


def episode_return(slot_rewards: list[RawRewards], horizon: int) -> dict[str, float]:
    """Prosumers: sum of hourly profit. Consumers: minus the summed cost."""
    if len(slot_rewards) != horizon:
        raise ValueError(f"expected {horizon} slots, got {len(slot_rewards)}")
    totals: dict[str, float] = {}
    for r in slot_rewards:
        for a, v in r.profit.items():
            totals[a] = totals.get(a, 0.0) + v
        for a, v in r.cost.items():
            totals[a] = totals.get(a, 0.0) - v
    return totals


def head_sizes(spec: HouseholdSpec, config: EnvConfig) -> tuple[int, ...]:
    """Menu size of each action head for one agent; unused heads collapse to size 1."""
    n_price = len(config.market.price_grid)
    n_qty = len(config.qty_fracs)
    if spec.is_prosumer:
        if spec.has_storage:
            return (n_price, n_qty, n_price, n_qty, len(STORAGE_OPS), len(config.storage_fracs))
        return (n_price, n_qty, n_price, n_qty, 1, 1)
    return (1, 1, 1, n_qty, 1, 1)


class MarketEnv:
    """Stateless driver over :class:`EpisodeState` objects."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.agents = config.agents
        self.ids = [a.id for a in config.agents]
        self.prosumers = [i for i, a in enumerate(config.agents) if a.is_prosumer]
        self.consumers = [i for i, a in enumerate(config.agents) if not a.is_prosumer]
        self.price_grid = config.market.price_grid
        self._refs = []
        for a in config.agents:
            load_ref = max(a.peak_load, 1.0)
            pv_ref = max(a.peak_pv, 1.0)
            self._refs.append((load_ref, pv_ref, max(load_ref, pv_ref)))

    def learners(self) -> list[int]:
        """Indices of agents driven by a policy."""
        if self.config.learn_consumers:
            return list(range(len(self.agents)))
        return list(self.prosumers)

    # -- episode lifecycle -------------------------------------------------

    def reset(self, seed: int, episode: int = 0, start_day: int = 0,
              days: int | None = None) -> EpisodeState:
        cfg = self.config
        days = cfg.horizon_days if days is None else days
        if days < 1:
            raise ConfigError("episode must span at least one day")
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(episode,))
        children = ss.spawn(1 + 3 * len(self.agents))
        streams = {"weather": np.random.default_rng(children[0])}
        for k, a in enumerate(self.agents):
            streams[("load", a.id)] = np.random.default_rng(children[1 + 3 * k])
            streams[("pv", a.id)] = np.random.default_rng(children[2 + 3 * k])
            streams[("fc", a.id)] = np.random.default_rng(children[3 + 3 * k])
        n = len(self.agents)
        soc = np.array([a.batt_capacity * cfg.initial_soc_frac if a.has_storage else 0.0
                        for a in self.agents])
        state = EpisodeState(
            t=0, start_day=start_day, horizon_slots=HOURS * days, weather=0, kappa=cfg.alpha,
            load=np.zeros(n), pv=np.zeros(n), load_fc=np.zeros(n), pv_fc=np.zeros(n),
            soc=soc, streams=streams,
        )
        self._new_day(state)
        self._realize(state)
        return state

    def _new_day(self, state: EpisodeState) -> None:
        state.weather = sample_weather(self.config.p_sunny, state.streams["weather"])
        state.kappa = intensity(state.weather, self.config.alpha)

    def _realize(self, state: EpisodeState) -> None:
        cfg = self.config
        h = state.hour
        for i, a in enumerate(self.agents):
            series = cfg.empirical.get(a.profile_id) if (cfg.empirical and a.profile_id) else None
            if series is not None:
                k = (state.day * HOURS + h) % len(series.load)
                load = float(series.load[k])
                pv = float(series.pv[k]) if a.pv_owner else 0.0
            else:
                load = realize_load(a, h, cfg.noise, state.streams[("load", a.id)], cfg.template)
                pv = realize_pv(a, h, state.kappa, cfg.noise, state.streams[("pv", a.id)],
                                cfg.template)
            state.load[i] = load * cfg.load_scale
            state.pv[i] = pv * cfg.pv_scale
            fc = state.streams[("fc", a.id)]
            state.load_fc[i] = forecast(state.load[i], cfg.noise, fc)
            state.pv_fc[i] = forecast(state.pv[i], cfg.noise, fc)

    # -- observation ---------------------------------------------------------

    def observe(self, state: EpisodeState, agent: int, normalize: bool = True) -> np.ndarray:
        """Local observation: net forecast, load/PV forecasts, SOC, hour, intensity, day.

        Forecasts are drawn once when the slot is realised, so repeated calls
        within a slot return the same vector.
        """
        a = self.agents[agent]
        lf, gf = state.load_fc[agent], state.pv_fc[agent]
        soc = state.soc[agent] if a.has_storage else 0.0
        obs = np.array([lf - gf, lf, gf, soc, state.hour, state.kappa, state.day], dtype=float)
        if normalize:
            load_ref, pv_ref, net_ref = self._refs[agent]
            obs[0] /= net_ref
            obs[1] /= load_ref
            obs[2] /= pv_ref
            obs[3] = soc / a.batt_capacity if a.has_storage else 0.0
            obs[4] /= HOURS - 1
            obs[6] /= max(1, self.config.horizon_days - 1)
        return obs

    # -- transition ----------------------------------------------------------

    def settle(self, state: EpisodeState, actions) -> SlotOutcome:
        """Clear the current slot without advancing the clock."""
        cfg = self.config
        m = cfg.market
        n = len(self.agents)
        soc = state.soc.copy()
        q_ch = np.zeros(n)
        q_dis = np.zeros(n)

        for i, a in enumerate(self.agents):
            act = actions[i]
            if a.has_storage and act is not None:
                op = STORAGE_OPS[act.storage_op]
                ch_max, dis_max = storage_limits(soc[i], a)
                frac = cfg.storage_fracs[act.storage_frac_idx]
                request = frac * (ch_max if op == "charge" else dis_max)
                soc[i], q_ch[i], q_dis[i] = apply_storage(op, request, soc[i], a)

        asks, bids = [], []
        seq = 0
        for i in self.prosumers:
            a, act = self.agents[i], actions[i]
            if act is None:
                raise ValueError(f"prosumer {a.id} needs an action")
            load_fc = state.load_fc[i] + q_ch[i]
            pv_fc = state.pv_fc[i] + q_dis[i]
            qa = auction.quantize(cfg.qty_fracs[act.ask_qty_frac_idx]
                                  * feasible_ask_max(load_fc, pv_fc, a.q_sell_max))
            if qa > 0:
                asks.append(Order(a.id, "ask", self.price_grid[act.ask_price_idx], qa, seq))
                seq += 1
            qb = auction.quantize(cfg.qty_fracs[act.bid_qty_frac_idx]
                                  * feasible_bid_max(load_fc, pv_fc, a.q_buy_max))
            if qb > 0:
                bids.append(Order(a.id, "bid", self.price_grid[act.bid_price_idx], qb, seq))
                seq += 1
        consumer_price = min(m.retail, m.p_max)
        for j in self.consumers:
            a, act = self.agents[j], actions[j]
            frac = 1.0 if act is None else cfg.qty_fracs[act.bid_qty_frac_idx]
            qb = auction.quantize(frac * feasible_bid_max(state.load_fc[j], 0.0, a.q_buy_max))
            if qb > 0:
                bids.append(Order(a.id, "bid", consumer_price, qb, seq))
                seq += 1

        trades, _, _ = auction.clear(asks, bids)

        sold: dict[str, float] = {}
        bought: dict[str, float] = {}
        for t in trades:
            sold[t.seller] = sold.get(t.seller, 0.0) + t.quantity
            bought[t.buyer] = bought.get(t.buyer, 0.0) + t.quantity
        net = {}
        res_asks, res_bids = [], []
        for i, a in enumerate(self.agents):
            d = net_position(state.load[i], state.pv[i], q_dis[i], q_ch[i], int(a.has_storage))
            net[a.id] = d
            # realised residual, forecast error included, goes to the grid
            r = d - bought.get(a.id, 0.0) + sold.get(a.id, 0.0)
            if r > 0:
                res_bids.append(Order(a.id, "bid", m.retail, r))
            elif r < 0:
                res_asks.append(Order(a.id, "ask", m.feed_in, -r))
        grid_import, grid_export = auction.settle_grid(res_asks, res_bids, m.retail, m.feed_in)

        ledger = auction.build_ledger(
            state.t, trades, grid_import, grid_export, m.retail, m.feed_in,
            price_band=(m.p_min, m.p_max),
            submitted_asks={o.agent: o.quantity for o in asks},
            submitted_bids={o.agent: o.quantity for o in bids},
            net_position=net,
        )
        cash = ledger.cash_flows()
        profit = {self.ids[i]: cash.get(self.ids[i], 0.0) for i in self.prosumers}
        cost = {self.ids[j]: -cash.get(self.ids[j], 0.0) for j in self.consumers}
        return SlotOutcome(ledger, RawRewards(profit, cost), soc, q_ch, q_dis)

    def advance(self, state: EpisodeState, outcome: SlotOutcome) -> EpisodeState:
        state.soc = outcome.soc
        state.t += 1
        if not state.done:
            if state.t % HOURS == 0:
                self._new_day(state)
            self._realize(state)
        return state

    def step(self, state: EpisodeState, actions) -> tuple[EpisodeState, SlotLedger, RawRewards]:
        """Settle the slot, then advance ``state`` in place to the next slot."""
        if state.done:
            raise RuntimeError("episode already finished")
        if len(actions) != len(self.agents):
            raise ValueError(f"expected {len(self.agents)} actions, got {len(actions)}")
        outcome = self.settle(state, actions)
        self.advance(state, outcome)
        return state, outcome.ledger, outcome.rewards
