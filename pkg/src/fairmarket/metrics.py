"""Post-hoc market analytics over slot ledgers.

Everything here is a pure function of finished ledgers (plus tariffs), so
reports can be recomputed from a saved run without touching the simulator.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .auction import GRID, SlotLedger
from .environment import EnvConfig

RADAR_AXES = ("peer_kwh", "grid_kwh", "consumer_cost", "prosumer_profit", "mean_entropy",
              "grid_net")
CONVENTIONS = {
    "entropy": "natural log, normalised by ln(k) over the k sellers with positive traded volume",
    "jfi": "over sellers that posted an ask in the slot; 1.0 when none sold",
    "grid_kwh": "grid imports plus grid exports",
    "peer_share": "peer / (peer + grid); null when nothing was transacted",
    "money": "cents",
}


def jfi(x) -> float:
    """Jain's fairness index; 1.0 for an all-zero vector."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("jfi needs at least one value")
    if np.any(x < 0):
        raise ValueError("jfi is defined for non-negative quantities")
    top = x.max()
    if top == 0:
        return 1.0
    x = x / top  # keeps tiny inputs from underflowing in the square
    s = x.sum()
    return float(min(1.0, s * s / (x.size * np.dot(x, x))))


def seller_entropy(shares) -> float:
    """Shannon entropy of the positive shares, normalised by ln(k) over active sellers."""
    p = np.asarray(shares, dtype=float)
    if np.any(p < 0):
        raise ValueError("shares must be non-negative")
    p = p[p > 0]
    if p.size <= 1:
        return 0.0
    p = p / p.sum()
    h = -float(np.sum(p * np.log(p))) / math.log(p.size)
    return min(1.0, max(0.0, h))


def price_spread(ledger: SlotLedger) -> float:
    prices = ledger.prices
    if len(prices) < 2:
        return 0.0
    return float(max(prices) - min(prices))


def seller_quantities(ledger: SlotLedger) -> list[float]:
    """Sold kWh per seller that posted an ask (zero if nothing was matched)."""
    sold = ledger.sold()
    active = [a for a, q in sorted(ledger.submitted_asks.items()) if q > 0]
    active += sorted(a for a in sold if a not in ledger.submitted_asks)
    return [sold.get(a, 0.0) for a in active]


def slot_jfi(ledger: SlotLedger) -> float:
    q = seller_quantities(ledger)
    return jfi(q) if q else 1.0


def slot_entropy(ledger: SlotLedger) -> float:
    return seller_entropy(list(ledger.sold().values()))


def energy_split(ledgers: Sequence[SlotLedger]) -> tuple[float, float, float | None]:
    """(peer kWh, grid kWh, peer share); grid counts imports and exports."""
    peer = sum(led.peer_kwh for led in ledgers)
    grid = sum(led.import_kwh + led.export_kwh for led in ledgers)
    total = peer + grid
    return peer, grid, (peer / total if total > 0 else None)


@dataclass
class Economics:
    prosumer_profit: dict[str, float] = field(default_factory=dict)
    consumer_cost: dict[str, float] = field(default_factory=dict)
    consumer_peer_kwh: dict[str, float] = field(default_factory=dict)
    consumer_grid_kwh: dict[str, float] = field(default_factory=dict)
    grid_revenue: float = 0.0
    grid_cost: float = 0.0

    @property
    def grid_net(self) -> float:
        return self.grid_revenue - self.grid_cost

    def consumer_price(self, agent: str) -> float | None:
        """Average paid ¢/kWh, or None if the consumer bought nothing."""
        kwh = self.consumer_peer_kwh.get(agent, 0.0) + self.consumer_grid_kwh.get(agent, 0.0)
        return self.consumer_cost[agent] / kwh if kwh > 0 else None

    def balance(self) -> float:
        """Sum of all cash positions including the grid; zero in a closed economy."""
        return (sum(self.prosumer_profit.values()) - sum(self.consumer_cost.values())
                + self.grid_net)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid_net"] = self.grid_net
        return d


def economics(ledgers: Sequence[SlotLedger], prosumers: Sequence[str] = (),
              consumers: Sequence[str] = ()) -> Economics:
    """Per-agent cash flows from peer trades and grid settlement (¢).

    Agents not listed as consumers are reported as prosumers.
    """
    eco = Economics()
    consumers = set(consumers)
    for a in prosumers:
        eco.prosumer_profit[a] = 0.0
    for a in consumers:
        eco.consumer_cost[a] = 0.0
        eco.consumer_peer_kwh[a] = 0.0
        eco.consumer_grid_kwh[a] = 0.0
    for led in ledgers:
        for a, cash in led.cash_flows().items():
            if a == GRID:
                continue
            if a in consumers:
                eco.consumer_cost[a] -= cash
            else:
                eco.prosumer_profit[a] = eco.prosumer_profit.get(a, 0.0) + cash
        for a, q in led.bought().items():
            if a in consumers:
                eco.consumer_peer_kwh[a] += q
        for a, q in led.grid_import.items():
            eco.grid_revenue += led.retail_tariff * q
            if a in consumers:
                eco.consumer_grid_kwh[a] += q
        for q in led.grid_export.values():
            eco.grid_cost += led.feed_in_tariff * q
    return eco


@dataclass
class MarketReport:
    peer_kwh: float
    grid_kwh: float
    grid_import_kwh: float
    grid_export_kwh: float
    peer_share: float | None
    slots: int
    spread: list[float]
    entropy: list[float]
    jfi: list[float]
    economics: Economics
    fairness: dict[str, float] = field(default_factory=dict)

    @property
    def consumer_cost_total(self) -> float:
        return sum(self.economics.consumer_cost.values())

    @property
    def prosumer_profit_total(self) -> float:
        return sum(self.economics.prosumer_profit.values())

    @property
    def mean_entropy(self) -> float:
        return float(np.mean(self.entropy)) if self.entropy else 0.0

    def axes(self) -> dict[str, float]:
        return {
            "peer_kwh": self.peer_kwh,
            "grid_kwh": self.grid_kwh,
            "consumer_cost": self.consumer_cost_total,
            "prosumer_profit": self.prosumer_profit_total,
            "mean_entropy": self.mean_entropy,
            "grid_net": self.economics.grid_net,
            "grid_import_kwh": self.grid_import_kwh,
        }

    def to_dict(self) -> dict:
        return {
            "slots": self.slots,
            "peer_kwh": self.peer_kwh,
            "grid_kwh": self.grid_kwh,
            "grid_import_kwh": self.grid_import_kwh,
            "grid_export_kwh": self.grid_export_kwh,
            "peer_share": self.peer_share,
            "mean_spread_cents": float(np.mean(self.spread)) if self.spread else 0.0,
            "mean_entropy": self.mean_entropy,
            "mean_jfi": float(np.mean(self.jfi)) if self.jfi else 1.0,
            "min_jfi": float(min(self.jfi)) if self.jfi else 1.0,
            "fairness": dict(self.fairness),
            "economics": self.economics.to_dict(),
            "conventions": dict(CONVENTIONS),
        }

    def write(self, directory, ledgers: Sequence[SlotLedger] | None = None) -> None:
        from .auction import write_ledger_csv
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        with open(out / "hourly.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["slot", "hour", "spread_cents", "entropy", "jfi", "peer_kwh", "grid_kwh"])
            for t in range(self.slots):
                led = ledgers[t] if ledgers is not None else None
                peer = led.peer_kwh if led else ""
                grid = (led.import_kwh + led.export_kwh) if led else ""
                w.writerow([t, t % 24, self.spread[t], self.entropy[t], self.jfi[t], peer, grid])
        if ledgers is not None:
            write_ledger_csv(ledgers, out / "ledger.csv")


def market_report(ledgers: Sequence[SlotLedger], prosumers: Sequence[str] = (),
                  consumers: Sequence[str] = (), scores=None) -> MarketReport:
    peer, grid, share = energy_split(ledgers)
    fairness = {}
    if scores:
        fairness = {k: float(np.mean([getattr(s, k) for s in scores])) for k in ("ftg", "fbs", "fpp")}
    return MarketReport(
        peer_kwh=peer, grid_kwh=grid,
        grid_import_kwh=sum(led.import_kwh for led in ledgers),
        grid_export_kwh=sum(led.export_kwh for led in ledgers),
        peer_share=share, slots=len(ledgers),
        spread=[price_spread(led) for led in ledgers],
        entropy=[slot_entropy(led) for led in ledgers],
        jfi=[slot_jfi(led) for led in ledgers],
        economics=economics(ledgers, prosumers, consumers),
        fairness=fairness,
    )


def _ratio(new: float, base: float) -> float | None:
    if base == 0:
        return 1.0 if new == 0 else None
    return new / base


@dataclass
class SensitivityResult:
    scales: dict[str, float]
    baseline: MarketReport
    scenario: MarketReport

    def ratios(self) -> dict[str, float | None]:
        b, s = self.baseline.axes(), self.scenario.axes()
        return {k: _ratio(s[k], b[k]) for k in b}

    def write_radar_csv(self, path) -> None:
        b, s, r = self.baseline.axes(), self.scenario.axes(), self.ratios()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["axis", "baseline", "scenario", "ratio"])
            for k in RADAR_AXES:
                w.writerow([k, b[k], s[k], "" if r[k] is None else r[k]])


def run_report(env_config: EnvConfig, policies: dict, seed: int, days: int | None = None,
               critic=None):
    """Deterministic frozen-policy evaluation; returns (report, ledgers)."""
    from .learner import evaluate
    res = evaluate(env_config, policies, seed, days=days, deterministic=True, critic=critic)
    pros = [a.id for a in env_config.agents if a.is_prosumer]
    cons = [a.id for a in env_config.agents if not a.is_prosumer]
    return market_report(res.ledgers, pros, cons, res.scores), res.ledgers


def sensitivity(base_config: EnvConfig, policies: dict, scales: dict, seed: int,
                days: int | None = None, baseline: MarketReport | None = None) -> SensitivityResult:
    """Re-evaluate frozen policies with PV and/or load scaled; compare against baseline."""
    from .learner import check_compatible
    unknown = set(scales) - {"pv_scale", "load_scale"}
    if unknown:
        raise ValueError(f"unknown scale keys {sorted(unknown)}")
    check_compatible(base_config, policies)
    if baseline is None:
        baseline, _ = run_report(base_config, policies, seed, days)
    cfg = replace(base_config, pv_scale=base_config.pv_scale * scales.get("pv_scale", 1.0),
                  load_scale=base_config.load_scale * scales.get("load_scale", 1.0))
    scenario, _ = run_report(cfg, policies, seed, days)
    return SensitivityResult(dict(scales), baseline, scenario)
