"""Continuous double auction for one hourly slot and grid settlement.

Orders are matched best-bid against best-ask while the bid price covers the
ask price. Trades execute at the ask price. Quantities are handled
internally as integer micro-kWh so that conservation checks are exact.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import ConfigError, InvariantError

GRID = "GRID"
QUANTUM = 1_000_000  # integer units per kWh
BALANCE_TOL = 1e-9


def to_units(kwh: float) -> int:
    return int(round(kwh * QUANTUM))


def quantize(kwh: float) -> float:
    """Round an energy quantity to the 1e-6 kWh resolution used by the book."""
    return to_units(kwh) / QUANTUM


@dataclass(frozen=True)
class Order:
    agent: str
    side: str  # "ask" or "bid"
    price: float
    quantity: float
    seq: int = 0

    def __post_init__(self):
        if self.side not in ("ask", "bid"):
            raise ValueError(f"unknown side {self.side!r}")
        if not self.quantity > 0:
            raise ValueError(f"order quantity must be positive, got {self.quantity}")


@dataclass(frozen=True)
class Trade:
    seller: str
    buyer: str
    price: float
    quantity: float


def check_band(orders: Iterable[Order], p_min: float, p_max: float) -> None:
    for o in orders:
        if not p_min <= o.price <= p_max:
            raise ConfigError(f"order price {o.price} of {o.agent} outside band [{p_min}, {p_max}]")


def clear(asks: list[Order], bids: list[Order]) -> tuple[list[Trade], list[Order], list[Order]]:
    """Greedy price-time priority clearing.

    Returns the executed trades and the unmatched remainder of each side.
    An agent's bid is never matched against its own ask.
    """
    ask_book = [[o, to_units(o.quantity)] for o in sorted(asks, key=lambda o: (o.price, o.seq))]
    bid_book = [[o, to_units(o.quantity)] for o in sorted(bids, key=lambda o: (-o.price, o.seq))]
    trades = []
    for entry in bid_book:
        bid = entry[0]
        while entry[1] > 0:
            match = None
            for cand in ask_book:
                if cand[1] > 0 and cand[0].agent != bid.agent:
                    match = cand
                    break
            if match is None or match[0].price > bid.price:
                break
            units = min(entry[1], match[1])
            entry[1] -= units
            match[1] -= units
            trades.append(Trade(match[0].agent, bid.agent, match[0].price, units / QUANTUM))
    residual_asks = [replace(o, quantity=u / QUANTUM) for o, u in ask_book if u > 0]
    residual_bids = [replace(o, quantity=u / QUANTUM) for o, u in bid_book if u > 0]
    return trades, residual_asks, residual_bids


def settle_grid(residual_asks: Iterable[Order], residual_bids: Iterable[Order],
                retail: float, feed_in: float) -> tuple[dict[str, float], dict[str, float]]:
    """Unmatched demand is imported at ``retail``; unmatched supply exported at ``feed_in``."""
    if feed_in > retail:
        raise ConfigError(f"feed-in tariff {feed_in} exceeds retail tariff {retail}")
    grid_import: dict[str, float] = defaultdict(float)
    grid_export: dict[str, float] = defaultdict(float)
    for o in residual_bids:
        grid_import[o.agent] += o.quantity
    for o in residual_asks:
        grid_export[o.agent] += o.quantity
    return dict(grid_import), dict(grid_export)


@dataclass
class SlotLedger:
    """Post-slot record of peer trades and grid settlement.

    ``net_position`` holds each agent's realised storage-adjusted net demand
    (positive = deficit); it is what the peer and grid flows must balance.
    ``submitted_asks``/``submitted_bids`` record order quantities as posted.
    """

    slot: int
    trades: list[Trade] = field(default_factory=list)
    grid_import: dict[str, float] = field(default_factory=dict)
    grid_export: dict[str, float] = field(default_factory=dict)
    retail_tariff: float = 30.0
    feed_in_tariff: float = 10.0
    price_band: tuple[float, float] = (10.0, 30.0)
    submitted_asks: dict[str, float] = field(default_factory=dict)
    submitted_bids: dict[str, float] = field(default_factory=dict)
    net_position: dict[str, float] = field(default_factory=dict)

    @property
    def peer_kwh(self) -> float:
        return sum(t.quantity for t in self.trades)

    @property
    def import_kwh(self) -> float:
        return sum(self.grid_import.values())

    @property
    def export_kwh(self) -> float:
        return sum(self.grid_export.values())

    @property
    def prices(self) -> list[float]:
        return [t.price for t in self.trades]

    def sold(self) -> dict[str, float]:
        out: dict[str, float] = defaultdict(float)
        for t in self.trades:
            out[t.seller] += t.quantity
        return dict(out)

    def bought(self) -> dict[str, float]:
        out: dict[str, float] = defaultdict(float)
        for t in self.trades:
            out[t.buyer] += t.quantity
        return dict(out)

    def agents(self) -> set[str]:
        ids = set(self.grid_import) | set(self.grid_export) | set(self.net_position)
        for t in self.trades:
            ids.add(t.seller)
            ids.add(t.buyer)
        return ids

    def cash_flows(self) -> dict[str, float]:
        """Net cash received per agent (cents), including the grid under ``GRID``."""
        cash: dict[str, float] = defaultdict(float)
        for t in self.trades:
            cash[t.seller] += t.price * t.quantity
            cash[t.buyer] -= t.price * t.quantity
        for a, q in self.grid_import.items():
            cash[a] -= self.retail_tariff * q
            cash[GRID] += self.retail_tariff * q
        for a, q in self.grid_export.items():
            cash[a] += self.feed_in_tariff * q
            cash[GRID] -= self.feed_in_tariff * q
        cash.setdefault(GRID, 0.0)
        return dict(cash)

    def summary(self) -> dict:
        """Aggregate view sent to a remote fairness critic."""
        sellers = {a: 0.0 for a, q in self.submitted_asks.items() if q > 0}
        sellers.update(self.sold())
        return {
            "slot": int(self.slot),
            "peer_kwh": float(self.peer_kwh),
            "grid_import_kwh": float(self.import_kwh),
            "grid_export_kwh": float(self.export_kwh),
            "seller_kwh": {str(a): float(q) for a, q in sorted(sellers.items())},
            "trade_prices_cents": [float(p) for p in self.prices],
        }


def build_ledger(slot: int, trades: list[Trade], grid_import: Mapping[str, float],
                 grid_export: Mapping[str, float], retail: float, feed_in: float, *,
                 price_band: tuple[float, float] = (10.0, 30.0),
                 submitted_asks: Mapping[str, float] | None = None,
                 submitted_bids: Mapping[str, float] | None = None,
                 net_position: Mapping[str, float] | None = None) -> SlotLedger:
    ledger = SlotLedger(
        slot=slot, trades=list(trades), grid_import=dict(grid_import),
        grid_export=dict(grid_export), retail_tariff=retail, feed_in_tariff=feed_in,
        price_band=tuple(price_band), submitted_asks=dict(submitted_asks or {}),
        submitted_bids=dict(submitted_bids or {}), net_position=dict(net_position or {}),
    )
    validate_ledger(ledger)
    return ledger


def validate_ledger(ledger: SlotLedger, tol: float = BALANCE_TOL) -> None:
    p_min, p_max = ledger.price_band
    for t in ledger.trades:
        if not t.quantity > 0:
            raise InvariantError(f"slot {ledger.slot}: non-positive trade quantity {t}")
        if t.buyer == t.seller:
            raise InvariantError(f"slot {ledger.slot}: self trade by {t.buyer}")
        if not p_min <= t.price <= p_max:
            raise InvariantError(f"slot {ledger.slot}: trade price {t.price} outside band")
    for name in ("grid_import", "grid_export"):
        for a, q in getattr(ledger, name).items():
            if q < 0:
                raise InvariantError(f"slot {ledger.slot}: negative {name} for {a}")
    if ledger.net_position:
        sold, bought = ledger.sold(), ledger.bought()
        for a, net in ledger.net_position.items():
            flow = (bought.get(a, 0.0) + ledger.grid_import.get(a, 0.0)
                    - sold.get(a, 0.0) - ledger.grid_export.get(a, 0.0))
            if abs(flow - net) > tol:
                raise InvariantError(
                    f"slot {ledger.slot}: energy imbalance for {a}: flows {flow} vs net {net}")


def write_ledger_csv(ledgers: Iterable[SlotLedger], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "seller", "buyer", "price_cents", "quantity_kwh"])
        for led in ledgers:
            for t in led.trades:
                w.writerow([led.slot, t.seller, t.buyer, t.price, repr(t.quantity)])
            for a, q in sorted(led.grid_import.items()):
                w.writerow([led.slot, GRID, a, led.retail_tariff, repr(q)])
            for a, q in sorted(led.grid_export.items()):
                w.writerow([led.slot, a, GRID, led.feed_in_tariff, repr(q)])
