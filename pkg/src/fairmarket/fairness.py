"""Slot-level fairness scores, ramped coefficients and the shaped reward.

Three scores in [0, 1] are computed from a :class:`SlotLedger`:

* ``ftg`` - share of purchased energy that came from peers rather than the grid.
* ``fbs`` - Jain's index over the quantities sold by prosumers that posted an ask.
* ``fpp`` - one minus the mean absolute deviation of executed prices from their
  median, relative to half the price band.

Scores come from a critic backend: :class:`DeterministicCritic` (pure) or
:class:`RemoteCritic`, which posts a ledger summary to an HTTP endpoint and
falls back to the deterministic scores on any failure.
"""

from __future__ import annotations

import json
import logging
import math
import os
import string
from dataclasses import dataclass

import numpy as np
import requests

from .auction import SlotLedger
from .errors import ConfigError

log = logging.getLogger(__name__)

CRITIC_URL_ENV = "FAIRMARKET_CRITIC_URL"
CRITIC_TIMEOUT_ENV = "FAIRMARKET_CRITIC_TIMEOUT_MS"


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class FairnessScores:
    ftg: float
    fbs: float
    fpp: float

    def __post_init__(self):
        for name in ("ftg", "fbs", "fpp"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @classmethod
    def clamped(cls, ftg: float, fbs: float, fpp: float) -> "FairnessScores":
        return cls(_clamp01(ftg), _clamp01(fbs), _clamp01(fpp))


@dataclass(frozen=True)
class RampSchedule:
    e_start: int
    e_full: int

    def __post_init__(self):
        if not 0 <= self.e_start < self.e_full:
            raise ConfigError(f"ramp needs 0 <= e_start < e_full, got ({self.e_start}, {self.e_full})")

    @classmethod
    def from_fractions(cls, start: float, full: float, total_episodes: int) -> "RampSchedule":
        e_start = int(round(start * total_episodes))
        e_full = max(int(round(full * total_episodes)), e_start + 1)
        return cls(e_start, e_full)


@dataclass(frozen=True)
class ShapingConfig:
    total_episodes: int = 10_000
    beta_grid: float = 10.0
    beta_price: float = 10.0
    beta_peer: float = 10.0
    grid: RampSchedule | None = None
    price: RampSchedule | None = None
    peer: RampSchedule | None = None
    enabled: bool = True

    def __post_init__(self):
        if min(self.beta_grid, self.beta_price, self.beta_peer) < 0:
            raise ConfigError("beta scales must be non-negative")
        if self.total_episodes < 1:
            raise ConfigError("total_episodes must be >= 1")
        E = self.total_episodes
        if self.grid is None:
            object.__setattr__(self, "grid", RampSchedule.from_fractions(0.02, 0.30, E))
        if self.price is None:
            object.__setattr__(self, "price", RampSchedule.from_fractions(0.02, 0.30, E))
        if self.peer is None:
            object.__setattr__(self, "peer", RampSchedule.from_fractions(0.30, 0.80, E))

    def lambdas(self, episode: int) -> tuple[float, float, float]:
        """(grid, price, peer) coefficients at a training episode."""
        if not self.enabled:
            return (0.0, 0.0, 0.0)
        return (ramp(episode, self.grid), ramp(episode, self.price), ramp(episode, self.peer))


def ramp(e: float, schedule: RampSchedule) -> float:
    if e < schedule.e_start:
        return 0.0
    if e >= schedule.e_full:
        return 1.0
    return (e - schedule.e_start) / (schedule.e_full - schedule.e_start)


# -- metric formulas -----------------------------------------------------------

def ftg(ledger: SlotLedger) -> float:
    peer = ledger.peer_kwh
    total = peer + ledger.import_kwh
    if total <= 0:
        return 1.0
    return _clamp01(peer / total)


def _active_seller_quantities(ledger: SlotLedger) -> list[float]:
    sold = ledger.sold()
    active = [a for a, q in ledger.submitted_asks.items() if q > 0]
    # sellers missing from submitted_asks (hand-built ledgers) still count
    active += [a for a in sold if a not in ledger.submitted_asks]
    return [sold.get(a, 0.0) for a in active]


def fbs(ledger: SlotLedger) -> float:
    x = np.asarray(_active_seller_quantities(ledger), dtype=float)
    if len(x) <= 1:
        return 1.0
    top = x.max()
    if top <= 0:
        return 1.0
    x = x / top
    s = x.sum()
    return _clamp01(float(s * s / (len(x) * np.dot(x, x))))


def fpp(ledger: SlotLedger) -> float:
    prices = np.asarray(ledger.prices, dtype=float)
    if len(prices) <= 1:
        return 1.0
    p_min, p_max = ledger.price_band
    half_width = (p_max - p_min) / 2
    mad = float(np.mean(np.abs(prices - np.median(prices))))
    return 1.0 - min(1.0, mad / half_width)


def shape(profit: float, scores: FairnessScores, lambdas, config: ShapingConfig,
          q_sold: float, q_sold_total: float) -> float:
    """Raw profit plus ramped, scaled fairness bonuses for one prosumer."""
    lam_grid, lam_price, lam_peer = lambdas
    share = q_sold / q_sold_total if q_sold_total > 0 else 0.0
    return (profit
            + lam_grid * config.beta_grid * scores.ftg
            + lam_price * config.beta_price * scores.fpp
            + lam_peer * config.beta_peer * scores.fbs * share)


# -- critic backends -------------------------------------------------------------

class DeterministicCritic:
    """Rule-based reference critic."""

    def score(self, ledger: SlotLedger) -> FairnessScores:
        return FairnessScores(ftg(ledger), fbs(ledger), fpp(ledger))


def deterministic_critic(ledger: SlotLedger) -> FairnessScores:
    return DeterministicCritic().score(ledger)


def _parse_reply(body) -> FairnessScores:
    if not isinstance(body, dict) or set(body) != {"ftg", "fbs", "fpp"}:
        raise ValueError(f"unexpected reply shape: {body!r}")
    vals = []
    for key in ("ftg", "fbs", "fpp"):
        v = body[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ValueError(f"{key} is not a finite number: {v!r}")
        vals.append(float(v))
    return FairnessScores.clamped(*vals)


class RemoteCritic:
    """HTTP JSON critic with a hard timeout and deterministic fallback.

    Request body is :meth:`SlotLedger.summary`; the reply must be exactly
    ``{"ftg": x, "fbs": y, "fpp": z}``. Values are clamped to [0, 1].
    """

    def __init__(self, endpoint: str, timeout: float = 2.0, retries: int = 0,
                 fallback: DeterministicCritic | None = None):
        if not endpoint:
            raise ConfigError("remote critic needs an endpoint URL")
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.fallback = fallback or DeterministicCritic()
        self.session = requests.Session()
        self.fallbacks = 0
        self.calls = 0

    @classmethod
    def from_env(cls, endpoint: str | None = None, timeout: float = 2.0, retries: int = 0):
        endpoint = os.environ.get(CRITIC_URL_ENV, endpoint)
        if CRITIC_TIMEOUT_ENV in os.environ:
            timeout = float(os.environ[CRITIC_TIMEOUT_ENV]) / 1000.0
        return cls(endpoint, timeout=timeout, retries=retries)

    def score(self, ledger: SlotLedger) -> FairnessScores:
        self.calls += 1
        payload = ledger.summary()
        err = None
        for _ in range(self.retries + 1):
            try:
                resp = self.session.post(self.endpoint, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                return _parse_reply(resp.json())
            except (requests.RequestException, ValueError) as exc:
                err = exc
        self.fallbacks += 1
        log.warning("critic fallback", extra={"event": "critic_fallback", "slot": ledger.slot,
                                              "error": f"{type(err).__name__}: {err}"})
        return self.fallback.score(ledger)


def remote_critic(ledger: SlotLedger, endpoint: str, timeout: float = 2.0) -> FairnessScores:
    return RemoteCritic(endpoint, timeout=timeout).score(ledger)


DEFAULT_PROMPT = string.Template(
    "You are the fairness critic of a local electricity market. For the hourly ledger "
    "below, reply with JSON {\"ftg\": x, \"fbs\": y, \"fpp\": z}, each in [0, 1]:\n"
    "ftg is 1 if all demand was met by peers and 0 if entirely grid-supplied; "
    "fbs is 1 when sold quantities are evenly shared among sellers; "
    "fpp is 1 when clearing prices cluster tightly around their median.\n"
    "Ledger: $ledger\n"
)


def render_prompt(ledger: SlotLedger, template: str | None = None) -> str:
    """Fill a ``$ledger`` prompt template for LLM services wrapping the critic contract."""
    tpl = string.Template(template) if template is not None else DEFAULT_PROMPT
    return tpl.substitute(ledger=json.dumps(ledger.summary(), sort_keys=True))
