"""Weather, household load/PV realisation and one-step-ahead forecasts.

Loads and PV outputs are produced by scaling unit-peak 24-hour templates
with per-household peaks (kW over a 1 h slot, i.e. kWh) and multiplicative
noise. All functions take an explicit ``numpy.random.Generator`` so that
rollout workers can own independent, seeded streams.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

HOURS = 24
DEFAULT_ALPHA = 0.37
DEFAULT_P_SUNNY = 0.7

# Morning shoulder around 07:00, evening plateau 18:00-19:00, overnight floor 0.25.
_DEFAULT_LOAD = (
    0.36, 0.32, 0.30, 0.30, 0.25, 0.28, 0.42, 0.55,
    0.50, 0.44, 0.40, 0.38, 0.40, 0.38, 0.37, 0.42,
    0.52, 0.70, 1.00, 1.00, 0.90, 0.74, 0.56, 0.42,
)


def _default_pv() -> tuple[float, ...]:
    vals = []
    for h in range(HOURS):
        if 6 <= h <= 18:
            vals.append(max(0.0, math.sin(math.pi * (h - 6) / 12)) ** 1.5)
        else:
            vals.append(0.0)
    return tuple(vals)


@dataclass(frozen=True)
class ProfileTemplate:
    """Unit-peak hour-of-day shapes for load and PV."""

    load: tuple[float, ...] = _DEFAULT_LOAD
    pv: tuple[float, ...] = field(default_factory=_default_pv)

    def __post_init__(self):
        for name in ("load", "pv"):
            vals = getattr(self, name)
            if len(vals) != HOURS:
                raise ConfigError(f"{name} template needs {HOURS} values, got {len(vals)}")
            if min(vals) < 0:
                raise ConfigError(f"{name} template has negative values")
            if not math.isclose(max(vals), 1.0, abs_tol=1e-9):
                raise ConfigError(f"{name} template must have unit peak, max={max(vals)}")
            object.__setattr__(self, name, tuple(float(v) for v in vals))


DEFAULT_TEMPLATE = ProfileTemplate()


def load_template_csv(path) -> ProfileTemplate:
    """Read a ``hour,phi_load,phi_pv`` override file (24 rows)."""
    load = [None] * HOURS
    pv = [None] * HOURS
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"hour", "phi_load", "phi_pv"} - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            h = int(row["hour"])
            if not 0 <= h < HOURS:
                raise ConfigError(f"{path}: hour {h} out of range")
            load[h] = float(row["phi_load"])
            pv[h] = float(row["phi_pv"])
    if any(v is None for v in load):
        raise ConfigError(f"{path}: expected one row for each of the {HOURS} hours")
    return ProfileTemplate(load=tuple(load), pv=tuple(pv))


@dataclass(frozen=True)
class HouseholdSpec:
    """Static parameters of one household.

    Peaks are in kW; with the fixed 1 h cadence they double as kWh per slot.
    """

    id: str
    role: str = "prosumer"
    peak_load: float = 1.0
    peak_pv: float = 0.0
    pv_owner: bool = False
    has_storage: bool = False
    batt_capacity: float = 0.0
    batt_p_ch_max: float = 0.0
    batt_p_dis_max: float = 0.0
    eta_c: float = 0.95
    eta_d: float = 0.95
    q_sell_max: float = 10.0
    q_buy_max: float = 10.0
    profile_id: str | None = None

    def __post_init__(self):
        if self.role not in ("prosumer", "consumer"):
            raise ConfigError(f"{self.id}: role must be prosumer or consumer, got {self.role!r}")
        if self.role == "consumer" and (self.pv_owner or self.has_storage):
            raise ConfigError(f"{self.id}: consumers cannot own PV or storage")
        if self.has_storage and self.batt_capacity <= 0:
            raise ConfigError(f"{self.id}: storage requires batt_capacity > 0")
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ConfigError(f"{self.id}: efficiencies must lie in (0, 1]")
        for name in ("peak_load", "peak_pv", "batt_capacity", "batt_p_ch_max",
                     "batt_p_dis_max", "q_sell_max", "q_buy_max"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{self.id}: {name} must be non-negative")

    @property
    def is_prosumer(self) -> bool:
        return self.role == "prosumer"


@dataclass(frozen=True)
class NoiseConfig:
    load_sigma: float = 0.05
    pv_sigma: float = 0.05
    forecast_sigma: float = 0.05
    enabled: bool = True

    def __post_init__(self):
        if min(self.load_sigma, self.pv_sigma, self.forecast_sigma) < 0:
            raise ConfigError("noise sigmas must be non-negative")


def intensity(flag: int, alpha: float) -> float:
    """Daily weather intensity: ``alpha`` on cloudy days, 1 on sunny days."""
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha + (1 - alpha) * flag


def sample_weather(p_sunny: float, rng: np.random.Generator) -> int:
    if not 0 <= p_sunny <= 1:
        raise ConfigError(f"p_sunny must lie in [0, 1], got {p_sunny}")
    return int(rng.random() < p_sunny)


def _lognormal_unit_mean(sigma: float, rng: np.random.Generator) -> float:
    # relative s.d. sigma -> log-space parameters with E[eta] = 1 exactly
    if sigma == 0:
        return 1.0
    s2 = math.log1p(sigma * sigma)
    return float(rng.lognormal(-0.5 * s2, math.sqrt(s2)))


def realize_load(spec: HouseholdSpec, hour: int, noise: NoiseConfig,
                 rng: np.random.Generator, template: ProfileTemplate = DEFAULT_TEMPLATE) -> float:
    eta = _lognormal_unit_mean(noise.load_sigma, rng) if noise.enabled else 1.0
    return spec.peak_load * template.load[hour] * eta


def realize_pv(spec: HouseholdSpec, hour: int, kappa: float, noise: NoiseConfig,
               rng: np.random.Generator, template: ProfileTemplate = DEFAULT_TEMPLATE) -> float:
    eta = _lognormal_unit_mean(noise.pv_sigma, rng) if noise.enabled else 1.0
    if not spec.pv_owner:
        return 0.0
    return spec.peak_pv * kappa * template.pv[hour] * eta


def forecast(true_value: float, noise: NoiseConfig, rng: np.random.Generator) -> float:
    """Unbiased multiplicative Gaussian forecast, clamped at zero."""
    if not noise.enabled:
        return true_value
    eps = rng.normal(1.0, noise.forecast_sigma)
    return max(0.0, true_value * eps)


@dataclass
class EmpiricalSeries:
    load: np.ndarray
    pv: np.ndarray


def load_empirical(path) -> dict[str, EmpiricalSeries]:
    """Read the hourly per-household CSV written by ``fairmarket ingest``.

    Rows must be grouped by household in time order; the i-th row of a
    household is its i-th simulated hour.
    """
    series: dict[str, tuple[list, list]] = {}
    with open(Path(path), newline="") as fh:
        for row in csv.DictReader(fh):
            load, pv = series.setdefault(row["household"], ([], []))
            load.append(float(row["load_kwh"]))
            pv.append(float(row["pv_kwh"]))
    return {k: EmpiricalSeries(np.asarray(v[0]), np.asarray(v[1])) for k, v in series.items()}
