"""Scenario configuration: one YAML file, ``--set`` overrides, built-in presets.

The effective configuration is a plain nested dict whose leaves map one to one
onto the dataclasses consumed by the environment, fairness and learner modules.
Unknown keys are rejected at every level so that typos fail loudly.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .environment import QTY_FRACS, STORAGE_FRACS, EnvConfig, MarketConfig
from .errors import ConfigError
from .fairness import DeterministicCritic, RampSchedule, RemoteCritic, ShapingConfig
from .learner import TrainConfig
from .profiles import (DEFAULT_ALPHA, DEFAULT_P_SUNNY, HouseholdSpec, NoiseConfig,
                       load_empirical, load_template_csv)


@dataclass(frozen=True)
class ShapingSection:
    enabled: bool = True
    beta_grid: float = 10.0
    beta_price: float = 10.0
    beta_peer: float = 10.0
    # ramp start/end as fractions of the total episode count
    grid_ramp: tuple[float, float] = (0.02, 0.30)
    price_ramp: tuple[float, float] = (0.02, 0.30)
    peer_ramp: tuple[float, float] = (0.30, 0.80)


@dataclass(frozen=True)
class CriticSection:
    backend: str = "deterministic"  # or "remote"
    url: str | None = None
    timeout_ms: float = 2000.0
    retries: int = 0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    seed: int = 0
    eval_seed: int = 1000
    horizon_days: int = 30
    alpha: float = DEFAULT_ALPHA
    p_sunny: float = DEFAULT_P_SUNNY
    initial_soc_frac: float = 0.5
    learn_consumers: bool = False
    load_scale: float = 1.0
    pv_scale: float = 1.0
    qty_fracs: tuple[float, ...] = QTY_FRACS
    storage_fracs: tuple[float, ...] = STORAGE_FRACS
    template: str | None = None
    empirical: str | None = None
    market: MarketConfig = field(default_factory=MarketConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    agents: tuple[HouseholdSpec, ...] = ()
    shaping: ShapingSection = field(default_factory=ShapingSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    critic: CriticSection = field(default_factory=CriticSection)

    # -- conversions ---------------------------------------------------------

    def env_config(self, base_dir=None) -> EnvConfig:
        template = None
        if self.template:
            template = load_template_csv(_resolve(self.template, base_dir))
        empirical = None
        if self.empirical:
            empirical = load_empirical(_resolve(self.empirical, base_dir))
        kwargs = dict(
            agents=self.agents, market=self.market, alpha=self.alpha, p_sunny=self.p_sunny,
            horizon_days=self.horizon_days, noise=self.noise, qty_fracs=self.qty_fracs,
            storage_fracs=self.storage_fracs, initial_soc_frac=self.initial_soc_frac,
            learn_consumers=self.learn_consumers, load_scale=self.load_scale,
            pv_scale=self.pv_scale, empirical=empirical,
        )
        if template is not None:
            kwargs["template"] = template
        return EnvConfig(**kwargs)

    def shaping_config(self) -> ShapingConfig:
        s, E = self.shaping, self.train.total_episodes
        return ShapingConfig(
            total_episodes=E, beta_grid=s.beta_grid, beta_price=s.beta_price,
            beta_peer=s.beta_peer, enabled=s.enabled,
            grid=RampSchedule.from_fractions(*s.grid_ramp, E),
            price=RampSchedule.from_fractions(*s.price_ramp, E),
            peer=RampSchedule.from_fractions(*s.peer_ramp, E),
        )

    def make_critic(self):
        c = self.critic
        if c.backend == "deterministic":
            return DeterministicCritic()
        return RemoteCritic.from_env(c.url, timeout=c.timeout_ms / 1000.0, retries=c.retries)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _resolve(path: str, base_dir) -> Path:
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# -- building from plain data -------------------------------------------------------

_SECTIONS = {"market": MarketConfig, "noise": NoiseConfig, "shaping": ShapingSection,
             "train": TrainConfig, "critic": CriticSection}
_PAIRS = {"grid_ramp", "price_ramp", "peer_ramp"}
_TUPLES = {"qty_fracs", "storage_fracs"}


def _check_value(path: str, value, kind: str):
    """Validate a scalar against a field annotation such as ``float`` or ``str | None``."""
    if value is None and "None" in kind:
        return None
    base = kind.split("|")[0].strip()
    if base == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif base == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if cls is ScenarioConfig and key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, sub)
        elif cls is ScenarioConfig and key == "agents":
            kwargs[key] = _build_agents(value)
        elif key in _PAIRS or key in _TUPLES:
            if not isinstance(value, (list, tuple)) or (key in _PAIRS and len(value) != 2):
                raise ConfigError(f"{sub}: expected a list" + (" of two fractions" if key in _PAIRS else ""))
            kwargs[key] = tuple(_check_value(sub, v, "float") for v in value)
        else:
            kwargs[key] = _check_value(sub, value, names[key].type)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def _build_agents(items) -> tuple[HouseholdSpec, ...]:
    if not isinstance(items, (list, tuple)) or not items:
        raise ConfigError("agents: expected a non-empty list of households")
    out = []
    kinds = {f.name: f.type for f in fields(HouseholdSpec)}
    for k, item in enumerate(items):
        path = f"agents.{k}"
        if not isinstance(item, dict):
            raise ConfigError(f"{path}: expected a mapping")
        unknown = sorted(set(item) - set(kinds))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(f'{path}.{u}' for u in unknown)}")
        if "id" not in item:
            raise ConfigError(f"{path}: missing id")
        kwargs = {key: _check_value(f"{path}.{key}", value, kinds[key])
                  for key, value in item.items()}
        try:
            out.append(HouseholdSpec(**kwargs))
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    ids = [a.id for a in out]
    if len(set(ids)) != len(ids):
        raise ConfigError("agents: household ids must be unique")
    return tuple(out)


def from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "")
    if not cfg.agents:
        raise ConfigError("agents: at least one household is required")
    if cfg.critic.backend not in ("deterministic", "remote"):
        raise ConfigError(f"critic.backend must be deterministic or remote, got {cfg.critic.backend!r}")
    if cfg.critic.timeout_ms <= 0:
        raise ConfigError("critic.timeout_ms must be positive")
    if cfg.eval_seed < 0 or cfg.seed < 0:
        raise ConfigError("seeds must be non-negative")
    try:
        # surfaces cross-field problems (e.g. storage menus) before any run starts
        cfg.env_config()
        cfg.shaping_config()
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


# -- overrides --------------------------------------------------------------------

def apply_override(data: dict, assignment: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"override {assignment!r} has an empty key segment")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    data = copy.deepcopy(data)
    node = data
    for depth, part in enumerate(parts[:-1]):
        if isinstance(node, list):
            node = node[_index(node, part, parts[:depth + 1])]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[_index(node, last, parts)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError(f"override {key!r}: cannot descend into a scalar")
    return data


def _index(node: list, part: str, parts) -> int:
    try:
        i = int(part)
    except ValueError:
        raise ConfigError(f"override {'.'.join(parts)}: list index expected") from None
    if not 0 <= i < len(node):
        raise ConfigError(f"override {'.'.join(parts)}: index out of range")
    return i


def load_config(path=None, preset: str | None = None, overrides=()) -> ScenarioConfig:
    """Precedence: overrides > file > preset > defaults."""
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    data = copy.deepcopy(PRESETS[preset]) if preset else {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _merge(data, loaded)
    for item in overrides:
        data = apply_override(data, item)
    return from_dict(data)


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# -- presets -------------------------------------------------------------------------

def _storage(k: int, pv: float, load: float) -> dict:
    return {"id": f"P{k}", "peak_load": load, "peak_pv": pv, "pv_owner": True,
            "has_storage": True, "batt_capacity": 13.5, "batt_p_ch_max": 3.0,
            "batt_p_dis_max": 3.0}


def _pv_only(k: int, pv: float, load: float) -> dict:
    return {"id": f"P{k}", "peak_load": load, "peak_pv": pv, "pv_owner": True}


def _consumer(k: int, load: float) -> dict:
    return {"id": f"C{k}", "role": "consumer", "peak_load": load}


PRESETS: dict[str, dict] = {
    "toy": {
        "name": "toy", "horizon_days": 1, "p_sunny": 1.0,
        "noise": {"enabled": False},
        "agents": [_pv_only(1, 5.0, 1.0), _consumer(1, 4.0)],
        "shaping": {"enabled": False},
        "train": {"total_episodes": 2000},
    },
    "case1": {
        "name": "case1", "horizon_days": 30,
        "agents": [_storage(1, 3.6, 0.45), _storage(2, 4.0, 0.5), _storage(3, 4.4, 0.55),
                   _consumer(1, 2.6), _consumer(2, 2.5)],
        "train": {"total_episodes": 2000, "epochs": 10, "minibatch_size": 8},
    },
    "case2": {
        "name": "case2", "horizon_days": 90,
        "agents": ([_pv_only(k, 2.0 + 0.2 * k, 0.8) for k in range(1, 11)]
                   + [_consumer(k, 2.5) for k in range(1, 4)]),
        "train": {"total_episodes": 2000, "epochs": 10, "minibatch_size": 8},
    },
    "case3": {
        "name": "case3", "horizon_days": 90,
        "agents": ([{**_storage(k, 4.0, 0.5), "profile_id": f"P{k}"} for k in range(1, 4)]
                   + [{**_pv_only(k, 3.0, 0.8), "profile_id": f"P{k}"} for k in range(4, 11)]
                   + [{**_consumer(k, 2.5), "profile_id": f"C{k}"} for k in range(1, 4)]),
        "train": {"total_episodes": 2000, "epochs": 10, "minibatch_size": 8},
    },
}


def preset(name: str, overrides=()) -> ScenarioConfig:
    return load_config(preset=name, overrides=overrides)
