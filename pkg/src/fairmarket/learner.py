"""Independent PPO learners for the market agents.

Each learning agent owns a small tanh MLP: a shared two-layer trunk feeding
one categorical head per action component and a scalar value head.
Gradients are derived by hand; parameters are updated with Adam after
global-norm gradient clipping.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .environment import HEADS, OBS_DIM, Action, EnvConfig, MarketEnv, head_sizes
from .errors import ConfigError, TrainingDivergedError
from .fairness import DeterministicCritic, FairnessScores, ShapingConfig, shape

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wp", "bp", "Wv", "bv")
CHECKPOINT_MAGIC = b"FMPOL\x00\x01\x00"
CHECKPOINT_VERSION = 1
_TRAINER_ENTROPY = 0x5EED_F00D


@dataclass(frozen=True)
class TrainConfig:
    total_episodes: int = 10_000
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 256
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: int = 64
    episode_days: int = 1
    reward_scale: float = 0.01  # cents -> dollars before the PPO update
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must lie in [0, 1]")
        if self.clip_ratio <= 0:
            raise ConfigError("clip_ratio must be positive")
        if self.total_episodes < 1 or self.epochs < 1 or self.minibatch_size < 1:
            raise ConfigError("episodes, epochs and minibatch size must be >= 1")
        if self.lr <= 0 or self.max_grad_norm <= 0 or self.hidden < 1:
            raise ConfigError("lr, max_grad_norm and hidden must be positive")
        if self.episode_days < 1:
            raise ConfigError("episode_days must be >= 1")


# -- network -----------------------------------------------------------------

def _orthogonal(rng, rows, cols, gain):
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    # C order so fresh and checkpoint-restored weights hit identical BLAS paths
    return np.ascontiguousarray(gain * q[:rows, :cols])


@dataclass
class PolicyParams:
    weights: dict[str, np.ndarray]
    head_sizes: tuple[int, ...]

    @classmethod
    def init(cls, head_sizes, hidden: int = 64, rng=None, obs_dim: int = OBS_DIM):
        rng = np.random.default_rng(rng)
        n_out = int(sum(head_sizes))
        w = {
            "W1": _orthogonal(rng, obs_dim, hidden, math.sqrt(2)), "b1": np.zeros(hidden),
            "W2": _orthogonal(rng, hidden, hidden, math.sqrt(2)), "b2": np.zeros(hidden),
            "Wp": _orthogonal(rng, hidden, n_out, 0.01), "bp": np.zeros(n_out),
            "Wv": _orthogonal(rng, hidden, 1, 1.0), "bv": np.zeros(1),
        }
        return cls(w, tuple(int(h) for h in head_sizes))

    @property
    def hidden(self) -> int:
        return self.weights["b1"].shape[0]

    @property
    def offsets(self) -> list[tuple[int, int]]:
        out, lo = [], 0
        for n in self.head_sizes:
            out.append((lo, lo + n))
            lo += n
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.weights.items()}, self.head_sizes)


def forward(params: PolicyParams, obs: np.ndarray):
    """Batch forward pass. Returns (logits, values, cache)."""
    w = params.weights
    x = np.atleast_2d(obs)
    h1 = np.tanh(x @ w["W1"] + w["b1"])
    h2 = np.tanh(h1 @ w["W2"] + w["b2"])
    logits = h2 @ w["Wp"] + w["bp"]
    values = (h2 @ w["Wv"] + w["bv"])[:, 0]
    return logits, values, (x, h1, h2)


def _log_softmax_heads(params: PolicyParams, logits: np.ndarray):
    """Per-head log-probabilities (concatenated like ``logits``)."""
    logp = np.empty_like(logits)
    for lo, hi in params.offsets:
        z = logits[:, lo:hi]
        z = z - z.max(axis=1, keepdims=True)
        logp[:, lo:hi] = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return logp


def distributions(params: PolicyParams, obs: np.ndarray) -> list[np.ndarray]:
    """Per-head action probabilities for a batch of observations."""
    logits, _, _ = forward(params, obs)
    logp = _log_softmax_heads(params, logits)
    return [np.exp(logp[:, lo:hi]) for lo, hi in params.offsets]


def act(params: PolicyParams, obs: np.ndarray, rng: np.random.Generator | None = None,
        deterministic: bool = False) -> tuple[Action, float, float]:
    """Sample (or argmax) every head; returns (action, joint log-prob, value)."""
    logits, values, _ = forward(params, obs)
    if not (np.all(np.isfinite(logits)) and np.isfinite(values[0])):
        raise TrainingDivergedError("non-finite network output", {"obs": np.asarray(obs).tolist()})
    logp = _log_softmax_heads(params, logits)[0]
    idx = []
    total = 0.0
    u = None if deterministic else rng.random(len(params.head_sizes))
    for k, (lo, hi) in enumerate(params.offsets):
        lp = logp[lo:hi]
        if deterministic:
            a = int(np.argmax(lp))
        else:
            a = int(np.searchsorted(np.cumsum(np.exp(lp)), u[k] * np.exp(lp).sum()))
            a = min(a, hi - lo - 1)
        idx.append(a)
        total += lp[a]
    return Action.from_indices(idx), float(total), float(values[0])


# -- advantage estimation -------------------------------------------------------

def gae(rewards, values, bootstrap_value: float, gamma: float, lam: float, dones=None):
    """Generalised advantage estimation; returns (advantages, returns)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must be aligned")
    dones = np.zeros_like(rewards) if dones is None else np.asarray(dones, dtype=float)
    adv = np.zeros_like(rewards)
    last = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        next_v = bootstrap_value if t == len(rewards) - 1 else values[t + 1]
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_v * live - values[t]
        last = delta + gamma * lam * live * last
        adv[t] = last
    return adv, adv + values


# -- PPO loss --------------------------------------------------------------------

@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray  # (B, n_heads) int
    old_logp: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.obs)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.old_logp[idx],
                     self.advantages[idx], self.returns[idx])


def ppo_loss(params: PolicyParams, batch: Batch, clip_ratio: float, vf_coef: float,
             ent_coef: float, with_grad: bool = True):
    """Clipped-surrogate loss with value MSE and entropy bonus.

    Returns ``(loss, info, grads)``; ``grads`` is None when ``with_grad`` is false.
    """
    B = len(batch)
    logits, values, (x, h1, h2) = forward(params, batch.obs)
    logp_all = _log_softmax_heads(params, logits)
    probs = np.exp(logp_all)
    rows = np.arange(B)
    logp = np.zeros(B)
    entropy = np.zeros(B)
    for k, (lo, hi) in enumerate(params.offsets):
        logp += logp_all[rows, lo + batch.actions[:, k]]
        entropy -= (probs[:, lo:hi] * logp_all[:, lo:hi]).sum(axis=1)
    adv = batch.advantages
    ratio = np.exp(logp - batch.old_logp)
    clipped = np.clip(ratio, 1 - clip_ratio, 1 + clip_ratio)
    surr1, surr2 = ratio * adv, clipped * adv
    policy_loss = -np.mean(np.minimum(surr1, surr2))
    value_err = values - batch.returns
    value_loss = np.mean(value_err ** 2)
    ent = np.mean(entropy)
    loss = policy_loss + vf_coef * value_loss - ent_coef * ent
    info = {
        "policy_loss": float(policy_loss), "value_loss": float(value_loss),
        "entropy": float(ent), "loss": float(loss),
        "clip_frac": float(np.mean(np.abs(ratio - 1) > clip_ratio)),
        "approx_kl": float(np.mean(batch.old_logp - logp)),
    }
    if not with_grad:
        return float(loss), info, None

    # d loss / d joint log-prob; zero where the clipped branch is active
    unclipped = surr1 <= surr2
    g_logp = np.where(unclipped, -adv * ratio / B, 0.0)
    d_logits = np.empty_like(logits)
    for k, (lo, hi) in enumerate(params.offsets):
        p = probs[:, lo:hi]
        onehot = np.zeros_like(p)
        onehot[rows, batch.actions[:, k]] = 1.0
        head_ent = -(p * logp_all[:, lo:hi]).sum(axis=1, keepdims=True)
        d_ent = -p * (logp_all[:, lo:hi] + head_ent)
        d_logits[:, lo:hi] = g_logp[:, None] * (onehot - p) - (ent_coef / B) * d_ent
    d_values = vf_coef * 2.0 * value_err / B

    w = params.weights
    grads = {
        "Wp": h2.T @ d_logits, "bp": d_logits.sum(axis=0),
        "Wv": h2.T @ d_values[:, None], "bv": np.array([d_values.sum()]),
    }
    d_h2 = d_logits @ w["Wp"].T + d_values[:, None] @ w["Wv"].T
    d_pre2 = d_h2 * (1 - h2 ** 2)
    grads["W2"] = h1.T @ d_pre2
    grads["b2"] = d_pre2.sum(axis=0)
    d_pre1 = (d_pre2 @ w["W2"].T) * (1 - h1 ** 2)
    grads["W1"] = x.T @ d_pre1
    grads["b1"] = d_pre1.sum(axis=0)
    return float(loss), info, grads


class Adam:
    def __init__(self, params: PolicyParams, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.weights.items()}

    def step(self, params: PolicyParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params.weights[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def ppo_update(params: PolicyParams, batch: Batch, config: TrainConfig,
               optimizer: Adam | None = None, rng: np.random.Generator | None = None):
    """Run ``config.epochs`` passes of minibatch PPO; returns (new_params, stats)."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    params = params.copy() if optimizer is None else params
    optimizer = optimizer or Adam(params, config.lr)
    rng = np.random.default_rng(rng)
    adv = batch.advantages
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    batch = Batch(batch.obs, batch.actions, batch.old_logp, adv, batch.returns)
    stats = []
    n = len(batch)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.minibatch_size):
            mb = batch.subset(order[lo:lo + config.minibatch_size])
            loss, info, grads = ppo_loss(params, mb, config.clip_ratio, config.vf_coef,
                                         config.ent_coef)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError("non-finite PPO loss", {
                    "info": info, "adv_mean": float(adv.mean()),
                    "returns_range": [float(batch.returns.min()), float(batch.returns.max())],
                })
            info["grad_norm"] = clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(params, grads)
            stats.append(info)
    summary = {k: float(np.mean([s[k] for s in stats])) for k in stats[0]}
    return params, summary


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path_stem, params: PolicyParams, optimizer: Adam | None = None,
                    meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` (flat float64 arrays) and ``<stem>.json`` (layout + metadata)."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blocks = [("w", k, params.weights[k]) for k in PARAM_NAMES]
    if optimizer is not None:
        blocks += [("m", k, optimizer.m[k]) for k in PARAM_NAMES]
        blocks += [("v", k, optimizer.v[k]) for k in PARAM_NAMES]
    layout, offset = [], 0
    with open(stem.with_suffix(".bin"), "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for group, name, arr in blocks:
            data = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(data.tobytes())
            layout.append({"group": group, "name": name, "shape": list(arr.shape),
                           "offset": offset})
            offset += data.size
    sidecar = {
        "format": "fairmarket-policy", "version": CHECKPOINT_VERSION,
        "head_sizes": list(params.head_sizes), "hidden": params.hidden, "obs_dim": OBS_DIM,
        "arrays": layout,
        "adam": None if optimizer is None else {"t": optimizer.t, "lr": optimizer.lr},
        **(meta or {}),
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return stem.with_suffix(".bin"), stem.with_suffix(".json")


def load_checkpoint(path_stem) -> tuple[PolicyParams, Adam | None, dict]:
    stem = Path(path_stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    if meta.get("format") != "fairmarket-policy" or meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{stem}: unsupported checkpoint format/version")
    raw = stem.with_suffix(".bin").read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ConfigError(f"{stem}.bin: bad magic")
    flat = np.frombuffer(raw[len(CHECKPOINT_MAGIC):], dtype="<f8")
    groups: dict[str, dict[str, np.ndarray]] = {"w": {}, "m": {}, "v": {}}
    for entry in meta["arrays"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
        groups[entry["group"]][entry["name"]] = arr
    params = PolicyParams(groups["w"], tuple(meta["head_sizes"]))
    opt = None
    if meta.get("adam"):
        opt = Adam(params, meta["adam"]["lr"])
        opt.t = meta["adam"]["t"]
        opt.m, opt.v = groups["m"], groups["v"]
    return params, opt, meta


# -- rollouts and training -----------------------------------------------------------

@dataclass
class Trajectory:
    obs: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    logp: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)

    def add(self, obs, action: Action, logp, value, reward, done):
        self.obs.append(obs)
        self.actions.append(action.indices())
        self.logp.append(logp)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)

    def to_batch(self, gamma: float, lam: float) -> Batch:
        adv, ret = gae(self.rewards, self.values, 0.0, gamma, lam, self.dones)
        return Batch(np.asarray(self.obs), np.asarray(self.actions, dtype=int),
                     np.asarray(self.logp), adv, ret)


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[seed, _TRAINER_ENTROPY],
                                                        spawn_key=key))


@dataclass
class EvalResult:
    ledgers: list
    rewards: list
    scores: list


def evaluate(env_config: EnvConfig, policies: dict, seed: int, days: int | None = None,
             deterministic: bool = True, critic=None, episode: int = 0) -> EvalResult:
    """Roll frozen policies over ``days`` (default: the scenario horizon)."""
    env = MarketEnv(env_config)
    critic = critic or DeterministicCritic()
    state = env.reset(seed, episode=episode, start_day=0, days=days)
    rng = _rng(seed, episode, 99)
    ledgers, rewards, scores = [], [], []
    while not state.done:
        actions = [None] * len(env.agents)
        for i in env.learners():
            pol = policies.get(env.ids[i])
            if pol is None:
                if env.agents[i].is_prosumer:
                    raise ConfigError(f"no policy for prosumer {env.ids[i]}")
                continue
            actions[i], _, _ = act(pol, env.observe(state, i), rng, deterministic)
        state, ledger, raw = env.step(state, actions)
        ledgers.append(ledger)
        rewards.append(raw)
        scores.append(critic.score(ledger))
    return EvalResult(ledgers, rewards, scores)


class Trainer:
    """Collects one episode per training iteration and updates every learner."""

    def __init__(self, env_config: EnvConfig, shaping: ShapingConfig, config: TrainConfig,
                 critic=None):
        self.env = MarketEnv(env_config)
        self.shaping = shaping
        self.config = config
        self.critic = critic or DeterministicCritic()
        self.episode = 0
        self.policies: dict[str, PolicyParams] = {}
        self.optimizers: dict[str, Adam] = {}
        for k, i in enumerate(self.env.learners()):
            spec = self.env.agents[i]
            params = PolicyParams.init(head_sizes(spec, env_config), config.hidden,
                                       _rng(config.seed, 10**6 + k))
            self.policies[spec.id] = params
            self.optimizers[spec.id] = Adam(params, config.lr)

    def run_episode(self, e: int):
        env, cfg = self.env, self.config
        rng = _rng(cfg.seed, e, 0)
        start_day = int(rng.integers(env.config.horizon_days))
        state = env.reset(cfg.seed, episode=e, start_day=start_day, days=cfg.episode_days)
        lambdas = self.shaping.lambdas(e)
        learners = env.learners()
        trajs = {env.ids[i]: Trajectory() for i in learners}
        shaped = {env.ids[i]: 0.0 for i in learners}
        raw_tot = {env.ids[i]: 0.0 for i in learners}
        score_sum = np.zeros(3)
        n_slots = 0
        while not state.done:
            actions = [None] * len(env.agents)
            pending = {}
            for i in learners:
                obs = env.observe(state, i)
                a, logp, v = act(self.policies[env.ids[i]], obs, rng)
                actions[i] = a
                pending[env.ids[i]] = (obs, a, logp, v)
            state, ledger, raw = env.step(state, actions)
            scores: FairnessScores = self.critic.score(ledger)
            score_sum += (scores.ftg, scores.fbs, scores.fpp)
            n_slots += 1
            sold = ledger.sold()
            total_sold = sum(sold.get(env.ids[i], 0.0) for i in env.prosumers)
            for aid, (obs, a, logp, v) in pending.items():
                if aid in raw.profit:
                    r_raw = raw.profit[aid]
                    r = shape(r_raw, scores, lambdas, self.shaping, sold.get(aid, 0.0), total_sold)
                else:
                    r_raw = r = -raw.cost[aid]
                shaped[aid] += r
                raw_tot[aid] += r_raw
                trajs[aid].add(obs, a, logp, v, r * cfg.reward_scale, state.done)
        avg = score_sum / max(n_slots, 1)
        records = [{
            "episode": e, "agent": aid, "total_reward": shaped[aid], "raw_reward": raw_tot[aid],
            "ftg": float(avg[0]), "fbs": float(avg[1]), "fpp": float(avg[2]),
            "lambda_grid": lambdas[0], "lambda_price": lambdas[1], "lambda_peer": lambdas[2],
        } for aid in trajs]
        return trajs, records

    def update(self, e: int, trajs: dict[str, Trajectory]) -> dict[str, dict]:
        cfg = self.config
        stats = {}
        for k, (aid, traj) in enumerate(trajs.items()):
            batch = traj.to_batch(cfg.gamma, cfg.gae_lambda)
            _, stats[aid] = ppo_update(self.policies[aid], batch, cfg, self.optimizers[aid],
                                       _rng(cfg.seed, e, 1 + k))
        return stats

    def train(self, episodes: int | None = None, on_episode: Callable | None = None,
              checkpoint_dir=None) -> list[dict]:
        """Train until ``total_episodes`` (or ``episodes`` more); returns curve records."""
        cfg = self.config
        end = cfg.total_episodes if episodes is None else min(cfg.total_episodes,
                                                               self.episode + episodes)
        curves = []
        while self.episode < end:
            e = self.episode
            trajs, records = self.run_episode(e)
            self.update(e, trajs)
            self.episode += 1
            curves.extend(records)
            if on_episode is not None:
                on_episode(records)
            if checkpoint_dir is not None and cfg.checkpoint_every and \
                    self.episode % cfg.checkpoint_every == 0:
                self.save(Path(checkpoint_dir) / f"ep{self.episode:06d}")
        if checkpoint_dir is not None:
            self.save(Path(checkpoint_dir) / "final")
        return curves

    def save(self, directory) -> None:
        directory = Path(directory)
        for aid, params in self.policies.items():
            save_checkpoint(directory / aid, params, self.optimizers[aid], {
                "agent": aid, "episode": self.episode, "train_config": asdict(self.config),
            })

    def restore(self, directory) -> None:
        directory = Path(directory)
        episodes = set()
        for aid in self.policies:
            params, opt, meta = load_checkpoint(directory / aid)
            if params.head_sizes != self.policies[aid].head_sizes:
                raise ConfigError(f"checkpoint for {aid} has incompatible action heads")
            self.policies[aid] = params
            if opt is not None:
                self.optimizers[aid] = opt
            episodes.add(meta["episode"])
        if len(episodes) != 1:
            raise ConfigError(f"checkpoints in {directory} disagree on the episode index")
        self.episode = episodes.pop()


def train(env_config: EnvConfig, shaping: ShapingConfig, config: TrainConfig, critic=None,
          checkpoint_dir=None, on_episode=None):
    """Run a full training job; returns (policies, curves)."""
    trainer = Trainer(env_config, shaping, config, critic)
    curves = trainer.train(on_episode=on_episode, checkpoint_dir=checkpoint_dir)
    return trainer.policies, curves


def load_policies(directory, env_config: EnvConfig) -> dict[str, PolicyParams]:
    """Load one checkpoint per learning agent and check menu/observation compatibility."""
    env = MarketEnv(env_config)
    directory = Path(directory)
    out = {}
    for i in env.learners():
        spec = env.agents[i]
        stem = directory / spec.id
        if not stem.with_suffix(".json").exists():
            if spec.is_prosumer:
                raise FileNotFoundError(f"missing checkpoint {stem}.json")
            continue
        params, _, meta = load_checkpoint(stem)
        if tuple(meta["head_sizes"]) != head_sizes(spec, env_config) or meta["obs_dim"] != OBS_DIM:
            raise ConfigError(f"checkpoint {stem} incompatible with agent {spec.id}")
        out[spec.id] = params
    return out


def check_compatible(env_config: EnvConfig, policies: dict) -> None:
    """Raise ConfigError unless every prosumer has a policy with matching action heads."""
    env = MarketEnv(env_config)
    for i in env.learners():
        spec = env.agents[i]
        params = policies.get(spec.id)
        if params is None:
            if spec.is_prosumer:
                raise ConfigError(f"no policy for prosumer {spec.id}")
            continue
        if tuple(params.head_sizes) != head_sizes(spec, env_config):
            raise ConfigError(f"policy for {spec.id} has incompatible action heads")


__all__ = [
    "HEADS", "Adam", "Batch", "EvalResult", "PolicyParams", "TrainConfig", "Trainer",
    "Trajectory", "act", "check_compatible", "clip_grad_norm", "distributions", "evaluate", "forward", "gae",
    "load_checkpoint", "load_policies", "ppo_loss", "ppo_update", "save_checkpoint", "train",
]
