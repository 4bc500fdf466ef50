"""PPO training: rollouts, GAE, the clipped objective, Adam and the update loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .env import FetchEnv
from .objective import LossSpec, LossTerms, NonFiniteError, ppo_loss  # noqa: F401  (re-exported)
from .perception import PerceptionConfig, channel_count
from .policy import Minibatch, NetworkSpec, PolicyParams, backward, forward, init_params, sample_action
from .reward import RewardWeights
from .scene import Scene

log = logging.getLogger(__name__)

METRICS_HEADER = (
    "step", "mean_reward", "success_rate", "policy_loss", "value_loss",
    "entropy", "clip_fraction", "approx_kl", "grad_norm",
)
EVAL_HEADER = ("step", "success_rate", "avg_cumulative_reward", "navigation_efficiency", "interaction_efficiency")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    gamma_discount: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    minibatch_size: int = 64
    epochs_per_update: int = 4
    rollout_horizon: int = 2048
    total_steps: int = 200_000
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    eval_interval: int = 10  # updates between evaluations
    early_stop_patience: int = 5  # evaluations without a > 1 point gain
    seed: int = 0
    num_envs: int = 8
    max_grad_norm: Optional[float] = None  # global-norm clip; None disables
    normalize_advantages: bool = True
    eval_episodes_per_scene: int = 25

    def __post_init__(self):
        if not 0 < self.gamma_discount <= 1:
            raise ValueError("gamma_discount must lie in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be > 0")
        for name in ("minibatch_size", "epochs_per_update", "rollout_horizon", "total_steps", "num_envs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(self.clip_epsilon, self.value_coef, self.entropy_coef)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad_norm: float


# --------------------------------------------------------------------------- GAE


def compute_gae(rewards, values, dones, bootstrap: float, gamma_discount: float, gae_lambda: float):
    """Backward GAE recursion; ``done[t]`` cuts both the bootstrap and the trace after step t."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if not rewards.shape == values.shape == dones.shape:
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros_like(rewards)
    last = 0.0
    next_value = float(bootstrap)
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma_discount * next_value * live - values[t]
        last = delta + gamma_discount * gae_lambda * live * last
        adv[t] = last
        next_value = values[t]
    return adv, adv + values


def normalize(adv: np.ndarray) -> np.ndarray:
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / adv.std()


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def optimizer_step(params: np.ndarray, gradient: np.ndarray, state: AdamState, learning_rate: float):
    """Bias-corrected Adam step. Returns (new params, new state); inputs are not modified."""
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != params.shape or gradient.shape != state.m.shape:
        raise ValueError("parameter, gradient and optimizer state sizes differ")
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteError("non-finite gradient; optimizer step refused")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * gradient
    v = state.beta2 * state.v + (1 - state.beta2) * gradient**2
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    new = params - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


# --------------------------------------------------------------------------- rollouts


@dataclass
class Trajectory:
    features: np.ndarray
    context: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    successes: np.ndarray
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.actions)


@dataclass
class EnvPool:
    """Independent environments, each with its own action-sampling stream."""

    envs: list
    action_rngs: list
    obs: list = field(default_factory=list)
    finished: list = field(default_factory=list)  # (cumulative reward, success) of completed episodes

    @classmethod
    def create(cls, scenes: Sequence[Scene], perception_config: PerceptionConfig, weights: RewardWeights,
               mode: str, n: int, seed: int, max_steps: int = 200, target_classes=None) -> "EnvPool":
        seqs = np.random.SeedSequence(seed).spawn(n)
        envs, rngs = [], []
        for s in seqs:
            sampler, actor = (np.random.default_rng(c) for c in s.spawn(2))
            envs.append(FetchEnv(scenes, perception_config, weights, mode, max_steps, sampler, target_classes))
            rngs.append(actor)
        pool = cls(envs, rngs)
        pool.obs = [env.reset() for env in envs]
        return pool


def collect_rollout(pool: EnvPool, params: PolicyParams, horizon: int) -> list[Trajectory]:
    """Exactly ``horizon`` steps spread over the pool (earlier envs take the remainder)."""
    n = len(pool.envs)
    quota = [horizon // n + (1 if i < horizon % n else 0) for i in range(n)]
    live = [i for i in range(n) if quota[i] > 0]
    buf = {i: {k: [] for k in ("f", "c", "a", "r", "v", "lp", "d", "s")} for i in live}
    steps = max(quota)
    for t in range(steps):
        active = [i for i in live if t < quota[i]]
        feats = np.stack([pool.obs[i][0] for i in active])
        ctx = np.stack([pool.obs[i][1] for i in active])
        out = forward(params, feats, ctx)
        for j, i in enumerate(active):
            env = pool.envs[i]
            probs = out.action_probs[j]
            a, lp = sample_action(probs, pool.action_rngs[i])
            f2, c2, rew, outcome = env.step(a)
            b = buf[i]
            b["f"].append(feats[j])
            b["c"].append(ctx[j])
            b["a"].append(a)
            b["r"].append(rew.total)
            b["v"].append(out.value[j])
            b["lp"].append(lp)
            b["d"].append(outcome.terminal)
            b["s"].append(outcome.success)
            if outcome.terminal:
                pool.finished.append((env.record.cumulative_reward, env.record.success))
                f2, c2 = env.reset()
            pool.obs[i] = (f2, c2)

    trajs = []
    pending = [i for i in live if not buf[i]["d"][-1]]
    boot = {}
    if pending:
        out = forward(params, np.stack([pool.obs[i][0] for i in pending]), np.stack([pool.obs[i][1] for i in pending]))
        boot = {i: float(out.value[j]) for j, i in enumerate(pending)}
    for i in live:
        b = buf[i]
        trajs.append(Trajectory(
            features=np.stack(b["f"]), context=np.stack(b["c"]), actions=np.array(b["a"], dtype=np.int64),
            rewards=np.array(b["r"]), values=np.array(b["v"]), log_probs=np.array(b["lp"]),
            dones=np.array(b["d"], dtype=bool), successes=np.array(b["s"], dtype=bool),
            bootstrap_value=boot.get(i, 0.0),
        ))
    return trajs


# --------------------------------------------------------------------------- update


def ppo_update(params: PolicyParams, adam: AdamState, batch: Minibatch, cfg: TrainConfig,
               rng: np.random.Generator) -> tuple[PolicyParams, AdamState, UpdateStats]:
    """``epochs_per_update`` passes of shuffled minibatches; stats are means over minibatches."""
    n = len(batch)
    rows = []
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start : start + cfg.minibatch_size]
            mb = Minibatch(batch.features[idx], batch.context[idx], batch.actions[idx],
                           batch.old_log_prob[idx], batch.advantages[idx], batch.returns[idx])
            grad, terms = backward(params, mb, cfg.loss_spec)
            norm = float(np.sqrt(grad @ grad))
            if cfg.max_grad_norm is not None and norm > cfg.max_grad_norm:
                grad = grad * (cfg.max_grad_norm / norm)
            flat, adam = optimizer_step(params.flat, grad, adam, cfg.learning_rate)
            params = PolicyParams(params.spec, flat)
            rows.append((terms.policy, terms.value, terms.entropy, terms.clip_fraction, terms.approx_kl, norm))
    m = np.mean(rows, axis=0)
    return params, adam, UpdateStats(*(float(v) for v in m))


def build_batch(trajs: list[Trajectory], cfg: TrainConfig) -> Minibatch:
    advs, rets = [], []
    for tr in trajs:
        a, r = compute_gae(tr.rewards, tr.values, tr.dones, tr.bootstrap_value, cfg.gamma_discount, cfg.gae_lambda)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs)
    if cfg.normalize_advantages:
        adv = normalize(adv)
    return Minibatch(
        np.concatenate([t.features for t in trajs]),
        np.concatenate([t.context for t in trajs]),
        np.concatenate([t.actions for t in trajs]),
        np.concatenate([t.log_probs for t in trajs]),
        adv,
        np.concatenate(rets),
    )


@dataclass
class TrainResult:
    params: PolicyParams
    adam: AdamState
    updates: int
    steps: int
    stopped_early: bool
    metrics: list = field(default_factory=list)
    evals: list = field(default_factory=list)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def train(
    cfg: TrainConfig,
    scenes: Sequence[Scene],
    perception_config: PerceptionConfig,
    weights: RewardWeights,
    mode: str,
    net_spec: Optional[NetworkSpec] = None,
    out_dir: Optional[Path] = None,
    max_steps: int = 200,
    target_classes=None,
    evaluate: Optional[Callable] = None,
) -> TrainResult:
    """Train one agent. ``mode`` only changes the observation encoder.

    ``evaluate(params) -> summary dict`` runs the periodic evaluation; by
    default it is a stochastic evaluation over ``eval_episodes_per_scene``
    fixed episodes per scene. With ``out_dir`` set, ``metrics.csv``,
    ``evals.csv`` and ``checkpoint.bin`` are written there; the checkpoint is
    also flushed when a sub-step raises.
    """
    from .checkpoint import save_checkpoint
    from .evaluation import run_evaluation, summarize

    window = perception_config.window
    if net_spec is None:
        net_spec = NetworkSpec(channel_count(mode), window)
    if net_spec.input_channels != channel_count(mode) or net_spec.window != window:
        raise ValueError(f"network input ({net_spec.input_channels}, {net_spec.window}) does not match "
                         f"{mode} observations ({channel_count(mode)}, {window})")

    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(net_spec, int(seeds[0].generate_state(1)[0]))
    adam = AdamState.zeros(net_spec.parameter_count)
    shuffle_rng = np.random.default_rng(seeds[1])
    pool = EnvPool.create(scenes, perception_config, weights, mode, cfg.num_envs,
                          int(seeds[2].generate_state(1)[0]), max_steps, target_classes)
    if evaluate is None:
        def evaluate(p):
            recs = run_evaluation(p, scenes, cfg.eval_episodes_per_scene, seed=cfg.seed + 1,
                                  obs_mode=mode, perception_config=perception_config, weights=weights,
                                  max_steps=max_steps, target_classes=target_classes)
            return summarize(recs)

    metrics_f = evals_f = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_f = open(out_dir / "metrics.csv", "w", newline="\n")
        metrics_f.write(",".join(METRICS_HEADER) + "\n")
        evals_f = open(out_dir / "evals.csv", "w", newline="\n")
        evals_f.write(",".join(EVAL_HEADER) + "\n")

    n_updates = max(1, cfg.total_steps // cfg.rollout_horizon)
    result = TrainResult(params, adam, 0, 0, False)
    best, stale = -math.inf, 0
    try:
        for update in range(n_updates):
            pool.finished.clear()
            trajs = collect_rollout(pool, params, cfg.rollout_horizon)
            batch = build_batch(trajs, cfg)
            params, adam, stats = ppo_update(params, adam, batch, cfg, shuffle_rng)
            steps = (update + 1) * cfg.rollout_horizon
            done_eps = pool.finished
            mean_reward = float(np.mean([r for r, _ in done_eps])) if done_eps else math.nan
            success = float(np.mean([s for _, s in done_eps])) if done_eps else math.nan
            row = (steps, mean_reward, success, stats.policy_loss, stats.value_loss, stats.entropy,
                   stats.clip_fraction, stats.approx_kl, stats.grad_norm)
            result.metrics.append(row)
            result.params, result.adam, result.updates, result.steps = params, adam, update + 1, steps
            if metrics_f:
                metrics_f.write(",".join(_fmt(v) for v in row) + "\n")
                metrics_f.flush()
            log.info("update %d step %d success %.3f reward %.2f entropy %.3f", update + 1, steps, success,
                     mean_reward, stats.entropy)

            if cfg.eval_interval > 0 and (update + 1) % cfg.eval_interval == 0 and update + 1 < n_updates:
                summary = evaluate(params)
                erow = (steps, summary["success_rate_pct"], summary["avg_cumulative_reward"],
                        summary["navigation_efficiency_pct"], summary["interaction_efficiency"])
                result.evals.append(erow)
                if evals_f:
                    evals_f.write(",".join(_fmt(math.nan if v is None else v) for v in erow) + "\n")
                    evals_f.flush()
                if summary["success_rate_pct"] > best + 1.0:
                    best, stale = summary["success_rate_pct"], 0
                else:
                    stale += 1
                if cfg.early_stop_patience > 0 and stale >= cfg.early_stop_patience:
                    log.info("early stop at step %d: success plateau", steps)
                    result.stopped_early = True
                    break
    finally:
        if metrics_f:
            metrics_f.close()
            evals_f.close()
        if out_dir is not None:
            save_checkpoint(out_dir / "checkpoint.bin", result.params, result.adam)
    return result
