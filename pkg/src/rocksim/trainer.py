"""PPO with GAE over vectorized simulation environments.

Actions are a tanh-squashed Gaussian: the network's final linear output is
the pre-squash mean, the (log) standard deviation is a single trainable
parameter, and stored pre-squash samples make ratios exact under updated
parameters. All gradients are computed analytically through the shared MLP
backward pass and cross-checked against finite differences in the tests.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import RockEnv
from .policy import Mlp, PolicyNet, config_hash, save_policy

LOG_2PI = math.log(2.0 * math.pi)
TANH_EPS = 1e-7
VALUE_LOSS_COEF = 0.5


class NonFiniteUpdateError(RuntimeError):
    def __init__(self, iteration: int):
        super().__init__(f"non-finite loss during update at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    n_envs: int = 64
    horizon: int = 256
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 3
    minibatch_size: int = 2048
    entropy_coef: float = 0.003
    iterations: int = 200
    seed: int = 0
    action_noise_std: float = 0.3
    hidden: tuple = (512, 256, 128)
    max_grad_norm: float = 0.5
    checkpoint_interval: int = 50

    def __post_init__(self):
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip ratio must be positive")


@dataclass
class RolloutBatch:
    observations: np.ndarray  # [T, N, obs]
    actions: np.ndarray  # [T, N], squashed
    presquash: np.ndarray  # [T, N]
    log_probs: np.ndarray  # [T, N]
    values: np.ndarray  # [T, N]
    rewards: np.ndarray  # [T, N]
    dones: np.ndarray  # [T, N] bool
    valid: np.ndarray  # [T, N] bool; dropped (diverged) transitions are False
    last_values: np.ndarray  # [N] bootstrap
    commands: np.ndarray  # [T, N, 2]

    def __post_init__(self):
        for name in ("observations", "actions", "log_probs", "values", "rewards", "last_values"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in rollout field {name}")


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm and total > 0.0:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


def squashed_log_prob(presquash, mean, log_std):
    """log pi(a) for a = tanh(x), x ~ N(mean, exp(log_std)^2)."""
    sigma = max(math.exp(log_std), 1e-8)
    z = (presquash - mean) / sigma
    base = -0.5 * z * z - math.log(sigma) - 0.5 * LOG_2PI
    squashed = np.tanh(presquash)
    return base - np.log1p(-(squashed * squashed) + TANH_EPS)


def clipped_surrogate_loss_and_grads(
    policy: Mlp,
    log_std: float,
    obs: np.ndarray,
    presquash: np.ndarray,
    logp_old: np.ndarray,
    advantages: np.ndarray,
    clip_ratio: float,
    entropy_coef: float,
):
    """Policy loss -mean(min(r A, clip(r) A)) - entropy_coef * H and its exact
    gradients with respect to the network parameters and log_std.

    Returns (loss, param_grads, log_std_grad, stats). The gradient flows
    through the probability ratio only where the unclipped branch attains the
    minimum, so clipped samples contribute nothing through the main term.
    """
    m = obs.shape[0]
    mean, cache = policy.forward_cached(obs)
    mean = mean[:, 0]
    sigma = max(math.exp(log_std), 1e-8)
    z = (presquash - mean) / sigma
    logp = squashed_log_prob(presquash, mean, log_std)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages
    surrogate = np.minimum(unclipped, clipped)
    entropy = math.log(sigma) + 0.5 * (LOG_2PI + 1.0)  # pre-squash Gaussian
    loss = float(-surrogate.mean() - entropy_coef * entropy)

    active = unclipped <= clipped
    dl_dlogp = -(ratio * advantages * active) / m
    grad_mean = dl_dlogp * (z / sigma)  # dlogp/dmean = z / sigma
    param_grads = policy.backward(cache, grad_mean[:, None])
    log_std_grad = float((dl_dlogp * (z * z - 1.0)).sum()) - entropy_coef

    stats = {
        "surrogate_loss": float(-surrogate.mean()),
        "entropy": entropy,
        "kl": float(np.mean((ratio - 1.0) - np.log(np.maximum(ratio, 1e-12)))),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
    }
    return loss, param_grads, log_std_grad, stats


def gae(rewards, values, dones, gamma, lam, last_values):
    """Recursive generalized advantage estimation.

    Shapes [T, N] (or [T]); `last_values` bootstraps the value beyond the
    horizon. Returns raw (unnormalized) advantages and returns = adv + values;
    normalization happens inside the update.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values, and dones must share a shape")
    horizon = rewards.shape[0]
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(last_values, dtype=float)
    carry = np.zeros_like(next_value)
    for t in range(horizon - 1, -1, -1):
        live = ~dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        carry = delta + gamma * lam * live * carry
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


def collect_rollouts(
    envs: list[RockEnv],
    policy: Mlp,
    value_net: Mlp,
    horizon: int,
    rng: np.random.Generator,
    log_std: float,
    carry_obs: list[np.ndarray] | None = None,
):
    """Step every env `horizon` times with stochastic actions.

    Done envs auto-reset (their own RNG streams supply fresh terrain and
    command). Diverged envs reset too and the transition is marked invalid.
    Returns (batch, carry_obs, stats).
    """
    n = len(envs)
    if carry_obs is None:
        carry_obs = [env.reset() for env in envs]
    obs_dim = carry_obs[0].shape[0]
    sigma = math.exp(log_std)

    observations = np.empty((horizon, n, obs_dim))
    actions = np.empty((horizon, n))
    presquash = np.empty((horizon, n))
    log_probs = np.empty((horizon, n))
    values = np.empty((horizon, n))
    rewards = np.empty((horizon, n))
    dones = np.zeros((horizon, n), dtype=bool)
    valid = np.ones((horizon, n), dtype=bool)
    commands = np.empty((horizon, n, 2))

    episodes = 0
    dropped = 0
    speed_accum = 0.0
    for t in range(horizon):
        obs_mat = np.stack(carry_obs)
        observations[t] = obs_mat
        commands[t] = np.stack([env.command for env in envs])
        mean = policy.forward_pre(obs_mat)[:, 0]
        noise = rng.standard_normal(n) if sigma > 0.0 else np.zeros(n)
        x = mean + sigma * noise
        a = np.tanh(x)
        presquash[t] = x
        actions[t] = a
        log_probs[t] = squashed_log_prob(x, mean, log_std)
        values[t] = value_net.forward_pre(obs_mat)[:, 0]
        for i, env in enumerate(envs):
            next_obs, r, done, info = env.step(float(a[i]))
            if info.get("diverged"):
                valid[t, i] = False
                dropped += 1
                next_obs = env.reset()
                done = True
                r = 0.0
            rewards[t, i] = r
            dones[t, i] = done
            speed_accum += info.get("speed_along_command", 0.0)
            if done and valid[t, i]:
                episodes += 1
                next_obs = env.reset()
            carry_obs[i] = next_obs

    last_values = value_net.forward_pre(np.stack(carry_obs))[:, 0]
    batch = RolloutBatch(
        observations=observations,
        actions=actions,
        presquash=presquash,
        log_probs=log_probs,
        values=values,
        rewards=rewards,
        dones=dones,
        valid=valid,
        last_values=last_values,
        commands=commands,
    )
    stats = {
        "episodes": episodes,
        "dropped": dropped,
        "mean_reward": float(rewards[valid].mean()) if valid.any() else 0.0,
        "mean_speed": speed_accum / (horizon * n),
    }
    return batch, carry_obs, stats


@dataclass
class PpoState:
    """Trainable bundle: actor, critic, exploration spread, optimizers."""

    policy: Mlp
    value_net: Mlp
    log_std: float
    policy_opt: Adam = field(init=False)
    value_opt: Adam = field(init=False)
    log_std_m: float = 0.0
    log_std_v: float = 0.0

    def __post_init__(self):
        self.policy_opt = Adam(self.policy.parameters(), lr=0.0)
        self.value_opt = Adam(self.value_net.parameters(), lr=0.0)


def ppo_update(
    ppo: PpoState,
    batch: RolloutBatch,
    config: TrainConfig,
    rng: np.random.Generator,
    iteration: int = 0,
):
    """One PPO update over the batch: clipped surrogate + value MSE + entropy
    bonus, minibatched over shuffled flattened samples.

    Returns loss statistics (mean policy/value losses, KL estimate, clip
    fraction, entropy)."""
    advantages, returns = gae(
        batch.rewards, batch.values, batch.dones, config.gamma, config.gae_lambda, batch.last_values
    )
    flat = batch.valid.reshape(-1)
    obs = batch.observations.reshape(-1, batch.observations.shape[-1])[flat]
    x_pre = batch.presquash.reshape(-1)[flat]
    logp_old = batch.log_probs.reshape(-1)[flat]
    adv = advantages.reshape(-1)[flat]
    ret = returns.reshape(-1)[flat]
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n_samples = obs.shape[0]
    ppo.policy_opt.lr = config.learning_rate
    ppo.value_opt.lr = config.learning_rate
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "kl": 0.0, "clip_fraction": 0.0, "entropy": 0.0}
    updates = 0

    for _ in range(config.epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, config.minibatch_size):
            idx = order[start : start + config.minibatch_size]
            mb_obs, mb_x = obs[idx], x_pre[idx]
            mb_adv, mb_ret, mb_old = adv[idx], ret[idx], logp_old[idx]
            m = len(idx)

            policy_loss, pgrads, log_std_grad, mb_stats = clipped_surrogate_loss_and_grads(
                ppo.policy, ppo.log_std, mb_obs, mb_x, mb_old, mb_adv,
                config.clip_ratio, config.entropy_coef,
            )

            values, vcache = ppo.value_net.forward_cached(mb_obs)
            values = values[:, 0]
            value_loss = VALUE_LOSS_COEF * float(((values - mb_ret) ** 2).mean())

            if not (math.isfinite(policy_loss) and math.isfinite(value_loss)):
                raise NonFiniteUpdateError(iteration)

            log_std_grad_arr = np.array([log_std_grad])
            clip_grad_norm(pgrads + [log_std_grad_arr], config.max_grad_norm)
            grad_log_std = float(log_std_grad_arr[0])
            ppo.policy_opt.step(pgrads)
            ppo.log_std_m = 0.9 * ppo.log_std_m + 0.1 * grad_log_std
            ppo.log_std_v = 0.999 * ppo.log_std_v + 0.001 * grad_log_std**2
            t = ppo.policy_opt.t
            m_hat = ppo.log_std_m / (1.0 - 0.9**t)
            v_hat = ppo.log_std_v / (1.0 - 0.999**t)
            ppo.log_std -= config.learning_rate * m_hat / (math.sqrt(v_hat) + 1e-8)

            vgrads = ppo.value_net.backward(vcache, (VALUE_LOSS_COEF * 2.0 * (values - mb_ret) / m)[:, None])
            clip_grad_norm(vgrads, config.max_grad_norm)
            ppo.value_opt.step(vgrads)

            for p in ppo.policy.parameters() + ppo.value_net.parameters():
                if not np.all(np.isfinite(p)):
                    raise NonFiniteUpdateError(iteration)

            stats["policy_loss"] += mb_stats["surrogate_loss"]
            stats["value_loss"] += value_loss
            stats["kl"] += mb_stats["kl"]
            stats["clip_fraction"] += mb_stats["clip_fraction"]
            stats["entropy"] += mb_stats["entropy"]
            updates += 1

    for key in stats:
        stats[key] /= max(updates, 1)
    return stats


CURVE_FIELDS = [
    "iteration",
    "mean_reward",
    "mean_speed",
    "kl",
    "policy_loss",
    "value_loss",
    "clip_fraction",
    "entropy",
    "noise_std",
    "episodes",
    "dropped",
]


def train(
    config: TrainConfig,
    out_dir: str | Path,
    env_factory=None,
    config_text: str = "",
    curve_name: str = "learning_curve.csv",
    checkpoint_name: str = "policy.rockpol",
):
    """Full training loop: collect/update cycles, periodic checkpoints, CSV
    learning curve, final ROCKPOL1 checkpoint. Returns (checkpoint path,
    curve path)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    master = np.random.default_rng(config.seed)
    env_seeds = master.integers(2**31, size=config.n_envs)
    noise_rng = np.random.default_rng(int(master.integers(2**31)))
    shuffle_rng = np.random.default_rng(int(master.integers(2**31)))
    net_rng = np.random.default_rng(int(master.integers(2**31)))

    factory = env_factory if env_factory is not None else (lambda: RockEnv())
    envs = [factory() for _ in range(config.n_envs)]
    carry = [env.reset(seed=int(s)) for env, s in zip(envs, env_seeds)]

    widths = (45, *config.hidden, 1)
    policy = PolicyNet.create(net_rng, widths=widths, output_gain=0.01)
    value_net = Mlp.init(widths, net_rng, "elu", "identity", output_gain=1.0)
    ppo = PpoState(policy=policy, value_net=value_net, log_std=math.log(config.action_noise_std))

    curve_path = out_dir / curve_name
    ckpt_path = out_dir / checkpoint_name
    meta = {"config_hash": config_hash(config_text or repr(config)), "iterations": config.iterations}

    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        writer.writeheader()
        for iteration in range(config.iterations):
            batch, carry, roll_stats = collect_rollouts(
                envs, ppo.policy, ppo.value_net, config.horizon, noise_rng, ppo.log_std, carry
            )
            up_stats = ppo_update(ppo, batch, config, shuffle_rng, iteration)
            row = {
                "iteration": iteration,
                "mean_reward": roll_stats["mean_reward"],
                "mean_speed": roll_stats["mean_speed"],
                "kl": up_stats["kl"],
                "policy_loss": up_stats["policy_loss"],
                "value_loss": up_stats["value_loss"],
                "clip_fraction": up_stats["clip_fraction"],
                "entropy": up_stats["entropy"],
                "noise_std": math.exp(ppo.log_std),
                "episodes": roll_stats["episodes"],
                "dropped": roll_stats["dropped"],
            }
            writer.writerow(row)
            fh.flush()
            if config.checkpoint_interval > 0 and (iteration + 1) % config.checkpoint_interval == 0:
                save_policy(ppo.policy, out_dir / f"policy_iter{iteration + 1:05d}.rockpol",
                            dict(meta, created_iteration=iteration + 1))

    save_policy(ppo.policy, ckpt_path, dict(meta, created_iteration=config.iterations))
    return ckpt_path, curve_path


def evaluate_mean_speed(
    env_factory, policy: Mlp, episodes: int, steps_per_episode: int, seed: int
) -> float:
    """Deterministic-policy evaluation: mean ground speed along the command."""
    total = 0.0
    count = 0
    for ep in range(episodes):
        env = env_factory()
        obs = env.reset(seed=seed + ep)
        for _ in range(steps_per_episode):
            action = float(policy.forward(obs[None, :])[0, 0])
            obs, _, done, info = env.step(action)
            total += info["speed_along_command"]
            count += 1
            if done:
                break
    return total / max(count, 1)
