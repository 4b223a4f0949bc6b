"""Compact PPO trainer for the Stage-1 anchor policy.

Actor and critic are small tanh MLPs over flat parameter vectors (same layout
as the ES stage, so the trained actor hands off directly). The policy is
diagonal Gaussian with a state-independent learnable log-std vector.
Gradients of the clipped surrogate + value loss + entropy bonus are derived
by hand in reverse mode; tests check them against central finite differences.

All randomness (env seeds, action noise, minibatch shuffles) comes from
counter-based streams keyed on (seed, purpose, update_index, ...), so
training is resumable bit-exactly from a per-update checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .policy import (GaussianHead, MlpArchitecture, init_params, mlp_backward,
                     mlp_forward)
from .rng import TAG_INIT, TAG_PPO_ACTION, TAG_PPO_ENV, TAG_PPO_SHUFFLE, make_stream

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class PpoConfig:
    total_steps: int
    learning_rate: float = 3e-3
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    episodes_per_update: int = 8
    epochs: int = 4
    minibatch_size: int = 64
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    init_log_std: float = float(np.log(0.5))
    hidden_dims: tuple[int, ...] = (64, 64)
    optimizer: str = "sgd"  # "adam" is an opt-in extension
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.clip_epsilon < 1):
            raise ContractError("clip_epsilon must be in (0, 1)")
        if not (0 <= self.gae_lambda <= 1):
            raise ContractError("gae_lambda must be in [0, 1]")
        if not (0 < self.gamma <= 1):
            raise ContractError("gamma must be in (0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError("optimizer must be 'sgd' or 'adam'")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        d = dict(d)
        d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


@dataclass
class ActorCritic:
    actor_arch: MlpArchitecture
    actor_params: np.ndarray
    log_std: np.ndarray
    critic_arch: MlpArchitecture
    critic_params: np.ndarray

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.actor_arch, self.actor_params.copy(),
                           self.log_std.copy(), self.critic_arch,
                           self.critic_params.copy())

    def to_dict(self) -> dict:
        return {
            "actor_arch": self.actor_arch.to_dict(),
            "actor_params": self.actor_params.tolist(),
            "log_std": self.log_std.tolist(),
            "critic_arch": self.critic_arch.to_dict(),
            "critic_params": self.critic_params.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActorCritic":
        return cls(MlpArchitecture.from_dict(d["actor_arch"]),
                   np.array(d["actor_params"], dtype=float),
                   np.array(d["log_std"], dtype=float),
                   MlpArchitecture.from_dict(d["critic_arch"]),
                   np.array(d["critic_params"], dtype=float))


def init_actor_critic(obs_dim: int, act_dim: int, config: PpoConfig) -> ActorCritic:
    actor_arch = MlpArchitecture(obs_dim, config.hidden_dims, act_dim)
    critic_arch = MlpArchitecture(obs_dim, config.hidden_dims, 1)
    actor = init_params(actor_arch, make_stream(config.seed, TAG_INIT, 0),
                        final_scale=0.1)
    critic = init_params(critic_arch, make_stream(config.seed, TAG_INIT, 1))
    return ActorCritic(actor_arch, actor, np.full(act_dim, config.init_log_std),
                       critic_arch, critic)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, gamma: float,
                   lam: float, bootstrap_value: float = 0.0) -> np.ndarray:
    """Backward GAE recursion A_t = delta_t + gamma*lam*A_{t+1} with
    delta_t = r_t + gamma*V(s_{t+1}) - V(s_t). values has one entry per step;
    bootstrap_value stands in for V(s_T) (0 if the episode truly terminated)."""
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if rewards.shape != values.shape:
        raise ContractError("rewards and values are not aligned")
    n = rewards.shape[0]
    adv = np.empty(n)
    next_adv = 0.0
    next_value = bootstrap_value
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        next_adv = delta + gamma * lam * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv


def gaussian_log_prob(actions, means, log_std):
    sigma2 = np.exp(2.0 * log_std)
    z2 = (actions - means) ** 2 / sigma2
    k = actions.shape[-1]
    return -0.5 * z2.sum(axis=-1) - log_std.sum() - 0.5 * k * _LOG_2PI


def policy_entropy(log_std: np.ndarray) -> float:
    return float(log_std.sum() + 0.5 * log_std.shape[0] * (1.0 + _LOG_2PI))


@dataclass
class RolloutBuffer:
    states: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    mean_return: float = 0.0
    success_rate: float = 0.0
    steps: int = 0


def loss_and_grads(ac: ActorCritic, states, actions, log_probs_old, advantages,
                   returns, config: PpoConfig):
    """Loss = -mean(min(rho*A, clip(rho)*A)) + c_v*mean((V-R)^2) - c_e*H(pi),
    with exact reverse-mode gradients w.r.t. (actor, log_std, critic).

    Returns (loss, parts, g_actor, g_log_std, g_critic).
    """
    n = states.shape[0]
    mu, actor_acts = mlp_forward(ac.actor_params, ac.actor_arch, states)
    sigma2 = np.exp(2.0 * ac.log_std)
    log_probs = gaussian_log_prob(actions, mu, ac.log_std)
    ratio = np.exp(log_probs - log_probs_old)
    surr1 = ratio * advantages
    clipped = np.clip(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon)
    surr2 = clipped * advantages
    policy_loss = -np.minimum(surr1, surr2).mean()

    v, critic_acts = mlp_forward(ac.critic_params, ac.critic_arch, states)
    v = v[:, 0]
    value_loss = float(np.mean((v - returns) ** 2))
    entropy = policy_entropy(ac.log_std)
    loss = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy

    # d loss / d logp: the clipped branch has zero derivative whenever it is
    # strictly selected (the clip is then active).
    use_unclipped = surr1 <= surr2
    d_logp = -(advantages * ratio * use_unclipped) / n

    d_mu = d_logp[:, None] * (actions - mu) / sigma2
    g_actor = mlp_backward(ac.actor_params, ac.actor_arch, actor_acts, d_mu)
    # d logp / d log_std_k = ((a-mu)^2/sigma^2 - 1)_k ; entropy adds 1 per coord
    g_log_std = (d_logp[:, None] * ((actions - mu) ** 2 / sigma2 - 1.0)).sum(axis=0)
    g_log_std = g_log_std - config.entropy_coef

    d_v = (config.value_coef * 2.0 * (v - returns) / n)[:, None]
    g_critic = mlp_backward(ac.critic_params, ac.critic_arch, critic_acts, d_v)

    parts = {"policy_loss": float(policy_loss), "value_loss": value_loss,
             "entropy": entropy}
    return float(loss), parts, g_actor, g_log_std, g_critic


class _AdamState:
    def __init__(self, dim):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, grad, lr, b1, b2, eps):
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad ** 2
        mhat = self.m / (1 - b1 ** self.t)
        vhat = self.v / (1 - b2 ** self.t)
        return lr * mhat / (np.sqrt(vhat) + eps)

    def to_dict(self):
        return {"m": self.m.tolist(), "v": self.v.tolist(), "t": self.t}

    @classmethod
    def from_dict(cls, d):
        st = cls(len(d["m"]))
        st.m = np.array(d["m"], dtype=float)
        st.v = np.array(d["v"], dtype=float)
        st.t = d["t"]
        return st


class PpoOptimizer:
    """SGD by default; optional Adam. State serializes for resume."""

    def __init__(self, ac: ActorCritic, config: PpoConfig):
        self.config = config
        if config.optimizer == "adam":
            self.states = [_AdamState(ac.actor_params.shape[0]),
                           _AdamState(ac.log_std.shape[0]),
                           _AdamState(ac.critic_params.shape[0])]
        else:
            self.states = None

    def apply(self, ac: ActorCritic, g_actor, g_log_std, g_critic):
        c = self.config
        if self.states is None:
            ac.actor_params -= c.learning_rate * g_actor
            ac.log_std -= c.learning_rate * g_log_std
            ac.critic_params -= c.learning_rate * g_critic
        else:
            for st, target, grad in zip(
                    self.states,
                    (ac.actor_params, ac.log_std, ac.critic_params),
                    (g_actor, g_log_std, g_critic)):
                target -= st.step(grad, c.learning_rate, c.adam_beta1,
                                  c.adam_beta2, c.adam_eps)

    def to_dict(self):
        return {"states": [s.to_dict() for s in self.states]} if self.states else {}

    def load_dict(self, d):
        if self.states is not None and d.get("states"):
            self.states = [_AdamState.from_dict(s) for s in d["states"]]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    if std < 1e-12:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / std


def collect_rollouts(ac: ActorCritic, env_factory, config: PpoConfig,
                     update_index: int) -> RolloutBuffer:
    """Run episodes_per_update full-horizon episodes and assemble the buffer.
    GAE bootstraps with V(final obs) since the envs terminate on time limit."""
    env = env_factory()
    horizon, gamma = env.horizon, env.gamma
    all_states, all_actions, all_logp, all_adv, all_ret = [], [], [], [], []
    ep_returns, successes = [], 0
    for ep in range(config.episodes_per_update):
        obs = env.reset(make_stream(config.seed, TAG_PPO_ENV, update_index,
                                    ep).integers(1 << 62))
        rng = make_stream(config.seed, TAG_PPO_ACTION, update_index, ep)
        states = np.empty((horizon, env.observation_dim))
        actions = np.empty((horizon, env.action_dim))
        rewards = np.empty(horizon)
        success = False
        sigma = np.exp(ac.log_std)
        for t in range(horizon):
            states[t] = obs
            mu, _ = mlp_forward(ac.actor_params, ac.actor_arch, obs[None, :])
            actions[t] = mu[0] + sigma * rng.standard_normal(env.action_dim)
            obs, rewards[t], terminated, ep_success = env.step(actions[t])
            success = success or ep_success
        mus, _ = mlp_forward(ac.actor_params, ac.actor_arch, states)
        logp = gaussian_log_prob(actions, mus, ac.log_std)
        v_all, _ = mlp_forward(ac.critic_params, ac.critic_arch,
                               np.vstack([states, obs[None, :]]))
        values, bootstrap = v_all[:-1, 0], float(v_all[-1, 0])
        adv = gae_advantages(rewards, values, gamma, config.gae_lambda, bootstrap)
        all_states.append(states)
        all_actions.append(actions)
        all_logp.append(logp)
        all_adv.append(adv)
        all_ret.append(adv + values)
        disc = float(np.sum(rewards * gamma ** np.arange(horizon)))
        ep_returns.append(disc)
        successes += int(success)
    n_ep = config.episodes_per_update
    return RolloutBuffer(
        np.concatenate(all_states), np.concatenate(all_actions),
        np.concatenate(all_logp), np.concatenate(all_adv),
        np.concatenate(all_ret),
        mean_return=float(np.mean(ep_returns)),
        success_rate=successes / n_ep,
        steps=n_ep * horizon)


def ppo_update(ac: ActorCritic, buffer: RolloutBuffer, config: PpoConfig,
               optimizer: PpoOptimizer, update_index: int) -> dict:
    """Minibatch epochs of clipped-surrogate steps; mutates ac in place."""
    adv = normalize_advantages(buffer.advantages)
    n = buffer.states.shape[0]
    last_parts = {}
    for epoch in range(config.epochs):
        perm = make_stream(config.seed, TAG_PPO_SHUFFLE, update_index,
                           epoch).permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            loss, parts, ga, gs, gc = loss_and_grads(
                ac, buffer.states[idx], buffer.actions[idx],
                buffer.log_probs[idx], adv[idx], buffer.returns[idx], config)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite PPO loss at update {update_index}: {parts}")
            optimizer.apply(ac, ga, gs, gc)
            last_parts = parts
    return last_parts


@dataclass
class AnchorResult:
    actor_critic: ActorCritic
    curve: list[dict] = field(default_factory=list)
    steps_used: int = 0


def train_anchor(env_factory, config: PpoConfig, start_update: int = 0,
                 initial: ActorCritic | None = None, initial_steps: int = 0,
                 curve: list | None = None, optimizer_state: dict | None = None,
                 checkpoint_cb=None) -> AnchorResult:
    """Collect/update cycles until the step budget cannot fund another
    update. Resumable from (start_update, initial, ...) bit-exactly."""
    env = env_factory()
    if initial is None:
        ac = init_actor_critic(env.observation_dim, env.action_dim, config)
    else:
        ac = initial.copy()
    optimizer = PpoOptimizer(ac, config)
    if optimizer_state:
        optimizer.load_dict(optimizer_state)
    curve = list(curve) if curve else []
    steps_used = initial_steps
    update_cost = config.episodes_per_update * env.horizon
    u = start_update
    while steps_used + update_cost <= config.total_steps:
        buffer = collect_rollouts(ac, env_factory, config, u)
        parts = ppo_update(ac, buffer, config, optimizer, u)
        steps_used += buffer.steps
        curve.append({"update": u, "mean_return": buffer.mean_return,
                      "success_rate": buffer.success_rate,
                      "steps_used": steps_used, **parts})
        if checkpoint_cb is not None:
            checkpoint_cb(u, ac, optimizer, steps_used, curve)
        u += 1
    return AnchorResult(ac, curve, steps_used)
