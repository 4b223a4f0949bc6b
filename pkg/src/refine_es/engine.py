"""The ES refinement loop: sample a perturbation batch, evaluate the 2m
antithetic candidates, form centered ranks, take the finite-difference step,
decay sigma_es toward its floor.

Everything random is drawn from counter-based streams keyed on
(config.seed, purpose, generation, pair, episode), so a run is a pure
function of (anchor, config) and can resume bit-exactly from any completed
generation. Antithetic pairs share their env-seed and action-noise streams
(common random numbers), so a zero perturbation yields a zero pair
difference identically.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, RolloutError
from .estimator import ReturnTable, centered_ranks, tdes_gradient
from .noise import NoiseDistribution, antithetic_candidates, make_batch
from .policy import GaussianHead, MlpArchitecture, rollout
from .rng import TAG_ACTION, TAG_ENV, TAG_EVAL, make_stream

INTERRUPT_ENV_VAR = "REFINE_ES_INTERRUPT_AFTER_GENERATION"


@dataclass(frozen=True)
class EsConfig:
    sigma_es: float
    alpha: float
    m: int
    generations: int
    lambda_sigma: float = 0.99
    sigma_min: float = 1e-3
    distribution: str = "triangular"
    action_std: float = 0.01
    seed: int = 0
    episodes_per_candidate: int = 1
    step_cap: int | None = None
    standardize_noise: bool = False
    center_eval_episodes: int = 1

    def __post_init__(self):
        if self.sigma_es <= 0 or self.alpha <= 0:
            raise ContractError("sigma_es and alpha must be > 0")
        if self.m < 1 or self.generations < 0:
            raise ContractError("m must be >= 1 and generations >= 0")
        if not (0 < self.lambda_sigma <= 1):
            raise ContractError("lambda_sigma must be in (0, 1]")
        if self.sigma_min < 0 or self.sigma_min > self.sigma_es:
            raise ContractError("need 0 <= sigma_min <= sigma_es")
        if self.action_std < 0:
            raise ContractError("action_std must be >= 0")
        if self.episodes_per_candidate < 1:
            raise ContractError("episodes_per_candidate must be >= 1")

    def noise_distribution(self) -> NoiseDistribution:
        return NoiseDistribution(self.distribution, 1.0, self.standardize_noise)

    def to_dict(self) -> dict:
        return {
            "sigma_es": self.sigma_es, "alpha": self.alpha, "m": self.m,
            "generations": self.generations, "lambda_sigma": self.lambda_sigma,
            "sigma_min": self.sigma_min, "distribution": self.distribution,
            "action_std": self.action_std, "seed": self.seed,
            "episodes_per_candidate": self.episodes_per_candidate,
            "step_cap": self.step_cap,
            "standardize_noise": self.standardize_noise,
            "center_eval_episodes": self.center_eval_episodes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EsConfig":
        return cls(**d)


@dataclass
class GenerationRecord:
    generation: int
    center_return: float
    mean_return: float
    best_return: float
    sigma_es: float
    g_norm: float
    steps_used: int
    wall_time: float

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationRecord":
        return cls(**d)


@dataclass
class EsRunResult:
    params: np.ndarray
    records: list[GenerationRecord] = field(default_factory=list)
    steps_used: int = 0


def sigma_at(config: EsConfig, generation: int) -> float:
    """Closed-form schedule: max(sigma_es * lambda^t, sigma_min). Computed
    from the generation index (not carried state) so resume is exact."""
    return max(config.sigma_es * config.lambda_sigma ** generation, config.sigma_min)


def _episode_return(params, arch, head, env, master_seed, tag, gen, pair, episode,
                    gamma, horizon):
    env.reset(make_stream(master_seed, TAG_ENV, gen, pair, episode).integers(1 << 62))
    action_rng = make_stream(master_seed, tag, gen, pair, episode)
    try:
        traj = rollout(params, arch, head, env, action_rng, gamma, horizon,
                       record_states=False)
    except RolloutError as exc:
        raise RolloutError(f"generation {gen}, pair {pair}: {exc}") from exc
    return traj.discounted_return, traj.length


def _candidate_return(params, arch, head, env, config, gen, pair, gamma, horizon):
    """Mean return over episodes_per_candidate episodes; both members of a
    pair see the same env-seed and action streams."""
    total, steps = 0.0, 0
    for e in range(config.episodes_per_candidate):
        ret, length = _episode_return(params, arch, head, env, config.seed,
                                      TAG_ACTION, gen, pair, e, gamma, horizon)
        total += ret
        steps += length
    return total / config.episodes_per_candidate, steps


def evaluate_center(params: np.ndarray, arch: MlpArchitecture, env_factory,
                    episodes: int, master_seed: int):
    """Deterministic-action evaluation over independently seeded episodes.
    Returns (mean_return, success_rate)."""
    if episodes < 1:
        raise ContractError("episodes must be >= 1")
    env = env_factory()
    head = GaussianHead(0.0)
    returns, successes = [], 0
    for e in range(episodes):
        env.reset(make_stream(master_seed, TAG_EVAL, e).integers(1 << 62))
        traj = rollout(params, arch, head, env,
                       make_stream(master_seed, TAG_EVAL, e, 1),
                       env.gamma, env.horizon, record_states=False)
        returns.append(traj.discounted_return)
        successes += int(traj.success)
    return float(np.mean(returns)), successes / episodes


def tdes_run(anchor: np.ndarray, arch: MlpArchitecture, env_factory,
             config: EsConfig, start_generation: int = 0,
             initial_steps: int = 0, records: list | None = None,
             checkpoint_cb=None) -> EsRunResult:
    """Run the generation loop from `start_generation` to completion.

    checkpoint_cb(generation_index_completed, params, steps_used, records)
    is invoked after every generation's update.
    """
    from .policy import param_count
    if anchor.shape != (param_count(arch),):
        raise ContractError("anchor does not match the architecture")

    theta = np.array(anchor, dtype=float, copy=True)
    records = list(records) if records else []
    steps_used = initial_steps
    dist = config.noise_distribution()
    head = GaussianHead(config.action_std)
    env = env_factory()
    gamma, horizon = env.gamma, env.horizon
    d = theta.shape[0]
    interrupt_after = os.environ.get(INTERRUPT_ENV_VAR)

    for t in range(start_generation, config.generations):
        gen_cost = 2 * config.m * config.episodes_per_candidate * horizon
        if config.step_cap is not None and steps_used + gen_cost > config.step_cap:
            break
        t0 = time.perf_counter()
        sigma = sigma_at(config, t)
        batch = make_batch(dist, sigma, config.m, d, t, config.seed)
        plus, minus = antithetic_candidates(theta, batch)
        j_plus = np.empty(config.m)
        j_minus = np.empty(config.m)
        for i in range(config.m):
            j_plus[i], s = _candidate_return(plus[i], arch, head, env, config,
                                             t, i, gamma, horizon)
            steps_used += s
            j_minus[i], s = _candidate_return(minus[i], arch, head, env, config,
                                              t, i, gamma, horizon)
            steps_used += s
        ranks = centered_ranks(ReturnTable(j_plus, j_minus))
        grad = tdes_gradient(batch, ranks)
        theta = theta + config.alpha * grad.g

        # logging-only center evaluation; not counted against the budget
        center_ret, _ = evaluate_center(
            theta, arch, env_factory, config.center_eval_episodes,
            config.seed ^ (t + 1))
        all_returns = np.concatenate([j_plus, j_minus])
        records.append(GenerationRecord(
            generation=t, center_return=center_ret,
            mean_return=float(all_returns.mean()),
            best_return=float(all_returns.max()),
            sigma_es=sigma, g_norm=grad.diagnostics["g_norm"],
            steps_used=steps_used, wall_time=time.perf_counter() - t0))
        if checkpoint_cb is not None:
            checkpoint_cb(t, theta, steps_used, records)
        if interrupt_after is not None and t == int(interrupt_after):
            raise KeyboardInterrupt(f"injected interrupt after generation {t}")

    return EsRunResult(theta, records, steps_used)


def gaussian_es_run(anchor: np.ndarray, arch: MlpArchitecture, env_factory,
                    config: EsConfig, **kwargs) -> EsRunResult:
    """The ablation twin: identical loop with unbounded Gaussian noise."""
    return tdes_run(anchor, arch, env_factory,
                    replace(config, distribution="gaussian"), **kwargs)
