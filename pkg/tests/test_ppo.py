import numpy as np
import pytest
from scipy.stats import norm

from refine_es.envs import make_env
from refine_es.errors import ContractError
from refine_es.policy import param_count
from refine_es.ppo import (ActorCritic, PpoConfig, PpoOptimizer,
                           collect_rollouts, gae_advantages, gaussian_log_prob,
                           init_actor_critic, loss_and_grads,
                           normalize_advantages, policy_entropy, ppo_update,
                           train_anchor)
from refine_es.rng import make_stream


def tiny_config(**kw):
    base = dict(total_steps=1000, hidden_dims=(4,), seed=0)
    base.update(kw)
    return PpoConfig(**base)


def test_config_validation():
    with pytest.raises(ContractError):
        tiny_config(clip_epsilon=0.0)
    with pytest.raises(ContractError):
        tiny_config(gae_lambda=1.5)
    with pytest.raises(ContractError):
        tiny_config(optimizer="rmsprop")


def test_config_roundtrip():
    c = tiny_config(optimizer="adam")
    assert PpoConfig.from_dict(c.to_dict()) == c


def test_gae_lambda_zero_is_one_step_td():
    rewards = np.array([1.0, 2.0, 3.0])
    values = np.array([0.5, 1.5, 2.5])
    adv = gae_advantages(rewards, values, gamma=0.9, lam=0.0,
                         bootstrap_value=4.0)
    deltas = [1.0 + 0.9 * 1.5 - 0.5, 2.0 + 0.9 * 2.5 - 1.5,
              3.0 + 0.9 * 4.0 - 2.5]
    assert np.allclose(adv, deltas, atol=1e-14)


def test_gae_lambda_one_is_discounted_return_minus_value():
    rng = make_stream(1, 0)
    rewards = rng.standard_normal(6)
    values = rng.standard_normal(6)
    boot = 0.7
    gamma = 0.95
    adv = gae_advantages(rewards, values, gamma, lam=1.0, bootstrap_value=boot)
    n = len(rewards)
    for t in range(n):
        ret = sum(gamma ** (k - t) * rewards[k] for k in range(t, n))
        ret += gamma ** (n - t) * boot
        assert adv[t] == pytest.approx(ret - values[t], abs=1e-10)


def test_gae_matches_brute_force_double_loop():
    rng = make_stream(2, 0)
    rewards = rng.standard_normal(8)
    values = rng.standard_normal(8)
    gamma, lam, boot = 0.93, 0.8, -0.4
    adv = gae_advantages(rewards, values, gamma, lam, boot)
    vs = np.append(values, boot)
    deltas = rewards + gamma * vs[1:] - vs[:-1]
    n = len(rewards)
    oracle = [sum((gamma * lam) ** (k - t) * deltas[k] for k in range(t, n))
              for t in range(n)]
    assert np.allclose(adv, oracle, atol=1e-10)


def test_gae_alignment_contract():
    with pytest.raises(ContractError):
        gae_advantages(np.zeros(3), np.zeros(4), 0.9, 0.9)


def test_gaussian_log_prob_matches_scipy():
    rng = make_stream(3, 0)
    actions = rng.standard_normal((5, 2))
    means = rng.standard_normal((5, 2))
    log_std = np.array([-0.3, 0.2])
    ours = gaussian_log_prob(actions, means, log_std)
    oracle = norm.logpdf(actions, means, np.exp(log_std)).sum(axis=1)
    assert np.allclose(ours, oracle, atol=1e-12)


def test_policy_entropy_formula():
    log_std = np.array([-0.5, 0.1, 0.3])
    expected = float(np.sum(log_std + 0.5 * np.log(2 * np.pi * np.e)))
    assert policy_entropy(log_std) == pytest.approx(expected, abs=1e-12)


def test_normalize_advantages_exact():
    adv = np.array([1.0, 2.0, 3.0, 10.0])
    z = normalize_advantages(adv)
    assert z.mean() == pytest.approx(0.0, abs=1e-15)
    assert z.std() == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(normalize_advantages(np.full(5, 3.0)), np.zeros(5))


def _random_instance(seed, n=6, obs_dim=3, act_dim=2):
    """A small clipped-surrogate instance kept away from the clip boundary
    and the surr1 == surr2 tie, where the loss is differentiable."""
    config = PpoConfig(total_steps=0, hidden_dims=(4,), clip_epsilon=0.2,
                       value_coef=0.5, entropy_coef=0.01, seed=seed)
    ac = init_actor_critic(obs_dim, act_dim, config)
    rng = make_stream(seed, 0xFD)
    ac.log_std = rng.uniform(-1.0, 0.0, act_dim)
    states = rng.standard_normal((n, obs_dim))
    mu, _ = __import__("refine_es.policy", fromlist=["mlp_forward"]).mlp_forward(
        ac.actor_params, ac.actor_arch, states)
    actions = mu + np.exp(ac.log_std) * rng.standard_normal((n, act_dim))
    logp = gaussian_log_prob(actions, mu, ac.log_std)
    # offsets chosen so each ratio sits strictly inside or strictly outside
    # the clip interval, never on its edge and never at ratio == 1
    log_probs_old = logp + rng.uniform(0.02, 0.12, n) * rng.choice([-1.0, 1.0], n)
    advantages = rng.standard_normal(n) + 0.1
    returns = rng.standard_normal(n)
    return ac, states, actions, log_probs_old, advantages, returns, config


def _fd_grad(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def _check_instance(seed):
    ac, states, actions, lp_old, adv, ret, config = _random_instance(seed)
    _, _, g_actor, g_log_std, g_critic = loss_and_grads(
        ac, states, actions, lp_old, adv, ret, config)

    def loss_with(actor=None, log_std=None, critic=None):
        trial = ac.copy()
        if actor is not None:
            trial.actor_params = actor
        if log_std is not None:
            trial.log_std = log_std
        if critic is not None:
            trial.critic_params = critic
        return loss_and_grads(trial, states, actions, lp_old, adv, ret,
                              config)[0]

    for analytic, fd in (
            (g_actor, _fd_grad(lambda p: loss_with(actor=p), ac.actor_params)),
            (g_log_std, _fd_grad(lambda p: loss_with(log_std=p), ac.log_std)),
            (g_critic, _fd_grad(lambda p: loss_with(critic=p), ac.critic_params))):
        scale = max(np.max(np.abs(fd)), 1e-8)
        assert np.max(np.abs(analytic - fd)) / scale < 1e-5


def test_gradients_match_finite_differences():
    for seed in range(5):
        _check_instance(seed)


def test_clip_engagement_zeroes_policy_gradient():
    # ratio far above 1 + eps with positive advantage: the clipped branch is
    # strictly selected, so the policy gradient vanishes
    config = PpoConfig(total_steps=0, hidden_dims=(4,), value_coef=0.0,
                       entropy_coef=0.0, seed=0)
    ac = init_actor_critic(2, 1, config)
    states = make_stream(0, 0xC1).standard_normal((3, 2))
    mu, _ = __import__("refine_es.policy", fromlist=["mlp_forward"]).mlp_forward(
        ac.actor_params, ac.actor_arch, states)
    actions = mu  # logp is maximal at the mean
    logp = gaussian_log_prob(actions, mu, ac.log_std)
    log_probs_old = logp - 1.0  # ratio = e > 1.2
    advantages = np.ones(3)
    _, _, g_actor, g_log_std, _ = loss_and_grads(
        ac, states, actions, log_probs_old, advantages, np.zeros(3), config)
    assert np.array_equal(g_actor, np.zeros_like(g_actor))
    assert np.array_equal(g_log_std, np.zeros_like(g_log_std))


def test_sgd_step_exact():
    config = tiny_config()
    ac = init_actor_critic(2, 1, config)
    before = ac.actor_params.copy()
    opt = PpoOptimizer(ac, config)
    g = np.ones_like(ac.actor_params)
    opt.apply(ac, g, np.zeros_like(ac.log_std), np.zeros_like(ac.critic_params))
    assert np.allclose(ac.actor_params, before - config.learning_rate, atol=0)


def test_adam_state_roundtrip():
    config = tiny_config(optimizer="adam")
    ac = init_actor_critic(2, 1, config)
    opt = PpoOptimizer(ac, config)
    g = make_stream(5, 0).standard_normal(ac.actor_params.shape[0])
    opt.apply(ac, g, np.zeros_like(ac.log_std), np.zeros_like(ac.critic_params))
    twin = PpoOptimizer(ac.copy(), config)
    twin.load_dict(opt.to_dict())
    a, b = ac.copy(), ac.copy()
    opt.apply(a, g, np.zeros_like(a.log_std), np.zeros_like(a.critic_params))
    twin.apply(b, g, np.zeros_like(b.log_std), np.zeros_like(b.critic_params))
    assert np.array_equal(a.actor_params, b.actor_params)


def test_actor_critic_roundtrip():
    ac = init_actor_critic(3, 2, tiny_config())
    twin = ActorCritic.from_dict(ac.to_dict())
    assert np.array_equal(ac.actor_params, twin.actor_params)
    assert np.array_equal(ac.log_std, twin.log_std)
    assert ac.actor_arch == twin.actor_arch
    assert param_count(twin.critic_arch) == twin.critic_params.shape[0]


def test_collect_rollouts_shapes_and_budget():
    config = tiny_config(episodes_per_update=2)
    ac = init_actor_critic(4, 2, config)
    buf = collect_rollouts(ac, lambda: make_env("point-reach"), config, 0)
    n = 2 * 100
    assert buf.states.shape == (n, 4)
    assert buf.actions.shape == (n, 2)
    assert buf.advantages.shape == (n,)
    assert buf.steps == n


def test_budget_below_one_update_is_noop():
    config = tiny_config(total_steps=100, episodes_per_update=8)
    res = train_anchor(lambda: make_env("point-reach"), config)
    fresh = init_actor_critic(4, 2, config)
    assert np.array_equal(res.actor_critic.actor_params, fresh.actor_params)
    assert res.steps_used == 0
    assert res.curve == []


def test_train_anchor_bitwise_deterministic():
    config = tiny_config(total_steps=1700, episodes_per_update=2)
    runs = [train_anchor(lambda: make_env("point-reach"), config)
            for _ in range(2)]
    a, b = runs
    assert np.array_equal(a.actor_critic.actor_params,
                          b.actor_critic.actor_params)
    assert a.curve == b.curve
    # 2 episodes x 100 steps per update; 8 updates fit in 1700
    assert a.steps_used == 1600


def test_train_anchor_resume_bitwise():
    config = tiny_config(total_steps=1000, episodes_per_update=2)
    env_factory = lambda: make_env("point-reach")
    full = train_anchor(env_factory, config)
    snaps = []
    train_anchor(env_factory, config,
                 checkpoint_cb=lambda u, ac, opt, steps, curve: snaps.append(
                     (u, ac.copy(), opt.to_dict(), steps, list(curve))))
    u, ac, opt_state, steps, curve = snaps[1]  # resume after update 1
    resumed = train_anchor(env_factory, config, start_update=u + 1, initial=ac,
                           initial_steps=steps, curve=curve,
                           optimizer_state=opt_state)
    assert np.array_equal(resumed.actor_critic.actor_params,
                          full.actor_critic.actor_params)
    assert np.array_equal(resumed.actor_critic.log_std,
                          full.actor_critic.log_std)
    assert resumed.curve == full.curve


def test_ppo_update_rejects_nonfinite():
    config = tiny_config(episodes_per_update=1, minibatch_size=8)
    ac = init_actor_critic(4, 2, config)
    buf = collect_rollouts(ac, lambda: make_env("point-reach"), config, 0)
    buf.returns[:] = np.nan
    with pytest.raises(RuntimeError, match="non-finite"):
        ppo_update(ac, buf, config, PpoOptimizer(ac, config), 0)


def test_training_improves_return():
    config = tiny_config(total_steps=8000, episodes_per_update=4,
                         optimizer="adam", seed=1)
    res = train_anchor(lambda: make_env("point-reach"), config)
    first, last = res.curve[0]["mean_return"], res.curve[-1]["mean_return"]
    assert last > first
