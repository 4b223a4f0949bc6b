"""Toy continuous-control tasks: three goal-conditioned episodic MDPs graded
by success tolerance (loose / medium / tight), each deterministic given
(seed, action sequence) and each shipping a scripted proportional-controller
expert used as a solvability oracle in the tests.

Success latches: once the tolerance is met it stays true for the episode.
Episodes run to the horizon; `terminated` only signals the time limit, so
every episode consumes exactly `horizon` env steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class MdpSpec:
    env_id: str
    state_dim: int
    action_dim: int
    horizon: int
    gamma: float
    success: str

    def to_dict(self) -> dict:
        return {
            "env_id": self.env_id,
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "horizon": self.horizon,
            "gamma": self.gamma,
            "success": self.success,
        }


class ToyEnv:
    """Base episodic env. Subclasses set spec fields and implement
    _reset/_observe/_step/expert_action."""

    env_id = "base"
    observation_dim = 0
    action_dim = 0
    horizon = 0
    gamma = 0.99
    reward_bound = np.inf  # |r_t| never exceeds this for clipped actions

    def __init__(self):
        self._step_count = 0
        self._success = False

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.PCG64(seed))
        self._step_count = 0
        self._success = False
        self._reset(rng)
        return self.observation()

    def observation(self) -> np.ndarray:
        return self._observe()

    def step(self, action):
        if self._step_count >= self.horizon:
            raise ContractError("episode already finished")
        action = np.asarray(action, dtype=float)
        if action.shape != (self.action_dim,):
            raise ContractError(
                f"action has shape {action.shape}, env expects ({self.action_dim},)")
        reward = self._step(np.clip(action, -1.0, 1.0))
        self._step_count += 1
        if self._check_success():
            self._success = True
        terminated = self._step_count >= self.horizon
        return self.observation(), reward, terminated, self._success

    def spec(self) -> MdpSpec:
        return MdpSpec(self.env_id, self.observation_dim, self.action_dim,
                       self.horizon, self.gamma, self.success_desc)

    # subclass API
    def _reset(self, rng):
        raise NotImplementedError

    def _observe(self):
        raise NotImplementedError

    def _step(self, action) -> float:
        raise NotImplementedError

    def _check_success(self) -> bool:
        raise NotImplementedError

    def expert_action(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class PointReach(ToyEnv):
    """Planar point mass with velocity control. Loose tolerance (4cm-scale)."""

    env_id = "point-reach"
    observation_dim = 4  # (pos, goal)
    action_dim = 2
    horizon = 100
    gamma = 0.99
    dt = 0.05
    tolerance = 0.04
    success_desc = "distance(pos, goal) < 0.04"
    # |pos| <= 0.5 + H*dt, |goal| <= 0.5
    reward_bound = np.sqrt(2.0) * (1.0 + 100 * 0.05)

    def _reset(self, rng):
        self.pos = np.zeros(2)
        self.goal = rng.uniform(-0.5, 0.5, size=2)

    def _observe(self):
        return np.concatenate([self.pos, self.goal])

    def _step(self, action):
        self.pos = self.pos + self.dt * action
        return -float(np.linalg.norm(self.pos - self.goal))

    def _check_success(self):
        return np.linalg.norm(self.pos - self.goal) < self.tolerance

    def expert_action(self, obs):
        pos, goal = obs[:2], obs[2:]
        return np.clip(8.0 * (goal - pos), -1.0, 1.0)


class ArmReach(ToyEnv):
    """Two-link planar arm with joint-velocity control. Medium tolerance."""

    env_id = "arm-reach"
    observation_dim = 4  # (q1, q2, goal_x, goal_y)
    action_dim = 2
    horizon = 100
    gamma = 0.99
    dt = 0.05
    link = (0.5, 0.5)
    tolerance = 0.04
    success_desc = "distance(end_effector, goal) < 0.04"
    reward_bound = 2.0  # ee and goal both inside radius-1 disc

    def _reset(self, rng):
        self.q = rng.uniform(-0.3, 0.3, size=2)
        # goal drawn as a reachable end-effector pose
        gq = rng.uniform(np.array([-1.2, 0.3]), np.array([1.2, 2.2]))
        self.goal = self._fk(gq)

    def _fk(self, q):
        l1, l2 = self.link
        x = l1 * np.cos(q[0]) + l2 * np.cos(q[0] + q[1])
        y = l1 * np.sin(q[0]) + l2 * np.sin(q[0] + q[1])
        return np.array([x, y])

    def _observe(self):
        return np.concatenate([self.q, self.goal])

    def _step(self, action):
        self.q = self.q + self.dt * action
        return -float(np.linalg.norm(self._fk(self.q) - self.goal))

    def _check_success(self):
        return np.linalg.norm(self._fk(self.q) - self.goal) < self.tolerance

    def expert_action(self, obs):
        q, goal = obs[:2], obs[2:]
        # analytic IK for the elbow-up solution, then joint-space P control
        l1, l2 = self.link
        r2 = float(goal @ goal)
        c2 = np.clip((r2 - l1 ** 2 - l2 ** 2) / (2 * l1 * l2), -1.0, 1.0)
        q2 = np.arccos(c2)
        q1 = np.arctan2(goal[1], goal[0]) - np.arctan2(l2 * np.sin(q2),
                                                       l1 + l2 * np.cos(q2))
        err = np.array([q1, q2]) - q
        err = (err + np.pi) % (2 * np.pi) - np.pi
        return np.clip(8.0 * err, -1.0, 1.0)


class PegInsert1d(ToyEnv):
    """Scalar insertion depth with a tight (2.5mm-scale) success band and an
    overshoot penalty. The precision task of the suite."""

    env_id = "peg-insert-1d"
    observation_dim = 2  # (depth, target)
    action_dim = 1
    horizon = 200
    gamma = 0.99
    dt = 0.02
    tolerance = 0.0025
    overshoot_penalty = 2.0
    success_desc = "|depth - target| < 0.0025"
    # |depth| <= H*dt = 4, target <= 1.2
    reward_bound = (4.0 + 1.2) * 3.0

    def _reset(self, rng):
        self.depth = 0.0
        self.target = float(rng.uniform(0.8, 1.2))

    def _observe(self):
        return np.array([self.depth, self.target])

    def _step(self, action):
        self.depth = self.depth + self.dt * float(action[0])
        err = self.depth - self.target
        return -abs(err) - self.overshoot_penalty * max(0.0, err)

    def _check_success(self):
        return abs(self.depth - self.target) < self.tolerance

    def expert_action(self, obs):
        depth, target = obs
        return np.clip(np.array([6.0 * (target - depth)]), -1.0, 1.0)


_REGISTRY = {cls.env_id: cls for cls in (PointReach, ArmReach, PegInsert1d)}


def env_ids() -> list[str]:
    return sorted(_REGISTRY)


def make_env(env_id: str) -> ToyEnv:
    if env_id not in _REGISTRY:
        raise ContractError(f"unknown env id: {env_id!r} (known: {env_ids()})")
    return _REGISTRY[env_id]()


def env_specs() -> dict:
    """Per-task spec dump, JSON-ready."""
    return {eid: _REGISTRY[eid]().spec().to_dict() for eid in env_ids()}
