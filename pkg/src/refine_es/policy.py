"""Flat-parameter MLP policy with a fixed-std Gaussian action head.

Parameters live in a single flat float64 vector so the ES stage can perturb
them directly. Layout is layer-major: for each layer, the weight matrix
(shape (fan_out, fan_in), C order) followed by the bias (fan_out,).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, RolloutError


@dataclass(frozen=True)
class MlpArchitecture:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ContractError("all layer dims must be >= 1")
        if self.activation != "tanh":
            raise ContractError(f"unsupported activation: {self.activation}")
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "output_dim": self.output_dim,
            "activation": self.activation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpArchitecture":
        return cls(d["input_dim"], tuple(d["hidden_dims"]), d["output_dim"], d["activation"])


def param_count(arch: MlpArchitecture) -> int:
    """Total flat parameter count: sum of (fan_in + 1) * fan_out over layers."""
    return sum((fi + 1) * fo for fi, fo in arch.layer_shapes())


def init_params(arch: MlpArchitecture, rng: np.random.Generator,
                final_scale: float = 1.0) -> np.ndarray:
    """Xavier-uniform init; the last layer is additionally scaled by final_scale."""
    chunks = []
    shapes = arch.layer_shapes()
    for li, (fi, fo) in enumerate(shapes):
        limit = np.sqrt(6.0 / (fi + fo))
        if li == len(shapes) - 1:
            limit *= final_scale
        w = rng.uniform(-limit, limit, size=(fo, fi))
        b = np.zeros(fo)
        chunks.append(w.ravel())
        chunks.append(b)
    return np.concatenate(chunks)


def unpack_params(params: np.ndarray, arch: MlpArchitecture) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views (W, b) per layer into the flat vector."""
    if params.shape != (param_count(arch),):
        raise ContractError(
            f"parameter vector has length {params.shape}, architecture needs {param_count(arch)}")
    out = []
    off = 0
    for fi, fo in arch.layer_shapes():
        w = params[off:off + fi * fo].reshape(fo, fi)
        off += fi * fo
        b = params[off:off + fo]
        off += fo
        out.append((w, b))
    return out


def mlp_forward(params: np.ndarray, arch: MlpArchitecture, x: np.ndarray):
    """Batched forward pass. x: (n, input_dim). Returns (out, cache) where
    cache holds post-activation values per layer for backprop."""
    layers = unpack_params(params, arch)
    acts = [x]
    h = x
    for li, (w, b) in enumerate(layers):
        z = h @ w.T + b
        h = z if li == len(layers) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def mlp_backward(params: np.ndarray, arch: MlpArchitecture,
                 acts: list[np.ndarray], dout: np.ndarray) -> np.ndarray:
    """Gradient of sum(out * dout) w.r.t. the flat parameter vector."""
    layers = unpack_params(params, arch)
    grads = [None] * len(layers)
    d = dout
    for li in range(len(layers) - 1, -1, -1):
        w, _ = layers[li]
        h_prev = acts[li]
        gw = d.T @ h_prev
        gb = d.sum(axis=0)
        grads[li] = (gw, gb)
        if li > 0:
            d = (d @ w) * (1.0 - acts[li] ** 2)
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


def forward(params: np.ndarray, arch: MlpArchitecture, state: np.ndarray) -> np.ndarray:
    """Action mean for a single state vector."""
    state = np.asarray(state, dtype=float)
    if state.shape != (arch.input_dim,):
        raise ContractError(
            f"state has shape {state.shape}, architecture expects ({arch.input_dim},)")
    out, _ = mlp_forward(params, arch, state[None, :])
    return out[0]


@dataclass(frozen=True)
class GaussianHead:
    """Fixed action-noise scale. action_std == 0 is the deterministic
    evaluation mode; during training/ES rollouts it must be positive."""
    action_std: float

    def __post_init__(self):
        if self.action_std < 0:
            raise ContractError("action_std must be >= 0")


def sample_action(mean: np.ndarray, head: GaussianHead,
                  rng: np.random.Generator) -> np.ndarray:
    if head.action_std == 0.0:
        return np.array(mean, copy=True)
    return mean + head.action_std * rng.standard_normal(mean.shape[0])


@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    discounted_return: float = 0.0
    success: bool = False
    length: int = 0


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^t * r_t, accumulated in forward time order, float64."""
    total = 0.0
    scale = 1.0
    for r in rewards:
        total += scale * float(r)
        scale *= gamma
    return total


def rollout(params: np.ndarray, arch: MlpArchitecture, head: GaussianHead,
            env, rng: np.random.Generator, gamma: float, horizon: int,
            record_states: bool = True) -> Trajectory:
    """Run one episode against a freshly reset env.

    Raises RolloutError, naming the step, if the env emits a non-finite
    reward or observation.
    """
    traj = Trajectory()
    obs = env.observation()
    for t in range(horizon):
        state = np.array(obs, copy=True)
        mean = forward(params, arch, obs)
        action = sample_action(mean, head, rng)
        obs, reward, terminated, success = env.step(action)
        if not np.isfinite(reward) or not np.all(np.isfinite(obs)):
            raise RolloutError(f"non-finite reward or state at step {t}")
        if record_states:
            traj.states.append(state)
            traj.actions.append(np.array(action, copy=True))
        traj.rewards.append(float(reward))
        traj.success = traj.success or bool(success)
        if terminated:
            break
    traj.length = len(traj.rewards)
    traj.discounted_return = discounted_return(traj.rewards, gamma)
    return traj
