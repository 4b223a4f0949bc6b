"""Perturbation sampling for the ES stage.

Base noise is drawn at unit scale — triangular on [-1, 1] (half-width 1,
per-coordinate variance 1/6) or standard normal — and the single scale
factor sigma_es is applied when candidates are formed, so triangular
candidates satisfy the hard per-coordinate radius |theta± - theta|_inf
<= sigma_es exactly.

Batches are regenerated, never stored: candidate i of generation g draws
from the counter-based stream (master_seed, TAG_NOISE, g, i), so any worker
can rebuild any batch bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .rng import TAG_NOISE, make_stream, stream_seed

SQRT6 = np.sqrt(6.0)

KINDS = ("triangular", "gaussian")


@dataclass(frozen=True)
class NoiseDistribution:
    kind: str
    scale: float = 1.0          # half-width (triangular) or std (gaussian)
    standardize: bool = False   # triangular only: multiply by sqrt(6) so var = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown noise kind {self.kind!r}")
        if self.scale <= 0:
            raise ContractError("noise scale must be > 0")

    def sample(self, dim: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "triangular":
            eps = sample_triangular(self.scale, dim, rng)
            return eps * SQRT6 if self.standardize else eps
        return sample_gaussian(self.scale, dim, rng)


def sample_triangular(half_width: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric triangular noise on [-half_width, half_width], mode 0,
    sampled per coordinate as half_width * (U - V) with independent
    U, V ~ Uniform(0, 1)."""
    if half_width <= 0:
        raise ContractError("half_width must be > 0")
    u = rng.random(dim)
    v = rng.random(dim)
    return half_width * (u - v)


def sample_gaussian(std: float, dim: int, rng: np.random.Generator) -> np.ndarray:
    if std <= 0:
        raise ContractError("std must be > 0")
    return std * rng.standard_normal(dim)


@dataclass
class PerturbationBatch:
    """m base-noise vectors for one generation, plus everything needed to
    regenerate them."""
    epsilons: np.ndarray        # (m, d)
    sigma_es: float
    generation_index: int
    seed_table: np.ndarray      # (m,) uint64 stream seeds
    kind: str
    standardized: bool

    @property
    def m(self) -> int:
        return self.epsilons.shape[0]

    @property
    def dim(self) -> int:
        return self.epsilons.shape[1]


def make_batch(distribution: NoiseDistribution, sigma_es: float, m: int, dim: int,
               generation_index: int, master_seed: int) -> PerturbationBatch:
    """Generate the m base-noise vectors of one generation."""
    if m < 1:
        raise ContractError("m must be >= 1")
    if sigma_es <= 0:
        raise ContractError("sigma_es must be > 0")
    seeds = np.array(
        [stream_seed(master_seed, TAG_NOISE, generation_index, i) for i in range(m)],
        dtype=np.uint64)
    eps = np.empty((m, dim))
    for i in range(m):
        rng = np.random.Generator(np.random.PCG64(int(seeds[i])))
        eps[i] = distribution.sample(dim, rng)
    return PerturbationBatch(eps, float(sigma_es), int(generation_index), seeds,
                             distribution.kind, distribution.standardize)


def antithetic_candidates(center: np.ndarray, batch: PerturbationBatch):
    """The 2m candidates theta±_i = center ± sigma_es * eps_i.

    Returns (plus, minus), each (m, d); plus[i] and minus[i] are exact
    reflections about the center."""
    if center.shape != (batch.dim,):
        raise ContractError(
            f"center has shape {center.shape}, batch dimension is {batch.dim}")
    offset = batch.sigma_es * batch.epsilons
    return center + offset, center - offset


def regenerate_epsilon(distribution: NoiseDistribution, dim: int,
                       generation_index: int, i: int, master_seed: int) -> np.ndarray:
    """Rebuild a single candidate's base noise from counters alone."""
    rng = make_stream(master_seed, TAG_NOISE, generation_index, i)
    return distribution.sample(dim, rng)
