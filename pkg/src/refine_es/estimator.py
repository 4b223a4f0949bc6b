"""Fitness shaping and gradient proxies for the ES stage.

centered_ranks turns the 2m episodic returns of a generation into zero-mean,
unit-variance rank scores (average-rank ties, population 1/n variance), which
makes the update invariant to any strictly increasing reward transform.
tdes_gradient forms the antithetic finite-difference direction

    g = (1 / (m * sigma_es)) * sum_i (score_plus_i - score_minus_i) * eps_i

and classic_es_gradient is the score-function baseline

    g = (1 / (n * sigma_es)) * sum_i J(theta_i) * delta_i.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError
from .noise import NoiseDistribution, PerturbationBatch, antithetic_candidates, make_batch

_TIE_EPS = 1e-12


@dataclass
class ReturnTable:
    """Episodic returns of the 2m candidates, aligned with the batch."""
    j_plus: np.ndarray   # (m,)
    j_minus: np.ndarray  # (m,)

    def __post_init__(self):
        self.j_plus = np.asarray(self.j_plus, dtype=float)
        self.j_minus = np.asarray(self.j_minus, dtype=float)
        if self.j_plus.shape != self.j_minus.shape or self.j_plus.ndim != 1:
            raise ContractError("j_plus and j_minus must be aligned 1-D vectors")
        if not (np.all(np.isfinite(self.j_plus)) and np.all(np.isfinite(self.j_minus))):
            raise ContractError("returns must be finite")


@dataclass
class CenteredRanks:
    r_plus: np.ndarray
    r_minus: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.r_plus - self.r_minus


def centered_rank_scores(values) -> np.ndarray:
    """Rank n values ascending (ties get their average rank), map 0-based
    rank k to k/(n-1) - 1/2, then center and divide by the population (1/n)
    standard deviation. All-equal values yield all-zero scores."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 2:
        raise ContractError("need at least 2 values to rank")
    ranks = rankdata(values, method="average") - 1.0
    scores = ranks / (n - 1) - 0.5
    scores = scores - scores.mean()
    std = np.sqrt(np.mean(scores ** 2))
    if std < _TIE_EPS:
        return np.zeros(n)
    return scores / std


def centered_ranks(returns: ReturnTable) -> CenteredRanks:
    """Centered-rank scores over the 2m returns of one generation."""
    m = returns.j_plus.shape[0]
    scores = centered_rank_scores(
        np.concatenate([returns.j_plus, returns.j_minus]))
    return CenteredRanks(scores[:m], scores[m:])


@dataclass
class GradientEstimate:
    g: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def fd_gradient(epsilons: np.ndarray, s_plus: np.ndarray, s_minus: np.ndarray,
                sigma_es: float) -> np.ndarray:
    """Antithetic finite-difference direction from per-pair scores
    (rank scores or raw returns)."""
    if sigma_es <= 0:
        raise ContractError("sigma_es must be > 0")
    m = epsilons.shape[0]
    diff = np.asarray(s_plus, dtype=float) - np.asarray(s_minus, dtype=float)
    if diff.shape != (m,):
        raise ContractError("scores are not aligned with the batch")
    return (diff @ epsilons) / (m * sigma_es)


def tdes_gradient(batch: PerturbationBatch, ranks: CenteredRanks) -> GradientEstimate:
    g = fd_gradient(batch.epsilons, ranks.r_plus, ranks.r_minus, batch.sigma_es)
    if not np.all(np.isfinite(g)):
        raise ContractError("gradient estimate is not finite")
    return GradientEstimate(g, {"g_norm": float(np.linalg.norm(g))})


def classic_es_gradient(deltas: np.ndarray, returns: np.ndarray,
                        sigma_es: float) -> GradientEstimate:
    """Score-function estimator over n Gaussian perturbations and their raw
    returns."""
    if sigma_es <= 0:
        raise ContractError("sigma_es must be > 0")
    returns = np.asarray(returns, dtype=float)
    n = deltas.shape[0]
    if returns.shape != (n,):
        raise ContractError("returns are not aligned with the perturbations")
    g = (returns @ deltas) / (n * sigma_es)
    return GradientEstimate(g, {"g_norm": float(np.linalg.norm(g))})


def estimator_variance(objective, center: np.ndarray, sigma_es: float, m: int,
                       trials: int, master_seed: int = 0,
                       use_ranks: bool = False) -> dict:
    """Trace of the empirical covariance of the antithetic estimator over
    independent batches, for each noise kind at equal sigma_es.

    objective: deterministic callable theta -> float.
    """
    if trials < 2:
        raise ContractError("trials must be >= 2")
    center = np.asarray(center, dtype=float)
    out = {}
    for kind in ("triangular", "gaussian"):
        dist = NoiseDistribution(kind)
        grads = np.empty((trials, center.shape[0]))
        for t in range(trials):
            batch = make_batch(dist, sigma_es, m, center.shape[0], t, master_seed)
            plus, minus = antithetic_candidates(center, batch)
            j_plus = np.array([objective(p) for p in plus])
            j_minus = np.array([objective(p) for p in minus])
            if use_ranks:
                r = centered_ranks(ReturnTable(j_plus, j_minus))
                grads[t] = fd_gradient(batch.epsilons, r.r_plus, r.r_minus, sigma_es)
            else:
                grads[t] = fd_gradient(batch.epsilons, j_plus, j_minus, sigma_es)
        out[kind] = float(np.sum(np.var(grads, axis=0)))
    return out
