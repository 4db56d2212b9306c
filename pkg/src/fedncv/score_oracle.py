"""An exactly solvable score-function environment.

A softmax policy over ``K`` outcomes with a fixed reward table.  The exact
gradient of the expected reward is a finite sum, so bias and variance of
every REINFORCE-style estimator can be checked by Monte Carlo against a
known target.  In this setting the LOO baseline term really has zero mean,
which is what the unbiasedness argument for the networked estimator needs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._backend import kernels
from .estimators import ClientGradSet, CvConfig, Flavor, identity_form_summands, networked_estimate_direct
from .numeric import GradVec, as_gradvec, derive_stream

DEFAULT_K = 5
REWARD_SEED = 20240501


@dataclass(frozen=True)
class CategoricalPolicy:
    logits: np.ndarray

    def __post_init__(self):
        logits = as_gradvec(self.logits)
        if logits.size < 2:
            raise ValueError("a categorical policy needs at least two outcomes")
        object.__setattr__(self, "logits", logits)

    @property
    def K(self) -> int:
        return self.logits.size

    @property
    def probs(self) -> np.ndarray:
        z = np.exp(self.logits - self.logits.max())
        return z / z.sum()

    def scores(self, outcomes) -> np.ndarray:
        """Score vectors ``onehot(k) - p`` (gradient of ``log p_k``), one row per outcome."""
        outcomes = np.asarray(outcomes, dtype=np.int64)
        return np.eye(self.K)[outcomes] - self.probs

    def sample(self, size, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(size), side="right").astype(np.int64)


def pinned_problem(K: int = DEFAULT_K, seed: int = REWARD_SEED) -> tuple[CategoricalPolicy, np.ndarray]:
    """The frozen reward table and logits used by the verification suites."""
    rng = derive_stream(seed)
    rewards = rng.uniform(0.0, 1.0, size=K)
    logits = rng.normal(0.0, 1.0, size=K)
    return CategoricalPolicy(logits), rewards


def _rewards(policy: CategoricalPolicy, rewards) -> np.ndarray:
    r = as_gradvec(rewards)
    if r.size != policy.K:
        raise ValueError(f"{r.size} rewards for {policy.K} outcomes")
    return r


def expected_reward(policy: CategoricalPolicy, rewards) -> float:
    return float(policy.probs @ _rewards(policy, rewards))


def exact_gradient(policy: CategoricalPolicy, rewards) -> GradVec:
    """Closed form ``sum_k p_k l_k (onehot(k) - p)`` of the expected-reward gradient."""
    r = _rewards(policy, rewards)
    p = policy.probs
    return p * r - p * (p @ r)


def reinforce_sample_grads(policy: CategoricalPolicy, rewards, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent single-draw REINFORCE gradients ``l(x) (onehot(x) - p)``."""
    if n < 1:
        raise ValueError("need at least one draw")
    r = _rewards(policy, rewards)
    x = policy.sample(n, rng)
    return r[x][:, None] * policy.scores(x)


def rloo_score_estimate(draws: Sequence[tuple[int, float]], policy: CategoricalPolicy, alpha: float) -> GradVec:
    """RLOO estimate from ``(outcome, reward)`` pairs with the reward LOO mean as baseline."""
    if len(draws) < 2:
        raise ValueError("RLOO needs at least two draws")
    x = np.array([d[0] for d in draws], dtype=np.int64)
    f = np.array([d[1] for d in draws], dtype=np.float64)
    base = (f.sum() - f) / (len(f) - 1)
    return ((f - alpha * base)[:, None] * policy.scores(x)).mean(axis=0)


def score_sets(policy: CategoricalPolicy, rewards, outcome_groups: Sequence) -> list[ClientGradSet]:
    """One score-flavored gradient set per client from its drawn outcomes."""
    r = _rewards(policy, rewards)
    sets = []
    for u, x in enumerate(outcome_groups):
        x = np.asarray(x, dtype=np.int64)
        sets.append(ClientGradSet.from_scores(u, r[x], policy.scores(x)))
    return sets


def _client_sizes(m: int, n) -> list[int]:
    sizes = [int(n)] * m if np.isscalar(n) else [int(k) for k in n]
    if len(sizes) != m:
        raise ValueError(f"{len(sizes)} client sizes for {m} clients")
    return sizes


def federated_score_round(
    policy: CategoricalPolicy,
    rewards,
    m: int,
    n,
    cfg: CvConfig,
    rng: np.random.Generator,
) -> tuple[GradVec, np.ndarray]:
    """Draw ``n`` outcomes per client and run the networked estimator.

    Returns the estimate and the pooled reshaped per-sample summands.
    ``n`` is a single size or one size per client.
    """
    if cfg.flavor is not Flavor.SCORE:
        raise ValueError("score rounds need a SCORE-flavor config")
    sizes = _client_sizes(m, n)
    groups = [policy.sample(k, rng) for k in sizes]
    sets = score_sets(policy, rewards, groups)
    alphas = {s.client_id: cfg.alpha_for(s.client_id) for s in sets}
    return networked_estimate_direct(sets, cfg), identity_form_summands(sets, alphas)


def networked_score_batch(
    policy: CategoricalPolicy,
    rewards,
    sizes: Sequence[int],
    alpha: float,
    beta: float,
    trials: int,
    rng: np.random.Generator,
    outcomes: np.ndarray | None = None,
) -> np.ndarray:
    """``(trials, K)`` networked estimates through the compiled batch kernel.

    Equivalent to ``trials`` calls of :func:`federated_score_round` with a
    shared alpha; pass ``outcomes`` (``(trials, sum(sizes))``) to reuse draws.
    """
    if min(sizes) < 2:
        raise ValueError("every client needs at least two draws")
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    if outcomes is None:
        outcomes = policy.sample((trials, int(offsets[-1])), rng)
    return kernels.score_networked_batch(outcomes, offsets, _rewards(policy, rewards), policy.probs, float(alpha), float(beta))


@dataclass(frozen=True)
class MonteCarloResult:
    mean: GradVec
    variance_trace: float
    std_error: np.ndarray
    trials: int


def summarize(samples: np.ndarray) -> MonteCarloResult:
    samples = np.asarray(samples, dtype=np.float64)
    t = samples.shape[0]
    if t < 2:
        raise ValueError("need at least two trials")
    var = samples.var(axis=0, ddof=1)
    return MonteCarloResult(samples.mean(axis=0), float(var.sum()), np.sqrt(var / t), t)


def monte_carlo_bias_variance(
    estimator: Callable[[np.random.Generator], GradVec],
    trials: int,
    seed: int,
) -> MonteCarloResult:
    """Run ``estimator`` once per trial, each on its own derived stream ``(seed, trial)``."""
    if trials < 2:
        raise ValueError("need at least two trials")
    samples = np.vstack([np.asarray(estimator(derive_stream(seed, t)), dtype=np.float64) for t in range(trials)])
    return summarize(samples)


def networked_vs_single_gap(
    policy: CategoricalPolicy,
    rewards,
    sizes: Sequence[int],
    alpha: float,
    trials: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Measured variance traces of the per-client LOO networked estimator
    (``beta = 0``) and of a single RLOO over the pooled draws.

    Both estimators see the same outcomes in every trial.
    """
    n = int(sum(sizes))
    outcomes = policy.sample((trials, n), rng)
    networked = networked_score_batch(policy, rewards, sizes, alpha, 0.0, trials, rng, outcomes)
    single = networked_score_batch(policy, rewards, [n], alpha, 0.0, trials, rng, outcomes)
    return summarize(networked).variance_trace, summarize(single).variance_trace
