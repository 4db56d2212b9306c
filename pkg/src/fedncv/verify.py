"""Verification suites behind ``fedncv verify``.

Each check returns a :class:`Check` carrying the measured value and the
threshold it was held to, so callers can print or assert on them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import estimators as est
from . import score_oracle as so
from .numeric import derive_stream, weighted_mean

IDENTITY_RTOL = 1e-10
DEGENERACY_ATOL = 1e-9
COMPOSITION_RTOL = 1e-12
SE_MULTIPLE = 3.0
UNBIASED_TRIALS = 200_000
VARIANCE_TRIALS = 10_000
MIN_VARIANCE_REDUCTION = 0.20
ALPHA_GRID = np.round(np.arange(-2000, 2001) / 1000.0, 3)
ALPHA_SLACK = 0.05
ALPHA_CLIENT_SIZE = 64
GAP_TRIALS = 20_000
GAP_ROUNDS = 500
SCORE_SIZES = (4, 4, 4)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: measured {self.measured:.6g} vs threshold {self.threshold:.6g}"
        return f"{text} ({self.detail})" if self.detail else text


def random_gradient_sets(rng: np.random.Generator, equal_sizes: bool = False) -> list[est.ClientGradSet]:
    m = int(rng.integers(2, 6))
    d = int(rng.integers(1, 7))
    sizes = [int(rng.integers(2, 9))] * m if equal_sizes else rng.integers(2, 9, size=m).tolist()
    scale = 10.0 ** rng.uniform(-2, 2)
    return [est.ClientGradSet(u, scale * (rng.normal(size=d) + rng.normal(size=(k, d)))) for u, k in enumerate(sizes)]


def _input_scale(sets) -> float:
    return max(float(np.max(np.abs(s.per_sample))) for s in sets)


def check_identities(seed: int = 0, instances: int = 100) -> list[Check]:
    loo_err = reshape_err = degenerate_err = composition_err = 0.0
    for k in range(instances):
        rng = derive_stream(seed, 1, k)
        sets = random_gradient_sets(rng)
        scale = _input_scale(sets)
        alpha = float(rng.uniform(-2, 2))
        for s in sets:
            loo = np.mean([est.loo_mean(s.per_sample, i) for i in range(s.n_u)], axis=0)
            loo_err = max(loo_err, float(np.max(np.abs(loo - s.per_sample.mean(axis=0)))) / scale)
            shaped = est.client_reshape(s, alpha).mean(axis=0)
            reshape_err = max(reshape_err, float(np.max(np.abs(shaped - (1 - alpha) * s.per_sample.mean(axis=0)))) / scale)

        cfg0 = est.CvConfig({s.client_id: alpha for s in sets}, beta=0.0)
        direct = est.networked_estimate_direct(sets, cfg0)
        aggs = [est.client_aggregate(est.client_reshape(s, alpha)) for s in sets]
        ref = weighted_mean(aggs, [s.n_u for s in sets])
        ref_scale = max(float(np.max(np.abs(ref))), np.finfo(float).tiny)
        composition_err = max(composition_err, float(np.max(np.abs(direct - ref))) / ref_scale)

        eq = random_gradient_sets(rng, equal_sizes=True)
        cfg1 = est.CvConfig({s.client_id: alpha for s in eq}, beta=1.0)
        out = est.networked_estimate_direct(eq, cfg1)
        degenerate_err = max(degenerate_err, float(np.max(np.abs(out))) / _input_scale(eq))

    return [
        Check("LOO mean identity", loo_err <= IDENTITY_RTOL, loo_err, IDENTITY_RTOL, f"{instances} instances, relative to input scale"),
        Check("reshape mean = (1 - alpha) * mean", reshape_err <= IDENTITY_RTOL, reshape_err, IDENTITY_RTOL, f"{instances} instances"),
        Check("beta=1 equal sizes gives zero", degenerate_err <= DEGENERACY_ATOL, degenerate_err, DEGENERACY_ATOL, "max |estimate| / input scale"),
        Check("beta=0 composition = weighted mean", composition_err <= COMPOSITION_RTOL, composition_err, COMPOSITION_RTOL, "relative"),
    ]


def check_unbiasedness(seed: int = 0, trials: int = UNBIASED_TRIALS, alpha: float = 1.0) -> list[Check]:
    policy, rewards = so.pinned_problem()
    samples = so.networked_score_batch(policy, rewards, SCORE_SIZES, alpha, 0.0, trials, derive_stream(seed, 2))
    mc = so.summarize(samples)
    z = np.abs(mc.mean - so.exact_gradient(policy, rewards)) / mc.std_error
    worst = float(z.max())
    return [Check(
        "networked estimator unbiased (score setting)",
        worst <= SE_MULTIPLE, worst, SE_MULTIPLE,
        f"max |mean - exact| / SE over {policy.K} components, {trials} trials, alpha={alpha}, beta=0",
    )]


def check_rloo_variance(seed: int = 0, trials: int = VARIANCE_TRIALS) -> Check:
    policy, rewards = so.pinned_problem()
    rng = derive_stream(seed, 3)
    outcomes = policy.sample((trials, sum(SCORE_SIZES)), rng)
    plain = so.summarize(so.networked_score_batch(policy, rewards, SCORE_SIZES, 0.0, 0.0, trials, rng, outcomes))
    loo = so.summarize(so.networked_score_batch(policy, rewards, SCORE_SIZES, 1.0, 0.0, trials, rng, outcomes))
    reduction = 1.0 - loo.variance_trace / plain.variance_trace
    return Check(
        "LOO baseline variance reduction", reduction >= MIN_VARIANCE_REDUCTION, reduction, MIN_VARIANCE_REDUCTION,
        f"trace {loo.variance_trace:.4g} (alpha=1) vs {plain.variance_trace:.4g} (alpha=0)",
    )


def random_score_problem(rng: np.random.Generator, K: int = so.DEFAULT_K) -> tuple[so.CategoricalPolicy, np.ndarray]:
    rewards = rng.uniform(0.0, 1.0, size=K)
    return so.CategoricalPolicy(rng.normal(size=K)), rewards


def variance_gap_instance(seed: int, k: int, alpha: float = 1.0) -> tuple[float, float]:
    """(formula gap, measured gap) on one seeded score instance."""
    policy, rewards = random_score_problem(derive_stream(seed, 5, k))
    networked, single = so.networked_vs_single_gap(policy, rewards, SCORE_SIZES, alpha, GAP_TRIALS, derive_stream(seed, 6, k))
    rng = derive_stream(seed, 7, k)
    rounds = [so.score_sets(policy, rewards, [policy.sample(n, rng) for n in SCORE_SIZES]) for _ in range(GAP_ROUNDS)]
    return est.variance_gap_replicated(rounds, alpha), networked - single


def check_variance_gap(seed: int = 0, instances: int = 10) -> Check:
    agree = 0
    parts = []
    for k in range(instances):
        formula, measured = variance_gap_instance(seed, k)
        agree += np.sign(formula) == np.sign(measured)
        parts.append(f"{formula:+.3g}/{measured:+.3g}")
    return Check(
        "variance gap sign agrees with Monte Carlo", agree == instances, float(agree), float(instances),
        "formula/measured: " + " ".join(parts),
    )


def _variance_trace(summands: np.ndarray) -> float:
    centered = summands - summands.mean(axis=0)
    return float(np.sum(centered * centered) / (summands.shape[0] - 1))


def alpha_grid_ratio(sets) -> tuple[float, dict[int, float]]:
    """Variance at the closed-form alphas over the grid minimum."""
    alphas = est.optimal_alphas(sets)
    base = est.identity_form_summands(sets, 0.0)
    slope = est.identity_form_summands(sets, 1.0) - base
    grid_min = min(_variance_trace(base + a * slope) for a in ALPHA_GRID)
    return _variance_trace(est.identity_form_summands(sets, alphas)) / grid_min, alphas


def alpha_instance(seed: int, k: int, m: int = 3, n: int = ALPHA_CLIENT_SIZE) -> list[est.ClientGradSet]:
    rng = derive_stream(seed, 8, k)
    policy, rewards = random_score_problem(rng)
    return so.score_sets(policy, rewards, [policy.sample(n, rng) for _ in range(m)])


def check_optimal_alpha(seed: int = 0, instances: int = 20) -> Check:
    worst = max(alpha_grid_ratio(alpha_instance(seed, k))[0] for k in range(instances))
    excess = worst - 1.0
    return Check(
        "closed-form alpha near grid minimum", excess <= ALPHA_SLACK, excess, ALPHA_SLACK,
        f"worst relative excess variance over {instances} instances, grid [-2, 2] step 1e-3",
    )


SUITES: dict[str, Callable[[int], list[Check]]] = {
    "identity": lambda seed: check_identities(seed),
    "unbiasedness": lambda seed: check_unbiasedness(seed),
    "variance": lambda seed: [check_rloo_variance(seed), check_variance_gap(seed)],
    "alpha": lambda seed: [check_optimal_alpha(seed)],
}
