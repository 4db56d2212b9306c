"""Control-variate machinery for federated gradient estimation.

Two layers of leave-one-out (LOO) baselines are combined:

* client side, every per-sample gradient ``g_i`` is reshaped to
  ``g_i - alpha * c_i`` where ``c_i`` is the LOO baseline built from the
  client's other samples;
* server side, every client aggregate ``g_u`` is reshaped to
  ``g_u - beta * c_u`` where ``c_u`` is the size-weighted mean of the other
  clients' aggregates.

Baselines come in two flavors.  ``GRADIENT`` uses the LOO mean of the
gradient vectors themselves.  ``SCORE`` is the REINFORCE form: a sample's
gradient is ``f_i * s_i`` (reward times score vector) and its baseline is the
LOO mean of the rewards times its own score, ``b_i * s_i``.

Server-side reductions always run in ascending client-id order so results
are bitwise reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ._backend import kernels
from .numeric import GradVec, norm_sq, stack


class Flavor(str, enum.Enum):
    GRADIENT = "gradient"
    SCORE = "score"


class AggregationMode(str, enum.Enum):
    UNIFORM = "uniform"
    SAMPLING_WEIGHTED = "sampling_weighted"


class DegenerateStatistics(ValueError):
    """Plug-in statistics are too degenerate to evaluate a closed form."""


@dataclass(frozen=True)
class CvConfig:
    alphas: Mapping[int, float]
    beta: float = 0.5
    flavor: Flavor = Flavor.GRADIENT

    def __post_init__(self):
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")

    def alpha_for(self, client_id: int) -> float:
        try:
            return float(self.alphas[client_id])
        except KeyError:
            raise KeyError(f"no alpha configured for client {client_id}") from None


@dataclass(frozen=True)
class ClientGradSet:
    """Per-sample gradients of one client.

    For the ``SCORE`` flavor build it with :meth:`from_scores`, which keeps the
    rewards and score vectors the baseline needs.
    """

    client_id: int
    per_sample: np.ndarray
    rewards: np.ndarray | None = field(default=None, repr=False)
    scores: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "per_sample", stack(self.per_sample))
        if (self.rewards is None) != (self.scores is None):
            raise ValueError("rewards and scores must be given together")

    @classmethod
    def from_scores(cls, client_id: int, rewards, scores) -> "ClientGradSet":
        f = np.asarray(rewards, dtype=np.float64)
        s = stack(scores)
        if f.shape != (s.shape[0],):
            raise ValueError("one reward per score vector required")
        return cls(client_id, f[:, None] * s, rewards=f, scores=s)

    @property
    def n_u(self) -> int:
        return self.per_sample.shape[0]

    @property
    def dim(self) -> int:
        return self.per_sample.shape[1]

    @property
    def flavor(self) -> Flavor:
        return Flavor.GRADIENT if self.rewards is None else Flavor.SCORE

    def baselines(self) -> np.ndarray:
        """LOO control variate ``c_i`` for every sample, as an ``(n_u, d)`` array."""
        if self.n_u < 2:
            raise ValueError(f"client {self.client_id}: LOO baseline needs n_u >= 2, got {self.n_u}")
        if self.flavor is Flavor.SCORE:
            f = self.rewards
            b = (f.sum() - f) / (self.n_u - 1)
            return b[:, None] * self.scores
        return kernels.loo_baselines(self.per_sample)


def _sorted_ids(mapping: Mapping[int, object]) -> list[int]:
    return sorted(mapping)


def loo_mean(grads: Sequence, i: int) -> GradVec:
    mat = stack(grads)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("leave-one-out mean needs at least two samples")
    if not 0 <= i < n:
        raise IndexError(f"sample index {i} out of range for {n} samples")
    return (mat.sum(axis=0) - mat[i]) / (n - 1)


def client_reshape(grad_set: ClientGradSet, alpha: float) -> np.ndarray:
    """Per-sample ``g_i - alpha * c_i`` for one client; returns ``(n_u, d)``."""
    if grad_set.n_u < 2:
        raise ValueError(f"client {grad_set.client_id}: reshaping needs n_u >= 2, got {grad_set.n_u}")
    if grad_set.flavor is Flavor.GRADIENT:
        return kernels.loo_reshape(grad_set.per_sample, float(alpha))
    return grad_set.per_sample - alpha * grad_set.baselines()


def client_aggregate(reshaped, mode: AggregationMode = AggregationMode.UNIFORM, weights=None) -> GradVec:
    mat = stack(reshaped)
    mode = AggregationMode(mode)
    if mode is AggregationMode.UNIFORM:
        return mat.mean(axis=0)
    if weights is None:
        raise ValueError("sampling-weighted aggregation needs weights")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (mat.shape[0],) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("sampling weights must be non-negative, one per sample, summing to 1")
    return w @ mat


def _check_sizes(aggregates: Mapping[int, GradVec], sizes: Mapping[int, int]):
    if set(aggregates) != set(sizes):
        raise ValueError("aggregates and sizes must cover the same clients")
    if any(sizes[u] <= 0 for u in sizes):
        raise ValueError("client sizes must be positive")


def server_control_variate(aggregates: Mapping[int, GradVec], sizes: Mapping[int, int], u: int) -> GradVec:
    """Size-weighted mean of every other client's aggregate."""
    _check_sizes(aggregates, sizes)
    if len(aggregates) < 2:
        raise ValueError("server control variate needs at least two clients")
    n = sum(sizes.values())
    rest = n - sizes[u]
    out = np.zeros_like(np.asarray(aggregates[u], dtype=np.float64))
    for v in _sorted_ids(aggregates):
        if v != u:
            out += (sizes[v] / rest) * np.asarray(aggregates[v], dtype=np.float64)
    return out


def server_aggregate(aggregates: Mapping[int, GradVec], sizes: Mapping[int, int], beta: float) -> GradVec:
    """``sum_u (n_u / n) * (g_u - beta * c_u)``; ``beta = 0`` is plain FedAvg."""
    _check_sizes(aggregates, sizes)
    if not aggregates:
        raise ValueError("no client aggregates")
    ids = _sorted_ids(aggregates)
    n = sum(sizes.values())
    out = np.zeros_like(np.asarray(aggregates[ids[0]], dtype=np.float64))
    for u in ids:
        g_u = np.asarray(aggregates[u], dtype=np.float64)
        if beta != 0.0:
            g_u = g_u - beta * server_control_variate(aggregates, sizes, u)
        out += (sizes[u] / n) * g_u
    return out


def _by_id(sets: Sequence[ClientGradSet]) -> dict[int, ClientGradSet]:
    by_id = {s.client_id: s for s in sets}
    if len(by_id) != len(sets):
        raise ValueError("duplicate client ids")
    if not by_id:
        raise ValueError("no client gradient sets")
    if len({s.dim for s in sets}) != 1:
        raise ValueError("clients disagree on the gradient dimension")
    return by_id


def _alpha_of(alpha, client_id: int) -> float:
    if isinstance(alpha, Mapping):
        return float(alpha[client_id])
    return float(alpha)


def networked_estimate_direct(sets: Sequence[ClientGradSet], cfg: CvConfig) -> GradVec:
    """Client reshape, uniform client mean, then the server reduction."""
    by_id = _by_id(sets)
    aggregates, sizes = {}, {}
    for u in sorted(by_id):
        s = by_id[u]
        if s.flavor is not cfg.flavor:
            raise ValueError(f"client {u} carries {s.flavor.value} gradients, config expects {cfg.flavor.value}")
        aggregates[u] = client_aggregate(client_reshape(s, cfg.alpha_for(u)))
        sizes[u] = s.n_u
    return server_aggregate(aggregates, sizes, cfg.beta)


def identity_form_summands(sets: Sequence[ClientGradSet], alpha) -> np.ndarray:
    """Pooled ``g_i - alpha_u * c_i`` over all samples of all clients, ``(n, d)``."""
    by_id = _by_id(sets)
    return np.vstack([by_id[u].per_sample - _alpha_of(alpha, u) * by_id[u].baselines() for u in sorted(by_id)])


def identity_form_estimate(sets: Sequence[ClientGradSet], alpha) -> GradVec:
    """Pooled mean ``(1/n) sum_i (g_i - alpha * c_i)`` with uniform weight ``1/n``.

    ``alpha`` is a scalar or a mapping from client id to alpha.
    """
    return identity_form_summands(sets, alpha).mean(axis=0)


@dataclass(frozen=True)
class _Moments:
    n_u: int
    sum_gc: float
    sum_cc: float
    sum_g: np.ndarray


def _moments(sets: Sequence[ClientGradSet]) -> dict[int, _Moments]:
    out = {}
    for u, s in sorted(_by_id(sets).items()):
        g = s.per_sample
        c = s.baselines()
        out[u] = _Moments(s.n_u, float(np.einsum("ij,ij->", g, c)), float(np.einsum("ij,ij->", c, c)), g.sum(axis=0))
    return out


def _check_estimable(moments: Mapping[int, _Moments], u: int):
    if u not in moments:
        raise KeyError(f"unknown client {u}")
    if len(moments) < 2:
        raise ValueError("closed forms need at least one other client")


def _alpha_from_moments(mom: Mapping[int, _Moments], u: int) -> float:
    own = mom[u]
    n = sum(m.n_u for m in mom.values())
    a = n - own.n_u
    others_gc = sum(m.sum_gc for v, m in mom.items() if v != u)
    others_cc = sum(m.sum_cc for v, m in mom.items() if v != u)
    others_g = sum(m.sum_g for v, m in mom.items() if v != u)
    mean_gap = float(np.sum(own.sum_g / own.n_u - others_g / a))
    num = 2 * a * a * (own.sum_gc / own.n_u + mean_gap) + others_gc
    den = 2 * a * a * own.sum_cc / own.n_u + others_cc
    if den == 0.0 or not math.isfinite(num / den):
        raise DegenerateStatistics(f"client {u}: baselines vanish, closed-form alpha undefined")
    return num / den


def optimal_alpha(sets: Sequence[ClientGradSet], u: int) -> float:
    """Variance-minimising client coefficient, evaluated with plug-in moments.

    Every expectation is replaced by a sample mean over the given gradients:
    ``E[g_i . c_i]`` and ``E[c_i . c_i]`` average over client ``u``'s samples,
    and the sums over samples ``j`` outside client ``u`` use each realised
    sample once.  Products of vectors are dot products.  The mean-difference
    term ``E[g_i] - (1/a) sum_j E[g_j]`` enters through the sum of its
    components, which is what adding the per-coordinate stationarity
    conditions produces.  ``a = n - n_u``.
    """
    mom = _moments(sets)
    _check_estimable(mom, u)
    return _alpha_from_moments(mom, u)


def optimal_alphas(sets: Sequence[ClientGradSet]) -> dict[int, float]:
    """:func:`optimal_alpha` for every client; degenerate clients are left out."""
    mom = _moments(sets)
    if len(mom) < 2:
        raise ValueError("closed forms need at least two clients")
    out = {}
    for u in mom:
        try:
            out[u] = _alpha_from_moments(mom, u)
        except DegenerateStatistics:
            pass
    return out


def variance_gap(sets: Sequence[ClientGradSet], alpha, u: int | None = None) -> float:
    """Plug-in of ``Var[networked] - Var[single]`` for one per-sample summand.

    Negative values mean the networked estimator has the smaller variance.
    With ``u=None`` the client values are combined with weights ``n_u / n``.
    A single client has nothing to network with and returns 0.
    """
    return variance_gap_replicated([sets], alpha, u)


def variance_gap_replicated(rounds: Sequence[Sequence[ClientGradSet]], alpha, u: int | None = None) -> float:
    """:func:`variance_gap` with every expectation averaged over replicate rounds.

    Each round is an independent draw of the same clients.  With one round
    this is exactly :func:`variance_gap`; more rounds shrink the bias of the
    squared-mean plug-ins, which is of order ``tr Var[g] / (n - n_u)``.
    """
    if not rounds:
        raise ValueError("no rounds")
    by_round = [_by_id(sets) for sets in rounds]
    ids = sorted(by_round[0])
    if any(sorted(r) != ids for r in by_round):
        raise ValueError("every round must contain the same clients")
    if len(ids) == 1:
        return 0.0
    if u is None:
        sizes = {v: by_round[0][v].n_u for v in ids}
        n = sum(sizes.values())
        return sum(sizes[v] / n * variance_gap_replicated(rounds, alpha, v) for v in ids)
    if u not in by_round[0]:
        raise KeyError(f"unknown client {u}")
    a = sum(by_round[0][v].n_u for v in ids if v != u)
    sq_resid, mean_u, sum_g = 0.0, 0.0, 0.0
    for r in by_round:
        others = [r[v] for v in ids if v != u]
        resid = sum((s.per_sample - _alpha_of(alpha, s.client_id) * s.baselines()).sum(axis=0) for s in others)
        sq_resid += norm_sq(resid)
        mean_u = mean_u + r[u].per_sample.mean(axis=0)
        sum_g = sum_g + sum(s.per_sample.sum(axis=0) for s in others)
    R = len(by_round)
    sq_resid, mean_u, sum_g = sq_resid / R, mean_u / R, sum_g / R
    return float(sq_resid / a**2 + 2 * (mean_u @ sum_g) / a - norm_sq(sum_g) / a**2)


def alpha_descent_update(alpha_u: float, gamma: float, delta_norm_sq: float) -> float:
    """One clamped descent step ``clamp(alpha - gamma * delta, 0, 1)``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if not math.isfinite(delta_norm_sq):
        raise ValueError("non-finite alpha derivative")
    return min(1.0, max(0.0, alpha_u - gamma * delta_norm_sq))


def aggregate_norm_sq_slope(grad_set: ClientGradSet, alpha: float, eps: float = 1e-3) -> float:
    """Central difference of ``||g_u(alpha)||^2`` with respect to alpha."""
    hi = norm_sq(client_aggregate(client_reshape(grad_set, alpha + eps)))
    lo = norm_sq(client_aggregate(client_reshape(grad_set, alpha - eps)))
    return (hi - lo) / (2 * eps)
