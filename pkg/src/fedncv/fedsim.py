"""The federated round loop.

Each round the server broadcasts ``theta`` and the client coefficients,
every client evaluates per-sample gradients on its shard, reshapes them with
its LOO baseline and reports the mean, and the server combines the reports
with its own control variate, takes a gradient step and updates the
coefficients.  All clients participate in every round.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import estimators as est
from .config import RunConfig
from .data import LabeledDataset, PartitionSpec, dirichlet_partition, load_dataset, synth_gaussian_mixture, train_test_split
from .models import ModelSpec, batch_grads, evaluate
from .numeric import GradVec, derive_stream, norm_sq

DIVERGENCE_LIMIT = 1e12
TEST_FRACTION = 0.2
SLOPE_EPS = 1e-3


class Algorithm(str, enum.Enum):
    FEDAVG = "fedavg"
    CLIENTCV = "clientcv"
    FEDNCV = "fedncv"


class AlphaMode(str, enum.Enum):
    FIXED = "fixed"
    DESCENT = "descent"
    CLOSED_FORM = "closedform"


class Divergence(RuntimeError):
    """The global model left the finite range; ``metrics`` holds the valid rounds."""

    def __init__(self, message: str, metrics: list["RoundMetrics"]):
        super().__init__(message)
        self.metrics = metrics


@dataclass
class ClientState:
    client_id: int
    indices: np.ndarray
    rng: np.random.Generator


@dataclass(frozen=True)
class ServerState:
    theta: GradVec
    gamma: float
    round: int
    cfg: est.CvConfig
    alpha_mode: AlphaMode


@dataclass(frozen=True)
class ClientReport:
    client_id: int
    g_u: GradVec
    n_u: int
    local_loss: float
    reshaped: bool = True
    alpha_slope: float = 0.0
    aux: np.ndarray | None = None


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    train_loss: float
    test_accuracy: float
    grad_dispersion: float
    global_grad_norm: float
    alpha_mean: float
    beta: float


def algorithm_select(
    kind: Algorithm | str,
    client_ids,
    alpha_mode: AlphaMode | str = AlphaMode.FIXED,
    fixed_alpha: float = 0.5,
    beta: float = 0.5,
) -> tuple[est.CvConfig, AlphaMode]:
    """Coefficient preset for an algorithm.

    FedAvg has no control variates.  ClientCV keeps only the client-side
    baseline.  FedNCV adds the server control variate scaled by ``beta``.
    """
    kind = Algorithm(kind)
    mode = AlphaMode(alpha_mode)
    ids = list(client_ids)
    if kind is Algorithm.FEDAVG:
        return est.CvConfig({u: 0.0 for u in ids}, beta=0.0), AlphaMode.FIXED
    alphas = {u: float(fixed_alpha) for u in ids}
    return est.CvConfig(alphas, beta=0.0 if kind is Algorithm.CLIENTCV else float(beta)), mode


def local_round(
    client: ClientState,
    theta: GradVec,
    spec: ModelSpec,
    dataset: LabeledDataset,
    alpha_u: float,
    local_steps: int = 1,
    gamma: float = 0.0,
    alpha_mode: AlphaMode = AlphaMode.FIXED,
    resample: bool = False,
) -> ClientReport:
    """Worker side of one round: gradients at ``theta``, LOO reshape, mean.

    With ``local_steps > 1`` the client first takes ``local_steps - 1`` plain
    full-batch steps of size ``gamma`` and reports gradients at the result.
    Clients with a single sample cannot form a baseline and report their raw
    gradient with ``reshaped=False``.
    """
    idx = client.indices
    if resample:
        idx = np.sort(client.rng.choice(idx, size=idx.size, replace=True))
    X, y = dataset.X[idx], dataset.y[idx]
    local = np.array(theta, dtype=np.float64)
    for _ in range(local_steps - 1):
        G, _ = batch_grads(spec, local, X, y)
        local -= gamma * G.mean(axis=0)
    G, losses = batch_grads(spec, local, X, y)
    loss = float(losses.mean())
    mode = AlphaMode(alpha_mode)
    if idx.size < 2:
        return ClientReport(client.client_id, G.mean(axis=0), int(idx.size), loss, reshaped=False)
    grad_set = est.ClientGradSet(client.client_id, G)
    g_u = est.client_aggregate(est.client_reshape(grad_set, alpha_u))
    slope = est.aggregate_norm_sq_slope(grad_set, alpha_u, SLOPE_EPS) if mode is AlphaMode.DESCENT else 0.0
    aux = G if mode is AlphaMode.CLOSED_FORM else None
    return ClientReport(client.client_id, g_u, int(idx.size), loss, True, slope, aux)


def grad_dispersion(reports: list[ClientReport]) -> float:
    """Size-weighted spread ``sum_u (n_u/n) ||g_u - g_bar||^2`` of client reports."""
    ordered = sorted(reports, key=lambda r: r.client_id)
    w = np.array([r.n_u for r in ordered], dtype=np.float64)
    w /= w.sum()
    G = np.vstack([r.g_u for r in ordered])
    centered = G - w @ G
    return float(w @ np.einsum("ij,ij->i", centered, centered))


def global_round(
    server: ServerState,
    reports: list[ClientReport],
    testset: LabeledDataset,
    spec: ModelSpec,
) -> tuple[ServerState, RoundMetrics]:
    """Server side of one round: aggregate, step, update coefficients, measure."""
    if not reports:
        raise ValueError("no client reports")
    ordered = sorted(reports, key=lambda r: r.client_id)
    aggregates = {r.client_id: r.g_u for r in ordered}
    sizes = {r.client_id: r.n_u for r in ordered}
    beta = server.cfg.beta if len(ordered) > 1 else 0.0
    if server.cfg.beta != 0.0 and len(ordered) < 2:
        raise ValueError("a server control variate needs at least two clients")
    g = est.server_aggregate(aggregates, sizes, beta)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"round {server.round}: non-finite global gradient")
    theta = server.theta - server.gamma * g
    if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > DIVERGENCE_LIMIT:
        raise FloatingPointError(f"round {server.round}: parameters diverged")

    used = [server.cfg.alpha_for(r.client_id) if r.reshaped else 0.0 for r in ordered]
    alphas = dict(server.cfg.alphas)
    if server.alpha_mode is AlphaMode.DESCENT:
        for r in ordered:
            if r.reshaped:
                alphas[r.client_id] = est.alpha_descent_update(alphas[r.client_id], server.gamma, r.alpha_slope)
    elif server.alpha_mode is AlphaMode.CLOSED_FORM:
        sets = [est.ClientGradSet(r.client_id, r.aux) for r in ordered if r.reshaped and r.aux is not None]
        if len(sets) >= 2:
            alphas.update(est.optimal_alphas(sets))

    n = sum(sizes.values())
    _, acc = evaluate(spec, theta, testset.X, testset.y)
    metrics = RoundMetrics(
        round=server.round + 1,
        train_loss=sum(r.n_u / n * r.local_loss for r in ordered),
        test_accuracy=acc,
        grad_dispersion=grad_dispersion(ordered),
        global_grad_norm=math.sqrt(norm_sq(g)),
        alpha_mean=float(np.mean(used)),
        beta=beta,
    )
    new_cfg = dataclasses.replace(server.cfg, alphas=alphas)
    return dataclasses.replace(server, theta=theta, round=server.round + 1, cfg=new_cfg), metrics


class Simulation:
    """Data, clients and server for one configured run."""

    def __init__(self, config: RunConfig):
        self.config = config
        if config.dataset_path:
            full = load_dataset(config.dataset_path)
        else:
            full = synth_gaussian_mixture(config.num_classes, config.input_dim, config.n_samples, config.spread, config.seed)
        self.train, self.test = train_test_split(full, TEST_FRACTION, config.seed)
        self.spec = ModelSpec(config.model, full.input_dim, full.num_classes, config.hidden_dim, config.activation)
        partition = dirichlet_partition(
            self.train, PartitionSpec(config.clients, config.dirichlet_concentration, 2, config.seed)
        )
        self.clients = [ClientState(u, partition[u], derive_stream(config.seed, 10, u)) for u in sorted(partition)]
        cfg, mode = algorithm_select(config.algorithm, partition, config.alpha_mode, config.fixed_alpha, config.beta)
        theta0 = self.spec.init_params(derive_stream(config.seed, 3))
        self.server = ServerState(theta0, config.gamma, 0, cfg, mode)
        self.metrics: list[RoundMetrics] = []

    def _local(self, client: ClientState) -> ClientReport:
        s = self.server
        return local_round(
            client, s.theta, self.spec, self.train, s.cfg.alpha_for(client.client_id),
            self.config.local_steps, s.gamma, s.alpha_mode, self.config.resample,
        )

    def step(self, pool: ThreadPoolExecutor | None = None) -> RoundMetrics:
        if pool is None:
            reports = [self._local(c) for c in self.clients]
        else:
            reports = list(pool.map(self._local, self.clients))
        try:
            self.server, metrics = global_round(self.server, reports, self.test, self.spec)
        except FloatingPointError as exc:
            raise Divergence(str(exc), list(self.metrics)) from None
        self.metrics.append(metrics)
        return metrics

    def run(self) -> list[RoundMetrics]:
        workers = self.config.workers
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for _ in range(self.config.rounds):
                    self.step(pool)
        else:
            for _ in range(self.config.rounds):
                self.step()
        return list(self.metrics)


def run(config: RunConfig) -> list[RoundMetrics]:
    return Simulation(config).run()
