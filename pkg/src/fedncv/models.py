"""Small softmax classifiers with closed-form per-sample gradients.

Parameters live in one flat vector.  Layout is layer-major, row-major,
weights before biases within a layer:

* ``Logistic``: ``W (K x d)``, ``b (K)``
* ``Mlp1``: ``W1 (h x d)``, ``b1 (h)``, ``W2 (K x h)``, ``b2 (K)``
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._backend import kernels
from .numeric import GradVec


class ModelKind(str, enum.Enum):
    LOGISTIC = "logistic"
    MLP1 = "mlp1"


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: Activation = Activation.TANH

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "activation", Activation(self.activation))
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("need input_dim >= 1 and num_classes >= 2")
        if self.kind is ModelKind.MLP1 and self.hidden_dim < 1:
            raise ValueError("Mlp1 needs hidden_dim >= 1")

    @property
    def num_params(self) -> int:
        d, K, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind is ModelKind.LOGISTIC:
            return K * d + K
        return h * d + h + K * h + K

    def unpack(self, theta) -> tuple[np.ndarray, ...]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.num_params,):
            raise ValueError(f"theta has shape {theta.shape}, model needs ({self.num_params},)")
        d, K, h = self.input_dim, self.num_classes, self.hidden_dim
        if self.kind is ModelKind.LOGISTIC:
            return theta[: K * d].reshape(K, d), theta[K * d :]
        o = h * d
        W1, b1 = theta[:o].reshape(h, d), theta[o : o + h]
        o += h
        W2, b2 = theta[o : o + K * h].reshape(K, h), theta[o + K * h :]
        return W1, b1, W2, b2

    def init_params(self, rng: np.random.Generator) -> GradVec:
        """Uniform in ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` per layer, weights and biases alike."""
        if self.kind is ModelKind.LOGISTIC:
            s = 1.0 / math.sqrt(self.input_dim)
            return rng.uniform(-s, s, size=self.num_params)
        d, K, h = self.input_dim, self.num_classes, self.hidden_dim
        s1, s2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(h)
        return np.concatenate([
            rng.uniform(-s1, s1, size=h * d + h),
            rng.uniform(-s2, s2, size=K * h + K),
        ])


def _batch(spec: ModelSpec, X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"features have dimension {X.shape[1]}, model expects {spec.input_dim}")
    if X.shape[0] != y.shape[0]:
        raise ValueError("one label per feature row required")
    if np.any(y < 0) or np.any(y >= spec.num_classes):
        raise ValueError("label out of range")
    return X, y


def batch_grads(spec: ModelSpec, theta, X, y) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradients ``(n, num_params)`` and losses ``(n,)``."""
    X, y = _batch(spec, X, y)
    params = spec.unpack(theta)
    if spec.kind is ModelKind.LOGISTIC:
        return kernels.softmax_xent_grads(*params, X, y)
    return kernels.mlp1_grads(*params, X, y, spec.activation is Activation.RELU)


def logits(spec: ModelSpec, theta, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    params = spec.unpack(theta)
    if spec.kind is ModelKind.LOGISTIC:
        W, b = params
        return X @ W.T + b
    W1, b1, W2, b2 = params
    pre = X @ W1.T + b1
    act = np.maximum(pre, 0.0) if spec.activation is Activation.RELU else np.tanh(pre)
    return act @ W2.T + b2


def batch_losses(spec: ModelSpec, theta, X, y) -> np.ndarray:
    X, y = _batch(spec, X, y)
    s = logits(spec, theta, X)
    s = s - s.max(axis=1, keepdims=True)
    return np.log(np.exp(s).sum(axis=1)) - s[np.arange(len(y)), y]


def forward_loss(spec: ModelSpec, theta, x, y: int) -> float:
    return float(batch_losses(spec, theta, x, [y])[0])


def per_sample_grad(spec: ModelSpec, theta, x, y: int) -> GradVec:
    return batch_grads(spec, theta, x, [y])[0][0]


def finite_diff_grad(
    spec: ModelSpec | None,
    theta,
    x=None,
    y: int | None = None,
    eps: float = 1e-5,
    loss: Callable[[np.ndarray], float] | None = None,
) -> GradVec:
    """Central differences of the sample loss, or of ``loss(theta)`` when given."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if loss is None:
        def loss(t):
            return forward_loss(spec, t, x, y)
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += eps
        down[j] -= eps
        out[j] = (loss(up) - loss(down)) / (2 * eps)
    return out


def predict(spec: ModelSpec, theta, X) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(logits(spec, theta, X), axis=1)


def evaluate(spec: ModelSpec, theta, X, y) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a dataset."""
    if np.size(y) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    X, y = _batch(spec, X, y)
    return float(batch_losses(spec, theta, X, y).mean()), float(np.mean(predict(spec, theta, X) == y))
