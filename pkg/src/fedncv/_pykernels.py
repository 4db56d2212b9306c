"""Pure numpy implementations of the hot kernels.

These are the fallback when the compiled ``_ckernels`` extension is not
available, and the reference the compiled versions are tested against.
Signatures and outputs match ``_ckernels.pyx`` exactly.
"""

import numpy as np


def loo_reshape(G, alpha):
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    S = G.sum(axis=0)
    return G - alpha * (S - G) / (n - 1)


def loo_baselines(G):
    G = np.asarray(G, dtype=np.float64)
    n = G.shape[0]
    return (G.sum(axis=0) - G) / (n - 1)


def softmax_xent_grads(W, b, X, y):
    """Per-sample cross-entropy losses and gradients of a linear softmax model.

    Gradient rows are laid out as ``[dW (row-major, K x d), db (K)]``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    K = W.shape[0]
    scores = X @ W.T + b
    scores -= scores.max(axis=1, keepdims=True)
    expd = np.exp(scores)
    z = expd.sum(axis=1)
    p = expd / z[:, None]
    losses = np.log(z) - scores[np.arange(n), y]
    delta = p
    delta[np.arange(n), y] -= 1.0
    grads = np.empty((n, K * d + K))
    grads[:, : K * d] = (delta[:, :, None] * X[:, None, :]).reshape(n, K * d)
    grads[:, K * d :] = delta
    return grads, losses


def mlp1_grads(W1, b1, W2, b2, X, y, relu):
    """Per-sample losses and gradients of a one-hidden-layer softmax network.

    Gradient rows are laid out as ``[dW1 (h x d), db1 (h), dW2 (K x h), db2 (K)]``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, d = X.shape
    h = W1.shape[0]
    K = W2.shape[0]
    pre = X @ W1.T + b1
    if relu:
        act = np.maximum(pre, 0.0)
        dact = (pre > 0).astype(np.float64)
    else:
        act = np.tanh(pre)
        dact = 1.0 - act * act
    scores = act @ W2.T + b2
    scores -= scores.max(axis=1, keepdims=True)
    expd = np.exp(scores)
    z = expd.sum(axis=1)
    p = expd / z[:, None]
    losses = np.log(z) - scores[np.arange(n), y]
    d2 = p
    d2[np.arange(n), y] -= 1.0
    dh = (d2 @ W2) * dact
    grads = np.empty((n, h * d + h + K * h + K))
    o = 0
    grads[:, o : o + h * d] = (dh[:, :, None] * X[:, None, :]).reshape(n, h * d)
    o += h * d
    grads[:, o : o + h] = dh
    o += h
    grads[:, o : o + K * h] = (d2[:, :, None] * act[:, None, :]).reshape(n, K * h)
    o += K * h
    grads[:, o:] = d2
    return grads, losses


def score_networked_batch(outcomes, offsets, rewards, probs, alpha, beta):
    """Networked RLOO score-function estimates for a batch of trials.

    ``outcomes`` is ``(T, n)`` with client ``u`` owning columns
    ``offsets[u]:offsets[u + 1]``.  Returns the ``(T, K)`` estimates.
    """
    outcomes = np.asarray(outcomes, dtype=np.int64)
    rewards = np.asarray(rewards, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    T = outcomes.shape[0]
    K = probs.shape[0]
    m = len(offsets) - 1
    sizes = np.diff(np.asarray(offsets, dtype=np.int64))
    n = int(sizes.sum())
    agg = np.empty((T, m, K))
    for u in range(m):
        x = outcomes[:, offsets[u] : offsets[u + 1]]
        nu = sizes[u]
        f = rewards[x]
        base = (f.sum(axis=1, keepdims=True) - f) / (nu - 1)
        coef = f - alpha * base
        hits = np.zeros((T, K))
        rows = np.repeat(np.arange(T), nu)
        np.add.at(hits, (rows, x.ravel()), coef.ravel())
        agg[:, u, :] = hits / nu - coef.mean(axis=1)[:, None] * probs
    total = np.einsum("u,tuk->tk", sizes.astype(np.float64), agg)
    est = np.zeros((T, K))
    for u in range(m):
        g_u = agg[:, u, :]
        est += (sizes[u] / n) * g_u
        if beta != 0.0:
            cv = (total - sizes[u] * g_u) / (n - sizes[u])
            est -= (sizes[u] / n) * beta * cv
    return est
