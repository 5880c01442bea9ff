"""Pure-numpy implementations of the hot kernels.

Same signatures and update order as the compiled ``_kernels`` module; used
when the extension is not built or ``SENSBENCH_BACKEND=python`` is set.
"""

import numpy as np


def moving_average(x, kernel):
    """Centred moving average along axis 1 of a ``[n, L, k]`` array, edges replicated.

    Accumulates deviations from the centre value so that constant series and
    ``kernel == 1`` reproduce the input bit for bit.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    n, L, k = x.shape
    half = (kernel - 1) // 2
    acc = np.zeros_like(x)
    for j in range(-half, half + 1):
        src = np.clip(np.arange(L) + j, 0, L - 1)
        acc += x[:, src, :] - x
    return x + acc / kernel


def linear_epoch(T, S, Y, Wt, Ws, b, order, batch_size, lr, l2):
    """One epoch of mini-batch gradient descent for ``y = T Wt' + S Ws' + b``.

    ``Wt``, ``Ws`` and ``b`` are updated in place.  Returns the mean squared
    error over the epoch, measured before each batch update.
    """
    N, H = Y.shape
    total = 0.0
    for s in range(0, N, batch_size):
        idx = order[s:s + batch_size]
        Tb, Sb, Yb = T[idx], S[idx], Y[idx]
        E = Tb @ Wt.T
        E += Sb @ Ws.T
        E += b
        E -= Yb
        total += float(np.sum(E * E))
        G = E * (2.0 / (len(idx) * H))
        gWt = G.T @ Tb
        gWs = G.T @ Sb
        gb = G.sum(axis=0)
        if l2:
            gWt += (2.0 * l2) * Wt
            gWs += (2.0 * l2) * Ws
        Wt -= lr * gWt
        Ws -= lr * gWs
        b -= lr * gb
    return total / (N * H)


def mlp_epoch(Z, Y, W1, b1, W2, b2, order, batch_size, lr, l2):
    """One epoch of mini-batch gradient descent for a one-hidden-layer tanh MLP."""
    N, H = Y.shape
    total = 0.0
    for s in range(0, N, batch_size):
        idx = order[s:s + batch_size]
        Zb, Yb = Z[idx], Y[idx]
        Hh = np.tanh(Zb @ W1.T + b1)
        E = Hh @ W2.T
        E += b2
        E -= Yb
        total += float(np.sum(E * E))
        G = E * (2.0 / (len(idx) * H))
        gW2 = G.T @ Hh
        gb2 = G.sum(axis=0)
        dA = (G @ W2) * (1.0 - Hh * Hh)
        gW1 = dA.T @ Zb
        gb1 = dA.sum(axis=0)
        if l2:
            gW1 += (2.0 * l2) * W1
            gW2 += (2.0 * l2) * W2
        W1 -= lr * gW1
        b1 -= lr * gb1
        W2 -= lr * gW2
        b2 -= lr * gb2
    return total / (N * H)
