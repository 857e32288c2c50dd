"""Dense feed-forward networks with explicit reverse-mode derivatives.

Hidden layers use tanh, the output layer is linear. Forward passes cache
layer activations so the backward pass can return exact gradients with
respect to inputs, weights, and biases; everything operates on batches of
row vectors. Parameters flatten to a single vector for the optimizers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class Mlp:
    weights: list  # [(n_out, n_in), ...]
    biases: list  # [(n_out,), ...]

    @property
    def widths(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


def init_mlp(widths, rng: np.random.Generator) -> Mlp:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    widths = list(widths)
    if len(widths) < 2:
        raise InvalidArgumentError("an MLP needs at least input and output widths")
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(weights, biases)


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch (or single row) of inputs."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.shape[1] != net.in_dim:
        raise InvalidArgumentError(
            f"input width {a.shape[1]} does not match network input {net.in_dim}"
        )
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if i != last:
            a = np.tanh(a)
    return a[0] if single else a


def mlp_forward_cached(net: Mlp, x: np.ndarray):
    """Forward pass returning (output, cache) for a later backward pass."""
    a = np.asarray(x, dtype=float)
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise InvalidArgumentError(
            f"cached forward expects a (batch, {net.in_dim}) input, got {a.shape}"
        )
    acts = [a]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w.T + b
        if i != last:
            a = np.tanh(a)
        acts.append(a)
    return acts[-1], acts


def mlp_backward(net: Mlp, acts: list, grad_out: np.ndarray):
    """Gradients (d_input, d_weights, d_biases) for upstream grad_out.

    ``acts`` is the cache from :func:`mlp_forward_cached`; gradient arrays
    match the parameter shapes and are summed over the batch.
    """
    g = np.asarray(grad_out, dtype=float)
    d_w = [None] * len(net.weights)
    d_b = [None] * len(net.biases)
    last = len(net.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (1.0 - acts[i + 1] ** 2)
        d_w[i] = g.T @ acts[i]
        d_b[i] = g.sum(axis=0)
        g = g @ net.weights[i]
    return g, d_w, d_b


def pack_params(*nets: Mlp) -> np.ndarray:
    parts = []
    for net in nets:
        for w, b in zip(net.weights, net.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
    return np.concatenate(parts)


def unpack_params(theta: np.ndarray, *nets: Mlp) -> None:
    """Write a flat parameter vector back into the networks, in place."""
    off = 0
    for net in nets:
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            net.weights[i] = theta[off : off + w.size].reshape(w.shape).copy()
            off += w.size
            net.biases[i] = theta[off : off + b.size].copy()
            off += b.size
    if off != theta.size:
        raise InvalidArgumentError(
            f"parameter vector length {theta.size} does not match networks ({off})"
        )


def pack_grads(nets_grads) -> np.ndarray:
    """Flatten per-network (d_weights, d_biases) lists like pack_params."""
    parts = []
    for d_w, d_b in nets_grads:
        for gw, gb in zip(d_w, d_b):
            parts.append(gw.ravel())
            parts.append(gb.ravel())
    return np.concatenate(parts)
