"""Minimal dense-network engine.

Plain numpy, double precision throughout. Networks are small stacks of fully
connected layers with relu or identity activations; gradients for the squared
loss are computed analytically and checked against finite differences in the
test suite.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainingDivergenceError

ACTIVATIONS = ("relu", "identity")


@dataclass
class DenseLayer:
    weights: np.ndarray  # fan_out x fan_in
    biases: np.ndarray  # fan_out
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError("layer weights must be fan_out x fan_in with matching biases")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


@dataclass
class Network:
    layers: list[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.fan_in != a.fan_out:
                raise ShapeError("consecutive layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    def params(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] of the live parameter arrays."""
        out = []
        for layer in self.layers:
            out.append(layer.weights)
            out.append(layer.biases)
        return out

    def set_params(self, arrays: list[np.ndarray]) -> None:
        if len(arrays) != 2 * len(self.layers):
            raise ShapeError("wrong number of parameter arrays")
        for i, layer in enumerate(self.layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != layer.weights.shape or b.shape != layer.biases.shape:
                raise ShapeError("parameter array shape mismatch")
            layer.weights = np.asarray(w, dtype=np.float64)
            layer.biases = np.asarray(b, dtype=np.float64)

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def make_network(dims: list[int], activations: list[str]) -> Network:
    """Zero-initialized network; ``dims`` = [in, h1, ..., out]."""
    if len(activations) != len(dims) - 1:
        raise ShapeError("need one activation per layer")
    layers = [
        DenseLayer(np.zeros((dims[i + 1], dims[i])), np.zeros(dims[i + 1]), act)
        for i, act in enumerate(activations)
    ]
    return Network(layers)


def init_uniform(network: Network, rng: np.random.Generator) -> Network:
    """Draw every weight and bias of a fan-in-M layer uniform on [-sqrt(1/M), sqrt(1/M)].

    Mutates and returns ``network``; deterministic given the generator state.
    """
    for layer in network.layers:
        bound = np.sqrt(1.0 / layer.fan_in)
        layer.weights = rng.uniform(-bound, bound, size=layer.weights.shape)
        layer.biases = rng.uniform(-bound, bound, size=layer.biases.shape)
    return network


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(network: Network, x: np.ndarray):
    """Forward pass for a batch (N x fan_in) or a single vector.

    Returns (output, cache); the cache holds per-layer inputs and
    pre-activations, enough for an exact backward pass.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != network.input_dim:
        raise ShapeError(
            f"input dim {x.shape[1]} does not match network fan_in {network.input_dim}"
        )
    a = x
    cache = []
    for layer in network.layers:
        z = a @ layer.weights.T + layer.biases
        cache.append((a, z))
        a = _activate(z, layer.activation)
    out = a[0] if single else a
    return out, cache


def backward(network: Network, cache, grad_out: np.ndarray):
    """Backprop an upstream gradient (N x fan_out) through the network.

    Returns (param_grads, grad_x) where param_grads is [dW0, db0, dW1, db1, ...]
    summed over the batch (the upstream gradient carries any 1/N factor).
    """
    grad = np.asarray(grad_out, dtype=np.float64)
    if grad.ndim == 1:
        grad = grad[None, :]
    grads: list[np.ndarray] = [None] * (2 * len(network.layers))
    for i in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[i]
        a_in, z = cache[i]
        dz = grad
        if layer.activation == "relu":
            dz = grad * (z > 0)
        grads[2 * i] = dz.T @ a_in
        grads[2 * i + 1] = dz.sum(axis=0)
        grad = dz @ layer.weights
    return grads, grad


def backward_sq(network: Network, cache, y_true: np.ndarray):
    """Gradients of the batch-mean squared loss mean_i (y_i - yhat_i)^2.

    The cache must come from a matching forward pass. Returns
    (loss, param_grads, grad_x).
    """
    a_last, z_last = cache[-1]
    yhat = _activate(z_last, network.layers[-1].activation)
    y = np.asarray(y_true, dtype=np.float64).reshape(yhat.shape)
    n = yhat.shape[0]
    resid = yhat - y
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    grads, grad_x = backward(network, cache, 2.0 * resid / n)
    return loss, grads, grad_x


def clip_elems(grad: np.ndarray, lo: float = -10.0, hi: float = 10.0) -> np.ndarray:
    """Element-wise clamp to [lo, hi]."""
    if not lo < hi:
        raise ValueError("clip range must satisfy lo < hi")
    return np.clip(grad, lo, hi)


@dataclass
class OptState:
    """SGD-with-momentum state for a flat parameter list."""

    velocity: list[np.ndarray]
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")

    @classmethod
    def for_params(cls, params, lr, momentum=0.0, weight_decay=0.0):
        vel = [np.zeros_like(p) for p in params]
        return cls(velocity=vel, lr=lr, momentum=momentum, weight_decay=weight_decay)


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptState,
             decay_mask: list[bool] | None = None) -> list[np.ndarray]:
    """One momentum update, in place on ``params``.

    v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v.
    ``decay_mask`` disables weight decay per array (used to exempt the
    feature-weight vector).
    """
    if len(params) != len(grads) or len(params) != len(state.velocity):
        raise ShapeError("params/grads/velocity length mismatch")
    if decay_mask is None:
        decay_mask = [True] * len(params)
    for p, g, v, decay in zip(params, grads, state.velocity, decay_mask):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient encountered")
        eff = g + state.weight_decay * p if (decay and state.weight_decay) else g
        v *= state.momentum
        v += eff
        p -= state.lr * v
        if not np.all(np.isfinite(p)):
            raise TrainingDivergenceError("non-finite parameter after update")
    return params
