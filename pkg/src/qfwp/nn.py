"""Dense layers with hand-written reverse mode, plus Adam."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, StateError

ACTIVATIONS = ("identity", "tanh")


def init_uniform(shape, scale: float, rng_seed) -> np.ndarray:
    """I.i.d. uniform(-scale, scale) entries; ``rng_seed`` is an int or a numpy Generator."""
    if not scale > 0:
        raise ArgumentError(f"scale must be positive, got {scale}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ArgumentError(f"weights {self.weights.shape} and bias {self.bias.shape} do not form a dense layer")
        if self.activation not in ACTIVATIONS:
            raise ArgumentError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng, activation: str = "identity", scale: float = 0.1):
        w = init_uniform((out_dim, in_dim), scale, rng)
        b = init_uniform((out_dim,), scale, rng)
        return cls(w, b, activation)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_params(self) -> int:
        return self.weights.size + self.bias.size

    def __call__(self, x):
        return dense_forward(self, x)[0]


@dataclass
class GradTape:
    x: np.ndarray
    out: np.ndarray
    activation: str
    used: bool = False


def dense_forward(layer: DenseLayer, x) -> tuple:
    """``activation(W @ x + b)``; ``x`` may be a vector or a ``(batch, in)`` matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (layer.in_dim,) or x.ndim > 2:
        raise ArgumentError(f"input of shape {x.shape} does not fit a layer with in_dim {layer.in_dim}")
    z = x @ layer.weights.T + layer.bias
    out = np.tanh(z) if layer.activation == "tanh" else z
    return out, GradTape(x, out, layer.activation)


def dense_backward(layer: DenseLayer, tape: GradTape, output_grad) -> tuple:
    """Returns ``(input_grad, weight_grad, bias_grad)``; batched tapes sum parameter grads over rows."""
    if tape.used:
        raise StateError("tape already consumed by a backward pass")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != tape.out.shape:
        raise ArgumentError(f"output_grad shape {g.shape} != forward output shape {tape.out.shape}")
    tape.used = True
    if tape.activation == "tanh":
        g = g * (1.0 - tape.out * tape.out)
    input_grad = g @ layer.weights
    if g.ndim == 1:
        weight_grad = np.outer(g, tape.x)
        bias_grad = g.copy()
    else:
        weight_grad = g.T @ tape.x
        bias_grad = g.sum(axis=0)
    return input_grad, weight_grad, bias_grad


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_apply(params: dict, grads: dict, state: AdamState) -> tuple:
    """One bias-corrected Adam step, updating the arrays in ``params`` in place."""
    if params.keys() != grads.keys():
        raise ArgumentError(f"parameter and gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for name, p in params.items():
        if np.shape(grads[name]) != p.shape:
            raise ArgumentError(f"gradient for {name} has shape {np.shape(grads[name])}, expected {p.shape}")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p)
            state.second_moment[name] = np.zeros_like(p)
        v = state.second_moment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
