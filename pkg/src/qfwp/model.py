"""Quantum fast weight programmer: a classical slow programmer that reprograms VQC angles.

At every step the slow programmer maps the current input to a layer vector ``L``
(length = VQC layers) and a qubit vector ``Q`` (length = qubits). Their outer
product is added to the circuit angles before the circuit runs::

    theta[t] = theta[t-1] + outer(L(x_t), Q(x_t))

Because the accumulation is additive, d theta_final / d outer(L(t), Q(t)) is the
identity for every step, so gradients reach each step's slow-programmer pass
without any recurrent Jacobian products.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ArgumentError, ConfigurationError, StateError
from .nn import DenseLayer, dense_backward, dense_forward
from .statevec import FastParams, VqcConfig, param_shift_batch, run_vqc, simulate_batch

GRAD_MODES = ("all_steps", "last_step_only")
KINDS = ("timeseries", "rl")
INIT_SCALE = 0.1


@dataclass
class ModelConfig:
    kind: str = "timeseries"
    input_dim: int = 1
    latent_dim: int = 8
    num_qubits: int = 8
    num_layers: int = 2
    measured_qubits: tuple = (0, 1, 2, 3)
    entangler: str = "chain"
    output_dim: int = 1  # post head width (time series) or number of actions (rl)
    grad_mode: str = "all_steps"
    seed: int = 0

    def __post_init__(self):
        self.measured_qubits = tuple(int(q) for q in self.measured_qubits)
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.grad_mode not in GRAD_MODES:
            raise ConfigurationError(f"grad_mode must be one of {GRAD_MODES}, got {self.grad_mode!r}")
        for name in ("input_dim", "latent_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    def vqc(self) -> VqcConfig:
        return VqcConfig(self.num_qubits, self.num_layers, self.measured_qubits, self.entangler)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["measured_qubits"] = list(self.measured_qubits)
        return d


def timeseries_config(seed: int = 0, **overrides) -> ModelConfig:
    return ModelConfig(kind="timeseries", seed=seed, **overrides)


def rl_config(seed: int = 0, num_layers: int = 2, **overrides) -> ModelConfig:
    opts = dict(
        kind="rl", input_dim=147, latent_dim=8, num_qubits=8, num_layers=num_layers,
        measured_qubits=tuple(range(overrides.get("num_qubits", 8))), output_dim=6,
    )
    opts.update(overrides)
    return ModelConfig(seed=seed, **opts)


@dataclass
class SlowProgrammer:
    encoder: DenseLayer  # input -> latent, tanh
    layer_head: DenseLayer  # latent -> l
    qubit_head: DenseLayer  # latent -> n


class QfwpModel:
    """Slow programmer, fast VQC angles and the classical heads attached to them."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.cfg = config.vqc()
        rng = np.random.default_rng(config.seed)
        theta0 = rng.uniform(-math.pi, math.pi, size=self.cfg.shape)
        self.fast = FastParams(theta0.copy(), theta0)
        d, h = config.input_dim, config.latent_dim
        self.slow = SlowProgrammer(
            DenseLayer.init(d, h, rng, "tanh", INIT_SCALE),
            DenseLayer.init(h, config.num_layers, rng, scale=INIT_SCALE),
            DenseLayer.init(h, config.num_qubits, rng, scale=INIT_SCALE),
        )
        m = len(self.cfg.measured_qubits)
        self.post = self.compressor = self.actor = self.critic = None
        if config.kind == "timeseries":
            self.post = DenseLayer.init(m, config.output_dim, rng, scale=INIT_SCALE)
        else:
            self.compressor = DenseLayer.init(d, config.num_qubits, rng, scale=INIT_SCALE)
            self.actor = DenseLayer.init(m, config.output_dim, rng, scale=INIT_SCALE)
            self.critic = DenseLayer.init(m, 1, rng, scale=INIT_SCALE)

    @property
    def grad_mode(self) -> str:
        return self.config.grad_mode

    def layers(self) -> dict:
        out = {
            "encoder": self.slow.encoder,
            "layer_head": self.slow.layer_head,
            "qubit_head": self.slow.qubit_head,
        }
        for name in ("post", "compressor", "actor", "critic"):
            layer = getattr(self, name)
            if layer is not None:
                out[name] = layer
        return out

    def parameters(self) -> dict:
        """Live views of every classical parameter array, keyed ``layer.weights`` / ``layer.bias``."""
        params = {}
        for name, layer in self.layers().items():
            params[f"{name}.weights"] = layer.weights
            params[f"{name}.bias"] = layer.bias
        return params

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}

    def load_parameters(self, values: dict) -> None:
        """Copy arrays into the model in place (shapes must match)."""
        for name, p in self.parameters().items():
            src = values[name]
            if np.shape(src) != p.shape:
                raise ArgumentError(f"{name}: shape {np.shape(src)} != {p.shape}")
            p[...] = src

    def reset_fast(self) -> None:
        self.fast.reset()


def count_parameters(model: QfwpModel) -> tuple:
    classical = sum(layer.num_params for layer in model.layers().values())
    quantum = model.cfg.num_layers * model.cfg.num_qubits
    return classical, quantum


# --- slow programmer ------------------------------------------------------


def slow_forward(slow: SlowProgrammer, x) -> tuple:
    """``latent = tanh(encoder(x))``; returns ``(L, Q, tapes)``. Works on vectors or row batches."""
    latent, enc_tape = dense_forward(slow.encoder, x)
    L, l_tape = dense_forward(slow.layer_head, latent)
    Q, q_tape = dense_forward(slow.qubit_head, latent)
    return L, Q, (enc_tape, l_tape, q_tape)


def slow_backward(slow: SlowProgrammer, tapes, dL, dQ, grads: dict) -> np.ndarray:
    """Accumulate slow-programmer gradients into ``grads``; returns the input gradient."""
    enc_tape, l_tape, q_tape = tapes
    d_lat_l, gw, gb = dense_backward(slow.layer_head, l_tape, dL)
    grads["layer_head.weights"] += gw
    grads["layer_head.bias"] += gb
    d_lat_q, gw, gb = dense_backward(slow.qubit_head, q_tape, dQ)
    grads["qubit_head.weights"] += gw
    grads["qubit_head.bias"] += gb
    dx, gw, gb = dense_backward(slow.encoder, enc_tape, d_lat_l + d_lat_q)
    grads["encoder.weights"] += gw
    grads["encoder.bias"] += gb
    return dx


def outer_update(theta, L, Q) -> np.ndarray:
    """``theta + outer(L, Q)``; also accepts a leading batch axis on all three."""
    theta = np.asarray(theta, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if theta.shape[:-2] != L.shape[:-1] or theta.shape[-2:] != (L.shape[-1], Q.shape[-1]) or L.shape[:-1] != Q.shape[:-1]:
        raise ArgumentError(f"cannot add outer({L.shape}, {Q.shape}) to theta of shape {theta.shape}")
    return theta + L[..., :, None] * Q[..., None, :]


@dataclass
class StepRecord:
    slow_tapes: tuple
    L: np.ndarray
    Q: np.ndarray
    theta: np.ndarray  # angles the circuit ran with (after this step's update)
    vqc_input: np.ndarray
    expectations: np.ndarray
    input_tape: object = None  # compressor tape (rl only)


def fwp_step(model: QfwpModel, x_t, vqc_input) -> tuple:
    """Observe, reprogram, run: update ``model.fast.theta`` then execute the circuit."""
    L, Q, tapes = slow_forward(model.slow, x_t)
    theta = outer_update(model.fast.theta, L, Q)
    expectations = run_vqc(model.cfg, vqc_input, theta)
    model.fast.theta = theta
    return expectations, StepRecord(tapes, L, Q, theta, np.asarray(vqc_input, dtype=np.float64), expectations)


# --- time series ----------------------------------------------------------


@dataclass
class TsCache:
    steps: list  # StepRecord per time step, batched along axis 0
    post_tape: object
    batched: bool


def ts_forward(model: QfwpModel, window) -> tuple:
    """Predict the value following ``window``.

    ``window`` is one window of N values, or an ``(batch, N)`` array. The fast
    angles restart from theta0 for every window; each value is fed to the slow
    programmer and encoded on qubit 0 (other encoding angles stay 0). The
    prediction is the post head applied to the final step's expectations.
    For a single window ``model.fast.theta`` is left at the final angles.
    """
    w = np.asarray(window, dtype=np.float64)
    batched = w.ndim == 2
    if not batched:
        w = w[None, :]
    if w.ndim != 2 or w.shape[1] < 1 or w.shape[0] < 1:
        raise ArgumentError(f"window must hold at least one value, got shape {np.shape(window)}")
    if model.post is None:
        raise ConfigurationError("ts_forward needs a time-series model")
    batch, steps = w.shape
    n = model.cfg.num_qubits
    theta = np.broadcast_to(model.fast.theta0, (batch,) + model.cfg.shape)
    records = []
    for t in range(steps):
        x_t = w[:, t:t + 1]
        L, Q, tapes = slow_forward(model.slow, x_t)
        theta = outer_update(theta, L, Q)
        vqc_input = np.zeros((batch, n))
        vqc_input[:, 0] = w[:, t]
        expectations = simulate_batch(model.cfg, vqc_input, theta)
        records.append(StepRecord(tapes, L, Q, theta, vqc_input, expectations))
    pred, post_tape = dense_forward(model.post, records[-1].expectations)
    if not batched:
        model.fast.theta = theta[0].copy()
        return float(pred[0, 0]), TsCache(records, post_tape, False)
    return pred[:, 0], TsCache(records, post_tape, True)


def _route_steps(mode: str, count: int) -> list:
    if mode == "all_steps":
        return list(range(count))
    if mode == "last_step_only":
        return [count - 1]
    raise ConfigurationError(f"unknown grad_mode {mode!r}")


def ts_backward(model: QfwpModel, caches: TsCache, loss_grad, grad_mode: str = None) -> dict:
    """Gradients of every classical parameter given dLoss/dprediction.

    ``loss_grad`` is a scalar for a single-window cache or a length-batch vector;
    parameter gradients are summed over the batch.
    """
    mode = model.grad_mode if grad_mode is None else grad_mode
    routed = _route_steps(mode, len(caches.steps))
    g = np.atleast_1d(np.asarray(loss_grad, dtype=np.float64))
    grads = model.zero_grads()

    d_exp, gw, gb = dense_backward(model.post, caches.post_tape, g[:, None])
    grads["post.weights"] += gw
    grads["post.bias"] += gb

    final = caches.steps[-1]
    d_theta, _ = param_shift_batch(model.cfg, final.vqc_input, final.theta)
    # dLoss/dtheta_final, identical for every step's outer product
    g_theta = np.einsum("bm,bmln->bln", d_exp, d_theta)
    for t in routed:
        rec = caches.steps[t]
        dL = np.einsum("bln,bn->bl", g_theta, rec.Q)
        dQ = np.einsum("bln,bl->bn", g_theta, rec.L)
        slow_backward(model.slow, rec.slow_tapes, dL, dQ, grads)
    return grads


# --- reinforcement learning -------------------------------------------------


def rl_forward(model: QfwpModel, obs, commit: bool = True) -> tuple:
    """One agent step: compress ``obs`` to encoding angles, reprogram, run all qubits.

    With ``commit=False`` the fast angles are left untouched (used to peek at
    a bootstrap value).
    """
    if model.compressor is None:
        raise ConfigurationError("rl_forward needs an rl model")
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (model.config.input_dim,):
        raise ArgumentError(f"observation must have length {model.config.input_dim}, got shape {obs.shape}")
    vqc_input, in_tape = dense_forward(model.compressor, obs)
    L, Q, tapes = slow_forward(model.slow, obs)
    theta = outer_update(model.fast.theta, L, Q)
    expectations = run_vqc(model.cfg, vqc_input, theta)
    if commit:
        model.fast.theta = theta
    return expectations, StepRecord(tapes, L, Q, theta, vqc_input, expectations, in_tape)


def rl_backward(model: QfwpModel, caches: list, d_expectations, grads: dict = None, grad_mode: str = None) -> dict:
    """Gradients for a trajectory segment given dLoss/d<Z> at every step.

    The angles entering the segment are treated as constants. In ``all_steps``
    mode step s's outer product receives the circuit gradients of every step
    t >= s in the segment; in ``last_step_only`` it receives only its own.
    """
    mode = model.grad_mode if grad_mode is None else grad_mode
    if mode not in GRAD_MODES:
        raise ConfigurationError(f"unknown grad_mode {mode!r}")
    d_exp = np.asarray(d_expectations, dtype=np.float64)
    if d_exp.ndim == 1:
        d_exp = d_exp[None, :]
    if len(caches) == 0 or d_exp.shape != (len(caches), len(model.cfg.measured_qubits)):
        raise StateError(f"{len(caches)} cached steps but upstream gradient of shape {d_exp.shape}")
    if grads is None:
        grads = model.zero_grads()

    inputs = np.stack([rec.vqc_input for rec in caches])
    thetas = np.stack([rec.theta for rec in caches])
    d_theta, d_input = param_shift_batch(model.cfg, inputs, thetas, want_input_grad=True)
    g_theta = np.einsum("tm,tmln->tln", d_exp, d_theta)
    g_input = np.einsum("tm,tmn->tn", d_exp, d_input)
    if mode == "all_steps":
        g_theta = np.cumsum(g_theta[::-1], axis=0)[::-1]

    for rec, gt, gx in zip(caches, g_theta, g_input):
        slow_backward(model.slow, rec.slow_tapes, gt @ rec.Q, gt.T @ rec.L, grads)
        _, gw, gb = dense_backward(model.compressor, rec.input_tape, gx)
        grads["compressor.weights"] += gw
        grads["compressor.bias"] += gb
    return grads
