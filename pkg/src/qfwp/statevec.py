"""Dense statevector simulation of the hardware-efficient VQC family used here.

The circuit is built from three gates only: Hadamard, Ry and CNOT. Qubit 0 is
the most significant bit of the basis index, so the amplitude of ``|q0 q1 ... q_{n-1}>``
sits at index ``q0 * 2**(n-1) + ... + q_{n-1}``.

Two paths are provided. The gate-level API (:class:`StateVector`, ``apply_*``)
works on complex amplitudes one gate at a time. :func:`simulate_batch` runs whole
circuits for a batch of angle sets at once; since H, Ry and CNOT are real
matrices and the register starts in ``|0...0>``, it keeps real amplitudes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ArgumentError, ConfigurationError

MAX_QUBITS = 12
ENTANGLERS = ("chain", "ring")
_HALF_PI = math.pi / 2
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class StateVector:
    """Mutable register of ``2**num_qubits`` complex amplitudes."""

    def __init__(self, num_qubits: int, amplitudes: np.ndarray):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (1 << num_qubits,):
            raise ArgumentError(
                f"expected {1 << num_qubits} amplitudes for {num_qubits} qubits, got shape {amplitudes.shape}"
            )
        self.num_qubits = num_qubits
        self.amplitudes = amplitudes

    def copy(self) -> "StateVector":
        return StateVector(self.num_qubits, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def _split(self, qubit: int) -> np.ndarray:
        # view as (higher bits, this bit, lower bits)
        return self.amplitudes.reshape(1 << qubit, 2, -1)

    def __repr__(self):
        return f"StateVector(num_qubits={self.num_qubits})"


def _check_qubit(state: StateVector, qubit: int) -> None:
    if not 0 <= qubit < state.num_qubits:
        raise ArgumentError(f"qubit {qubit} out of range for {state.num_qubits}-qubit register")


def new_zero_state(n: int) -> StateVector:
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_QUBITS:
        raise ConfigurationError(f"qubit count must be in 1..{MAX_QUBITS}, got {n!r}")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(n), amps)


def apply_h(state: StateVector, qubit: int) -> StateVector:
    _check_qubit(state, qubit)
    view = state._split(qubit)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = (a0 + a1) * _INV_SQRT2
    view[:, 1, :] = (a0 - a1) * _INV_SQRT2
    return state


def apply_ry(state: StateVector, qubit: int, angle: float) -> StateVector:
    _check_qubit(state, qubit)
    if not math.isfinite(angle):
        raise ArgumentError(f"Ry angle must be finite, got {angle!r}")
    if angle == 0.0:
        return state
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    view = state._split(qubit)
    a0 = view[:, 0, :].copy()
    a1 = view[:, 1, :]
    view[:, 0, :] = c * a0 - s * a1
    view[:, 1, :] = s * a0 + c * a1
    return state


def apply_cnot(state: StateVector, control: int, target: int) -> StateVector:
    _check_qubit(state, control)
    _check_qubit(state, target)
    if control == target:
        raise ArgumentError("CNOT control and target must differ")
    state.amplitudes = state.amplitudes[_cnot_permutation(state.num_qubits, control, target)]
    return state


def expectation_z(state: StateVector, qubit: int) -> float:
    _check_qubit(state, qubit)
    probs = np.abs(state._split(qubit)) ** 2
    return float(probs[:, 0, :].sum() - probs[:, 1, :].sum())


@lru_cache(maxsize=None)
def _cnot_permutation(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(1 << n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    # CNOT is an involution on basis labels, so gathering by it applies the gate
    return np.where(idx & cbit, idx ^ tbit, idx)


@dataclass(frozen=True)
class VqcConfig:
    num_qubits: int
    num_layers: int
    measured_qubits: tuple = None
    entangler: str = "chain"

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise ConfigurationError(f"num_qubits must be in 1..{MAX_QUBITS}, got {self.num_qubits}")
        if self.num_layers < 1:
            raise ConfigurationError(f"num_layers must be >= 1, got {self.num_layers}")
        measured = self.measured_qubits
        measured = tuple(range(self.num_qubits)) if measured is None else tuple(int(q) for q in measured)
        if len(set(measured)) != len(measured) or any(not 0 <= q < self.num_qubits for q in measured):
            raise ConfigurationError(f"measured_qubits must be distinct indices < {self.num_qubits}: {measured}")
        if not measured:
            raise ConfigurationError("at least one qubit must be measured")
        if self.entangler not in ENTANGLERS:
            raise ConfigurationError(f"entangler must be one of {ENTANGLERS}, got {self.entangler!r}")
        object.__setattr__(self, "measured_qubits", measured)

    @property
    def shape(self) -> tuple:
        return (self.num_layers, self.num_qubits)

    def cnot_pairs(self) -> list:
        n = self.num_qubits
        pairs = [(j, j + 1) for j in range(n - 1)]
        if self.entangler == "ring" and n > 2:
            pairs.append((n - 1, 0))
        return pairs


@dataclass
class FastParams:
    """Fast-programmer angles ``theta`` plus the base matrix ``theta0`` they reset to."""

    theta: np.ndarray
    theta0: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        self.theta0 = self.theta.copy() if self.theta0 is None else np.array(self.theta0, dtype=np.float64)
        if self.theta.ndim != 2 or self.theta.shape != self.theta0.shape:
            raise ArgumentError(f"theta {self.theta.shape} and theta0 {self.theta0.shape} must be equal 2-d shapes")

    def reset(self) -> None:
        self.theta = self.theta0.copy()


@dataclass
class VqcGradient:
    d_theta: np.ndarray  # (measured, layers, qubits)
    d_input: np.ndarray = None  # (measured, qubits) when requested


@lru_cache(maxsize=None)
def _layer_permutation(n: int, pairs: tuple) -> np.ndarray:
    idx = np.arange(1 << n)
    for c, t in pairs:
        idx = idx[_cnot_permutation(n, c, t)]
    return idx


@lru_cache(maxsize=None)
def _z_signs(n: int, measured: tuple) -> np.ndarray:
    idx = np.arange(1 << n)
    return np.stack([1.0 - 2.0 * ((idx >> (n - 1 - q)) & 1) for q in measured], axis=1)


def _rotate(psi: np.ndarray, qubit: int, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    # psi is amplitude-major, (2**n, batch); the batch axis stays innermost
    view = psi.reshape(1 << qubit, 2, -1, psi.shape[-1])
    a0 = view[:, 0]
    a1 = view[:, 1]
    out = np.empty_like(view)
    np.multiply(cos, a0, out=out[:, 0])
    out[:, 0] -= sin * a1
    np.multiply(sin, a0, out=out[:, 1])
    out[:, 1] += cos * a1
    return out.reshape(psi.shape)


def simulate_batch(cfg: VqcConfig, inputs: np.ndarray, thetas: np.ndarray, backend: str = None) -> np.ndarray:
    """Expectations ``<Z_k>`` for a batch of circuits; returns ``(batch, len(measured))``.

    ``inputs`` is ``(batch, n)`` and ``thetas`` is ``(batch, layers, n)``.
    ``backend`` picks ``"numba"`` or ``"numpy"``; by default numba when importable.
    """
    n, nl = cfg.num_qubits, cfg.num_layers
    inputs = np.ascontiguousarray(inputs, dtype=np.float64)
    thetas = np.ascontiguousarray(thetas, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != n:
        raise ArgumentError(f"inputs must be (batch, {n}), got {inputs.shape}")
    if thetas.shape != (inputs.shape[0], nl, n):
        raise ArgumentError(f"thetas must be ({inputs.shape[0]}, {nl}, {n}), got {thetas.shape}")
    backend = DEFAULT_BACKEND if backend is None else backend
    perm = _layer_permutation(n, tuple(cfg.cnot_pairs()))
    if backend == "numba":
        if _numba_kernel is None:
            raise ConfigurationError("numba backend requested but numba is not installed")
        return _numba_kernel(inputs, thetas, perm, np.asarray(cfg.measured_qubits, dtype=np.int64), n)
    if backend != "numpy":
        raise ConfigurationError(f"unknown simulator backend {backend!r}")
    return _simulate_numpy(cfg, inputs, thetas, perm)


def _simulate_numpy(cfg, inputs, thetas, perm):
    n, nl = cfg.num_qubits, cfg.num_layers
    batch = inputs.shape[0]

    # Ry(x) H |0> = ((c - s), (s + c)) / sqrt2 with c, s = cos(x/2), sin(x/2)
    c = np.cos(inputs.T / 2)
    s = np.sin(inputs.T / 2)
    q0 = (c - s) * _INV_SQRT2
    q1 = (s + c) * _INV_SQRT2
    psi = np.stack([q0[0], q1[0]])
    for j in range(1, n):
        pair = np.stack([q0[j], q1[j]])
        psi = (psi[:, None, :] * pair[None, :, :]).reshape(-1, batch)

    half = thetas.transpose(1, 2, 0) / 2  # (layers, n, batch)
    cos_t = np.cos(half)
    sin_t = np.sin(half)
    for i in range(nl):
        psi = psi[perm]
        for j in range(n):
            psi = _rotate(psi, j, cos_t[i, j], sin_t[i, j])

    return (psi * psi).T @ _z_signs(n, cfg.measured_qubits)


def _build_numba_kernel():
    try:
        from numba import njit
    except ImportError:
        return None

    @njit(cache=True, nogil=True)
    def kernel(inputs, thetas, perm, measured, n):
        batch = inputs.shape[0]
        layers = thetas.shape[1]
        dim = 1 << n
        out = np.empty((batch, measured.shape[0]))
        psi = np.empty(dim)
        tmp = np.empty(dim)
        for b in range(batch):
            # product state, qubit 0 ends up as the most significant bit
            psi[0] = 1.0
            size = 1
            for j in range(n):
                c = math.cos(inputs[b, j] / 2)
                s = math.sin(inputs[b, j] / 2)
                a0 = (c - s) * _INV_SQRT2
                a1 = (s + c) * _INV_SQRT2
                for k in range(size - 1, -1, -1):
                    v = psi[k]
                    psi[2 * k] = v * a0
                    psi[2 * k + 1] = v * a1
                size *= 2
            for i in range(layers):
                for k in range(dim):
                    tmp[k] = psi[perm[k]]
                psi, tmp = tmp, psi
                for j in range(n):
                    c = math.cos(thetas[b, i, j] / 2)
                    s = math.sin(thetas[b, i, j] / 2)
                    stride = 1 << (n - 1 - j)
                    for base in range(0, dim, 2 * stride):
                        for k in range(base, base + stride):
                            a0 = psi[k]
                            a1 = psi[k + stride]
                            psi[k] = c * a0 - s * a1
                            psi[k + stride] = s * a0 + c * a1
            for q in range(measured.shape[0]):
                bit = 1 << (n - 1 - measured[q])
                acc = 0.0
                for k in range(dim):
                    p = psi[k] * psi[k]
                    if k & bit:
                        acc -= p
                    else:
                        acc += p
                out[b, q] = acc
        return out

    return kernel


_numba_kernel = _build_numba_kernel()
DEFAULT_BACKEND = "numba" if _numba_kernel is not None else "numpy"


def _theta_of(params) -> np.ndarray:
    return params.theta if isinstance(params, FastParams) else np.asarray(params, dtype=np.float64)


def run_vqc(cfg: VqcConfig, input_angles, params) -> np.ndarray:
    """Encode ``input_angles``, apply the variational layers and return the measured ``<Z>``."""
    x = np.asarray(input_angles, dtype=np.float64)
    theta = _theta_of(params)
    if x.shape != (cfg.num_qubits,):
        raise ArgumentError(f"input_angles must have length {cfg.num_qubits}, got shape {x.shape}")
    if theta.shape != cfg.shape:
        raise ArgumentError(f"theta must be {cfg.shape}, got {theta.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(theta))):
        raise ArgumentError("circuit angles must be finite")
    return simulate_batch(cfg, x[None, :], theta[None, :, :])[0]


def param_shift_batch(cfg: VqcConfig, inputs: np.ndarray, thetas: np.ndarray, want_input_grad: bool = False):
    """Parameter-shift gradients for a batch of circuits.

    Returns ``(d_theta, d_input)`` with shapes ``(batch, m, layers, n)`` and
    ``(batch, m, n)``; ``d_input`` is None unless requested. Every shifted
    circuit of every batch element goes through one :func:`simulate_batch` call.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    batch = inputs.shape[0]
    nl, n = cfg.shape
    p = nl * n
    m = len(cfg.measured_qubits)

    eye_t = np.eye(p).reshape(p, nl, n) * _HALF_PI
    theta_shift = np.concatenate([eye_t, -eye_t])  # (2p, l, n)
    k = 2 * p
    if want_input_grad:
        eye_x = np.eye(n) * _HALF_PI
        input_shift = np.concatenate([np.zeros((k, n)), eye_x, -eye_x])
        theta_shift = np.concatenate([theta_shift, np.zeros((2 * n, nl, n))])
        k += 2 * n
    else:
        input_shift = np.zeros((k, n))

    all_inputs = (inputs[:, None, :] + input_shift[None]).reshape(batch * k, n)
    all_thetas = (thetas[:, None, :, :] + theta_shift[None]).reshape(batch * k, nl, n)
    values = simulate_batch(cfg, all_inputs, all_thetas).reshape(batch, k, m)

    d_theta = (values[:, :p] - values[:, p:2 * p]) / 2
    d_theta = d_theta.transpose(0, 2, 1).reshape(batch, m, nl, n)
    d_input = None
    if want_input_grad:
        lo = 2 * p
        d_input = ((values[:, lo:lo + n] - values[:, lo + n:]) / 2).transpose(0, 2, 1)
    return d_theta, d_input


def param_shift_gradient(cfg: VqcConfig, input_angles, params, want_input_grad: bool = False) -> VqcGradient:
    x = np.asarray(input_angles, dtype=np.float64)
    theta = _theta_of(params)
    # validates shapes and finiteness
    run_vqc(cfg, x, theta)
    d_theta, d_input = param_shift_batch(cfg, x[None], theta[None], want_input_grad)
    return VqcGradient(d_theta[0], None if d_input is None else d_input[0])
