"""Benchmark series (damped pendulum, Bessel J2, NARMA), windowing and the training harness."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigurationError
from .model import QfwpModel, ts_backward, ts_forward
from .nn import AdamState, adam_apply

TRAIN_FRACTION = 0.67


@dataclass(frozen=True)
class PendulumConfig:
    g: float = 9.81
    b: float = 0.15
    length: float = 1.0
    m: float = 1.0
    theta_init: float = 0.0
    omega_init: float = 3.0
    dt: float = 0.1
    duration: float = 20.0

    def __post_init__(self):
        if not (self.dt > 0 and self.duration > 0):
            raise ConfigurationError("dt and duration must be positive")


def integrate_pendulum(cfg: PendulumConfig) -> tuple:
    """RK4 on theta'' + (b/m) theta' + (g/l) sin theta = 0; returns ``(t, theta, omega)`` samples."""
    steps = int(round(cfg.duration / cfg.dt))
    damp = cfg.b / cfg.m
    stiff = cfg.g / cfg.length

    def deriv(th, om):
        return om, -damp * om - stiff * math.sin(th)

    theta = np.empty(steps + 1)
    omega = np.empty(steps + 1)
    th, om = cfg.theta_init, cfg.omega_init
    theta[0], omega[0] = th, om
    h = cfg.dt
    for k in range(1, steps + 1):
        k1t, k1o = deriv(th, om)
        k2t, k2o = deriv(th + h / 2 * k1t, om + h / 2 * k1o)
        k3t, k3o = deriv(th + h / 2 * k2t, om + h / 2 * k2o)
        k4t, k4o = deriv(th + h * k3t, om + h * k3o)
        th += h / 6 * (k1t + 2 * k2t + 2 * k3t + k4t)
        om += h / 6 * (k1o + 2 * k2o + 2 * k3o + k4o)
        theta[k], omega[k] = th, om
    return np.arange(steps + 1) * h, theta, omega


def gen_damped_shm(cfg: PendulumConfig = PendulumConfig()) -> np.ndarray:
    """Angular velocity of the damped pendulum at every sample instant."""
    return integrate_pendulum(cfg)[2]


def bessel_j(order: int, x: float) -> float:
    """Power series for J_order(x), integer order, summed until a term drops below 1e-16."""
    half = x / 2
    term = half ** order / math.factorial(order)
    total = term
    m = 0
    while abs(term) >= 1e-16:
        m += 1
        term *= -half * half / (m * (m + order))
        total += term
    return total


def gen_bessel_j2(x_max: float = 20.0, num_points: int = 201) -> np.ndarray:
    if not x_max > 0:
        raise ArgumentError("x_max must be positive")
    return np.array([bessel_j(2, x) for x in np.linspace(0.0, x_max, num_points)])


@dataclass(frozen=True)
class NarmaConfig:
    n0: int = 5
    length: int = 300
    alpha: float = 0.3
    beta: float = 0.05
    gamma: float = 1.5
    delta: float = 0.1
    input_freqs: tuple = (2.11, 3.73, 4.11)
    period: float = 100.0

    def __post_init__(self):
        if self.n0 not in (5, 10):
            raise ConfigurationError(f"n0 must be 5 or 10, got {self.n0}")
        if self.length <= self.n0:
            raise ConfigurationError("length must exceed n0")


def gen_narma(cfg: NarmaConfig) -> tuple:
    """NARMA input ``u`` and output ``y``; ``y`` is zero during the n0-step warm-up."""
    t = np.arange(cfg.length)
    a, b, c = (np.sin(2 * np.pi * f * t / cfg.period) for f in cfg.input_freqs)
    u = 0.1 * (a * b * c + 1)
    y = np.zeros(cfg.length)
    n0 = cfg.n0
    for k in range(n0 - 1, cfg.length - 1):
        recent = y[k - n0 + 1:k + 1].sum()
        y[k + 1] = cfg.alpha * y[k] + cfg.beta * y[k] * recent + cfg.gamma * u[k - n0 + 1] * u[k] + cfg.delta
    return u, y


@dataclass
class TimeSeriesDataset:
    inputs: np.ndarray  # (windows, N)
    targets: np.ndarray  # (windows,)
    split_index: int  # first test window

    def __len__(self):
        return len(self.targets)

    @property
    def train(self) -> tuple:
        return self.inputs[: self.split_index], self.targets[: self.split_index]

    @property
    def test(self) -> tuple:
        return self.inputs[self.split_index:], self.targets[self.split_index:]


def minmax_normalize(series) -> np.ndarray:
    s = np.asarray(series, dtype=np.float64)
    lo, hi = s.min(), s.max()
    return (s - lo) / (hi - lo) if hi > lo else np.zeros_like(s)


def make_dataset(series, N: int = 4, train_fraction: float = TRAIN_FRACTION) -> TimeSeriesDataset:
    """Stride-1 windows of ``N`` values, each targeting the value right after it."""
    s = np.asarray(series, dtype=np.float64)
    if N < 1 or s.ndim != 1 or len(s) <= N:
        raise ArgumentError(f"need a 1-d series longer than N={N}, got shape {s.shape}")
    count = len(s) - N
    inputs = np.lib.stride_tricks.sliding_window_view(s, N)[:count].copy()
    return TimeSeriesDataset(inputs, s[N:].copy(), int(math.floor(train_fraction * count)))


@dataclass
class MetricLog:
    rows: list = field(default_factory=list)  # (epoch, train_mse, test_mse)

    def append(self, epoch, train_mse, test_mse):
        self.rows.append((epoch, train_mse, test_mse))

    def at(self, epoch) -> tuple:
        for row in self.rows:
            if row[0] == epoch:
                return row
        raise KeyError(epoch)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_mse", "test_mse"])
            for epoch, tr, te in self.rows:
                w.writerow([epoch, repr(tr), repr(te)])


def predict(model: QfwpModel, inputs) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) == 0:
        return np.zeros(0)
    return ts_forward(model, inputs)[0]


def mse(model: QfwpModel, inputs, targets) -> float:
    if len(targets) == 0:
        return float("nan")
    err = predict(model, inputs) - targets
    return float(np.mean(err * err))


def train_timeseries(model: QfwpModel, dataset: TimeSeriesDataset, epochs: int = 100, lr: float = 1e-3,
                     batch_size: int = 16, seed: int = 0, on_epoch=None) -> MetricLog:
    """Minibatch Adam on the mean squared error of one-step predictions.

    The train MSE of an epoch averages each window's loss as seen by the batch
    that processed it (before that batch's update); the test MSE is evaluated
    after the epoch. ``on_epoch(epoch, train_mse, test_mse)`` is called per epoch.
    """
    x_train, y_train = dataset.train
    x_test, y_test = dataset.test
    if len(y_train) == 0:
        raise ArgumentError("dataset has no training windows")
    rng = np.random.default_rng(seed)
    opt = AdamState(lr=lr)
    params = model.parameters()
    log = MetricLog()
    per_window = np.empty(len(y_train))
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y_train))
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            pred, cache = ts_forward(model, x_train[idx])
            err = pred - y_train[idx]
            per_window[idx] = err * err
            grads = ts_backward(model, cache, 2 * err / len(idx))
            adam_apply(params, grads, opt)
        train = float(np.mean(per_window))
        test = mse(model, x_test, y_test)
        log.append(epoch, train, test)
        if on_epoch is not None:
            on_epoch(epoch, train, test)
    return log


def write_predictions(model: QfwpModel, dataset: TimeSeriesDataset, path) -> None:
    preds = predict(model, dataset.inputs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "ground_truth", "prediction", "is_test"])
        for i, (gt, p) in enumerate(zip(dataset.targets, preds)):
            w.writerow([i, repr(float(gt)), repr(float(p)), int(i >= dataset.split_index)])


TASKS = ("shm", "bessel", "narma5", "narma10")


def task_series(task: str) -> np.ndarray:
    if task == "shm":
        return gen_damped_shm(PendulumConfig())
    if task == "bessel":
        return gen_bessel_j2()
    if task in ("narma5", "narma10"):
        return gen_narma(NarmaConfig(n0=int(task[5:])))[1]
    raise ConfigurationError(f"unknown time-series task {task!r}")
