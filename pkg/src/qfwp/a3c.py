"""Asynchronous advantage actor-critic for the QFWP agent.

Workers own a private environment, model replica and rng. The only shared
object is a :class:`GlobalStore`: the master copy of the classical parameters
and a single Adam state, read by ``snapshot`` and written by
``apply_gradients``, each atomic under one lock.
"""
from __future__ import annotations

import csv
import math
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigurationError, NumericError, StateError
from .minigrid import NUM_ACTIONS, env_reset, env_step
from .model import ModelConfig, QfwpModel, rl_backward, rl_forward
from .nn import AdamState, adam_apply, dense_backward, dense_forward


@dataclass
class A3cConfig:
    lr: float = 1e-4
    beta1: float = 0.92
    beta2: float = 0.999
    lookup_steps: int = 5
    gamma: float = 0.9
    num_workers: int = 8
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_episodes: int = 30000
    score_window: int = 500
    grid_size: int = 5
    clip_norm: float = None
    seed: int = 0

    def __post_init__(self):
        if self.lookup_steps < 1:
            raise ConfigurationError("lookup_steps must be >= 1")
        if not 0 < self.gamma < 1:
            raise ConfigurationError("gamma must be in (0, 1)")
        if self.num_workers < 1:
            raise ConfigurationError("num_workers must be >= 1")
        if self.score_window < 1:
            raise ConfigurationError("score_window must be >= 1")


@dataclass
class Step:
    obs: np.ndarray
    action: int
    log_prob: float
    value: float
    reward: float
    done: bool


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.steps)


def actor_critic_forward(model: QfwpModel, obs, commit: bool = True) -> tuple:
    """``(logits, value, caches)`` for one observation; caches feed :func:`segment_gradients`."""
    exps, record = rl_forward(model, obs, commit=commit)
    logits, actor_tape = dense_forward(model.actor, exps)
    value, critic_tape = dense_forward(model.critic, exps)
    return logits, float(value[0]), (record, actor_tape, critic_tape)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sample_action(logits, rng: np.random.Generator) -> tuple:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError(f"non-finite logits {logits}")
    logp = log_softmax(logits)
    cdf = np.cumsum(np.exp(logp))
    action = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    action = min(action, len(logits) - 1)
    return action, float(logp[action])


def compute_returns(traj: Trajectory, gamma: float) -> np.ndarray:
    """Discounted n-step returns, bootstrapped from ``traj.bootstrap_value`` unless the last step ended the episode."""
    if len(traj) == 0:
        raise ArgumentError("empty trajectory")
    running = 0.0 if traj.steps[-1].done else traj.bootstrap_value
    out = np.empty(len(traj))
    for t in range(len(traj) - 1, -1, -1):
        running = traj.steps[t].reward + gamma * running
        out[t] = running
    return out


def a3c_loss(traj: Trajectory, returns, logits_per_step, values_per_step,
             value_coef: float = 0.5, entropy_coef: float = 0.01) -> tuple:
    """Actor-critic loss averaged over steps; returns ``(total, parts)``.

    ``parts`` holds the step-averaged ``policy``, ``value`` and ``entropy`` terms
    and the gradients ``d_logits`` (T, actions) and ``d_values`` (T,) of the total.
    The advantage is treated as a constant in the policy term.
    """
    R = np.asarray(returns, dtype=np.float64)
    logits = np.asarray(logits_per_step, dtype=np.float64)
    V = np.asarray(values_per_step, dtype=np.float64)
    T = len(traj)
    if not (len(R) == len(V) == len(logits) == T) or T == 0:
        raise ArgumentError(f"length mismatch: {T} steps, {len(R)} returns, {len(logits)} logits, {len(V)} values")
    actions = np.array([s.action for s in traj.steps])
    logp = log_softmax(logits)
    probs = np.exp(logp)
    adv = R - V
    chosen = logp[np.arange(T), actions]
    entropy = -(probs * logp).sum(axis=1)

    policy = -np.sum(chosen * adv) / T
    value = np.sum(adv * adv) / T
    ent = np.sum(entropy) / T
    total = policy + value_coef * value - entropy_coef * ent

    onehot = np.zeros_like(probs)
    onehot[np.arange(T), actions] = 1.0
    d_logits = -adv[:, None] * (onehot - probs)
    d_logits += entropy_coef * probs * (logp + entropy[:, None])
    d_logits /= T
    d_values = -2.0 * value_coef * adv / T
    parts = {"policy": policy, "value": value, "entropy": ent, "d_logits": d_logits, "d_values": d_values}
    return total, parts


def segment_gradients(model: QfwpModel, traj: Trajectory, caches: list, cfg: A3cConfig) -> tuple:
    """Loss and gradients of every classical parameter for one rollout segment."""
    returns = compute_returns(traj, cfg.gamma)
    logits = np.stack([c[1].out for c in caches])
    values = np.array([s.value for s in traj.steps])
    total, parts = a3c_loss(traj, returns, logits, values, cfg.value_coef, cfg.entropy_coef)
    grads = model.zero_grads()
    d_exp = np.empty((len(caches), len(model.cfg.measured_qubits)))
    for t, (record, actor_tape, critic_tape) in enumerate(caches):
        ga, gw, gb = dense_backward(model.actor, actor_tape, parts["d_logits"][t])
        grads["actor.weights"] += gw
        grads["actor.bias"] += gb
        gc, gw, gb = dense_backward(model.critic, critic_tape, parts["d_values"][t:t + 1])
        grads["critic.weights"] += gw
        grads["critic.bias"] += gb
        d_exp[t] = ga + gc
    rl_backward(model, [c[0] for c in caches], d_exp, grads)
    if cfg.clip_norm:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > cfg.clip_norm:
            for g in grads.values():
                g *= cfg.clip_norm / norm
    return total, grads


class GlobalStore:
    """Shared parameters, shared Adam state and the episode score log."""

    def __init__(self, model: QfwpModel, cfg: A3cConfig):
        self.params = {k: v.copy() for k, v in model.parameters().items()}
        self.optimizer = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
        self.max_episodes = cfg.max_episodes
        self.score_window = cfg.score_window
        self.scores = []  # (episode, score, worker_id, wall_clock_s)
        self.stop_event = threading.Event()
        self._lock = threading.Lock()
        self._window = deque(maxlen=cfg.score_window)
        self._t0 = time.perf_counter()
        self.on_episode = None

    @property
    def step_count(self) -> int:
        return self.optimizer.step_count

    def snapshot(self) -> dict:
        with self._lock:
            return {k: v.copy() for k, v in self.params.items()}

    def apply_gradients(self, grads: dict) -> None:
        with self._lock:
            adam_apply(self.params, grads, self.optimizer)

    def should_stop(self) -> bool:
        return self.stop_event.is_set() or len(self.scores) >= self.max_episodes

    def record_episode(self, score: float, worker_id: int) -> bool:
        """Log a finished episode; False once the episode budget is used up."""
        with self._lock:
            if len(self.scores) >= self.max_episodes or self.stop_event.is_set():
                return False
            row = (len(self.scores) + 1, float(score), worker_id, time.perf_counter() - self._t0)
            self.scores.append(row)
            self._window.append(float(score))
            mean, std = float(np.mean(self._window)), float(np.std(self._window))
            callback = self.on_episode
        if callback is not None:
            callback(row, mean, std)
        return True


def apply_gradients(store: GlobalStore, grads: dict) -> GlobalStore:
    store.apply_gradients(grads)
    return store


def score_report(store: GlobalStore, window: int = None) -> tuple:
    """Mean and population std of the last ``window`` episode scores."""
    window = store.score_window if window is None else window
    scores = [row[1] for row in store.scores[-window:]]
    if not scores:
        raise StateError("no episodes recorded yet")
    return float(np.mean(scores)), float(np.std(scores))


def rolling_stats(scores, window: int) -> tuple:
    """Trailing-window mean and std after every episode."""
    scores = np.asarray(scores, dtype=np.float64)
    c1 = np.concatenate([[0.0], np.cumsum(scores)])
    c2 = np.concatenate([[0.0], np.cumsum(scores * scores)])
    idx = np.arange(1, len(scores) + 1)
    lo = np.maximum(idx - window, 0)
    count = idx - lo
    mean = (c1[idx] - c1[lo]) / count
    var = np.maximum((c2[idx] - c2[lo]) / count - mean * mean, 0.0)
    return mean, np.sqrt(var)


def worker_loop(worker_id: int, store: GlobalStore, model_config: ModelConfig, cfg: A3cConfig) -> None:
    rng = np.random.default_rng([cfg.seed, worker_id])
    local = QfwpModel(model_config)
    env, obs = env_reset(cfg.grid_size, cfg.seed)
    local.reset_fast()
    while not store.should_stop():
        local.load_parameters(store.snapshot())
        traj, caches = Trajectory(), []
        done = False
        for _ in range(cfg.lookup_steps):
            logits, value, cache = actor_critic_forward(local, obs)
            action, logp = sample_action(logits, rng)
            next_obs, reward, done = env_step(env, action)
            traj.steps.append(Step(obs, action, logp, value, reward, done))
            caches.append(cache)
            obs = next_obs
            if done:
                break
        if not done:
            traj.bootstrap_value = actor_critic_forward(local, obs, commit=False)[1]
        _, grads = segment_gradients(local, traj, caches, cfg)
        store.apply_gradients(grads)
        if done:
            if not store.record_episode(traj.steps[-1].reward, worker_id):
                return
            env, obs = env_reset(cfg.grid_size, cfg.seed)
            local.reset_fast()


def train_a3c(model: QfwpModel, cfg: A3cConfig, on_episode=None, stop_event: threading.Event = None,
              on_start=None) -> GlobalStore:
    """Run workers until ``cfg.max_episodes`` episodes are logged; trained weights are loaded back into ``model``.

    With one worker the loop runs in the calling thread and is bit-reproducible.
    ``on_start(store)`` runs once before any worker starts.
    """
    store = GlobalStore(model, cfg)
    store.on_episode = on_episode
    if stop_event is not None:
        store.stop_event = stop_event
    if on_start is not None:
        on_start(store)
    if cfg.num_workers == 1:
        worker_loop(0, store, model.config, cfg)
    else:
        errors = []

        def run(wid):
            try:
                worker_loop(wid, store, model.config, cfg)
            except Exception as exc:  # surfaced to the caller below
                errors.append((wid, exc))
                store.stop_event.set()

        threads = [threading.Thread(target=run, args=(w,), name=f"a3c-worker-{w}", daemon=True)
                   for w in range(cfg.num_workers)]
        for th in threads:
            th.start()
        for th in threads:
            while th.is_alive():
                th.join(timeout=0.5)
        if errors:
            wid, exc = errors[0]
            raise RuntimeError(f"worker {wid} failed: {exc!r}") from exc
    model.load_parameters(store.snapshot())
    return store


def evaluate_greedy(model: QfwpModel, grid_size: int, episodes: int = 10) -> list:
    """Scores of argmax-policy episodes; leaves the model's parameters untouched."""
    scores = []
    for _ in range(episodes):
        env, obs = env_reset(grid_size)
        model.reset_fast()
        done, reward = False, 0.0
        while not done:
            logits, _, _ = actor_critic_forward(model, obs)
            obs, reward, done = env_step(env, int(np.argmax(logits)))
        scores.append(reward)
    model.reset_fast()
    return scores


def write_training_log(store: GlobalStore, path, window: int = None) -> None:
    window = store.score_window if window is None else window
    rows = list(store.scores)
    mean, std = rolling_stats([r[1] for r in rows], window) if rows else ([], [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "score", "rolling_mean", "rolling_std", "worker_id", "wall_clock_s"])
        for row, m, s in zip(rows, mean, std):
            w.writerow([row[0], repr(row[1]), repr(float(m)), repr(float(s)), row[2], f"{row[3]:.3f}"])


__all__ = [
    "A3cConfig", "GlobalStore", "NUM_ACTIONS", "Step", "Trajectory", "a3c_loss", "actor_critic_forward",
    "apply_gradients", "compute_returns", "evaluate_greedy", "rolling_stats", "sample_action", "score_report",
    "segment_gradients", "train_a3c", "worker_loop", "write_training_log",
]
