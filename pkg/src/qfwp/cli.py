"""Command-line entry point: ``qfwp {gen-data,train-ts,train-rl,eval}``.

Settings resolve in three layers: per-task defaults, then an optional config
file of ``key = value`` lines grouped under any ``[section]`` headers, then
command-line flags. Exit codes: 0 success, 2 usage or configuration error,
1 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import signal
import sys
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .a3c import A3cConfig, evaluate_greedy, train_a3c, write_training_log
from .checkpoint import checkpoint_load, checkpoint_save
from .errors import ArgumentError, ConfigurationError, QfwpError
from .minigrid import NUM_ACTIONS, OBS_DIM, env_reset
from .model import QfwpModel, rl_config, timeseries_config
from .timeseries import (
    TASKS as TS_TASKS,
    NarmaConfig,
    PendulumConfig,
    gen_bessel_j2,
    gen_narma,
    integrate_pendulum,
    make_dataset,
    minmax_normalize,
    mse,
    task_series,
    train_timeseries,
    write_predictions,
)

RL_TASKS = ("minigrid5", "minigrid6")
ALL_TASKS = TS_TASKS + RL_TASKS
GRAD_MODE_FLAGS = {"all-steps": "all_steps", "last-step": "last_step_only"}
REPORT_EPOCHS = (1, 15, 30, 100)


@dataclass
class RunConfig:
    task: str = "narma5"
    seed: int = 0
    out: str = "runs"
    qubits: int = 8
    layers: int = 2
    grad_mode: str = "all_steps"
    # time series
    epochs: int = 100
    lr: float = None  # task default when unset
    batch: int = 16
    window: int = 4
    normalize: bool = False
    # reinforcement learning
    workers: int = 8
    episodes: int = 30000
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    gamma: float = 0.9
    lookup_steps: int = 5
    score_window: int = 500
    clip_norm: float = None
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.task not in ALL_TASKS:
            raise ConfigurationError(f"task must be one of {ALL_TASKS}, got {self.task!r}")
        if self.lr is None:
            self.lr = default_lr(self.task)
        if self.grad_mode in GRAD_MODE_FLAGS:
            self.grad_mode = GRAD_MODE_FLAGS[self.grad_mode]
        for name in ("epochs", "batch", "window", "workers", "episodes", "score_window", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr < 0:
            raise ConfigurationError(f"lr must be >= 0, got {self.lr}")

    @property
    def is_rl(self) -> bool:
        return self.task in RL_TASKS

    @property
    def grid_size(self) -> int:
        return int(self.task[-1])

    def model_config(self):
        if self.is_rl:
            return rl_config(self.seed, num_layers=self.layers, num_qubits=self.qubits, grad_mode=self.grad_mode)
        return timeseries_config(self.seed, num_qubits=self.qubits, num_layers=self.layers, grad_mode=self.grad_mode)

    def a3c_config(self) -> A3cConfig:
        return A3cConfig(
            lr=self.lr, lookup_steps=self.lookup_steps, gamma=self.gamma, num_workers=self.workers,
            entropy_coef=self.entropy_coef, value_coef=self.value_coef, max_episodes=self.episodes,
            score_window=self.score_window, grid_size=self.grid_size, clip_norm=self.clip_norm, seed=self.seed,
        )

    def write(self, path) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        parser["run"] = {f.name: _format_value(getattr(self, f.name)) for f in dataclasses.fields(self)}
        with open(path, "w") as fh:
            parser.write(fh)


def default_lr(task: str) -> float:
    if task in RL_TASKS:
        return 1e-4
    return 3e-3 if task == "shm" else 1e-3


def _format_value(value) -> str:
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(name: str, raw: str):
    field = {f.name: f for f in dataclasses.fields(RunConfig)}.get(name)
    if field is None:
        raise ConfigurationError(f"unknown config key {name!r}")
    raw = raw.strip()
    if raw.lower() == "none":
        return None
    default = field.default
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or name in ("lr", "clip_norm"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return raw


def read_config_file(path) -> dict:
    """Flatten every section of an INI-style file into one ``{key: value}`` dict."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser[section].items():
            key = key.replace("-", "_")
            values[key] = _coerce(key, raw)
    return values


def resolve_config(args, command: str) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in dataclasses.fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = RunConfig(**values)
    if command == "train-ts" and cfg.is_rl:
        raise ConfigurationError(f"train-ts needs a time-series task, got {cfg.task!r}")
    if command == "train-rl" and not cfg.is_rl:
        raise ConfigurationError(f"train-rl needs a minigrid task, got {cfg.task!r}")
    cfg.model_config().vqc()  # surface circuit-shape errors before any work starts
    return cfg


def make_run_dir(cfg: RunConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = Path(cfg.out) / f"{cfg.task}-seed{cfg.seed}-{stamp}"
    run_dir, k = base, 1
    while run_dir.exists():
        k += 1
        run_dir = base.with_name(f"{base.name}-{k}")
    run_dir.mkdir(parents=True)
    cfg.write(run_dir / "config.ini")
    return run_dir


def _write_metadata(run_dir: Path, cfg: RunConfig, **fields) -> None:
    meta = {"qfwp_version": __version__, "task": cfg.task, "argv": sys.argv[1:], **fields}
    (run_dir / "metadata.json").write_text(json.dumps(meta, indent=1) + "\n")


def ts_dataset(cfg: RunConfig):
    series = task_series(cfg.task)
    if cfg.normalize:
        series = minmax_normalize(series)
    return make_dataset(series, N=cfg.window)


# --- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    task = args.task or "narma5"
    if task not in TS_TASKS:
        raise ConfigurationError(f"gen-data supports {TS_TASKS}, got {task!r}")
    if task == "shm":
        t, _, omega = integrate_pendulum(PendulumConfig())
        header, rows = ["t", "value"], zip(t, omega)
    elif task == "bessel":
        values = gen_bessel_j2()
        header, rows = ["t", "value"], zip(np.linspace(0.0, 20.0, len(values)), values)
    else:
        u, y = gen_narma(NarmaConfig(n0=int(task[5:])))
        header, rows = ["t", "u", "y"], ((k, a, b) for k, (a, b) in enumerate(zip(u, y)))
    out = Path(args.out or f"{task}.csv")
    try:
        with open(out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([row[0] if isinstance(row[0], int) else repr(float(row[0]))]
                           + [repr(float(v)) for v in row[1:]])
    except OSError as exc:
        raise OSError(f"cannot write {out}: {exc.strerror or exc}") from None
    print(f"wrote {out}")
    return 0


def format_epoch_table(log, epochs: int) -> str:
    lines = [f"{'Epoch':>6}  {'Train':>10}  {'Test':>10}"]
    for e in sorted({e for e in REPORT_EPOCHS if e <= epochs} | {epochs}):
        _, tr, te = log.at(e)
        lines.append(f"{e:>6}  {tr:>10.3e}  {te:>10.3e}")
    return "\n".join(lines)


def cmd_train_ts(args) -> int:
    cfg = resolve_config(args, "train-ts")
    dataset = ts_dataset(cfg)
    model = QfwpModel(cfg.model_config())
    run_dir = make_run_dir(cfg)
    _write_metadata(run_dir, cfg, windows=len(dataset), split_index=dataset.split_index)
    print(f"run directory: {run_dir}")
    log = train_timeseries(model, dataset, epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch, seed=cfg.seed)
    log.write_csv(run_dir / "metrics.csv")
    write_predictions(model, dataset, run_dir / "predictions.csv")
    checkpoint_save(model, run_dir / "checkpoint.json", extra={"run": dataclasses.asdict(cfg)})
    print(format_epoch_table(log, cfg.epochs))
    return 0


def cmd_train_rl(args) -> int:
    cfg = resolve_config(args, "train-rl")
    a3c = cfg.a3c_config()
    model = QfwpModel(cfg.model_config())
    run_dir = make_run_dir(cfg)
    max_steps = env_reset(cfg.grid_size)[0].max_steps
    _write_metadata(run_dir, cfg, grid_size=cfg.grid_size, max_steps=max_steps,
                    obs_dim=OBS_DIM, num_actions=NUM_ACTIONS)
    print(f"run directory: {run_dir}")
    extra = {"run": dataclasses.asdict(cfg)}
    ckpt_path = run_dir / "checkpoint.json"
    stop = threading.Event()
    snapshot_lock = threading.Lock()
    holder = {}

    def on_episode(row, mean, std):
        episode = row[0]
        if episode % cfg.log_every == 0:
            print(f"episode {episode}  rolling_mean {mean:.4f}  rolling_std {std:.4f}", flush=True)
        if cfg.checkpoint_every and episode % cfg.checkpoint_every == 0 and "store" in holder:
            with snapshot_lock:
                replica = QfwpModel(model.config)
                replica.load_parameters(holder["store"].snapshot())
                checkpoint_save(replica, ckpt_path, extra={**extra, "episode": episode})

    def on_signal(signum, frame):
        print("interrupt received; stopping workers", flush=True)
        stop.set()

    previous = signal.signal(signal.SIGINT, on_signal)
    try:
        store = train_a3c(model, a3c, on_episode=on_episode, stop_event=stop,
                          on_start=lambda st: holder.update(store=st))
    finally:
        signal.signal(signal.SIGINT, previous)
    write_training_log(store, run_dir / "training_log.csv")
    with snapshot_lock:
        checkpoint_save(model, ckpt_path, optimizer=store.optimizer,
                        extra={**extra, "episode": len(store.scores), "interrupted": stop.is_set()})
    if store.scores:
        window = [row[1] for row in store.scores[-cfg.score_window:]]
        print(f"episodes {len(store.scores)}  final rolling_mean {np.mean(window):.4f}  "
              f"rolling_std {np.std(window):.4f}")
    if stop.is_set():
        print("stopped early; checkpoint flushed")
    return 0


def _check_compatible(model: QfwpModel, task: str) -> None:
    c = model.config
    if task in RL_TASKS:
        expected = {"kind": "rl", "input_dim": OBS_DIM, "output_dim": NUM_ACTIONS}
    else:
        expected = {"kind": "timeseries", "input_dim": 1, "output_dim": 1}
    wrong = [f"{k}: checkpoint {getattr(c, k)!r}, task {task} expects {v!r}"
             for k, v in expected.items() if getattr(c, k) != v]
    if wrong:
        raise ConfigurationError("checkpoint does not fit task: " + "; ".join(wrong))


def cmd_eval(args) -> int:
    if not args.checkpoint:
        raise ConfigurationError("eval needs --checkpoint")
    model, _, extra = checkpoint_load(args.checkpoint, with_optimizer=True)
    stored = extra.get("run", {})
    task = args.task or stored.get("task")
    if task not in ALL_TASKS:
        raise ConfigurationError(f"task must be one of {ALL_TASKS}, got {task!r}")
    _check_compatible(model, task)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    if task in RL_TASKS:
        episodes = args.episodes or 10
        scores = evaluate_greedy(model, int(task[-1]), episodes)
        mean = float(np.mean(scores))
        summary = {"task": task, "episodes": episodes, "mean_score": mean, "scores": scores}
        (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
        print(f"greedy mean score over {episodes} episodes: {mean!r}")
        return 0
    known = {f.name for f in dataclasses.fields(RunConfig)}
    cfg = RunConfig(**{**{k: v for k, v in stored.items() if k in known}, "task": task})
    dataset = ts_dataset(cfg)
    if dataset.inputs.shape[1] != cfg.window:
        raise ConfigurationError(f"window length {dataset.inputs.shape[1]} != {cfg.window}")
    train_mse, test_mse = mse(model, *dataset.train), mse(model, *dataset.test)
    write_predictions(model, dataset, out_dir / "eval_predictions.csv")
    summary = {"task": task, "train_mse": train_mse, "test_mse": test_mse}
    (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"train_mse {train_mse!r}\ntest_mse {test_mse!r}")
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train-ts": cmd_train_ts, "train-rl": cmd_train_rl, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfwp", description="Quantum fast weight programmer experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--task", choices=ALL_TASKS)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file (gen-data) or parent of the run directory")
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch", type=int)
        p.add_argument("--layers", type=int)
        p.add_argument("--qubits", type=int)
        p.add_argument("--grad-mode", dest="grad_mode", choices=sorted(GRAD_MODE_FLAGS))
        p.add_argument("--workers", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--entropy-coef", dest="entropy_coef", type=float)
        p.add_argument("--score-window", dest="score_window", type=int)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--log-every", dest="log_every", type=int)
        p.add_argument("--checkpoint", help="checkpoint to evaluate (eval)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, ArgumentError) as exc:
        print(f"qfwp: error: {exc}", file=sys.stderr)
        return 2
    except (QfwpError, OSError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"qfwp: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
