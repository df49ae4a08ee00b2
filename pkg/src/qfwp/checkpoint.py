"""JSON checkpoints for :class:`QfwpModel`.

Floats are written with Python's shortest round-trip repr, so a save/load
cycle reproduces every parameter bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .model import ModelConfig, QfwpModel
from .nn import AdamState

FORMAT_VERSION = 1


def _array(value, expected_shape, field):
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"not a numeric array ({exc})", field) from None
    if arr.shape != tuple(expected_shape):
        raise FormatError(f"expected shape {tuple(expected_shape)}, found {arr.shape}", field)
    if not np.all(np.isfinite(arr)):
        raise FormatError("non-finite value", field)
    return arr


def model_to_dict(model: QfwpModel, optimizer: AdamState = None, extra: dict = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seeds": {"model": model.config.seed},
        "theta0": model.fast.theta0.tolist(),
        "theta": model.fast.theta.tolist(),
        "layers": {
            name: {"activation": layer.activation, "weights": layer.weights.tolist(), "bias": layer.bias.tolist()}
            for name, layer in model.layers().items()
        },
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
            "step_count": optimizer.step_count,
            "first_moment": {k: v.tolist() for k, v in optimizer.first_moment.items()},
            "second_moment": {k: v.tolist() for k, v in optimizer.second_moment.items()},
        }
    if extra:
        doc["extra"] = extra
    return doc


def model_from_dict(doc: dict) -> tuple:
    """Returns ``(model, optimizer_or_None, extra)``."""
    if not isinstance(doc, dict):
        raise FormatError("top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported version {doc.get('format_version')!r}", "format_version")
    try:
        config = ModelConfig(**doc["config"])
        model = QfwpModel(config)
    except KeyError as exc:
        raise FormatError(f"missing key {exc}", "config") from None
    except (TypeError, ConfigurationError, ValueError) as exc:
        raise FormatError(str(exc), "config") from None

    shape = model.cfg.shape
    for key in ("theta0", "theta"):
        if key not in doc:
            raise FormatError("missing", key)
    model.fast.theta0 = _array(doc["theta0"], shape, "theta0")
    model.fast.theta = _array(doc["theta"], shape, "theta")

    stored = doc.get("layers")
    if not isinstance(stored, dict):
        raise FormatError("missing or not an object", "layers")
    layers = model.layers()
    if set(stored) != set(layers):
        raise FormatError(f"expected layers {sorted(layers)}, found {sorted(stored)}", "layers")
    for name, layer in layers.items():
        entry = stored[name]
        if entry.get("activation", layer.activation) != layer.activation:
            raise FormatError(f"expected {layer.activation!r}", f"layers.{name}.activation")
        layer.weights[...] = _array(entry.get("weights"), layer.weights.shape, f"layers.{name}.weights")
        layer.bias[...] = _array(entry.get("bias"), layer.bias.shape, f"layers.{name}.bias")

    optimizer = None
    if "optimizer" in doc:
        opt = doc["optimizer"]
        params = model.parameters()
        optimizer = AdamState(opt["lr"], opt["beta1"], opt["beta2"], opt["epsilon"], int(opt["step_count"]))
        for slot in ("first_moment", "second_moment"):
            target = getattr(optimizer, slot)
            for k, v in opt.get(slot, {}).items():
                if k not in params:
                    raise FormatError("unknown parameter", f"optimizer.{slot}.{k}")
                target[k] = _array(v, params[k].shape, f"optimizer.{slot}.{k}")
    return model, optimizer, doc.get("extra", {})


def checkpoint_save(model: QfwpModel, path, optimizer: AdamState = None, extra: dict = None) -> Path:
    path = Path(path)
    text = json.dumps(model_to_dict(model, optimizer, extra), indent=1)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def checkpoint_load(path, with_optimizer: bool = False):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from None
    model, optimizer, extra = model_from_dict(doc)
    if with_optimizer:
        return model, optimizer, extra
    return model
