"""Flat ``key=value`` configuration files (``#`` starts a comment)."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig

# loss weights are flattened with these names
_LOSS_KEYS = {"loss_box": "box", "loss_obj": "obj", "loss_cls": "cls",
              "obj_pos_weight": "obj_pos_weight", "loss_l1": "l1"}


class ConfigFileError(ValueError):
    pass


def _coerce(value: str, like, where: str):
    try:
        if isinstance(like, bool):
            if value.lower() in ("1", "true", "yes"):
                return True
            if value.lower() in ("0", "false", "no"):
                return False
            raise ValueError(value)
        return type(like)(value)
    except ValueError:
        raise ConfigFileError(f"{where}: cannot read {value!r} as {type(like).__name__}") from None


def known_keys() -> list[str]:
    train = [f.name for f in fields(TrainConfig) if f.name != "loss"]
    model = [f.name for f in fields(ModelConfig) if f.name != "seed"]
    return sorted(set(train) | set(model) | set(_LOSS_KEYS))


def parse(text: str, source: str = "<config>") -> tuple[TrainConfig, ModelConfig]:
    """Fill a TrainConfig and a ModelConfig; ``seed`` drives both."""
    tc, mc = TrainConfig(), ModelConfig()
    train_keys = {f.name for f in fields(TrainConfig)} - {"loss"}
    model_keys = {f.name for f in fields(ModelConfig)}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{n}"
        if "=" not in line:
            raise ConfigFileError(f"{where}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _LOSS_KEYS:
            attr = _LOSS_KEYS[key]
            setattr(tc.loss, attr, _coerce(value, getattr(tc.loss, attr), where))
        elif key in train_keys or key in model_keys:
            if key in train_keys:
                setattr(tc, key, _coerce(value, getattr(tc, key), where))
            if key in model_keys:
                setattr(mc, key, _coerce(value, getattr(mc, key), where))
        else:
            raise ConfigFileError(f"{where}: unknown key {key!r}")
    try:
        tc.validate()
        mc.validate()
    except ValueError as exc:
        raise ConfigFileError(f"{source}: {exc}") from None
    return tc, mc


def load(path) -> tuple[TrainConfig, ModelConfig]:
    return parse(Path(path).read_text(), str(path))


def dump(tc: TrainConfig, mc: ModelConfig) -> str:
    lines = [f"{f.name}={getattr(tc, f.name)}" for f in fields(TrainConfig) if f.name != "loss"]
    lines += [f"{k}={getattr(tc.loss, a)}" for k, a in _LOSS_KEYS.items()]
    lines += [f"{f.name}={getattr(mc, f.name)}" for f in fields(ModelConfig) if f.name != "seed"]
    return "\n".join(lines)


__all__ = ["ConfigFileError", "dump", "known_keys", "load", "parse"]
