"""Run configuration: strict JSON with model / train / data sections."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import DEFAULT_SPLIT, SynthParams
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

# dataset-derived fields are filled in at run time, never read from a file
_DERIVED = ("n_nodes", "d_in", "d_out", "steps_per_day")
MODEL_KEYS = tuple(f.name for f in dataclasses.fields(ModelConfig) if f.name not in _DERIVED)
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig))
SYNTH_KEYS = tuple(f.name for f in dataclasses.fields(SynthParams))
DATA_KEYS = ("path", "synth", "split")


def _strict(section, allowed, where):
    if not isinstance(section, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{where}': {', '.join(unknown)}")
    return section


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    path: str | None = None
    synth: SynthParams | None = None
    split: tuple = DEFAULT_SPLIT

    def model_config(self, n_nodes, d_in, steps_per_day):
        return ModelConfig(n_nodes=n_nodes, d_in=d_in, steps_per_day=steps_per_day, **self.model).validate()

    def to_dict(self):
        data = {"split": list(self.split)}
        if self.path is not None:
            data["path"] = self.path
        if self.synth is not None:
            data["synth"] = dataclasses.asdict(self.synth)
        return {"model": dict(sorted(self.model.items())), "train": self.train.to_dict(), "data": data}


def parse_synth(obj, where="synth"):
    _strict(obj, SYNTH_KEYS, where)
    try:
        return SynthParams(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad '{where}' section: {exc}") from None


def parse_run_config(obj):
    _strict(obj, ("model", "train", "data"), "<root>")
    model = dict(_strict(obj.get("model", {}), MODEL_KEYS, "model"))
    try:
        ModelConfig(**model).validate()
    except TypeError as exc:
        raise ConfigError(f"bad 'model' section: {exc}") from None
    train_obj = _strict(obj.get("train", {}), TRAIN_KEYS, "train")
    try:
        train = TrainConfig(**train_obj).validate()
    except TypeError as exc:
        raise ConfigError(f"bad 'train' section: {exc}") from None
    data = _strict(obj.get("data", {}), DATA_KEYS, "data")
    if ("path" in data) == ("synth" in data):
        raise ConfigError("'data' needs exactly one of 'path' or 'synth'")
    split = tuple(float(x) for x in data.get("split", DEFAULT_SPLIT))
    if len(split) != 3:
        raise ConfigError("'data.split' must list three ratios")
    synth = parse_synth(data["synth"], "data.synth") if "synth" in data else None
    return RunConfig(model, train, data.get("path"), synth, split)


def load_run_config(path):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return parse_run_config(obj)
