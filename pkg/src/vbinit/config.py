"""Experiment configuration: a flat ``key=value`` file with dotted sections.

Example::

    # toy comparison
    data.source = toy
    data.n = 5000
    arch.layers = deep
    init.name = all
    train.iterations = 2000
    seeds = 1,2,3
    out = runs/toy
"""
from dataclasses import dataclass, field, replace

from .exceptions import ConfigError, ParseError
from .initializers import INITIALIZERS, InitSpec
from .train import AnnealSchedule, TrainConfig

__all__ = [
    "ARCHITECTURES",
    "ExperimentConfig",
    "parse_config",
    "config_from_mapping",
    "load_config",
    "parse_layers",
    "with_overrides",
]

ARCHITECTURES = {
    "shallow": "dense:100",
    "deep": "dense:100,dense:100,dense:100,dense:100",
    "conv": "conv:16:3:1:1,conv:32:3:1:1",
}


def parse_layers(text):
    """``"dense:100,conv:16:3:1:1"`` or an architecture name -> hidden-layer list."""
    text = ARCHITECTURES.get(text.strip(), text)
    hidden = []
    for item in filter(None, (t.strip() for t in text.split(","))):
        parts = item.split(":")
        try:
            if parts[0] == "dense" and len(parts) == 2:
                hidden.append(int(parts[1]))
            elif parts[0] == "conv" and len(parts) == 5:
                out_c, k, stride, pad = map(int, parts[1:])
                hidden.append(("conv", out_c, k, stride, pad))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"bad layer spec {item!r}; use dense:W or conv:C:K:S:P") from None
    return hidden


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


@dataclass
class ExperimentConfig:
    source: str = "toy"
    task: str = "regression"
    n_toy: int = 5000
    label_columns: int = 1
    test_fraction: float = 0.1
    input_shape: tuple = None
    layers: str = "deep"
    activation: str = "relu"
    inits: list = field(default_factory=lambda: ["iblm"])
    init: InitSpec = field(default_factory=InitSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        unknown = [name for name in self.inits if name not in INITIALIZERS]
        if unknown:
            raise ConfigError(f"unknown initializer(s) {unknown}; choose from {list(INITIALIZERS)}")
        if not self.inits:
            raise ConfigError("no initializer selected")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.source == "toy" and self.task != "regression":
            raise ConfigError("the toy dataset is a regression task")
        self.hidden = parse_layers(self.layers)
        if any(isinstance(h, tuple) for h in self.hidden) and self.input_shape is None:
            raise ConfigError("conv architectures need data.input_shape=C,H,W")


_TRAIN_KEYS = {
    "lr": ("lr", float), "beta1": ("beta1", float), "beta2": ("beta2", float),
    "epsilon": ("epsilon", float), "batch_size": ("batch_size", int),
    "n_mc": ("n_mc_train", int), "n_mc_test": ("n_mc_test", int),
    "iterations": ("max_iterations", int), "eval_interval": ("eval_interval", int),
    "local_reparam": ("local_reparam", _bool),
}
_ANNEAL_KEYS = {
    "anneal": ("enabled", _bool), "anneal_rate": ("rate", float),
    "anneal_midpoint": ("midpoint", float), "anneal_max_weight": ("max_weight", float),
}
_INIT_KEYS = {
    "batch_size": ("batch_size", int), "alpha": ("alpha", float),
    "noise_variance": ("noise_variance", float), "prior_precision": ("prior_precision", float),
    "lsuv_tol": ("tol", float), "lsuv_max_iter": ("max_iter", int), "n_jobs": ("n_jobs", int),
}


def parse_config(text):
    """Build an :class:`ExperimentConfig` from config-file text."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", row=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = (value, lineno)
    return config_from_mapping(raw)


def config_from_mapping(raw):
    """``raw`` maps dotted keys to ``(value_text, line_number)``."""
    top, train, anneal, init = {}, {}, {}, {}
    for key, (value, lineno) in raw.items():
        section, _, name = key.rpartition(".")
        try:
            if section == "train" and name in _TRAIN_KEYS:
                attr, conv = _TRAIN_KEYS[name]
                train[attr] = conv(value)
            elif section == "train" and name in _ANNEAL_KEYS:
                attr, conv = _ANNEAL_KEYS[name]
                anneal[attr] = conv(value)
            elif section == "init" and name in _INIT_KEYS:
                attr, conv = _INIT_KEYS[name]
                init[attr] = conv(value)
            elif key == "init.name":
                names = [v.strip() for v in value.split(",") if v.strip()]
                top["inits"] = list(INITIALIZERS) if names == ["all"] else names
            elif key == "data.source":
                top["source"] = value
            elif key == "data.task":
                top["task"] = value
            elif key == "data.n":
                top["n_toy"] = int(value)
            elif key == "data.label_columns":
                top["label_columns"] = int(value)
            elif key == "data.test_fraction":
                top["test_fraction"] = float(value)
            elif key == "data.input_shape":
                top["input_shape"] = tuple(_ints(value))
            elif key == "arch.layers":
                top["layers"] = value
            elif key == "arch.activation":
                top["activation"] = value
            elif key == "seeds":
                top["seeds"] = _ints(value)
            elif key == "out":
                top["out_dir"] = value
            else:
                raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r} on line {lineno}: {exc}") from None
    try:
        train_cfg = TrainConfig(**train, anneal=AnnealSchedule(**anneal))
        init_spec = InitSpec(**init)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(init=init_spec, train=train_cfg, **top)


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_overrides(config, seeds=None, inits=None, iterations=None, out_dir=None):
    """Copy of ``config`` with command-line overrides applied."""
    changes = {}
    if seeds is not None:
        changes["seeds"] = list(seeds)
    if inits is not None:
        changes["inits"] = list(inits)
    if out_dir is not None:
        changes["out_dir"] = out_dir
    if iterations is not None:
        changes["train"] = replace(config.train, max_iterations=iterations)
    return replace(config, **changes) if changes else config
