"""Flat run settings: defaults, presets, ``key=value`` files and overrides."""

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .training import OptimizerConfig


@dataclass(frozen=True)
class Settings:
    # model sizes
    dim: int = 100
    hidden: int = 100
    class_dim: int = 0
    init_scale: float = 0.08
    mlp_hidden: int = 100
    nb_alpha: float = 1.0
    kn_discount: float = 0.75
    # optimization
    lr: float = 0.1
    lr_grid: str = "0.5,0.1,0.05,0.01"
    eps: float = 1e-8
    clip_norm: float = 5.0
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 3
    seed: int = 0
    # data
    max_vocab: int = 50000
    min_count: int = 2
    n_dev: int = 5000
    dev_size: int = 0
    n_per_class: int = 0
    # experiments
    models: str = "nb,kn,mlp-nb,disc,gen-shared"
    sizes: str = "5,20,100,1000"
    seeds: str = "0,1,2"
    workers: int = 1
    continual_kinds: str = "disc,gen-indep,gen-shared"
    continual_epochs: int = 5
    class_order: str = ""
    hidden_classes: str = "0"
    zero_shot_mode: str = "both"
    self_train_rounds: int = 3
    self_train_ratio: float = 2.0
    retrain_epochs: int = 5
    vector_init_scale: float = 1.0
    hist_bins: int = 30

    def optimizer(self, **overrides):
        cfg = OptimizerConfig(lr=self.lr, eps=self.eps, clip_norm=self.clip_norm,
                              batch_size=self.batch_size, max_epochs=self.max_epochs,
                              patience=self.patience, seed=self.seed)
        return replace(cfg, **overrides) if overrides else cfg

    def grid(self):
        vals = _floats(self.lr_grid)
        return vals if vals else [self.lr]

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def to_text(self):
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


def _floats(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def ints(text):
    return [int(x) for x in str(text).split(",") if x.strip()]


def names(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


PRESETS = {
    "fixture": {
        "dim": 8, "hidden": 8, "mlp_hidden": 8, "lr": 0.1, "lr_grid": "0.1", "batch_size": 4,
        "max_epochs": 50, "patience": 5, "min_count": 1, "n_dev": 0, "sizes": "2,4",
        "seeds": "0", "continual_epochs": 5, "hist_bins": 10,
    },
    "topics": {
        "dim": 16, "hidden": 16, "mlp_hidden": 32, "lr_grid": "0.1", "max_epochs": 20,
        "patience": 3, "min_count": 2, "n_dev": 400, "sizes": "5,20,100", "seeds": "0,1,2",
        "dev_size": 400,
    },
    "agnews-small": {
        "dim": 50, "hidden": 50, "mlp_hidden": 50, "max_vocab": 20000, "lr_grid": "0.1",
        "max_epochs": 20, "patience": 3, "dev_size": 1000, "n_per_class": 1000,
        "sizes": "5,20,100,1000", "seeds": "0,1,2",
    },
}

_FIELDS = {f.name: f for f in fields(Settings)}


def coerce(key, raw):
    if key not in _FIELDS:
        raise KeyError(f"unknown setting {key!r}")
    kind = type(getattr(Settings(), key))
    if kind is bool:
        return str(raw).lower() in ("1", "true", "yes")
    if kind is str:
        return str(raw)
    return kind(raw)


def parse_pairs(lines):
    out = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load_settings(preset=None, config_file=None, overrides=()):
    """Defaults, then preset, then config file, then ``key=value`` overrides."""
    values = {}
    if preset:
        if preset not in PRESETS:
            raise KeyError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        values.update(PRESETS[preset])
    if config_file:
        with open(config_file, encoding="utf-8") as fh:
            values.update(parse_pairs(fh))
    values.update(parse_pairs(overrides))
    return Settings(**{k: coerce(k, v) for k, v in values.items()})
