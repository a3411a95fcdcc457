"""Run configuration: one JSON document with a section per subsystem.

Every field has a default, unknown keys are rejected, and
``RunConfig.from_dict(cfg.to_dict()) == cfg`` holds for every config. The
library defaults follow the reference protocol; :data:`PRESETS` holds the
reduced settings that make desk-scale CPU runs finish in minutes.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .mri import ConfigError


@dataclass
class DatasetSection:
    slices: int = 240
    size: list = field(default_factory=lambda: [64, 64])
    coils: int = 4
    seed: int = 0
    noise: float = 0.01
    R: float = 4
    center_fraction: float = 0.06


@dataclass
class ModelSection:
    method: str = "edsr-unrolled"
    unroll_n: int = 5
    base_channels: int = 32
    residual_blocks_per_stage: int = 2
    res_scale: float = 0.1
    weight_init_seed: int = 0
    cg_iterations: int = 10
    lam: float = 0.05


@dataclass
class TrainSection:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 3e-5
    lr_floor: float = 0.1
    R_list: list = field(default_factory=lambda: [4, 6])
    seed: int = 0
    freeze_lambda: bool = False
    val_R: float = 4
    max_train_slices: int | None = None


@dataclass
class CSSection:
    lambda_dc: float = 1.0
    lambda_tv: float = 1e-3
    tv_epsilon: float = 1e-6
    step_size: float = 0.5
    iterations: int = 500
    backtrack: bool = True
    tune_grid: list = field(default_factory=lambda: [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    tune_slices: int = 10


@dataclass
class DipSection:
    alpha: float = 0.5
    steps: int = 2000
    eta_sigma: float = 0.1
    mc_samples_final: int = 8
    lr: float = 3e-3
    seed: int = 0
    base_channels: int = 8
    residual_blocks_per_stage: int = 1


@dataclass
class EvalSection:
    split: str = "test"
    R: float = 4
    threshold: float = 0.6
    max_slices: int | None = None
    jobs: int | None = None


SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "train": TrainSection,
    "cs": CSSection,
    "dip": DipSection,
    "eval": EvalSection,
}

PRESETS = {
    # Reference protocol values (base width 32, lr 3e-5, batch 32).
    "reference": {},
    # Single-core desk budget: narrow network, larger steps, small batches.
    "fast": {
        "model": {"base_channels": 8, "residual_blocks_per_stage": 1},
        "train": {"epochs": 20, "batch_size": 4, "lr": 1e-3},
    },
}


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    cs: CSSection = field(default_factory=CSSection)
    dip: DipSection = field(default_factory=DipSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        return cls().merged(doc)

    def merged(self, doc, source="config"):
        """A copy with the sections/keys of ``doc`` overriding this config."""
        if not isinstance(doc, dict):
            raise ConfigError(f"{source}: top level must be a JSON object")
        out = copy.deepcopy(self)
        for name, values in doc.items():
            if name not in SECTIONS:
                raise ConfigError(f"{source}: unknown section {name!r}; expected one of {sorted(SECTIONS)}")
            if not isinstance(values, dict):
                raise ConfigError(f"{source}: section {name!r} must be an object")
            section = getattr(out, name)
            known = {f.name for f in fields(section)}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"{source}: unknown key {name}.{key}")
                setattr(section, key, value)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, directory, name="resolved_config.json"):
        path = Path(directory) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path


def load_config_file(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    RunConfig.from_dict(doc)  # validates keys
    return doc


def build(cls, section, **overrides):
    """Instantiate ``cls`` from the same-named fields of a config section."""
    d = vars(section)
    kwargs = {f.name: d[f.name] for f in fields(cls) if f.name in d}
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def preset(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return RunConfig().merged(PRESETS[name], source=f"preset {name}")
