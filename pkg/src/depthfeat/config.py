"""Run configuration: a versioned, validated, JSON-round-trippable record.

Every knob a training or evaluation run depends on lives here, so that a
config file plus a seed pins the run byte for byte.  Loading rejects unknown
keys and re-saving a loaded config reproduces the same document.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .errors import ConfigError

CONFIG_VERSION = 1

DATASET_KINDS = ("synthetic", "tum", "7scenes")
PAIR_OFFSETS = (10, 30)


@dataclass
class DatasetConfig:
    """Where frames come from and how they are calibrated."""

    kind: str = "synthetic"
    path: str | None = None
    scene_seed: int = 7
    n_frames: int = 48
    height: int = 64
    width: int = 64
    fx: float = 64.0
    fy: float = 64.0
    cx: float | None = None
    cy: float | None = None
    max_depth: float = 5.0

    def intrinsics(self) -> tuple[float, float, float, float]:
        """(fx, fy, cx, cy) with principal point defaulting to the center."""
        cx = self.width / 2.0 if self.cx is None else self.cx
        cy = self.height / 2.0 if self.cy is None else self.cy
        return (self.fx, self.fy, cx, cy)


@dataclass
class ModelConfig:
    """Extractor width and keypoint selection settings."""

    feature_dim: int = 64
    stage_channels: tuple[int, ...] = (16, 32, 64)
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    top_k: int = 50


@dataclass
class LossConfig:
    """Objective constants."""

    tau: float = 4.0
    margin: float = 1.5
    alpha: float = 10.0
    occlusion_eps: float = 0.45
    max_pairs: int = 512


@dataclass
class OptimizerConfig:
    """Adam settings plus optional gradient accumulation."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    accumulation: int = 1


@dataclass
class TrainingConfig:
    """Loop length, pair sampling and synthesis-branch switches."""

    steps: int = 2000
    offset: int = 10
    checkpoint_every: int = 500
    use_vsm: bool = True
    symmetric_vsm: bool = False


@dataclass
class EvalConfig:
    """Reference/test frame split and robust-pose settings.

    With ``self_match`` the test split is the reference split itself, the
    sanity ceiling where nearly every query should find its own twin.
    """

    reference_modulus: int = 2
    reference_phase: int = 0
    self_match: bool = False
    ransac_iterations: int = 1000
    reproj_threshold_px: float = 8.0


@dataclass
class RunConfig:
    """The full recipe for one run."""

    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "optimizer": OptimizerConfig,
    "training": TrainingConfig,
    "eval": EvalConfig,
}

# Fields stored as JSON arrays but held as tuples in memory.
_TUPLE_FIELDS = {"stage_channels", "scales"}


def _check_number(section: str, name: str, value, low=None,
                  allow_equal: bool = True) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{section}.{name} must be a number, got {value!r}")
    if low is not None:
        ok = value >= low if allow_equal else value > low
        if not ok:
            op = ">=" if allow_equal else ">"
            raise ConfigError(f"{section}.{name} must be {op} {low}, "
                              f"got {value}")


def _check_int(section: str, name: str, value, low=None) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{section}.{name} must be an integer, "
                          f"got {value!r}")
    if low is not None and value < low:
        raise ConfigError(f"{section}.{name} must be >= {low}, got {value}")


def validate_config(cfg: RunConfig) -> RunConfig:
    """Raise a configuration error on any out-of-contract value."""
    _check_int("run", "seed", cfg.seed)

    ds = cfg.dataset
    if ds.kind not in DATASET_KINDS:
        raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, "
                          f"got {ds.kind!r}")
    if ds.kind == "synthetic":
        _check_int("dataset", "scene_seed", ds.scene_seed)
        _check_int("dataset", "n_frames", ds.n_frames, low=0)
    else:
        if not ds.path:
            raise ConfigError(f"dataset.path is required for {ds.kind} data")
        if not os.path.isdir(ds.path):
            raise ConfigError(f"dataset.path does not resolve to a "
                              f"directory: {ds.path}")
    _check_int("dataset", "height", ds.height, low=8)
    _check_int("dataset", "width", ds.width, low=8)
    for name in ("fx", "fy"):
        _check_number("dataset", name, getattr(ds, name), low=0.0,
                      allow_equal=False)
    for name in ("cx", "cy"):
        value = getattr(ds, name)
        if value is not None:
            _check_number("dataset", name, value)
    _check_number("dataset", "max_depth", ds.max_depth, low=0.0,
                  allow_equal=False)

    md = cfg.model
    _check_int("model", "feature_dim", md.feature_dim, low=1)
    if not md.stage_channels:
        raise ConfigError("model.stage_channels must not be empty")
    for c in md.stage_channels:
        _check_int("model", "stage_channels entry", c, low=1)
    if not md.scales:
        raise ConfigError("model.scales must not be empty")
    for s in md.scales:
        _check_number("model", "scales entry", s, low=0.0, allow_equal=False)
    _check_int("model", "top_k", md.top_k, low=1)

    ls = cfg.loss
    _check_number("loss", "tau", ls.tau, low=0.0)
    _check_number("loss", "margin", ls.margin, low=0.0, allow_equal=False)
    _check_number("loss", "alpha", ls.alpha, low=0.0)
    _check_number("loss", "occlusion_eps", ls.occlusion_eps, low=0.0)
    _check_int("loss", "max_pairs", ls.max_pairs, low=1)

    op = cfg.optimizer
    _check_number("optimizer", "learning_rate", op.learning_rate, low=0.0,
                  allow_equal=False)
    for name in ("beta1", "beta2"):
        value = getattr(op, name)
        _check_number("optimizer", name, value, low=0.0)
        if value >= 1.0:
            raise ConfigError(f"optimizer.{name} must be < 1, got {value}")
    _check_number("optimizer", "epsilon", op.epsilon, low=0.0,
                  allow_equal=False)
    _check_int("optimizer", "accumulation", op.accumulation, low=1)

    tr = cfg.training
    _check_int("training", "steps", tr.steps, low=0)
    if tr.offset not in PAIR_OFFSETS:
        raise ConfigError(f"training.offset must be one of {PAIR_OFFSETS}, "
                          f"got {tr.offset}")
    _check_int("training", "checkpoint_every", tr.checkpoint_every, low=0)
    for name in ("use_vsm", "symmetric_vsm"):
        if not isinstance(getattr(tr, name), bool):
            raise ConfigError(f"training.{name} must be a boolean")

    ev = cfg.eval
    if not isinstance(ev.self_match, bool):
        raise ConfigError("eval.self_match must be a boolean")
    _check_int("eval", "reference_modulus", ev.reference_modulus, low=1)
    _check_int("eval", "reference_phase", ev.reference_phase, low=0)
    if ev.reference_phase >= ev.reference_modulus:
        raise ConfigError("eval.reference_phase must be below "
                          "eval.reference_modulus")
    _check_int("eval", "ransac_iterations", ev.ransac_iterations, low=1)
    _check_number("eval", "reproj_threshold_px", ev.reproj_threshold_px,
                  low=0.0, allow_equal=False)
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    """Plain nested dict with the format version stamped in."""
    doc: dict = {"config_version": CONFIG_VERSION, "seed": cfg.seed}
    for section, _ in _SECTIONS.items():
        values = dataclasses.asdict(getattr(cfg, section))
        for key in _TUPLE_FIELDS & values.keys():
            values[key] = list(values[key])
        doc[section] = values
    return doc


def config_from_dict(doc: dict) -> RunConfig:
    """Parse and validate a config document; unknown keys are errors."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config document must be an object, got "
                          f"{type(doc).__name__}")
    doc = dict(doc)
    version = doc.pop("config_version", None)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}; "
                          f"expected {CONFIG_VERSION}")
    seed = doc.pop("seed", 0)
    sections = {}
    for section, cls in _SECTIONS.items():
        values = doc.pop(section, {})
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown keys in section {section!r}: "
                              f"{sorted(unknown)}")
        values = dict(values)
        for key in _TUPLE_FIELDS & values.keys():
            entries = values[key]
            if not isinstance(entries, (list, tuple)):
                raise ConfigError(f"{section}.{key} must be an array")
            values[key] = tuple(entries)
        sections[section] = cls(**values)
    if doc:
        raise ConfigError(f"unknown top-level keys: {sorted(doc)}")
    return validate_config(RunConfig(seed=seed, **sections))


def save_config(path, cfg: RunConfig) -> None:
    """Write the config as stable, human-diffable JSON."""
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc)
