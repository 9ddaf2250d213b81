"""Run configuration: strict JSON loading with no silent defaults for reproduction-critical hyperparameters."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .model import ConfigError, ModelConfig

# These must be written out explicitly in every config file.
REQUIRED_MODEL_KEYS = ("num_layers", "max_seq_len", "model_dim", "ffn_dim", "use_eau", "use_grc",
                       "dropout", "label_smoothing")
REQUIRED_OPTIM_KEYS = ("beta1", "beta2", "weight_decay", "schedule", "peak_lr", "warmup_steps")


@dataclass
class OptimConfig:
    beta1: float
    beta2: float
    weight_decay: float
    schedule: str
    peak_lr: float
    warmup_steps: int
    epsilon: float = 1e-8
    decay_all: bool = False
    clip_grad_norm: Optional[float] = None

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.weight_decay < 0 or self.epsilon <= 0 or self.peak_lr < 0:
            raise ConfigError("weight_decay, epsilon and peak_lr must be non-negative (epsilon > 0)")
        if self.schedule not in ("constant", "warmup_inv_sqrt"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.clip_grad_norm is not None and self.clip_grad_norm <= 0:
            raise ConfigError("clip_grad_norm must be positive when set")


@dataclass
class TrainConfig:
    batch_size: int
    max_steps: int
    eval_every: int
    run_dir: Optional[str] = None
    log_path: str = "loss.csv"
    checkpoint_path: str = "final.gftc"
    best_checkpoint_path: str = "best.gftc"

    def __post_init__(self):
        for name in ("batch_size", "max_steps", "eval_every"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"train.{name} must be a positive integer, got {value!r}")


@dataclass
class DataConfig:
    kind: str
    # synthetic
    mode: str = "copy"
    vocab_size: int = 20
    num_pairs: int = 2000
    num_valid: int = 200
    min_len: int = 3
    max_len: int = 8
    # files
    train_src: Optional[str] = None
    train_tgt: Optional[str] = None
    valid_src: Optional[str] = None
    valid_tgt: Optional[str] = None
    src_vocab: Optional[str] = None
    tgt_vocab: Optional[str] = None
    min_freq: int = 2

    def __post_init__(self):
        if self.kind == "synthetic":
            if self.mode not in ("copy", "reverse"):
                raise ConfigError(f"data.mode must be copy or reverse, got {self.mode!r}")
            if self.vocab_size < 5 or not 1 <= self.min_len <= self.max_len:
                raise ConfigError("synthetic data needs vocab_size >= 5 and 1 <= min_len <= max_len")
            if self.num_pairs < 1 or self.num_valid < 1:
                raise ConfigError("num_pairs and num_valid must be positive")
        elif self.kind == "files":
            missing = [k for k in ("train_src", "train_tgt", "valid_src", "valid_tgt")
                       if getattr(self, k) is None]
            if missing:
                raise ConfigError(f"file data needs {missing}")
        else:
            raise ConfigError(f"data.kind must be 'synthetic' or 'files', got {self.kind!r}")


@dataclass
class RunConfig:
    seed: int
    model: dict
    optim: Optional[OptimConfig] = None
    train: Optional[TrainConfig] = None
    data: Optional[DataConfig] = None

    def model_config(self, src_vocab_size: Optional[int] = None,
                     tgt_vocab_size: Optional[int] = None) -> ModelConfig:
        d = dict(self.model, seed=self.seed)
        for key, derived in (("src_vocab_size", src_vocab_size), ("tgt_vocab_size", tgt_vocab_size)):
            given = d.get(key)
            if given is not None and derived is not None and given != derived:
                raise ConfigError(f"model.{key}={given} but the data gives {derived}")
            if given is None:
                if derived is None:
                    raise ConfigError(f"model.{key} is required when no data section provides it")
                d[key] = derived
        return ModelConfig.from_dict(d)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "model": dict(self.model),
                **{k: asdict(getattr(self, k)) for k in ("optim", "train", "data")
                   if getattr(self, k) is not None}}


def _section(cls, raw, name: str, required=()):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"{name!r} must set {missing} explicitly")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def parse_run_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"seed", "model", "optim", "train", "data"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "seed" not in raw or isinstance(raw["seed"], bool) or not isinstance(raw["seed"], int):
        raise ConfigError("an integer 'seed' is required")
    if "model" not in raw:
        raise ConfigError("a 'model' section is required")
    model = raw["model"]
    if not isinstance(model, dict):
        raise ConfigError("section 'model' must be an object")
    if "seed" in model:
        raise ConfigError("set the seed at top level, not in 'model'")
    missing = [k for k in REQUIRED_MODEL_KEYS if k not in model]
    if missing:
        raise ConfigError(f"'model' must set {missing} explicitly")
    run = RunConfig(seed=raw["seed"], model=dict(model))
    if "optim" in raw:
        run.optim = _section(OptimConfig, raw["optim"], "optim", REQUIRED_OPTIM_KEYS)
    if "train" in raw:
        run.train = _section(TrainConfig, raw["train"], "train")
    if "data" in raw:
        run.data = _section(DataConfig, raw["data"], "data", ("kind",))
    # Fails early on bad model keys/values even when vocab sizes come from data later.
    probe = dict(model, seed=run.seed)
    probe.setdefault("src_vocab_size", 4)
    probe.setdefault("tgt_vocab_size", 4)
    ModelConfig.from_dict(probe)
    return run


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(raw)


def require_training_sections(run: RunConfig) -> None:
    missing = [k for k in ("optim", "train", "data") if getattr(run, k) is None]
    if missing:
        raise ConfigError(f"training needs config sections {missing}")
