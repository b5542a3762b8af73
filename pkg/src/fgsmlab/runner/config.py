"""Experiment configuration: a flat JSON object mirroring :class:`TrainConfig`."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..attacks import DEFAULT_EPSILON, AttackSpec
from ..nn import FC_LAYERS
from ..regularizers import RegularizerSpec

SETTINGS = ("none", "gradalign", "orth", "both")
_LOCATION_KEYS = ("output_dir", "run_name")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    precision: int = 32
    # training attack (FGSM)
    epsilon: float = DEFAULT_EPSILON
    # evaluation attack (PGD)
    eval_epsilon: float = DEFAULT_EPSILON
    eval_steps: int = 10
    eval_alpha: Optional[float] = None
    eval_random_start: bool = True
    # regularizers
    lambda_ga: float = 0.2
    ga_samples: int = 1
    tau: float = 1e-12
    lambda_orth: float = 0.01
    orth_layers: tuple = FC_LAYERS
    # local-linearity metric
    ll_samples: int = 10
    ll_n: int = 256
    # data
    dataset: str = "cifar10"
    data_dir: Optional[str] = None
    train_n: int = 2000
    eval_n: int = 1000
    # output
    output_dir: str = "runs"
    run_name: Optional[str] = None
    checkpoint_every: int = 10
    record_wall_time: bool = False

    def __post_init__(self):
        object.__setattr__(self, "orth_layers", tuple(self.orth_layers))
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.eval_n < 1 or self.train_n < 1:
            raise ValueError("train_n and eval_n must be >= 1")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.dataset not in ("cifar10", "synthetic"):
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.dataset == "cifar10" and not self.data_dir:
            raise ValueError("cifar10 runs need data_dir")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        # validate the nested specs eagerly
        self.attack, self.eval_attack, self.reg  # noqa: B018

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == 32 else np.float64)

    @property
    def attack(self) -> AttackSpec:
        return AttackSpec.fgsm(self.epsilon)

    @property
    def eval_attack(self) -> AttackSpec:
        return AttackSpec.pgd(self.eval_epsilon, steps=self.eval_steps, alpha=self.eval_alpha,
                              random_start=self.eval_random_start)

    @property
    def reg(self) -> RegularizerSpec:
        return RegularizerSpec(lambda_ga=self.lambda_ga, ga_samples=self.ga_samples,
                               tau=self.tau, lambda_orth=self.lambda_orth,
                               orth_layers=self.orth_layers)

    @property
    def setting(self) -> str:
        return self.reg.setting

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / (self.run_name or self.setting)

    def with_setting(self, setting: str) -> "TrainConfig":
        """Zero the regularizer weights that ``setting`` switches off."""
        if setting not in SETTINGS:
            raise ValueError(f"setting must be one of {SETTINGS}")
        ga = setting in ("gradalign", "both")
        orth = setting in ("orth", "both")
        if (ga and self.lambda_ga <= 0) or (orth and self.lambda_orth <= 0):
            raise ValueError(f"setting {setting!r} needs positive regularizer weights")
        return replace(self, lambda_ga=self.lambda_ga if ga else 0.0,
                       lambda_orth=self.lambda_orth if orth else 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["orth_layers"] = list(self.orth_layers)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> bytes:
        """SHA-256 of the canonical JSON form, ignoring where outputs are written."""
        d = {k: v for k, v in self.to_dict().items() if k not in _LOCATION_KEYS}
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).digest()

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ValueError(f"{path}: config must be a flat JSON object")
        return cls.from_dict(d)
