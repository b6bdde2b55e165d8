"""Run configuration: one JSON file drives a full fit."""

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .params import FieldShape

MODES = ("progressive", "simultaneous")
INIT_MODES = ("gt_perturbed", "random")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str | None = None
    out: str | None = None
    mode: str = "progressive"
    seed: int = 0

    stage1_iters: int = 2000
    stage2_iters: int = 12000
    update_interval: int = 1000
    window: int = 1
    lr: float = 1.6e-4
    stage1_lr: float | None = None   # default: lr
    stage2_lr: float | None = None   # default: lr

    w0: float = 1.0
    tau: float | None = None         # default: 5% of the scene diagonal
    lambda_l1: float = 1.0
    lambda_tv: float = 1.0
    lambda_align: float = 1.0

    grid_x: int = 16
    grid_y: int = 16
    grid_t: int = 16
    features: int = 8
    hidden: int = 64

    init_mode: str = "gt_perturbed"
    init_splats: int = 32            # used by init_mode="random"
    perturb_scale: float = 0.02      # used by init_mode="gt_perturbed"
    unfreeze_splats: bool = False
    n_tiles: int = 8

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        for key in ("stage1_iters", "stage2_iters", "update_interval", "window",
                    "init_splats", "n_tiles"):
            if int(getattr(self, key)) <= 0:
                raise ConfigError(f"{key} must be > 0")
        for key in ("lr", "w0"):
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be > 0")
        if self.tau is not None and self.tau < 0:
            raise ConfigError("tau must be >= 0")
        for key in ("lambda_l1", "lambda_tv", "lambda_align"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0")
        for key in ("grid_x", "grid_y", "grid_t"):
            if int(getattr(self, key)) < 2:
                raise ConfigError(f"{key} must be >= 2")
        if self.features < 1 or self.hidden < 1:
            raise ConfigError("features and hidden must be >= 1")
        return self

    @property
    def field_shape(self) -> FieldShape:
        return FieldShape(grid_x=self.grid_x, grid_y=self.grid_y, grid_t=self.grid_t,
                          features=self.features, hidden=self.hidden)

    def effective_lr(self, stage: int) -> float:
        override = self.stage1_lr if stage == 1 else self.stage2_lr
        return self.lr if override is None else override

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"corrupt JSON in {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config root must be an object: {path}")
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """Hash over mode-independent settings; a progressive and a
        simultaneous run of the same experiment share it."""
        d = self.to_dict()
        for key in ("mode", "dataset", "out"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True, allow_nan=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]
