"""Pipeline configuration: one dataclass holding every knob with defaults.

The defaults are the experiment constants the pipeline is built around:
sigma range [-2.75, 1.75], 4096 points, 8800/2200/500 splits, Adam with
lr 1e-3 and batch size 12. The config round-trips losslessly through JSON.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    # paths
    cohort_dir: str = "cohort"
    model_path: str = "model.ssm.json"
    labels_path: str = "mean_labels.csv"
    classes_path: str = "classes.json"
    dataset_dir: str = "dataset"
    segmenter_path: str = "segmenter.json"
    predictions_dir: str = "predictions"
    report_path: str = "report.json"
    # alignment / model
    with_scaling: bool = False
    variance_fraction: float | None = None
    # dataset generation
    n_train: int = 8800
    n_val: int = 2200
    n_test: int = 500
    n_points: int = 4096
    sigma_lo: float = -2.75
    sigma_hi: float = 1.75
    rotate_splits: tuple[str, ...] = ("test",)
    fps_start: int = 0
    downsample: str = "fps"
    seed: int = 0
    workers: int = 1
    # trainer
    lr: float = 1e-3
    batch_size: int = 12
    epochs: int = 50
    train_seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    k_local: int = 16
    radii: tuple[int, ...] = (32, 64, 128, 256)
    # evaluation
    include_background: bool = True

    def __post_init__(self):
        for name in ("rotate_splits", "hidden", "radii"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def to_dict(self) -> dict:
        d = asdict(self)
        for name in ("rotate_splits", "hidden", "radii"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def save_config(cfg: PipelineConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")


def load_config(path: str | Path) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return PipelineConfig.from_dict(payload)
