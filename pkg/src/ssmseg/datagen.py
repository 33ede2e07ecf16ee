"""Reproducible labeled point-cloud dataset generation.

Every shape in a dataset is a pure function of (model, mean labels, config,
master seed, shape index): the per-shape RNG stream is derived by seeding
``SeedSequence(master_seed, spawn_key=(shape_index,))``, so generation is
byte-identical for any worker count. Within one shape the stream is
consumed in a fixed order: parameter vector, optional random downsample,
shuffle permutation, optional rotation.

Dataset directory layout::

    out_dir/
      manifest.json
      train/shape_000000.xyzl   # rows "x y z class_id", 9 significant digits
      val/...
      test/...
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, LabelError
from .labeling import transfer_labels
from .mesh import ClassDef, ClassTable, LabelMap, PointCloud, make_class_table
from .ssm import SSMModel, generate_shape, sample_params, shape_to_points

_MANIFEST_VERSION = "dataset-manifest/1"
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# Geometric primitives

def fps(points: PointCloud | np.ndarray, m: int, start_index: int = 0) -> np.ndarray:
    """Farthest point sampling: greedy max-min selection of ``m`` indices.

    The first pick is ``start_index``; every subsequent pick maximizes its
    minimum Euclidean distance to the already-picked set, ties broken by
    lowest index. Deterministic. Squared distances are used internally
    (max-min order is identical).
    """
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ConfigError(f"sample size {m} out of range for {n} points")
    if not 0 <= start_index < n:
        raise ConfigError(f"start index {start_index} out of range for {n} points")
    selected = np.empty(m, dtype=np.int64)
    selected[0] = start_index
    d2 = np.sum((pts - pts[start_index]) ** 2, axis=1)
    for j in range(1, m):
        i = int(np.argmax(d2))  # first max = lowest index on ties
        selected[j] = i
        np.minimum(d2, np.sum((pts - pts[i]) ** 2, axis=1), out=d2)
    return selected


def knn_indices(points: PointCloud | np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points to ``query``, ascending by distance.

    Ties resolve to the lowest index (stable sort on squared distances).
    """
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"k={k} out of range for {n} points")
    q = np.asarray(query, dtype=np.float64).reshape(3)
    d2 = np.sum((pts - q) ** 2, axis=1)
    return np.argsort(d2, kind="stable")[:k]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix uniform over SO(3), via a normalized 4D Gaussian
    quaternion."""
    q = rng.normal(size=4)
    norm = np.linalg.norm(q)
    while norm < 1e-12:
        q = rng.normal(size=4)
        norm = np.linalg.norm(q)
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


# ---------------------------------------------------------------------------
# Labeled clouds

@dataclass(frozen=True, eq=False)
class LabeledCloud:
    """A point cloud with one class id per point."""

    cloud: PointCloud
    labels: LabelMap
    shape_id: str = ""

    def __post_init__(self):
        if self.cloud.n_points != len(self.labels):
            raise DimensionMismatch(
                f"{self.cloud.n_points} points but {len(self.labels)} labels"
            )


def shuffle_points(cloud: LabeledCloud,
                   rng: np.random.Generator) -> tuple[LabeledCloud, np.ndarray]:
    """Apply one random permutation jointly to points and labels.

    Returns the shuffled cloud and the permutation (output row i came from
    input row permutation[i]) so callers can record it.
    """
    perm = rng.permutation(cloud.cloud.n_points)
    shuffled = LabeledCloud(
        PointCloud(cloud.cloud.points[perm]),
        LabelMap(cloud.labels.labels[perm], cloud.labels.class_table),
        cloud.shape_id,
    )
    return shuffled, perm


def save_xyzl(cloud: LabeledCloud, path: str | Path) -> None:
    """Write rows ``x y z class_id``, space-separated, 9 significant digits."""
    pts = cloud.cloud.points
    labels = cloud.labels.labels
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (x, y, z), c in zip(pts, labels):
            fh.write(f"{x:.9g} {y:.9g} {z:.9g} {int(c)}\n")


def load_xyzl(path: str | Path, class_table: ClassTable,
              shape_id: str = "") -> LabeledCloud:
    pts: list[tuple[float, float, float]] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise LabelError(f"{path}:{lineno}: expected 'x y z class_id'")
            try:
                pts.append((float(parts[0]), float(parts[1]), float(parts[2])))
                labels.append(int(parts[3]))
            except ValueError:
                raise LabelError(f"{path}:{lineno}: malformed row")
    return LabeledCloud(
        PointCloud(np.array(pts)),
        LabelMap(np.array(labels, dtype=np.int64), class_table),
        shape_id,
    )


# ---------------------------------------------------------------------------
# Generation config and manifest

@dataclass(frozen=True)
class GenerationConfig:
    """All knobs of one dataset generation run."""

    n_train: int = 8800
    n_val: int = 2200
    n_test: int = 500
    n_points: int = 4096
    sigma_lo: float = -2.75
    sigma_hi: float = 1.75
    rotate_splits: tuple[str, ...] = ("test",)
    fps_start: int = 0
    downsample: str = "fps"  # or "random"

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if not self.sigma_lo < self.sigma_hi:
            raise ConfigError("need sigma_lo < sigma_hi")
        object.__setattr__(self, "rotate_splits", tuple(self.rotate_splits))
        for s in self.rotate_splits:
            if s not in SPLITS:
                raise ConfigError(f"unknown split {s!r} in rotate_splits")
        if self.downsample not in ("fps", "random"):
            raise ConfigError("downsample must be 'fps' or 'random'")

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        kwargs = dict(d)
        if "rotate_splits" in kwargs:
            kwargs["rotate_splits"] = tuple(kwargs["rotate_splits"])
        return cls(**kwargs)

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test


@dataclass(frozen=True, eq=False)
class ShapeRecord:
    """Full provenance of one generated shape."""

    shape_id: str
    split: str
    params: np.ndarray  # (M,) stddev units
    fps_indices: np.ndarray  # (n_points,) indices into the full-res shape
    permutation: np.ndarray  # (n_points,) shuffle applied after downsampling
    rotation: np.ndarray | None  # (3, 3) or None
    path: str  # relative to the dataset directory

    def to_dict(self) -> dict:
        return {
            "id": self.shape_id,
            "split": self.split,
            "params": np.asarray(self.params, dtype=np.float64).tolist(),
            "fps_indices": np.asarray(self.fps_indices).tolist(),
            "permutation": np.asarray(self.permutation).tolist(),
            "rotation": None if self.rotation is None else self.rotation.tolist(),
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeRecord":
        rot = d.get("rotation")
        return cls(
            shape_id=d["id"],
            split=d["split"],
            params=np.array(d["params"], dtype=np.float64),
            fps_indices=np.array(d["fps_indices"], dtype=np.int64),
            permutation=np.array(d["permutation"], dtype=np.int64),
            rotation=None if rot is None else np.array(rot, dtype=np.float64),
            path=d["path"],
        )


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    """Reproducible record of a generated dataset."""

    master_seed: int
    config: GenerationConfig
    class_table: ClassTable
    records: tuple[ShapeRecord, ...]

    def __post_init__(self):
        ids = [r.shape_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate shape ids in manifest")
        sizes = {s: 0 for s in SPLITS}
        for r in self.records:
            sizes[r.split] += 1
            if r.rotation is not None:
                rt = r.rotation
                if (np.abs(rt.T @ rt - np.eye(3)).max() > 1e-10
                        or abs(np.linalg.det(rt) - 1.0) > 1e-10):
                    raise ConfigError(f"shape {r.shape_id}: rotation is not in SO(3)")
        expected = {"train": self.config.n_train, "val": self.config.n_val,
                    "test": self.config.n_test}
        if sizes != expected:
            raise ConfigError(f"split sizes {sizes} do not match config {expected}")

    def split_records(self, split: str) -> tuple[ShapeRecord, ...]:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    payload = {
        "version": _MANIFEST_VERSION,
        "master_seed": manifest.master_seed,
        "config": manifest.config.to_dict(),
        "classes": [
            {"id": c.id, "name": c.name, "color": c.color}
            for c in sorted(manifest.class_table.values(), key=lambda c: c.id)
        ],
        "shapes": [r.to_dict() for r in manifest.records],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, allow_nan=False, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != _MANIFEST_VERSION:
        raise ConfigError(f"{path}: unsupported manifest version")
    table = make_class_table(
        ClassDef(int(c["id"]), c["name"], c["color"]) for c in payload["classes"]
    )
    return DatasetManifest(
        master_seed=int(payload["master_seed"]),
        config=GenerationConfig.from_dict(payload["config"]),
        class_table=table,
        records=tuple(ShapeRecord.from_dict(d) for d in payload["shapes"]),
    )


# ---------------------------------------------------------------------------
# Generation

def shape_rng(master_seed: int, shape_index: int) -> np.random.Generator:
    """Independent per-shape stream; identical for any worker count."""
    if master_seed < 0:
        raise ConfigError("master seed must be non-negative")
    return np.random.default_rng(
        np.random.SeedSequence(master_seed, spawn_key=(shape_index,))
    )


def _split_of(index: int, config: GenerationConfig) -> str:
    if index < config.n_train:
        return "train"
    if index < config.n_train + config.n_val:
        return "val"
    return "test"


def _make_shape(model: SSMModel, mean_labels: LabelMap, config: GenerationConfig,
                master_seed: int, index: int, out_dir: Path) -> ShapeRecord:
    split = _split_of(index, config)
    shape_id = f"shape_{index:06d}"
    rng = shape_rng(master_seed, index)

    a = sample_params(model, rng, config.sigma_lo, config.sigma_hi)
    points = shape_to_points(generate_shape(model, a))
    labels = transfer_labels(mean_labels, points)

    if config.downsample == "fps":
        keep = fps(points, config.n_points, config.fps_start)
    else:
        keep = np.sort(rng.choice(points.shape[0], size=config.n_points,
                                  replace=False))
    cloud = LabeledCloud(
        PointCloud(points[keep]),
        LabelMap(labels.labels[keep], labels.class_table),
        shape_id,
    )
    cloud, perm = shuffle_points(cloud, rng)

    rotation = None
    if split in config.rotate_splits:
        rotation = random_rotation(rng)
        cloud = LabeledCloud(
            PointCloud(cloud.cloud.points @ rotation.T), cloud.labels, shape_id
        )

    rel_path = f"{split}/{shape_id}.xyzl"
    save_xyzl(cloud, out_dir / rel_path)
    return ShapeRecord(shape_id, split, a, keep, perm, rotation, rel_path)


_WORKER_CTX: dict = {}


def _worker_init(model_payload, labels, table_items, config_dict, master_seed, out_dir):
    _WORKER_CTX["model"] = model_payload
    _WORKER_CTX["labels"] = LabelMap(labels, make_class_table(
        ClassDef(*item) for item in table_items))
    _WORKER_CTX["config"] = GenerationConfig.from_dict(config_dict)
    _WORKER_CTX["seed"] = master_seed
    _WORKER_CTX["out"] = Path(out_dir)


def _worker_make(index: int) -> dict:
    rec = _make_shape(_WORKER_CTX["model"], _WORKER_CTX["labels"],
                      _WORKER_CTX["config"], _WORKER_CTX["seed"], index,
                      _WORKER_CTX["out"])
    return rec.to_dict()


def generate_dataset(model: SSMModel, mean_labels: LabelMap,
                     config: GenerationConfig, master_seed: int,
                     out_dir: str | Path, workers: int = 1) -> DatasetManifest:
    """Generate a full labeled dataset plus its manifest.

    Per shape: draw a parameter vector, realize the shape, copy the mean
    labels by index, downsample to ``config.n_points`` (keeping the labels
    of the selected indices), shuffle, rotate if the split is configured
    for it, and write a ``.xyzl`` file. The manifest (written last, so a
    dataset without one is by definition incomplete) records every seed,
    index list, permutation, and rotation.

    Output bytes depend only on (model, mean_labels, config, master_seed),
    never on ``workers``.
    """
    if master_seed < 0:
        raise ConfigError("master seed must be non-negative")
    if len(mean_labels) != model.n_vertices:
        raise DimensionMismatch(
            f"mean labels cover {len(mean_labels)} vertices, "
            f"model has {model.n_vertices}"
        )
    if config.n_points > model.n_vertices:
        raise ConfigError(
            f"n_points {config.n_points} exceeds model vertex count {model.n_vertices}"
        )
    out_dir = Path(out_dir)
    for split in SPLITS:
        (out_dir / split).mkdir(parents=True, exist_ok=True)

    indices = range(config.n_total)
    if workers <= 1:
        records = [_make_shape(model, mean_labels, config, master_seed, i, out_dir)
                   for i in indices]
    else:
        table_items = [(c.id, c.name, c.color) for c in mean_labels.class_table.values()]
        init_args = (model, np.asarray(mean_labels.labels), table_items,
                     config.to_dict(), master_seed, str(out_dir))
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=init_args) as pool:
            dicts = list(pool.map(_worker_make, indices, chunksize=8))
        records = [ShapeRecord.from_dict(d) for d in dicts]

    manifest = DatasetManifest(master_seed, config, mean_labels.class_table,
                               tuple(records))
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
