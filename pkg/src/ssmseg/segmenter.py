"""Rotation-invariant per-point landmark segmenter.

The segmenter is a small tanh MLP over hand-built local descriptors. Every
descriptor depends only on pairwise distances and covariance spectra of
point neighborhoods, so the features (and hence predictions) are invariant
to rigid motion of the input cloud by construction.

Per point and per neighborhood size k (self included in the neighborhood):
  * the three covariance eigenvalues, descending, normalized by their sum
  * linearity (l1-l2)/l1, planarity (l2-l3)/l1, sphericity l3/l1
  * mean and max neighbor distance / cloud bounding-sphere radius
plus one global descriptor: distance to the cloud centroid, normalized the
same way. The bounding-sphere radius is the max distance from the
centroid. Degenerate neighborhoods (all points coincident) produce a zero
feature block instead of NaN.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import DatasetManifest, load_manifest, load_xyzl
from .errors import ConfigError, DimensionMismatch, TrainingError
from .mesh import (BACKGROUND, ClassDef, ClassTable, LabelMap, PointCloud,
                   _frozen, make_class_table)

_MODEL_VERSION = "segmenter-model/1"
_FEATURES_PER_SCALE = 8


@dataclass(frozen=True)
class FeatureConfig:
    """Neighborhood sizes for the multi-scale local descriptors.

    The ladder spans local curvature (16) up to regional context (256);
    the large scales are what let a per-point classifier localize
    landmarks on smooth shapes.
    """

    k_local: int = 16
    radii: tuple[int, ...] = (32, 64, 128, 256)

    def __post_init__(self):
        if self.k_local < 4:
            raise ConfigError("k_local must be >= 4")
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        if any(r < 4 for r in self.radii):
            raise ConfigError("every neighborhood size must be >= 4")

    @property
    def scales(self) -> tuple[int, ...]:
        return (self.k_local, *self.radii)

    @property
    def feature_dim(self) -> int:
        return _FEATURES_PER_SCALE * len(self.scales) + 1

    def to_dict(self) -> dict:
        return {"k_local": self.k_local, "radii": list(self.radii)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(k_local=int(d["k_local"]), radii=tuple(d["radii"]))


# Neighborhoods whose extent is below this fraction of the cloud radius are
# treated as fully coincident and produce a zero feature block (no NaN).
_DEGENERATE_REL = 1e-6


def extract_features(cloud: PointCloud | np.ndarray,
                     cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Per-point rotation/translation-invariant descriptors, (n, D)."""
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    n = pts.shape[0]
    if n < max(cfg.scales):
        raise ConfigError(
            f"cloud has {n} points, smaller than neighborhood size {max(cfg.scales)}"
        )
    centroid = pts.mean(axis=0)
    radial = np.linalg.norm(pts - centroid, axis=1)
    radius = float(radial.max())
    inv_radius = 1.0 / radius if radius > 0 else 0.0

    out = np.zeros((n, cfg.feature_dim), dtype=np.float64)
    kmax = max(cfg.scales)
    sq_norms = np.einsum("ij,ij->i", pts, pts)
    # Row-chunked so the n x n distance matrix never materializes for big
    # clouds. Neighbor sets come from an argpartition on squared distances
    # (the features are order-free over the set), then a lexsort so the
    # nested smaller scales keep the nearest-with-lowest-index members.
    chunk = max(1, min(n, int(2**21) // max(n, 1)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        d2 = sq_norms[lo:hi, None] + sq_norms[None, :] - 2.0 * (pts[lo:hi] @ pts.T)
        np.clip(d2, 0.0, None, out=d2)
        cand = np.argpartition(d2, kmax - 1, axis=1)[:, :kmax] if kmax < n \
            else np.broadcast_to(np.arange(n), (hi - lo, n))
        cd2 = np.take_along_axis(d2, cand, axis=1)
        inner = np.lexsort((cand, cd2), axis=-1)
        neigh_sorted = np.take_along_axis(cand, inner, axis=1)
        local_max = pts[neigh_sorted]  # (rows, kmax, 3)
        # Distances are recomputed from the gathered coordinates: the Gram
        # expansion above is only accurate enough for neighbor selection
        # (its cancellation error, pushed through sqrt near zero, would
        # break rigid-motion invariance of the distance features).
        nd_max = np.linalg.norm(local_max - pts[lo:hi, None, :], axis=2)
        for si, k in enumerate(cfg.scales):
            nd = nd_max[:, :k]
            local = local_max[:, :k]  # includes the point itself
            centered = local - local.mean(axis=1, keepdims=True)
            cov = centered.transpose(0, 2, 1) @ centered / k
            evals = np.clip(np.linalg.eigvalsh(cov)[:, ::-1], 0.0, None)  # descending
            extent = nd.max(axis=1)
            esum = evals.sum(axis=1)
            ok = (extent > _DEGENERATE_REL * radius) & (esum > 0)
            e_norm = np.zeros_like(evals)
            e_norm[ok] = evals[ok] / esum[ok, None]
            shape_idx = np.zeros((hi - lo, 3))
            l1 = evals[:, 0]
            shape_idx[ok, 0] = (evals[ok, 0] - evals[ok, 1]) / l1[ok]
            shape_idx[ok, 1] = (evals[ok, 1] - evals[ok, 2]) / l1[ok]
            shape_idx[ok, 2] = evals[ok, 2] / l1[ok]
            col = si * _FEATURES_PER_SCALE
            out[lo:hi, col:col + 3] = e_norm
            out[lo:hi, col + 3:col + 6] = shape_idx
            out[lo:hi, col + 6] = np.where(ok, nd.mean(axis=1) * inv_radius, 0.0)
            out[lo:hi, col + 7] = np.where(ok, extent * inv_radius, 0.0)
    out[:, -1] = radial * inv_radius
    return out


# ---------------------------------------------------------------------------
# MLP internals

def _init_params(rng: np.random.Generator, dims: list[int]) -> list[np.ndarray]:
    """Alternating [W1, b1, W2, b2, ...]; weights uniform +-1/sqrt(fan_in)."""
    params = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        params.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        params.append(np.zeros(d_out))
    return params


def _forward(params: list[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list]:
    """Returns logits and the per-layer activations needed for backprop."""
    acts = [x]
    h = x
    n_layers = len(params) // 2
    for layer in range(n_layers):
        w, b = params[2 * layer], params[2 * layer + 1]
        z = h @ w + b
        h = z if layer == n_layers - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax; rows sum to 1 exactly up to the final division."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_and_grads(params: list[np.ndarray], x: np.ndarray,
                            y: np.ndarray, class_weights: np.ndarray
                            ) -> tuple[float, list[np.ndarray]]:
    """Weighted mean cross-entropy over points, plus parameter gradients.

    ``y`` holds class-column indices; ``class_weights[j]`` scales the loss
    of points of column j. The loss is normalized by the total weight, so
    it stays comparable across batches with different class mixes.
    """
    logits, acts = _forward(params, x)
    probs = softmax(logits)
    n = x.shape[0]
    w = class_weights[y]
    w_sum = w.sum()
    eps = np.finfo(np.float64).tiny
    loss = float(np.sum(w * -np.log(probs[np.arange(n), y] + eps)) / w_sum)

    dlogits = probs.copy()
    dlogits[np.arange(n), y] -= 1.0
    dlogits *= (w / w_sum)[:, None]

    grads: list[np.ndarray] = [None] * len(params)
    delta = dlogits
    n_layers = len(params) // 2
    for layer in range(n_layers - 1, -1, -1):
        a_prev = acts[layer]
        grads[2 * layer] = a_prev.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params[2 * layer].T) * (1.0 - acts[layer] ** 2)
    return loss, grads


class _Adam:
    """Standard Adam update with bias correction."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g**2
            p -= self.lr * (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# Model

@dataclass(frozen=True, eq=False)
class SegmenterModel:
    """Trained per-point classifier: MLP weights plus everything needed to
    reproduce its features and map logit columns back to class ids."""

    params: tuple[np.ndarray, ...]  # [W1, b1, ..., Wk, bk]
    feature_config: FeatureConfig
    class_ids: tuple[int, ...]  # ascending; column j of the logits = class_ids[j]
    class_table: ClassTable
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.class_ids) != sorted(self.class_ids):
            raise ConfigError("class ids must be ascending")
        dims = [self.feature_config.feature_dim]
        for w, b in zip(self.params[0::2], self.params[1::2]):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ConfigError("model parameters contain non-finite values")
            if w.shape[0] != dims[-1] or b.shape != (w.shape[1],):
                raise ConfigError("layer dimensions do not chain")
            dims.append(w.shape[1])
        if dims[-1] != len(self.class_ids):
            raise ConfigError(
                f"output dimension {dims[-1]} != class count {len(self.class_ids)}"
            )
        object.__setattr__(self, "params", tuple(
            _frozen(np.asarray(p, dtype=np.float64)) for p in self.params))


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer hyperparameters (Adam)."""

    lr: float = 1e-3
    batch_size: int = 12  # shapes per batch
    epochs: int = 50
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    class_weight_cap: float = 20.0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))


def class_weights_from_labels(labels: np.ndarray, class_ids: tuple[int, ...],
                              cap: float = 20.0) -> np.ndarray:
    """Inverse-frequency weights (1 / class frequency), capped; absent
    classes get weight 0."""
    n = labels.size
    weights = np.zeros(len(class_ids))
    for j, cid in enumerate(class_ids):
        count = int(np.sum(labels == cid))
        if count:
            weights[j] = min(n / count, cap)
    return weights


def fit_features(features: list[np.ndarray], labels: list[np.ndarray],
                 val_features: list[np.ndarray], val_labels: list[np.ndarray],
                 class_ids: tuple[int, ...], cfg: TrainConfig,
                 progress=None) -> tuple[list[np.ndarray], dict]:
    """Adam training loop over per-shape feature/label arrays.

    Shapes are batched ``cfg.batch_size`` at a time in a fixed order, every
    epoch, so runs with equal seeds are bit-identical. Returns the trained
    parameter list and a metadata dict with the loss curves.
    """
    if not features:
        raise TrainingError("no training shapes")
    id_to_col = {cid: j for j, cid in enumerate(class_ids)}
    y_all = [np.array([id_to_col[int(v)] for v in lab]) for lab in labels]
    y_val = [np.array([id_to_col[int(v)] for v in lab]) for lab in val_labels]
    weights = class_weights_from_labels(np.concatenate(labels), class_ids,
                                        cfg.class_weight_cap)

    dim = features[0].shape[1]
    dims = [dim, *cfg.hidden, len(class_ids)]
    rng = np.random.default_rng(cfg.seed)
    params = _init_params(rng, dims)
    adam = _Adam(params, cfg.lr)

    n_shapes = len(features)
    batches = [list(range(s, min(s + cfg.batch_size, n_shapes)))
               for s in range(0, n_shapes, cfg.batch_size)]
    train_curve: list[float] = []
    val_curve: list[float] = []
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for batch in batches:
            x = np.concatenate([features[i] for i in batch])
            y = np.concatenate([y_all[i] for i in batch])
            loss, grads = cross_entropy_and_grads(params, x, y, weights)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, shapes {batch}: {loss}"
                )
            adam.step(params, grads)
            epoch_losses.append(loss)
        train_curve.append(float(np.mean(epoch_losses)))
        if val_features:
            xv = np.concatenate(val_features)
            yv = np.concatenate(y_val)
            val_loss, _ = cross_entropy_and_grads(params, xv, yv, weights)
            val_curve.append(float(val_loss))
        if progress is not None:
            progress(epoch, train_curve[-1], val_curve[-1] if val_curve else None)

    metadata = {
        "seed": cfg.seed, "lr": cfg.lr, "batch_size": cfg.batch_size,
        "epochs": cfg.epochs, "hidden": list(cfg.hidden),
        "class_weights": weights.tolist(),
        "train_loss": train_curve, "val_loss": val_curve,
    }
    return params, metadata


def _load_split_features(dataset_dir: Path, manifest: DatasetManifest, split: str,
                         feature_cfg: FeatureConfig
                         ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    feats, labs = [], []
    for rec in manifest.split_records(split):
        cloud = load_xyzl(dataset_dir / rec.path, manifest.class_table, rec.shape_id)
        feats.append(extract_features(cloud.cloud, feature_cfg))
        labs.append(cloud.labels.labels)
    return feats, labs


def train(dataset_dir: str | Path, cfg: TrainConfig = TrainConfig(),
          feature_cfg: FeatureConfig = FeatureConfig(),
          progress=None) -> SegmenterModel:
    """Train on a generated dataset's train split, tracking val loss."""
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir / "manifest.json")
    class_ids = (BACKGROUND, *sorted(manifest.class_table))
    feats, labs = _load_split_features(dataset_dir, manifest, "train", feature_cfg)
    vfeats, vlabs = _load_split_features(dataset_dir, manifest, "val", feature_cfg)
    params, metadata = fit_features(feats, labs, vfeats, vlabs, class_ids, cfg,
                                    progress)
    return SegmenterModel(tuple(params), feature_cfg, class_ids,
                          manifest.class_table, metadata)


def predict_proba(model: SegmenterModel, cloud: PointCloud | np.ndarray) -> np.ndarray:
    """Per-point class probabilities, columns ordered like model.class_ids."""
    feats = extract_features(cloud, model.feature_config)
    if feats.shape[1] != model.params[0].shape[0]:
        raise DimensionMismatch("feature dimension does not match the model")
    logits, _ = _forward(list(model.params), feats)
    return softmax(logits)


def predict(model: SegmenterModel, cloud: PointCloud | np.ndarray) -> LabelMap:
    """Per-point argmax labels; ties resolve to the lowest class id."""
    feats = extract_features(cloud, model.feature_config)
    if feats.shape[1] != model.params[0].shape[0]:
        raise DimensionMismatch("feature dimension does not match the model")
    logits, _ = _forward(list(model.params), feats)
    cols = np.argmax(logits, axis=1)  # first max = lowest class id
    ids = np.array(model.class_ids, dtype=np.int64)[cols]
    return LabelMap(ids, model.class_table)


# ---------------------------------------------------------------------------
# Persistence

def save_segmenter(model: SegmenterModel, path: str | Path) -> None:
    payload = {
        "version": _MODEL_VERSION,
        "feature_config": model.feature_config.to_dict(),
        "class_ids": list(model.class_ids),
        "classes": [
            {"id": c.id, "name": c.name, "color": c.color}
            for c in sorted(model.class_table.values(), key=lambda c: c.id)
        ],
        "layer_shapes": [list(p.shape) for p in model.params],
        "parameters": [p.reshape(-1).tolist() for p in model.params],
        "metadata": model.metadata,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, allow_nan=False, separators=(",", ":"))
        fh.write("\n")


def load_segmenter(path: str | Path) -> SegmenterModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("version") != _MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported segmenter model version")
    params = tuple(
        np.array(flat, dtype=np.float64).reshape(shape)
        for flat, shape in zip(payload["parameters"], payload["layer_shapes"])
    )
    table = make_class_table(
        ClassDef(int(c["id"]), c["name"], c["color"]) for c in payload["classes"]
    )
    return SegmenterModel(
        params=params,
        feature_config=FeatureConfig.from_dict(payload["feature_config"]),
        class_ids=tuple(payload["class_ids"]),
        class_table=table,
        metadata=payload.get("metadata", {}),
    )
