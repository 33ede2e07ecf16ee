"""Statistical shape model: alignment, construction, and shape generation.

A model is a linear point-distribution model over a corresponded cohort:
mean shape vector plus orthonormal principal components with per-mode
variances. Shapes are flat coordinate vectors of length 3N
(x1, y1, z1, ..., xN, yN, zN), in millimeters.

Parameter vectors are in per-mode standard-deviation units: mode j of a
generated shape contributes ``sqrt(var_j) * a_j * v_j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, CorrespondenceError, DimensionMismatch
from .mesh import Cohort, TriangleMesh, _frozen, validate_cohort

_MODEL_VERSION = "ssm-model/1"

# Relative spectrum cutoff: modes with variance below this fraction of the
# leading mode carry only numerical noise and are dropped.
_EIG_REL_TOL = 1e-12


def as_shape_vector(mesh_or_points) -> np.ndarray:
    """Flatten an (N, 3) vertex array (or mesh) into a 3N shape vector."""
    pts = getattr(mesh_or_points, "vertices", None)
    if pts is None:
        pts = getattr(mesh_or_points, "points", mesh_or_points)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim == 1:
        if pts.size % 3:
            raise DimensionMismatch("shape vector length must be divisible by 3")
        return pts
    return pts.reshape(-1)


def shape_to_points(x: np.ndarray) -> np.ndarray:
    """View a 3N shape vector as an (N, 3) point array."""
    x = np.asarray(x, dtype=np.float64)
    if x.size % 3:
        raise DimensionMismatch("shape vector length must be divisible by 3")
    return x.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class SSMModel:
    """Mean shape, descending per-mode variances, orthonormal components.

    ``components`` is (3N, M) with orthonormal columns; ``eigenvalues`` is
    (M,) in mm^2, sorted descending, all positive. ``faces`` carries the
    cohort topology so generated vectors can be re-wrapped as meshes.
    """

    mean: np.ndarray  # (3N,)
    eigenvalues: np.ndarray  # (M,)
    components: np.ndarray  # (3N, M)
    faces: np.ndarray  # (F, 3)
    cohort_size: int
    with_scaling: bool = False
    variance_fraction: float | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        eig = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        comp = np.asarray(self.components, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if mean.size % 3:
            raise DimensionMismatch("mean length must be divisible by 3")
        if comp.shape != (mean.size, eig.size):
            raise DimensionMismatch(
                f"components must be ({mean.size}, {eig.size}), got {comp.shape}"
            )
        if eig.size:
            if (eig < 0).any() or (np.diff(eig) > 0).any():
                raise ConfigError("eigenvalues must be nonnegative and descending")
            gram = comp.T @ comp
            if np.abs(gram - np.eye(eig.size)).max() > 1e-8:
                raise ConfigError("component columns are not orthonormal within 1e-8")
        if self.cohort_size >= 2 and eig.size > self.cohort_size - 1:
            raise ConfigError("more modes than cohort size - 1")
        for name, arr in (("mean", mean), ("eigenvalues", eig), ("components", comp),
                          ("faces", faces)):
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_vertices(self) -> int:
        return self.mean.size // 3

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def mode_stddevs(self) -> np.ndarray:
        return np.sqrt(self.eigenvalues)


# ---------------------------------------------------------------------------
# Alignment

def _best_rotation(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Rotation R (3x3, det +1) minimizing ||src @ R - dst||_F.

    Closed form from the SVD of the cross-covariance; the smallest singular
    direction is flipped when needed to stay in SO(3).
    """
    h = src.T @ dst
    u, _, vt = np.linalg.svd(h)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def gpa_align(cohort: Cohort, with_scaling: bool = False,
              tol: float = 1e-9, max_iter: int = 100) -> Cohort:
    """Generalized Procrustes alignment of a corresponded cohort.

    Each shape is translated to zero centroid, then iteratively rotated by
    the closed-form orthogonal solution against the running mean until the
    mean moves less than ``tol`` RMS or ``max_iter`` passes. With
    ``with_scaling`` every shape is additionally normalized to unit
    centroid size up front and re-scaled optimally each pass (the mean is
    kept at unit norm so sizes cannot collapse).

    Args:
        cohort: validated cohort of at least 2 shapes.
        with_scaling: also remove per-shape scale (off by default; shapes
            stay in millimeters).

    Returns:
        New Cohort with aligned vertices and the original topology.
    """
    if cohort.n_shapes < 2:
        raise AlignmentError("alignment needs at least 2 shapes")
    centered = []
    for i, mesh in enumerate(cohort):
        pts = mesh.vertices - mesh.vertices.mean(axis=0)
        norm = np.linalg.norm(pts)
        if norm < 1e-12:
            raise AlignmentError(f"shape {i} is degenerate (all vertices coincident)")
        if with_scaling:
            pts = pts / norm
        centered.append(pts)

    mean = sum(centered) / len(centered)
    aligned = centered
    for _ in range(max_iter):
        aligned = []
        for pts in centered:
            r = _best_rotation(pts, mean)
            out = pts @ r
            if with_scaling:
                scale = float(np.sum(out * mean) / np.sum(out * out))
                out = out * scale
            aligned.append(out)
        new_mean = sum(aligned) / len(aligned)
        if with_scaling:
            new_mean = new_mean / np.linalg.norm(new_mean)
        rms = float(np.sqrt(np.mean((new_mean - mean) ** 2)))
        mean = new_mean
        if rms < tol:
            break

    faces = cohort.faces
    return validate_cohort([TriangleMesh(pts, faces) for pts in aligned])


# ---------------------------------------------------------------------------
# Model construction

def build_ssm(aligned: Cohort, variance_fraction: float | None = None,
              with_scaling: bool = False) -> SSMModel:
    """PCA of an aligned cohort.

    The mean is the arithmetic mean of shape vectors; variances and
    components come from the thin SVD of the centered (K x 3N) data matrix
    with sample-covariance scaling (divisor K - 1). By default all
    significant modes are kept (at most K - 1); ``variance_fraction``
    optionally truncates to the smallest mode count reaching that fraction
    of total variance. Each component column is sign-normalized so its
    largest-magnitude entry is positive, making models reproducible.
    """
    k = aligned.n_shapes
    if k < 2:
        raise CorrespondenceError("model construction needs at least 2 shapes")
    if variance_fraction is not None and not 0.0 < variance_fraction <= 1.0:
        raise ConfigError("variance_fraction must be in (0, 1]")

    data = np.stack([as_shape_vector(m) for m in aligned])  # (K, 3N)
    mean = data.mean(axis=0)
    centered = data - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    eig = svals**2 / (k - 1)

    # Mode significance: relative cutoff against the leading mode, plus an
    # absolute floor at the roundoff level of the data itself (so a cohort
    # of identical shapes yields zero modes, not one noise mode).
    floor = (np.finfo(np.float64).eps * max(data.shape)
             * max(float(np.linalg.norm(data)), 1.0))
    threshold = max(floor, float(svals[0]) * np.sqrt(_EIG_REL_TOL))
    m = min(int(np.count_nonzero(svals > threshold)), k - 1)
    if variance_fraction is not None and m > 0:
        cum = np.cumsum(eig[:m]) / eig[:m].sum()
        m = min(int(np.searchsorted(cum, variance_fraction)) + 1, m)
    eig = eig[:m]
    components = vt[:m].T.copy()  # (3N, M)

    # Sign convention: largest-magnitude entry of each column is positive.
    for j in range(m):
        col = components[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            components[:, j] = -col

    return SSMModel(mean=mean, eigenvalues=eig, components=components,
                    faces=aligned.faces, cohort_size=k,
                    with_scaling=with_scaling, variance_fraction=variance_fraction)


# ---------------------------------------------------------------------------
# Generation / projection

def _check_params(model: SSMModel, a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    if a.size != model.n_modes:
        raise DimensionMismatch(
            f"parameter vector has {a.size} entries, model has {model.n_modes} modes"
        )
    if not np.isfinite(a).all():
        raise DimensionMismatch("parameter vector contains non-finite entries")
    return a


def generate_shape(model: SSMModel, a: np.ndarray) -> np.ndarray:
    """Realize one shape vector: mean + components @ (mode_stddevs * a)."""
    a = _check_params(model, a)
    return model.mean + model.components @ (model.mode_stddevs * a)


def generate_mesh(model: SSMModel, a: np.ndarray) -> TriangleMesh:
    """Realize one shape and bind it to the model topology."""
    return TriangleMesh(shape_to_points(generate_shape(model, a)), model.faces)


def project_shape(model: SSMModel, x: np.ndarray) -> np.ndarray:
    """Exact per-mode coefficients (in stddev units) of a shape vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.mean.size:
        raise DimensionMismatch(
            f"shape vector has {x.size} entries, model expects {model.mean.size}"
        )
    return (model.components.T @ (x - model.mean)) / model.mode_stddevs


def sample_params(model: SSMModel, rng: np.random.Generator,
                  lo: float = -2.75, hi: float = 1.75) -> np.ndarray:
    """Draw one parameter vector, each mode uniform on [lo, hi)."""
    if not lo < hi:
        raise ConfigError(f"need lo < hi, got [{lo}, {hi}]")
    return rng.uniform(lo, hi, size=model.n_modes)


# ---------------------------------------------------------------------------
# Persistence: JSON container with base-10 text arrays. Python's JSON float
# serialization is shortest-round-trip, so reloads are bit-exact.

def save_model(model: SSMModel, path: str | Path) -> None:
    payload = {
        "version": _MODEL_VERSION,
        "n_vertices": model.n_vertices,
        "n_modes": model.n_modes,
        "cohort_size": model.cohort_size,
        "with_scaling": model.with_scaling,
        "variance_fraction": model.variance_fraction,
        "mean": model.mean.tolist(),
        "eigenvalues": model.eigenvalues.tolist(),
        "components": model.components.reshape(-1).tolist(),  # row-major (3N, M)
        "faces": model.faces.reshape(-1).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, allow_nan=False, separators=(",", ":"))
        fh.write("\n")


def load_model(path: str | Path) -> SSMModel:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("version")
    if version != _MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported model version {version!r}")
    n3 = 3 * int(payload["n_vertices"])
    m = int(payload["n_modes"])
    return SSMModel(
        mean=np.array(payload["mean"], dtype=np.float64),
        eigenvalues=np.array(payload["eigenvalues"], dtype=np.float64),
        components=np.array(payload["components"], dtype=np.float64).reshape(n3, m),
        faces=np.array(payload["faces"], dtype=np.int64).reshape(-1, 3),
        cohort_size=int(payload["cohort_size"]),
        with_scaling=bool(payload["with_scaling"]),
        variance_fraction=payload.get("variance_fraction"),
    )
