"""Synthetic corresponded cohort generator for tests and demos.

Emits a family of deformed-ellipsoid ("potato") meshes sharing one UV-sphere
topology, plus ground-truth landmark labels defined on the shared vertex
grid: class 1 is a band of vertices around a fixed parallel, class 2 a
meridian strip. The base shape is deliberately asymmetric (egg-shaped with
localized bumps) so no two surface regions are congruent; a segmenter
working from rigid-motion-invariant features can therefore tell the labeled
regions apart.

All randomness is drawn from per-shape streams derived from the seed, so a
fixture is reproducible byte-for-byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError
from .mesh import ClassDef, ClassTable, LabelMap, TriangleMesh, make_class_table

# Base geometry: radius field on the unit sphere, then anisotropic scaling.
_SCALE_MM = 50.0
_AXES = np.array([1.15, 1.0, 0.88])
_EGG = 0.28  # cos(theta) term; breaks north/south symmetry

# Localized radial bumps (unit direction via (theta, phi), amplitude, width rad)
# breaking the remaining mirror symmetries so no two regions are congruent.
# Both are convex: a concave blob would read like the landmark groove to
# curvature-spectrum features, which cannot see the sign of curvature.
_BUMPS = (
    (2.10, 3.60, 0.20, 0.50),
    (0.90, 4.60, 0.14, 0.45),
)

# Label regions on the (theta, phi) grid. The band sits on a raised ridge
# ring and the strip on a meridian groove, so both landmarks are actual
# geometric features (as anatomical landmarks are), not arbitrary paint.
# Raised-cosine profiles keep the relief exactly co-extensive with the
# labels: there is no unlabeled "halo" of landmark-looking geometry.
# The two landmark regions are separated in polar angle so the egg-term
# radius gradient disambiguates the ridge's concave feet from the groove.
_BAND_THETA = (0.50 * np.pi, 0.62 * np.pi)  # class 1: ring around a parallel
_RIDGE_AMPLITUDE = 0.16

_STRIP_THETA = (0.08 * np.pi, 0.36 * np.pi)  # class 2: partial meridian strip
_STRIP_PHI_CENTER = 0.80
_STRIP_PHI_HALFWIDTH = 0.35
_GROOVE_DEPTH = 0.25

# Per-shape variation: broad, smooth fields, clearly larger-scale than the
# landmark features above.
_N_DEFORM_MODES = 5
_DEFORM_AMPLITUDE = 0.10
_DEFORM_WIDTH = (0.50, 0.90)
_AXIS_JITTER = 0.06
_POSE_MAX_ANGLE = 0.25  # radians
_POSE_MAX_SHIFT = 8.0  # mm

FIXTURE_CLASSES = (
    ClassDef(1, "ridge_band", "#FF0000"),
    ClassDef(2, "ligament_strip", "#0000FF"),
)


def _direction(theta: float, phi: float) -> np.ndarray:
    return np.array([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)])


def make_uv_sphere(n_vertices: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """UV-sphere vertex grid with roughly ``n_vertices`` vertices.

    Returns (unit directions (n, 3), faces (f, 3), theta (n,), phi (n,)).
    Vertex 0 is the north pole, vertex n-1 the south pole; rings are laid
    out ring-major so the grid layout is a pure function of the count.
    """
    rings = max(3, int(round(np.sqrt((n_vertices - 2) / 2.0))))
    segments = max(8, int(round((n_vertices - 2) / rings)))
    n = rings * segments + 2

    theta = np.empty(n)
    phi = np.empty(n)
    dirs = np.empty((n, 3))
    theta[0], phi[0] = 0.0, 0.0
    dirs[0] = (0.0, 0.0, 1.0)
    ring_thetas = np.pi * (np.arange(1, rings + 1)) / (rings + 1)
    seg_phis = 2.0 * np.pi * np.arange(segments) / segments
    idx = 1
    for t in ring_thetas:
        for p in seg_phis:
            theta[idx], phi[idx] = t, p
            dirs[idx] = _direction(t, p)
            idx += 1
    theta[idx], phi[idx] = np.pi, 0.0
    dirs[idx] = (0.0, 0.0, -1.0)

    faces: list[tuple[int, int, int]] = []
    def ring_vertex(r: int, s: int) -> int:
        return 1 + r * segments + (s % segments)
    for s in range(segments):
        faces.append((0, ring_vertex(0, s), ring_vertex(0, s + 1)))
    for r in range(rings - 1):
        for s in range(segments):
            a, b = ring_vertex(r, s), ring_vertex(r, s + 1)
            c, d = ring_vertex(r + 1, s), ring_vertex(r + 1, s + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    south = n - 1
    for s in range(segments):
        faces.append((south, ring_vertex(rings - 1, s + 1), ring_vertex(rings - 1, s)))
    return dirs, np.array(faces, dtype=np.int64), theta, phi


def _angular_distance(dirs: np.ndarray, center: np.ndarray) -> np.ndarray:
    return np.arccos(np.clip(dirs @ center, -1.0, 1.0))


def _wrapped_dphi(phi: np.ndarray, center: float) -> np.ndarray:
    return np.abs((phi - center + np.pi) % (2.0 * np.pi) - np.pi)


def _cos_window(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Raised-cosine bump: 1 at the interval center, 0 outside [lo, hi]."""
    t = (x - lo) / (hi - lo)
    inside = (t >= 0.0) & (t <= 1.0)
    return np.where(inside, np.sin(np.pi * np.clip(t, 0.0, 1.0)) ** 2, 0.0)


def _base_radius(dirs: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    r = 1.0 + _EGG * np.cos(theta)
    r += _RIDGE_AMPLITUDE * _cos_window(theta, *_BAND_THETA)
    dphi = _wrapped_dphi(phi, _STRIP_PHI_CENTER)
    r -= _GROOVE_DEPTH * (_cos_window(theta, *_STRIP_THETA)
                          * _cos_window(dphi, -_STRIP_PHI_HALFWIDTH,
                                        _STRIP_PHI_HALFWIDTH))
    for t, p, amp, width in _BUMPS:
        ang = _angular_distance(dirs, _direction(t, p))
        r += amp * np.exp(-(ang**2) / (2.0 * width**2))
    return r


def fixture_labels(n_vertices: int) -> LabelMap:
    """Ground-truth labels on the shared vertex grid (band + meridian strip)."""
    _, _, theta, phi = make_uv_sphere(n_vertices)
    labels = np.zeros(theta.shape[0], dtype=np.int64)
    band = (theta >= _BAND_THETA[0]) & (theta <= _BAND_THETA[1])
    strip = ((theta >= _STRIP_THETA[0]) & (theta <= _STRIP_THETA[1])
             & (_wrapped_dphi(phi, _STRIP_PHI_CENTER) <= _STRIP_PHI_HALFWIDTH))
    labels[strip] = 2
    labels[band] = 1  # band wins where regions would touch
    return LabelMap(labels, make_class_table(FIXTURE_CLASSES))


def fixture_cohort(n_shapes: int, n_vertices: int,
                   seed: int) -> tuple[list[TriangleMesh], LabelMap, ClassTable]:
    """Deformed-ellipsoid cohort with shared topology plus grid labels.

    Each shape gets a smooth random radial deformation field, mild axis
    jitter, and a small random rigid pose, all from its own seeded stream.
    """
    if n_shapes < 2:
        raise ConfigError("fixture needs at least 2 shapes")
    if n_vertices < 100:
        raise ConfigError("fixture needs at least 100 vertices")
    if seed < 0:
        raise ConfigError("seed must be non-negative")
    dirs, faces, theta, phi = make_uv_sphere(n_vertices)
    base_r = _base_radius(dirs, theta, phi)

    meshes = []
    for i in range(n_shapes):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        bump_factor = np.ones(dirs.shape[0])
        for _ in range(_N_DEFORM_MODES):
            amp = rng.uniform(-_DEFORM_AMPLITUDE, _DEFORM_AMPLITUDE)
            center = rng.normal(size=3)
            center /= np.linalg.norm(center)
            width = rng.uniform(*_DEFORM_WIDTH)
            ang = _angular_distance(dirs, center)
            bump_factor += amp * np.exp(-(ang**2) / (2.0 * width**2))
        radius = base_r * bump_factor
        axes = _AXES * (1.0 + rng.uniform(-_AXIS_JITTER, _AXIS_JITTER, size=3))
        pts = _SCALE_MM * radius[:, None] * dirs * axes

        angle = rng.uniform(0.0, _POSE_MAX_ANGLE)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        k = np.array([[0, -axis[2], axis[1]],
                      [axis[2], 0, -axis[0]],
                      [-axis[1], axis[0], 0]])
        rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
        shift = rng.uniform(-_POSE_MAX_SHIFT, _POSE_MAX_SHIFT, size=3)
        meshes.append(TriangleMesh(pts @ rot.T + shift, faces))

    labels = fixture_labels(n_vertices)
    return meshes, labels, labels.class_table


def write_fixture(out_dir: str | Path, n_shapes: int = 10, n_vertices: int = 2000,
                  seed: int = 0) -> dict[str, object]:
    """Write cohort meshes, grid labels, and the class table to disk.

    Returns the written paths: ``{"meshes": [...], "labels": ..., "classes": ...}``.
    """
    from .mesh import save_class_table, save_labels, save_mesh

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshes, labels, table = fixture_cohort(n_shapes, n_vertices, seed)
    mesh_paths = []
    for i, mesh in enumerate(meshes):
        path = out_dir / f"shape_{i:03d}.obj"
        save_mesh(mesh, path)
        mesh_paths.append(path)
    labels_path = out_dir / "mean_labels.csv"
    classes_path = out_dir / "classes.json"
    save_labels(labels, labels_path)
    save_class_table(table, classes_path)
    return {"meshes": mesh_paths, "labels": labels_path, "classes": classes_path}
