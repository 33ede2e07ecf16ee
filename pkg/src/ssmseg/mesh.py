"""Mesh / point-cloud data model, file I/O, and cohort correspondence checks.

Vertex order is the correspondence carrier for the whole pipeline: every
loader and writer here preserves it exactly. All types are immutable after
construction (backing arrays are marked read-only), so they are safe to
share between threads.

Supported formats:
  * OBJ subset: ``v x y z`` and ``f i j k`` (1-based, ``i/...`` suffixes
    ignored), ``#`` comments. Triangles only.
  * ASCII PLY: elements ``vertex`` (properties x, y, z) and ``face``
    (list of exactly 3 indices, 0-based). Binary PLY is rejected.
  * Label CSV: header ``vertex_index,class_id``, one row per labeled
    vertex; vertices absent from the file are class 0 (background).
  * Class table JSON: ``{"classes": [{"id", "name", "color"}, ...]}``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import CorrespondenceError, LabelError, MeshFormatError

BACKGROUND = 0

# 17 significant digits: every float64 round-trips bit-exactly through text.
_COORD_FMT = "{:.17g}"


def _frozen(a: np.ndarray) -> np.ndarray:
    """Read-only contiguous view detached from any caller-owned memory."""
    a = np.ascontiguousarray(a)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle surface mesh; coordinates in millimeters."""

    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray  # (f, 3) int64, 0-based

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError("vertices must be an (n, 3) array")
        if v.shape[0] < 3:
            raise MeshFormatError(f"mesh needs at least 3 vertices, got {v.shape[0]}")
        if not np.isfinite(v).all():
            raise MeshFormatError("non-finite vertex coordinate")
        if f.size:
            if f.min() < 0 or f.max() >= v.shape[0]:
                raise MeshFormatError(
                    f"face index out of range (vertex count {v.shape[0]})"
                )
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise MeshFormatError(
                    f"face {int(np.flatnonzero(degenerate)[0])} references a vertex twice"
                )
        object.__setattr__(self, "vertices", _frozen(v))
        object.__setattr__(self, "faces", _frozen(f))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Unstructured set of 3D points; coordinates in millimeters."""

    points: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise MeshFormatError("points must be an (n, 3) array")
        if p.shape[0] < 1:
            raise MeshFormatError("point cloud must contain at least one point")
        if not np.isfinite(p).all():
            raise MeshFormatError("non-finite point coordinate")
        object.__setattr__(self, "points", _frozen(p))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class ClassDef:
    """One labelable class: numeric id, human name, display color."""

    id: int
    name: str
    color: str  # "#RRGGBB"


ClassTable = Mapping[int, ClassDef]


def make_class_table(classes: Iterable[ClassDef]) -> ClassTable:
    """Build an id -> ClassDef mapping, rejecting duplicates and id 0."""
    table: dict[int, ClassDef] = {}
    for c in classes:
        if c.id == BACKGROUND:
            raise LabelError("class id 0 is reserved for background")
        if c.id < 0:
            raise LabelError(f"class id must be positive, got {c.id}")
        if c.id in table:
            raise LabelError(f"duplicate class id {c.id}")
        table[c.id] = c
    return MappingProxyType(table)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-vertex (or per-point) class assignment.

    ``labels[i]`` is the class id of vertex/point ``i``; id 0 is background
    and never appears in the class table.
    """

    labels: np.ndarray  # (n,) int64
    class_table: ClassTable

    def __post_init__(self):
        lab = np.asarray(self.labels, dtype=np.int64)
        if lab.ndim != 1:
            raise LabelError("labels must be a 1-D array")
        table = self.class_table
        if not isinstance(table, MappingProxyType):
            table = make_class_table(table.values())
        unknown = set(np.unique(lab).tolist()) - {BACKGROUND} - set(table)
        if unknown:
            raise LabelError(f"unknown class ids {sorted(unknown)}")
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "class_table", table)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.labels, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))


@dataclass(frozen=True, eq=False)
class Cohort:
    """Meshes sharing one topology (identical vertex count and face list).

    Construct through ``validate_cohort``; that is where the pairwise
    correspondence checks live.
    """

    meshes: tuple[TriangleMesh, ...]

    @property
    def n_shapes(self) -> int:
        return len(self.meshes)

    @property
    def n_vertices(self) -> int:
        return self.meshes[0].n_vertices

    @property
    def faces(self) -> np.ndarray:
        return self.meshes[0].faces

    def __iter__(self):
        return iter(self.meshes)


def validate_cohort(meshes: Sequence[TriangleMesh]) -> Cohort:
    """Check point-to-point correspondence and wrap the meshes in a Cohort.

    All meshes must have the same vertex count and an identical face list
    (same triangles in the same order). The first offending pair is named
    in the error.
    """
    if not meshes:
        raise CorrespondenceError("cohort is empty")
    ref = meshes[0]
    for j, m in enumerate(meshes[1:], start=1):
        if m.n_vertices != ref.n_vertices:
            raise CorrespondenceError(
                f"meshes (0, {j}) disagree on vertex count: "
                f"{ref.n_vertices} vs {m.n_vertices}"
            )
        if m.faces.shape != ref.faces.shape or not np.array_equal(m.faces, ref.faces):
            raise CorrespondenceError(f"meshes (0, {j}) disagree on face list")
    return Cohort(tuple(meshes))


# ---------------------------------------------------------------------------
# OBJ

_OBJ_IGNORED = {"vn", "vt", "vp", "o", "g", "s", "usemtl", "mtllib"}


def _parse_obj(path: Path) -> TriangleMesh:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kw = parts[0]
            if kw == "v":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"{path}:{lineno}: vertex line must be 'v x y z'"
                    )
                try:
                    vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate")
            elif kw == "f":
                if len(parts) != 4:
                    raise MeshFormatError(
                        f"{path}:{lineno}: only triangle faces are supported"
                    )
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {tok!r}")
                    if i < 1:
                        raise MeshFormatError(
                            f"{path}:{lineno}: face indices must be positive (got {i})"
                        )
                    idx.append(i - 1)
                faces.append(tuple(idx))
                face_lines.append(lineno)
            elif kw in _OBJ_IGNORED:
                continue
            else:
                raise MeshFormatError(
                    f"{path}:{lineno}: unsupported element type {kw!r}"
                )
    n = len(vertices)
    for (a, b, c), lineno in zip(faces, face_lines):
        if max(a, b, c) >= n:
            raise MeshFormatError(
                f"{path}:{lineno}: face index {max(a, b, c) + 1} out of range "
                f"(mesh has {n} vertices)"
            )
    return TriangleMesh(np.array(vertices, dtype=np.float64),
                        np.array(faces, dtype=np.int64).reshape(-1, 3))


def _write_obj(mesh: TriangleMesh, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in mesh.vertices:
            fh.write(f"v {_COORD_FMT.format(x)} {_COORD_FMT.format(y)} "
                     f"{_COORD_FMT.format(z)}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


# ---------------------------------------------------------------------------
# ASCII PLY

_PLY_FLOAT_TYPES = {"float", "double", "float32", "float64"}


def _parse_ply(path: Path) -> TriangleMesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    def err(lineno: int, msg: str) -> MeshFormatError:
        return MeshFormatError(f"{path}:{lineno}: {msg}")

    if not lines or lines[0].strip() != "ply":
        raise err(1, "missing 'ply' magic line")

    n_vertex = n_face = None
    vertex_props: list[str] = []
    current: str | None = None
    body_start = None
    saw_format = False
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        kw = parts[0]
        if kw == "comment":
            continue
        if kw == "format":
            if len(parts) < 2 or parts[1] != "ascii":
                raise err(lineno, "only ASCII PLY is supported (binary rejected)")
            saw_format = True
        elif kw == "element":
            if len(parts) != 3:
                raise err(lineno, "malformed element declaration")
            name, count = parts[1], parts[2]
            if name == "vertex":
                n_vertex = int(count)
                current = "vertex"
            elif name == "face":
                n_face = int(count)
                current = "face"
            else:
                raise err(lineno, f"unsupported element type {name!r}")
        elif kw == "property":
            if current == "vertex":
                if len(parts) != 3 or parts[1] not in _PLY_FLOAT_TYPES:
                    raise err(lineno, f"unsupported vertex property: {line.strip()!r}")
                vertex_props.append(parts[2])
            elif current == "face":
                if parts[1] != "list" or parts[-1] not in ("vertex_indices", "vertex_index"):
                    raise err(lineno, f"unsupported face property: {line.strip()!r}")
            else:
                raise err(lineno, "property outside element declaration")
        elif kw == "end_header":
            body_start = lineno
            break
        else:
            raise err(lineno, f"unsupported header keyword {kw!r}")
    if body_start is None or not saw_format:
        raise err(len(lines), "incomplete PLY header")
    if n_vertex is None:
        raise err(body_start, "missing vertex element")
    if vertex_props != ["x", "y", "z"]:
        raise err(body_start, f"vertex properties must be x, y, z (got {vertex_props})")
    n_face = n_face or 0

    body = lines[body_start:]
    if len(body) < n_vertex + n_face:
        raise err(len(lines), "truncated PLY body")

    vertices = np.empty((n_vertex, 3), dtype=np.float64)
    for i in range(n_vertex):
        lineno = body_start + 1 + i
        parts = body[i].split()
        if len(parts) != 3:
            raise err(lineno, "vertex row must have exactly 3 coordinates")
        try:
            vertices[i] = [float(p) for p in parts]
        except ValueError:
            raise err(lineno, "bad vertex coordinate")

    faces = np.empty((n_face, 3), dtype=np.int64)
    for i in range(n_face):
        lineno = body_start + 1 + n_vertex + i
        parts = body[n_vertex + i].split()
        if not parts or parts[0] != "3" or len(parts) != 4:
            raise err(lineno, "face row must be '3 i j k' (triangles only)")
        try:
            idx = [int(p) for p in parts[1:]]
        except ValueError:
            raise err(lineno, "bad face index")
        if min(idx) < 0 or max(idx) >= n_vertex:
            raise err(lineno, f"face index out of range (vertex count {n_vertex})")
        faces[i] = idx

    return TriangleMesh(vertices, faces)


def _write_ply(mesh: TriangleMesh, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{_COORD_FMT.format(x)} {_COORD_FMT.format(y)} "
                     f"{_COORD_FMT.format(z)}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


# ---------------------------------------------------------------------------
# Public mesh I/O

_FORMATS = ("obj", "ply")


def _resolve_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt not in _FORMATS:
        raise MeshFormatError(f"unsupported mesh format {fmt!r} (use obj or ply)")
    return fmt


def load_mesh(path: str | Path, fmt: str | None = None) -> TriangleMesh:
    """Load a triangle mesh, preserving vertex order exactly as on disk."""
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "obj":
        return _parse_obj(path)
    return _parse_ply(path)


def save_mesh(mesh: TriangleMesh, path: str | Path, fmt: str | None = None) -> None:
    """Write a mesh so a reload yields bit-equal vertices and faces."""
    path = Path(path)
    fmt = _resolve_format(path, fmt)
    if fmt == "obj":
        _write_obj(mesh, path)
    else:
        _write_ply(mesh, path)


# ---------------------------------------------------------------------------
# Labels

def save_labels(labels: LabelMap, path: str | Path) -> None:
    """Write a label CSV; only non-background vertices get a row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vertex_index", "class_id"])
        for i in np.flatnonzero(labels.labels != BACKGROUND):
            writer.writerow([int(i), int(labels.labels[i])])


def load_labels(path: str | Path, n_vertices: int,
                class_table: ClassTable) -> LabelMap:
    """Read a label CSV back into a dense per-vertex LabelMap.

    ``n_vertices`` fixes the length (the file only lists labeled vertices;
    the rest are background). Duplicate vertex rows and class ids missing
    from ``class_table`` are rejected.
    """
    labels = np.zeros(n_vertices, dtype=np.int64)
    seen: set[int] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["vertex_index", "class_id"]:
            raise LabelError(f"{path}: expected header 'vertex_index,class_id'")
        for rowno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                idx, cls = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise LabelError(f"{path}:{rowno}: malformed row {row!r}")
            if not 0 <= idx < n_vertices:
                raise LabelError(
                    f"{path}:{rowno}: vertex index {idx} out of range (n={n_vertices})"
                )
            if idx in seen:
                raise LabelError(f"{path}:{rowno}: duplicate vertex index {idx}")
            if cls != BACKGROUND and cls not in class_table:
                raise LabelError(f"{path}:{rowno}: unknown class id {cls}")
            seen.add(idx)
            labels[idx] = cls
    return LabelMap(labels, class_table)


def save_class_table(table: ClassTable, path: str | Path) -> None:
    payload = {
        "classes": [
            {"id": c.id, "name": c.name, "color": c.color}
            for c in sorted(table.values(), key=lambda c: c.id)
        ]
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def load_class_table(path: str | Path) -> ClassTable:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or "classes" not in payload:
        raise LabelError(f"{path}: expected a JSON object with a 'classes' list")
    defs = []
    for entry in payload["classes"]:
        try:
            defs.append(ClassDef(int(entry["id"]), str(entry["name"]),
                                 str(entry["color"])))
        except (KeyError, TypeError, ValueError):
            raise LabelError(f"{path}: malformed class entry {entry!r}")
    return make_class_table(defs)
