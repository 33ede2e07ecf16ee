"""Loopback HTTP backend for the browser annotation tool.

Single-user, single-session: serves the mean-shape geometry and class
table, holds the working label map, and persists it to the label CSV on
every accepted POST. JSON bodies only.

Endpoints:
  GET  /api/mesh    -> {"vertices": [[x,y,z],...], "faces": [[i,j,k],...]}
  GET  /api/classes -> {"classes": [{"id","name","color"},...]}
  GET  /api/labels  -> {"labels": [class_id, ...]}  (one per vertex)
  POST /api/labels  <- {"labels": [...]}; validated against mesh size and
                       class table, then written to the label file.
  GET  /...         -> static files for the UI bundle (optional).
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .errors import LabelError
from .mesh import (BACKGROUND, ClassTable, LabelMap, TriangleMesh, load_labels,
                   save_labels)

_PLACEHOLDER_PAGE = b"""<!doctype html>
<html><head><title>annotation backend</title></head>
<body><h1>Annotation backend is running</h1>
<p>No UI bundle was configured (start with --static to serve one).
The JSON API is live under <code>/api/</code>.</p></body></html>
"""

_CONTENT_TYPES = {
    ".html": "text/html", ".js": "text/javascript", ".mjs": "text/javascript",
    ".css": "text/css", ".json": "application/json", ".png": "image/png",
    ".svg": "image/svg+xml", ".ico": "image/x-icon", ".map": "application/json",
}


class AnnotationState:
    """Mesh, class table, and the mutable working label map."""

    def __init__(self, mesh: TriangleMesh, class_table: ClassTable,
                 labels_path: str | Path):
        self.mesh = mesh
        self.class_table = class_table
        self.labels_path = Path(labels_path)
        self.lock = threading.Lock()
        if self.labels_path.exists():
            self.labels = load_labels(self.labels_path, mesh.n_vertices, class_table)
        else:
            self.labels = LabelMap(np.zeros(mesh.n_vertices, dtype=np.int64),
                                   class_table)

    def replace_labels(self, raw) -> int:
        """Validate and persist a full label list; returns labeled count."""
        if not isinstance(raw, list):
            raise LabelError("labels must be a JSON list")
        if len(raw) != self.mesh.n_vertices:
            raise LabelError(
                f"label list has {len(raw)} entries, mesh has "
                f"{self.mesh.n_vertices} vertices"
            )
        try:
            arr = np.array([int(v) for v in raw], dtype=np.int64)
        except (TypeError, ValueError):
            raise LabelError("labels must be integers")
        new_map = LabelMap(arr, self.class_table)  # validates class ids
        with self.lock:
            self.labels = new_map
            save_labels(new_map, self.labels_path)
        return int(np.sum(arr != BACKGROUND))


def _build_handler(state: AnnotationState, static_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send_json(self, payload, status: int = 200) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, body: bytes, content_type: str,
                        status: int = 200) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/api/mesh":
                self._send_json({
                    "vertices": state.mesh.vertices.tolist(),
                    "faces": state.mesh.faces.tolist(),
                })
            elif path == "/api/classes":
                self._send_json({"classes": [
                    {"id": c.id, "name": c.name, "color": c.color}
                    for c in sorted(state.class_table.values(), key=lambda c: c.id)
                ]})
            elif path == "/api/labels":
                with state.lock:
                    labels = state.labels.labels.tolist()
                self._send_json({"labels": labels})
            elif path.startswith("/api/"):
                self._send_json({"error": {"code": "http.not_found",
                                           "message": path}}, status=404)
            else:
                self._serve_static(path)

        def do_POST(self):
            path = self.path.split("?", 1)[0]
            if path != "/api/labels":
                self._send_json({"error": {"code": "http.not_found",
                                           "message": path}}, status=404)
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                if not isinstance(payload, dict):
                    raise LabelError("body must be a JSON object")
                count = state.replace_labels(payload.get("labels"))
            except LabelError as exc:
                self._send_json({"error": {"code": exc.code,
                                           "message": exc.message}}, status=400)
                return
            except json.JSONDecodeError as exc:
                self._send_json({"error": {"code": "http.bad_json",
                                           "message": str(exc)}}, status=400)
                return
            self._send_json({"ok": True, "n_labeled": count})

        def _serve_static(self, path: str) -> None:
            if static_dir is None:
                if path in ("/", "/index.html"):
                    self._send_bytes(_PLACEHOLDER_PAGE, "text/html")
                else:
                    self._send_bytes(b"not found", "text/plain", status=404)
                return
            rel = path.lstrip("/") or "index.html"
            target = (static_dir / rel).resolve()
            if not str(target).startswith(str(static_dir.resolve())) \
                    or not target.is_file():
                self._send_bytes(b"not found", "text/plain", status=404)
                return
            ctype = _CONTENT_TYPES.get(target.suffix.lower(),
                                       "application/octet-stream")
            self._send_bytes(target.read_bytes(), ctype)

    return Handler


def make_server(state: AnnotationState, host: str = "127.0.0.1", port: int = 0,
                static_dir: str | Path | None = None) -> ThreadingHTTPServer:
    """Build (but do not start) the HTTP server; port 0 picks a free port."""
    static = Path(static_dir) if static_dir is not None else None
    return ThreadingHTTPServer((host, port), _build_handler(state, static))
