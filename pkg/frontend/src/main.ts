import { AnnotatorClient, ApiError } from "./api.js";
import { BrushState, clampBrushRadius } from "./brush.js";
import { AnnotationSession } from "./session.js";
import { meshFromPayload } from "./types.js";
import { MeshViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const status = el<HTMLSpanElement>("status");
  const client = new AnnotatorClient("");

  const [meshPayload, classes, labels] = await Promise.all([
    client.mesh(),
    client.classes(),
    client.labels(),
  ]);
  const mesh = meshFromPayload(meshPayload);
  const session = new AnnotationSession(mesh.positions, classes, labels);
  const viewer = new MeshViewer(el("viewport"), mesh, classes);
  viewer.refreshColors(session.labels);

  const brush: BrushState = {
    classId: classes[0]?.id ?? 1,
    radius: 0.06,
    mode: "paint",
  };

  const updateStatus = (note = "") => {
    const dirty = session.dirty ? "unsaved changes" : "saved";
    status.textContent =
      `${session.labeledCount()} labeled vertices | ${dirty}` +
      (note ? ` | ${note}` : "");
  };

  // class palette
  const palette = el<HTMLDivElement>("classes");
  for (const cls of classes) {
    const btn = document.createElement("button");
    btn.textContent = `${cls.id}: ${cls.name}`;
    btn.style.borderLeft = `12px solid ${cls.color}`;
    btn.onclick = () => {
      brush.classId = cls.id;
      brush.mode = "paint";
      for (const other of palette.children) other.classList.remove("active");
      btn.classList.add("active");
      eraseToggle.classList.remove("active");
    };
    palette.appendChild(btn);
  }
  (palette.firstElementChild as HTMLButtonElement | null)?.classList.add("active");

  const eraseToggle = el<HTMLButtonElement>("erase");
  eraseToggle.onclick = () => {
    brush.mode = brush.mode === "erase" ? "paint" : "erase";
    eraseToggle.classList.toggle("active", brush.mode === "erase");
  };

  const radiusInput = el<HTMLInputElement>("radius");
  radiusInput.value = String(brush.radius);
  radiusInput.oninput = () => {
    brush.radius = clampBrushRadius(Number(radiusInput.value));
  };

  const paintToggle = el<HTMLInputElement>("paintmode");
  paintToggle.onchange = () => viewer.setPaintMode(paintToggle.checked);

  viewer.onPaint = (hit) => {
    const diff = session.paintStroke(hit, brush);
    if (diff) {
      viewer.updateColors(diff.indices, session.labels);
      updateStatus();
    }
  };

  el<HTMLButtonElement>("undo").onclick = () => {
    const diff = session.undo();
    if (diff) viewer.updateColors(diff.indices, session.labels);
    updateStatus(diff ? "undone" : "nothing to undo");
  };
  el<HTMLButtonElement>("redo").onclick = () => {
    const diff = session.redo();
    if (diff) viewer.updateColors(diff.indices, session.labels);
    updateStatus(diff ? "redone" : "nothing to redo");
  };

  el<HTMLButtonElement>("export").onclick = async () => {
    if (session.labeledCount() === 0) {
      const sure = window.confirm(
        "No vertex is labeled; export an all-background map?",
      );
      if (!sure) return;
    }
    try {
      const resp = await client.putLabels(session.labels);
      session.markSaved();
      updateStatus(`exported (${resp.n_labeled} labeled)`);
    } catch (err) {
      const reason =
        err instanceof ApiError ? `${err.code}: ${err.message}` : String(err);
      updateStatus(`export rejected - ${reason}`);
    }
  };

  updateStatus("ready");
}

boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `failed to load: ${err}`;
  console.error(err);
});
