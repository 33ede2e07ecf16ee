// Integration: scripted paint -> export -> backend GET returns the same
// map; undo restores the pre-stroke map. Drives the real Python backend
// through its HTTP surface only.
import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotatorClient } from "../src/api.js";
import { AnnotationSession } from "../src/session.js";
import { meshFromPayload } from "../src/types.js";

const PYTHON = process.env.SSMSEG_PYTHON ?? "python3";

let server: ChildProcess | null = null;
let baseUrl = "";

function startBackend(): Promise<string> {
  const work = mkdtempSync(join(tmpdir(), "annotator-"));
  execFileSync(PYTHON, [
    "-m", "ssmseg.cli", "fixture", "--out", join(work, "fx"),
    "--n-shapes", "2", "--n-vertices", "150", "--seed", "3",
  ]);
  const meshFile = readdirSync(join(work, "fx")).filter((f) => f.endsWith(".obj"))
    .sort()[0];
  server = spawn(PYTHON, [
    "-m", "ssmseg.cli", "annotate-serve",
    "--mesh", join(work, "fx", meshFile),
    "--classes", join(work, "fx", "classes.json"),
    "--labels", join(work, "working_labels.csv"),
    "--port", "0",
  ], { stdio: ["ignore", "pipe", "pipe"] });

  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("backend start timeout")),
                             30_000);
    let buffer = "";
    server!.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const found = buffer.match(/serving on (http:\/\/[\d.]+:\d+)/);
      if (found) {
        clearTimeout(timer);
        resolve(found[1]);
      }
    });
    server!.on("error", reject);
    server!.stderr!.on("data", (chunk: Buffer) => {
      process.stderr.write(chunk);
    });
  });
}

beforeAll(async () => {
  baseUrl = await startBackend();
}, 60_000);

afterAll(() => {
  server?.kill();
});

describe("annotator <-> backend round trip", () => {
  it("paint, export, reload: identical labels; undo restores exactly", async () => {
    const client = new AnnotatorClient(baseUrl);
    const [meshPayload, classes, initial] = await Promise.all([
      client.mesh(),
      client.classes(),
      client.labels(),
    ]);
    const mesh = meshFromPayload(meshPayload);
    expect(initial).toHaveLength(mesh.vertexCount);

    const session = new AnnotationSession(mesh.positions, classes, initial);
    const preStroke = Array.from(session.labels);

    // scripted paint: one stroke per class at two known surface points
    const hitA: [number, number, number] = [
      mesh.positions[0], mesh.positions[1], mesh.positions[2],
    ];
    const last = mesh.vertexCount - 1;
    const hitB: [number, number, number] = [
      mesh.positions[3 * last], mesh.positions[3 * last + 1],
      mesh.positions[3 * last + 2],
    ];
    const diffA = session.paintStroke(hitA, {
      classId: classes[0].id, radius: 0.15, mode: "paint",
    });
    const diffB = session.paintStroke(hitB, {
      classId: classes[1].id, radius: 0.15, mode: "paint",
    });
    expect(diffA).not.toBeNull();
    expect(diffB).not.toBeNull();
    expect(session.undoDepth).toBe(2);

    // export, then read back through the API: identical map
    const resp = await client.putLabels(session.labels);
    expect(resp.ok).toBe(true);
    expect(resp.n_labeled).toBe(session.labeledCount());
    const echoed = await client.labels();
    expect(echoed).toEqual(Array.from(session.labels));
    session.markSaved();
    expect(session.dirty).toBe(false);

    // undo both strokes: exactly the pre-stroke map again
    session.undo();
    session.undo();
    expect(Array.from(session.labels)).toEqual(preStroke);
  }, 30_000);

  it("backend rejects a wrong-length export with a reason", async () => {
    const client = new AnnotatorClient(baseUrl);
    await expect(client.putLabels([0, 1, 2])).rejects.toMatchObject({
      status: 400,
      code: "labels.invalid",
    });
  });
});
