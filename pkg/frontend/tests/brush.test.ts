import { describe, expect, it } from "vitest";
import {
  boundingSphereRadius,
  brushTargetClass,
  clampBrushRadius,
  verticesWithinBrush,
} from "../src/brush.js";

function grid(): Float32Array {
  // 5 points along x at 0, 1, 2, 3, 4
  const p = new Float32Array(15);
  for (let i = 0; i < 5; i++) p[3 * i] = i;
  return p;
}

describe("clampBrushRadius", () => {
  it("keeps the radius in (0, 0.5]", () => {
    expect(clampBrushRadius(0.2)).toBe(0.2);
    expect(clampBrushRadius(0.9)).toBe(0.5);
    expect(clampBrushRadius(0)).toBeGreaterThan(0);
    expect(clampBrushRadius(Number.NaN)).toBeGreaterThan(0);
  });
});

describe("brushTargetClass", () => {
  it("paints the class and erases to background", () => {
    expect(brushTargetClass({ classId: 2, radius: 0.1, mode: "paint" })).toBe(2);
    expect(brushTargetClass({ classId: 2, radius: 0.1, mode: "erase" })).toBe(0);
  });
});

describe("verticesWithinBrush", () => {
  it("selects exactly the vertices inside the Euclidean ball", () => {
    expect(verticesWithinBrush(grid(), [0, 0, 0], 1.5)).toEqual([0, 1]);
    expect(verticesWithinBrush(grid(), [2, 0, 0], 1.0)).toEqual([1, 2, 3]);
  });

  it("radius covering a single vertex relabels exactly that vertex", () => {
    expect(verticesWithinBrush(grid(), [4, 0, 0], 0.4)).toEqual([4]);
  });

  it("empty when the ball misses all vertices", () => {
    expect(verticesWithinBrush(grid(), [10, 10, 10], 0.5)).toEqual([]);
  });
});

describe("boundingSphereRadius", () => {
  it("is the max distance from the centroid", () => {
    // centroid at x=2; farthest points at x=0 and x=4 -> radius 2
    expect(boundingSphereRadius(grid())).toBeCloseTo(2, 12);
  });
});
