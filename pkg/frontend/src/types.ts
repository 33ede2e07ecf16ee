export interface ClassDef {
  id: number;
  name: string;
  color: string; // "#RRGGBB"
}

export interface MeshPayload {
  vertices: number[][]; // [x, y, z] per vertex
  faces: number[][]; // [i, j, k] per triangle
}

/** Flat typed-array mesh the viewer and brush math work on. */
export interface MeshData {
  positions: Float32Array; // 3 * vertexCount
  indices: Uint32Array; // 3 * faceCount
  vertexCount: number;
}

export const BACKGROUND = 0;

export function meshFromPayload(payload: MeshPayload): MeshData {
  const vertexCount = payload.vertices.length;
  const positions = new Float32Array(vertexCount * 3);
  for (let i = 0; i < vertexCount; i++) {
    positions[3 * i] = payload.vertices[i][0];
    positions[3 * i + 1] = payload.vertices[i][1];
    positions[3 * i + 2] = payload.vertices[i][2];
  }
  const indices = new Uint32Array(payload.faces.length * 3);
  for (let f = 0; f < payload.faces.length; f++) {
    indices[3 * f] = payload.faces[f][0];
    indices[3 * f + 1] = payload.faces[f][1];
    indices[3 * f + 2] = payload.faces[f][2];
  }
  return { positions, indices, vertexCount };
}
