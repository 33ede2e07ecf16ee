import { ClassDef, MeshPayload } from "./types.js";

/** Error carrying the backend's structured rejection reason. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin client for the annotation backend's loopback JSON API. */
export class AnnotatorClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const err = (body as { error?: { code?: string; message?: string } }).error;
      throw new ApiError(
        resp.status,
        err?.code ?? "http.error",
        err?.message ?? `request failed with status ${resp.status}`,
      );
    }
    return body as T;
  }

  mesh(): Promise<MeshPayload> {
    return this.request<MeshPayload>("/api/mesh");
  }

  async classes(): Promise<ClassDef[]> {
    const body = await this.request<{ classes: ClassDef[] }>("/api/classes");
    return body.classes;
  }

  async labels(): Promise<number[]> {
    const body = await this.request<{ labels: number[] }>("/api/labels");
    return body.labels;
  }

  putLabels(labels: ArrayLike<number>): Promise<{ ok: boolean; n_labeled: number }> {
    return this.request("/api/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ labels: Array.from(labels) }),
    });
  }
}
