/** HTTP client for the grasp service.
 *
 * The sketchpad fires a query every time the drawing settles, so stale
 * requests are common. `infer` is single-flight: starting a new call aborts
 * the previous one, and the aborted caller gets null instead of an error.
 */

import type { Grasp } from "./overlay.js";

export interface SceneEntry {
  id: string;
  categories: string[];
  thumbnail_png_base64: string;
}

export interface InferResult {
  grasps: Grasp[];
  elapsed_ms: number;
}

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private inflight: AbortController | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    if (!resp.ok) {
      let message = `request failed with status ${resp.status}`;
      try {
        const body = await resp.json();
        if (body && typeof body.error === "string") message = body.error;
      } catch {
        // non-JSON error body, keep the status message
      }
      throw new ApiError(resp.status, message);
    }
    return resp.json();
  }

  async health(): Promise<{ status: string; version: string }> {
    return (await this.request("/health")) as { status: string; version: string };
  }

  async scenes(): Promise<SceneEntry[]> {
    const body = (await this.request("/scenes")) as { scenes: SceneEntry[] };
    return body.scenes;
  }

  sceneImageUrl(sceneId: string): string {
    return `${this.baseUrl}/scene/${encodeURIComponent(sceneId)}`;
  }

  /** Run grasp inference. Returns null when a newer call superseded this
   * one; throws ApiError when the service rejects the request. */
  async infer(sceneId: string, strokes: number[][][], k: number): Promise<InferResult | null> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const body = await this.request("/infer", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ scene_id: sceneId, strokes, k }),
        signal: controller.signal,
      });
      return body as InferResult;
    } catch (err) {
      if (controller.signal.aborted) return null;
      throw err;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }
}
