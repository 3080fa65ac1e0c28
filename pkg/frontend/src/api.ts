/** HTTP client for the render service. */

import { parseMultipart } from "./multipart.js";
import { RenderRequest, RenderResult, SceneMeta } from "./types.js";

/** A 4xx/5xx reply that carried a structured reason. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

function boundaryOf(contentType: string | null): string {
  const match = /boundary=([^;]+)/.exec(contentType ?? "");
  if (!match) throw new Error(`response is not multipart: ${contentType}`);
  return match[1].trim();
}

export class RenderClient {
  constructor(readonly base: string = "") {}

  async fetchMeta(): Promise<SceneMeta> {
    const response = await fetch(`${this.base}/scene/meta`);
    if (!response.ok) throw new ApiError(response.status, await response.text());
    return (await response.json()) as SceneMeta;
  }

  async render(request: RenderRequest): Promise<RenderResult> {
    const response = await fetch(`${this.base}/render`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(request),
    });
    if (!response.ok) {
      let reason = `render failed (${response.status})`;
      try {
        const body = (await response.json()) as { error?: string };
        if (body.error) reason = body.error;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, reason);
    }
    const boundary = boundaryOf(response.headers.get("Content-Type"));
    const data = new Uint8Array(await response.arrayBuffer());
    const parts = new Map<string, Uint8Array>();
    for (const part of parseMultipart(data, boundary)) {
      parts.set(part.name, part.body);
    }
    return { parts, renderMs: Number(response.headers.get("X-Render-Ms") ?? "NaN") };
  }
}
