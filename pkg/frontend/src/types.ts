/** Wire types for the render service (GET /scene/meta, POST /render). */

export interface CameraMeta {
  id: number;
  width: number;
  height: number;
}

export interface ImageMeta {
  id: number;
  camera: number;
  sunny: boolean;
}

export interface SceneMeta {
  gaussians: number;
  stages: string[];
  baked: boolean;
  cameras: CameraMeta[];
  images: ImageMeta[];
}

/** "cloudy" disables direct sunlight; otherwise an upper-hemisphere direction. */
export type SunSetting = "cloudy" | { direction: [number, number, number] };

export type ComponentRole = "sun" | "sky" | "ind";

export const OUTPUT_NAMES = [
  "composite",
  "sun",
  "sky",
  "ind",
  "reflectance",
  "visibility",
] as const;

export type OutputName = (typeof OUTPUT_NAMES)[number];

export interface RenderRequest {
  camera_id: number;
  image_id: number;
  image_id_b?: number;
  t?: number;
  components?: ComponentRole[];
  sun: SunSetting;
  outputs: OutputName[];
}

export interface RenderResult {
  /** Output name to PNG bytes, in response order. */
  parts: Map<string, Uint8Array>;
  /** Server-side render time from the X-Render-Ms header. */
  renderMs: number;
}
