/** Console state and its projection onto a render request. */

import { directionFromPolar, Polar } from "./hemisphere.js";
import {
  ComponentRole,
  OUTPUT_NAMES,
  RenderRequest,
  SceneMeta,
} from "./types.js";

export interface ConsoleState {
  cameraId: number;
  imageA: number;
  /** null renders image A alone; otherwise interpolate toward B. */
  imageB: number | null;
  t: number;
  components: Record<ComponentRole, boolean>;
  cloudy: boolean;
  sun: Polar;
}

export function initialState(meta: SceneMeta): ConsoleState {
  const sunny = meta.images.find((img) => img.sunny);
  return {
    cameraId: meta.cameras[0]?.id ?? 0,
    imageA: sunny?.id ?? meta.images[0]?.id ?? 0,
    imageB: null,
    t: 0,
    components: { sun: true, sky: true, ind: true },
    cloudy: !meta.baked,
    sun: { thetaDeg: 40, phiDeg: 90 },
  };
}

export function buildRequest(state: ConsoleState): RenderRequest {
  const request: RenderRequest = {
    camera_id: state.cameraId,
    image_id: state.imageA,
    sun: state.cloudy ? "cloudy" : { direction: directionFromPolar(state.sun) },
    outputs: [...OUTPUT_NAMES],
  };
  if (state.imageB !== null) {
    request.image_id_b = state.imageB;
    request.t = state.t;
    request.components = (Object.keys(state.components) as ComponentRole[]).filter(
      (role) => state.components[role],
    );
  }
  return request;
}
