import { describe, expect, it } from "vitest";

import { buildRequest, initialState } from "../src/state.js";
import { SceneMeta } from "../src/types.js";

const meta: SceneMeta = {
  gaussians: 100,
  stages: ["ambient", "decompose", "bake"],
  baked: true,
  cameras: [
    { id: 0, width: 32, height: 32 },
    { id: 1, width: 32, height: 32 },
  ],
  images: [
    { id: 0, camera: 0, sunny: true },
    { id: 1, camera: 1, sunny: true },
    { id: 2, camera: 0, sunny: false },
  ],
};

describe("initialState", () => {
  it("starts on the first sunny image with a directional sun", () => {
    const state = initialState(meta);
    expect(state.imageA).toBe(0);
    expect(state.imageB).toBeNull();
    expect(state.cloudy).toBe(false);
  });

  it("falls back to cloudy when the scene has no bake", () => {
    const state = initialState({ ...meta, baked: false, stages: ["ambient", "decompose"] });
    expect(state.cloudy).toBe(true);
  });
});

describe("buildRequest", () => {
  it("omits interpolation fields when no second image is chosen", () => {
    const request = buildRequest(initialState(meta));
    expect(request.image_id).toBe(0);
    expect(request).not.toHaveProperty("image_id_b");
    expect(request).not.toHaveProperty("t");
    expect(request).not.toHaveProperty("components");
    expect(request.outputs).toContain("composite");
    expect(request.outputs).toContain("visibility");
  });

  it("carries t and the checked components when interpolating", () => {
    const state = initialState(meta);
    state.imageB = 1;
    state.t = 0.75;
    state.components.sky = false;
    const request = buildRequest(state);
    expect(request.image_id_b).toBe(1);
    expect(request.t).toBe(0.75);
    expect(request.components).toEqual(["sun", "ind"]);
  });

  it("encodes the hemisphere polar angles as a unit direction", () => {
    const state = initialState(meta);
    state.sun = { thetaDeg: 30, phiDeg: 90 };
    const request = buildRequest(state);
    const sun = request.sun as { direction: [number, number, number] };
    expect(sun.direction[0]).toBeCloseTo(0, 12);
    expect(sun.direction[1]).toBeCloseTo(0.5, 12);
    expect(sun.direction[2]).toBeCloseTo(Math.sqrt(3) / 2, 12);
  });

  it("sends the cloudy sentinel when toggled", () => {
    const state = initialState(meta);
    state.cloudy = true;
    expect(buildRequest(state).sun).toBe("cloudy");
  });
});
