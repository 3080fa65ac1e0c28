import { describe, expect, it } from "vitest";

import {
  directionFromPolar,
  offsetFromPolar,
  polarFromOffset,
  THETA_MAX_DEG,
} from "../src/hemisphere.js";

function norm(v: [number, number, number]): number {
  return Math.hypot(v[0], v[1], v[2]);
}

describe("directionFromPolar", () => {
  it("is unit length across the disc", () => {
    for (let theta = 0; theta <= THETA_MAX_DEG; theta += 17) {
      for (let phi = -180; phi <= 180; phi += 30) {
        expect(norm(directionFromPolar({ thetaDeg: theta, phiDeg: phi }))).toBeCloseTo(1, 12);
      }
    }
  });

  it("sends the center to the zenith", () => {
    const [x, y, z] = directionFromPolar({ thetaDeg: 0, phiDeg: 123 });
    expect(x).toBeCloseTo(0, 12);
    expect(y).toBeCloseTo(0, 12);
    expect(z).toBeCloseTo(1, 12);
  });

  it("keeps z = cos theta", () => {
    const d = directionFromPolar({ thetaDeg: THETA_MAX_DEG, phiDeg: 0 });
    expect(d[2]).toBeCloseTo(Math.cos((THETA_MAX_DEG * Math.PI) / 180), 12);
    expect(d[2]).toBeGreaterThan(0); // stays above the horizon
  });
});

describe("polarFromOffset", () => {
  it("maps an upward drag to phi = 90 (north, +y)", () => {
    const p = polarFromOffset(0, -50, 100);
    expect(p.phiDeg).toBeCloseTo(90, 10);
    expect(p.thetaDeg).toBeCloseTo(THETA_MAX_DEG / 2, 10);
  });

  it("clamps points beyond the rim to the maximum zenith angle", () => {
    const p = polarFromOffset(500, 123, 100);
    expect(p.thetaDeg).toBe(THETA_MAX_DEG);
    const d = directionFromPolar(p);
    expect(d[2]).toBeGreaterThan(0);
  });

  it("round-trips through offsetFromPolar", () => {
    for (const polar of [
      { thetaDeg: 20, phiDeg: 45 },
      { thetaDeg: 60, phiDeg: -120 },
      { thetaDeg: THETA_MAX_DEG, phiDeg: 179 },
    ]) {
      const { dx, dy } = offsetFromPolar(polar, 90);
      const back = polarFromOffset(dx, dy, 90);
      expect(back.thetaDeg).toBeCloseTo(polar.thetaDeg, 8);
      expect(back.phiDeg).toBeCloseTo(polar.phiDeg, 8);
    }
  });

  it("treats the exact center as the zenith with a defined azimuth", () => {
    const p = polarFromOffset(0, 0, 100);
    expect(p.thetaDeg).toBe(0);
    expect(Number.isFinite(p.phiDeg)).toBe(true);
  });
});
