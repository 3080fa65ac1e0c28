/** Contract tests against the real render service on a trained tiny
 * scene, plus a delayed-response fake that proves stale renders are
 * discarded client-side.
 */
import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { createServer, Server } from "node:http";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { RenderClient } from "../src/api.js";
import { LatestWins } from "../src/gate.js";
import { RenderRequest, RenderResult } from "../src/types.js";
import { decodePng } from "./png.js";

const PORT = 18300 + (process.pid % 500);
const BASE = `http://127.0.0.1:${PORT}`;

let bundleDir: string;
let server: ChildProcess;

function cli(...args: string[]): void {
  execFileSync("python3", ["-m", "sunsplat.cli", ...args], { stdio: "pipe" });
}

async function waitForService(base: string, tries = 50): Promise<void> {
  for (let i = 0; i < tries; i++) {
    try {
      const response = await fetch(`${base}/healthz`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error("render service did not come up");
}

beforeAll(async () => {
  bundleDir = mkdtempSync(join(tmpdir(), "sunsplat-ui-"));
  cli("synth", "--out", bundleDir, "--image-size", "32", "--cameras", "2",
      "--density", "6.25", "--seed", "3");
  cli("extract", "--bundle", bundleDir, "--iters", "5");
  cli("decompose", "--bundle", bundleDir, "--iters", "5");
  cli("bake", "--bundle", bundleDir, "--iters", "4", "--directions", "4");
  server = spawn("python3", ["-m", "sunsplat.cli", "serve", "--bundle", bundleDir,
                             "--port", String(PORT)], { stdio: "ignore" });
  await waitForService(BASE);
}, 240_000);

afterAll(() => {
  server?.kill();
  if (bundleDir) rmSync(bundleDir, { recursive: true, force: true });
});

describe("render service contract", () => {
  const client = new RenderClient(BASE);
  const sun = { direction: [0.3, 0.2, 0.93] as [number, number, number] };

  it("reports a trained, baked scene", async () => {
    const meta = await client.fetchMeta();
    expect(meta.baked).toBe(true);
    expect(meta.cameras).toHaveLength(2);
    expect(meta.images.some((img) => img.sunny)).toBe(true);
    expect(meta.images.some((img) => !img.sunny)).toBe(true);
  });

  it("renders t=0 byte-equal to the first image's own render", async () => {
    const lone = await client.render({
      camera_id: 0, image_id: 0, sun, outputs: ["composite"],
    });
    const interp = await client.render({
      camera_id: 0, image_id: 0, image_id_b: 1, t: 0, sun, outputs: ["composite"],
    });
    expect(Buffer.from(interp.parts.get("composite")!).equals(
      Buffer.from(lone.parts.get("composite")!),
    )).toBe(true);
  });

  it("renders t=1 byte-equal to the second image's own render", async () => {
    const lone = await client.render({
      camera_id: 0, image_id: 1, sun, outputs: ["composite"],
    });
    const interp = await client.render({
      camera_id: 0, image_id: 0, image_id_b: 1, t: 1,
      components: ["sun", "sky", "ind"], sun, outputs: ["composite"],
    });
    expect(Buffer.from(interp.parts.get("composite")!).equals(
      Buffer.from(lone.parts.get("composite")!),
    )).toBe(true);
  });

  it("returns an all-zero visibility preview under cloudy sky", async () => {
    const result = await client.render({
      camera_id: 0, image_id: 0, sun: "cloudy", outputs: ["visibility"],
    });
    const png = decodePng(result.parts.get("visibility")!);
    expect(png.width).toBe(32);
    expect(png.height).toBe(32);
    expect(png.pixels.every((v) => v === 0)).toBe(true);
  });

  it("reports the render time header", async () => {
    const result = await client.render({
      camera_id: 0, image_id: 0, sun, outputs: ["composite"],
    });
    expect(Number.isFinite(result.renderMs)).toBe(true);
    expect(result.renderMs).toBeGreaterThan(0);
  });

  it("rejects a bad request with a reason", async () => {
    await expect(
      client.render({ camera_id: 99, image_id: 0, sun, outputs: ["composite"] }),
    ).rejects.toThrow(/camera_id/);
  });
});

describe("stale-response discard", () => {
  let fake: Server;
  let fakePort: number;
  let hits: number;

  beforeAll(async () => {
    hits = 0;
    fake = createServer((request, response) => {
      const n = hits++;
      const marker = n === 0 ? "SLOW" : "FAST";
      const body = Buffer.from(marker);
      const payload = Buffer.concat([
        Buffer.from(
          `--sunsplat-frame\r\nContent-Type: image/png\r\n` +
            `Content-Disposition: inline; name="composite"; filename="composite.png"\r\n` +
            `Content-Length: ${body.length}\r\n\r\n`,
        ),
        body,
        Buffer.from("\r\n--sunsplat-frame--\r\n"),
      ]);
      const send = () => {
        response.writeHead(200, {
          "Content-Type": "multipart/mixed; boundary=sunsplat-frame",
          "Content-Length": String(payload.length),
          "X-Render-Ms": "1.0",
        });
        response.end(payload);
      };
      request.resume();
      // the first request dawdles long enough for a second to land
      if (n === 0) setTimeout(send, 250);
      else send();
    });
    await new Promise<void>((resolve) => fake.listen(0, "127.0.0.1", resolve));
    const address = fake.address();
    if (address === null || typeof address === "string") throw new Error("no port");
    fakePort = address.port;
  });

  afterAll(() => {
    fake.close();
  });

  it("applies only the newest response when an older one arrives late", async () => {
    const client = new RenderClient(`http://127.0.0.1:${fakePort}`);
    const applied: string[] = [];
    const errors: unknown[] = [];
    const wins = new LatestWins<RenderRequest, RenderResult>(
      (request) => client.render(request),
      (result) => applied.push(new TextDecoder().decode(result.parts.get("composite"))),
      (error) => errors.push(error),
      20,
    );
    const request: RenderRequest = {
      camera_id: 0, image_id: 0, sun: "cloudy", outputs: ["composite"],
    };
    wins.requestNow(request); // answered slowly
    await new Promise((r) => setTimeout(r, 60));
    wins.requestNow(request); // answered immediately
    await new Promise((r) => setTimeout(r, 400)); // both responses in
    expect(hits).toBe(2);
    expect(errors).toEqual([]);
    expect(applied).toEqual(["FAST"]);
  });
});
