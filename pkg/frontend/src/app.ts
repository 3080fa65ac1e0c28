/** Relighting console: wires the controls to the render service.
 *
 * Every control change funnels through one debounced latest-wins
 * scheduler, so at most one render request is in flight per burst of
 * adjustments and stale frames never land.
 */

import { ApiError, RenderClient } from "./api.js";
import { LatestWins } from "./gate.js";
import { HemisphereWidget } from "./hemisphere.js";
import { buildRequest, ConsoleState, initialState } from "./state.js";
import { ComponentRole, RenderRequest, RenderResult, SceneMeta } from "./types.js";

const PREVIEWS = ["sun", "sky", "ind", "reflectance", "visibility"] as const;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showBanner(text: string): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = text;
  banner.hidden = false;
}

function setBusy(busy: boolean): void {
  document.body.classList.toggle("busy", busy);
}

class Console {
  private state: ConsoleState;
  private scheduler: LatestWins<RenderRequest, RenderResult>;
  private urls: string[] = [];

  constructor(
    private client: RenderClient,
    meta: SceneMeta,
  ) {
    this.state = initialState(meta);
    this.scheduler = new LatestWins(
      (request) => {
        setBusy(true);
        return this.client.render(request);
      },
      (result) => this.applyResult(result),
      (error) => this.applyError(error),
    );

    const imageA = el<HTMLSelectElement>("image-a");
    const imageB = el<HTMLSelectElement>("image-b");
    for (const img of meta.images) {
      const label = `image ${img.id} (cam ${img.camera}, ${img.sunny ? "sunny" : "cloudy"})`;
      imageA.add(new Option(label, String(img.id)));
      imageB.add(new Option(label, String(img.id)));
    }
    imageB.add(new Option("none", ""), 0);
    imageA.value = String(this.state.imageA);
    imageB.value = "";
    imageA.onchange = () => this.update((s) => (s.imageA = Number(imageA.value)));
    imageB.onchange = () => {
      this.update((s) => (s.imageB = imageB.value === "" ? null : Number(imageB.value)));
      this.syncDisabled();
    };

    const camera = el<HTMLSelectElement>("camera");
    for (const cam of meta.cameras) {
      camera.add(new Option(`camera ${cam.id} (${cam.width}x${cam.height})`, String(cam.id)));
    }
    camera.onchange = () => this.update((s) => (s.cameraId = Number(camera.value)));

    const slider = el<HTMLInputElement>("t-slider");
    slider.oninput = () => {
      el<HTMLSpanElement>("t-value").textContent = Number(slider.value).toFixed(2);
      this.update((s) => (s.t = Number(slider.value)));
    };

    for (const role of ["sun", "sky", "ind"] as ComponentRole[]) {
      const box = el<HTMLInputElement>(`component-${role}`);
      box.onchange = () => this.update((s) => (s.components[role] = box.checked));
    }

    const cloudy = el<HTMLInputElement>("cloudy");
    cloudy.checked = this.state.cloudy;
    if (!meta.baked) {
      cloudy.disabled = true;
      showBanner("scene has no baked visibility cache; sun direction is locked to cloudy");
    }
    cloudy.onchange = () => {
      this.update((s) => (s.cloudy = cloudy.checked));
      this.syncDisabled();
    };

    const widget = new HemisphereWidget(el<HTMLCanvasElement>("hemisphere"), (polar) =>
      this.update((s) => (s.sun = polar)),
    );
    widget.value = this.state.sun;

    this.syncDisabled();
    this.scheduler.requestNow(buildRequest(this.state));
  }

  private syncDisabled(): void {
    const interpolating = this.state.imageB !== null;
    el<HTMLInputElement>("t-slider").disabled = !interpolating;
    for (const role of ["sun", "sky", "ind"]) {
      el<HTMLInputElement>(`component-${role}`).disabled = !interpolating;
    }
    el<HTMLCanvasElement>("hemisphere").classList.toggle("inactive", this.state.cloudy);
  }

  private update(mutate: (state: ConsoleState) => void): void {
    mutate(this.state);
    el<HTMLDivElement>("message").textContent = "";
    this.scheduler.request(buildRequest(this.state));
  }

  private applyResult(result: RenderResult): void {
    setBusy(false);
    for (const url of this.urls) URL.revokeObjectURL(url);
    this.urls = [];
    const show = (imgId: string, bytes: Uint8Array | undefined) => {
      if (!bytes) return;
      const copy = new Uint8Array(bytes);
      const url = URL.createObjectURL(new Blob([copy.buffer], { type: "image/png" }));
      this.urls.push(url);
      el<HTMLImageElement>(imgId).src = url;
    };
    show("viewport", result.parts.get("composite"));
    for (const name of PREVIEWS) show(`preview-${name}`, result.parts.get(name));
    el<HTMLSpanElement>("render-ms").textContent = result.renderMs.toFixed(1);
  }

  private applyError(error: unknown): void {
    setBusy(false);
    if (error instanceof ApiError && error.status < 500) {
      el<HTMLDivElement>("message").textContent = error.message;
    } else {
      showBanner(`render service unreachable: ${error instanceof Error ? error.message : error}`);
      el<HTMLFieldSetElement>("controls").disabled = true;
    }
  }
}

async function main(): Promise<void> {
  const client = new RenderClient("");
  try {
    const meta = await client.fetchMeta();
    el<HTMLSpanElement>("scene-info").textContent =
      `${meta.gaussians} Gaussians, stages: ${meta.stages.join(" > ") || "untrained"}`;
    new Console(client, meta);
  } catch (error) {
    showBanner(`render service unreachable: ${error instanceof Error ? error.message : error}`);
    el<HTMLFieldSetElement>("controls").disabled = true;
  }
}

main();
