/** Sun-direction widget: a disc whose radius is zenith angle.
 *
 * The drag point maps to d = (sin th cos ph, sin th sin ph, cos th)
 * with th clamped to [0, 85 deg] so the direction stays inside the
 * tracer's valid upper hemisphere. Screen y grows downward, so the
 * vertical offset is negated to keep +y (ph = 90 deg) pointing up.
 */

export const THETA_MAX_DEG = 85;

const deg = Math.PI / 180;

export interface Polar {
  thetaDeg: number;
  phiDeg: number;
}

export function directionFromPolar(p: Polar): [number, number, number] {
  const th = p.thetaDeg * deg;
  const ph = p.phiDeg * deg;
  return [Math.sin(th) * Math.cos(ph), Math.sin(th) * Math.sin(ph), Math.cos(th)];
}

/** Pixel offset from the disc center to polar angles; points beyond
 * the rim clamp to the rim's zenith angle. */
export function polarFromOffset(dx: number, dy: number, radius: number): Polar {
  const up = -dy;
  const r = Math.min(1, Math.hypot(dx, up) / radius);
  const phiDeg = r === 0 ? 0 : Math.atan2(up, dx) / deg;
  return { thetaDeg: r * THETA_MAX_DEG, phiDeg };
}

export function offsetFromPolar(p: Polar, radius: number): { dx: number; dy: number } {
  const r = (p.thetaDeg / THETA_MAX_DEG) * radius;
  return { dx: r * Math.cos(p.phiDeg * deg), dy: -r * Math.sin(p.phiDeg * deg) };
}

/** Canvas disc with a draggable sun marker; reports polar changes. */
export class HemisphereWidget {
  private ctx: CanvasRenderingContext2D;
  private polar: Polar = { thetaDeg: 40, phiDeg: 90 };
  private dragging = false;

  constructor(
    private canvas: HTMLCanvasElement,
    private onChange: (p: Polar) => void,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("hemisphere widget needs a 2d canvas context");
    this.ctx = ctx;
    canvas.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      canvas.setPointerCapture(e.pointerId);
      this.track(e);
    });
    canvas.addEventListener("pointermove", (e) => {
      if (this.dragging) this.track(e);
    });
    canvas.addEventListener("pointerup", (e) => {
      this.dragging = false;
      canvas.releasePointerCapture(e.pointerId);
    });
    this.draw();
  }

  get value(): Polar {
    return this.polar;
  }

  set value(p: Polar) {
    this.polar = p;
    this.draw();
  }

  private radius(): number {
    return this.canvas.width / 2 - 6;
  }

  private track(e: PointerEvent): void {
    const rect = this.canvas.getBoundingClientRect();
    const cx = rect.width / 2;
    const cy = rect.height / 2;
    const scale = this.canvas.width / rect.width;
    this.polar = polarFromOffset(
      (e.clientX - rect.left - cx) * scale,
      (e.clientY - rect.top - cy) * scale,
      this.radius(),
    );
    this.draw();
    this.onChange(this.polar);
  }

  draw(): void {
    const { ctx, canvas } = this;
    const c = canvas.width / 2;
    const r = this.radius();
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const sky = ctx.createRadialGradient(c, c, 0, c, c, r);
    sky.addColorStop(0, "#274a78");
    sky.addColorStop(1, "#0d1b2e");
    ctx.fillStyle = sky;
    ctx.beginPath();
    ctx.arc(c, c, r, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#3d5a80";
    ctx.lineWidth = 1;
    for (const frac of [1 / 3, 2 / 3, 1]) {
      ctx.beginPath();
      ctx.arc(c, c, r * frac, 0, 2 * Math.PI);
      ctx.stroke();
    }
    ctx.beginPath();
    ctx.moveTo(c - r, c);
    ctx.lineTo(c + r, c);
    ctx.moveTo(c, c - r);
    ctx.lineTo(c, c + r);
    ctx.stroke();
    const { dx, dy } = offsetFromPolar(this.polar, r);
    ctx.fillStyle = "#ffd166";
    ctx.beginPath();
    ctx.arc(c + dx, c + dy, 7, 0, 2 * Math.PI);
    ctx.fill();
    ctx.strokeStyle = "#b8860b";
    ctx.stroke();
  }
}
