/** Sketchpad application: pick a scene, draw a query sketch over it, and
 * watch ranked grasp rectangles come back from the service. */

import { ApiClient, ApiError, SceneEntry } from "./api.js";
import { drawGrasps, Grasp } from "./overlay.js";
import { SketchPad, toWireStrokes } from "./strokes.js";

const QUERY_DEBOUNCE_MS = 300;
const INK = "#222222";

export class App {
  private readonly pad = new SketchPad();
  private grasps: Grasp[] = [];
  private sceneId: string | null = null;
  private sceneImage: HTMLImageElement | null = null;
  private debounceTimer: number | null = null;
  private toastTimer: number | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly canvas: HTMLCanvasElement,
    private readonly sceneList: HTMLElement,
    private readonly kSlider: HTMLInputElement,
    private readonly kLabel: HTMLElement,
    private readonly status: HTMLElement,
    private readonly toast: HTMLElement,
  ) {}

  async start(): Promise<void> {
    this.canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    this.canvas.addEventListener("pointerup", (e) => this.onPointerUp(e));
    this.canvas.addEventListener("pointercancel", (e) => this.onPointerUp(e));
    this.kSlider.addEventListener("input", () => {
      this.kLabel.textContent = this.kSlider.value;
      this.scheduleQuery();
    });
    document.getElementById("undo")?.addEventListener("click", () => {
      this.pad.undo();
      if (this.pad.isEmpty) {
        this.grasps = [];
        this.status.textContent = "";
      }
      this.render();
      this.scheduleQuery();
    });
    document.getElementById("clear")?.addEventListener("click", () => {
      this.pad.clear();
      this.grasps = [];
      this.status.textContent = "";
      this.render();
    });

    this.kLabel.textContent = this.kSlider.value;
    try {
      const scenes = await this.api.scenes();
      this.buildSceneList(scenes);
      if (scenes.length > 0) await this.selectScene(scenes[0].id);
    } catch (err) {
      this.showToast(err instanceof Error ? err.message : String(err));
    }
  }

  private buildSceneList(scenes: SceneEntry[]): void {
    this.sceneList.replaceChildren();
    for (const scene of scenes) {
      const button = document.createElement("button");
      button.className = "scene-thumb";
      button.title = `${scene.id}: ${scene.categories.join(", ")}`;
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${scene.thumbnail_png_base64}`;
      img.alt = scene.categories.join(", ");
      button.appendChild(img);
      button.addEventListener("click", () => void this.selectScene(scene.id));
      this.sceneList.appendChild(button);
    }
  }

  private async selectScene(sceneId: string): Promise<void> {
    this.sceneId = sceneId;
    this.pad.clear();
    this.grasps = [];
    this.status.textContent = "";
    const img = new Image();
    img.src = this.api.sceneImageUrl(sceneId);
    await img.decode().catch(() => undefined);
    this.sceneImage = img;
    this.render();
  }

  private canvasPoint(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((e.clientX - rect.left) / rect.width) * this.canvas.width,
      y: ((e.clientY - rect.top) / rect.height) * this.canvas.height,
    };
  }

  private onPointerDown(e: PointerEvent): void {
    if (this.debounceTimer !== null) {
      window.clearTimeout(this.debounceTimer);
      this.debounceTimer = null;
    }
    this.canvas.setPointerCapture(e.pointerId);
    const p = this.canvasPoint(e);
    this.pad.penDown(p.x, p.y);
    this.render();
  }

  private onPointerMove(e: PointerEvent): void {
    if (this.pad.pending === null) return;
    const p = this.canvasPoint(e);
    this.pad.penMove(p.x, p.y);
    this.render();
  }

  private onPointerUp(e: PointerEvent): void {
    this.canvas.releasePointerCapture(e.pointerId);
    if (this.pad.penUp()) this.scheduleQuery();
    this.render();
  }

  /** Queue a query once drawing settles; each new stroke restarts the
   * countdown so mid-sketch requests do not fire. */
  private scheduleQuery(): void {
    if (this.debounceTimer !== null) window.clearTimeout(this.debounceTimer);
    this.debounceTimer = window.setTimeout(() => {
      this.debounceTimer = null;
      void this.runQuery();
    }, QUERY_DEBOUNCE_MS);
  }

  private async runQuery(): Promise<void> {
    if (this.sceneId === null || this.pad.isEmpty) return;
    this.status.textContent = "querying...";
    try {
      const result = await this.api.infer(
        this.sceneId,
        toWireStrokes(this.pad.strokes),
        Number(this.kSlider.value),
      );
      if (result === null) return; // a newer query took over
      this.grasps = result.grasps;
      this.status.textContent = `${result.grasps.length} grasps in ${result.elapsed_ms.toFixed(0)} ms`;
      this.render();
    } catch (err) {
      this.status.textContent = "";
      if (err instanceof ApiError) {
        this.showToast(`${err.status}: ${err.message}`);
      } else {
        this.showToast(err instanceof Error ? err.message : String(err));
      }
    }
  }

  private showToast(message: string): void {
    this.toast.textContent = message;
    this.toast.classList.add("visible");
    if (this.toastTimer !== null) window.clearTimeout(this.toastTimer);
    this.toastTimer = window.setTimeout(() => {
      this.toast.classList.remove("visible");
      this.toastTimer = null;
    }, 4000);
  }

  private render(): void {
    const ctx = this.canvas.getContext("2d");
    if (ctx === null) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.sceneImage !== null) {
      ctx.drawImage(this.sceneImage, 0, 0, this.canvas.width, this.canvas.height);
    }
    ctx.strokeStyle = INK;
    ctx.lineWidth = 2;
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    const paths = [...this.pad.strokes];
    if (this.pad.pending !== null && this.pad.pending.length > 1) {
      paths.push([...this.pad.pending]);
    }
    for (const stroke of paths) {
      ctx.beginPath();
      ctx.moveTo(stroke[0].x, stroke[0].y);
      for (let i = 1; i < stroke.length; i += 1) ctx.lineTo(stroke[i].x, stroke[i].y);
      ctx.stroke();
    }
    drawGrasps(ctx, this.grasps);
  }
}

export function main(): void {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "http://127.0.0.1:8420";
  const app = new App(
    new ApiClient(base),
    document.getElementById("pad") as HTMLCanvasElement,
    document.getElementById("scenes") as HTMLElement,
    document.getElementById("k") as HTMLInputElement,
    document.getElementById("k-value") as HTMLElement,
    document.getElementById("status") as HTMLElement,
    document.getElementById("toast") as HTMLElement,
  );
  void app.start();
}
