// Controller: wires the service client, session state, and views.
// Every pin change issues one debounced predict request (latest wins);
// a rejected pin is reverted with a toast.

import { ServiceClient, ServiceError } from "./api.js";
import { forceLayout } from "./layout.js";
import { LatestWins, debounce, type Debounced } from "./scheduler.js";
import {
  SessionState,
  buildPredictRequest,
  exportSession,
  importSession,
  newSession,
  restoreState,
  serializeState,
  type SessionExport,
} from "./state.js";
import type { ModelMetadata, Pin } from "./types.js";
import { banner, renderChips, renderGraph, renderNodePanel, toast } from "./view.js";

export interface AppElements {
  svg: SVGSVGElement;
  panel: HTMLElement;
  chips: HTMLElement;
  toasts: HTMLElement;
  banner: HTMLElement;
  modelInfo: HTMLElement;
}

export interface AppOptions {
  debounceMs?: number;
  layoutSeed?: number;
}

export class AdvisorApp {
  state: SessionState = newSession();
  metadata: ModelMetadata | null = null;
  selected: string | null = null;

  private readonly scheduler = new LatestWins();
  private readonly schedulePredict: Debounced<[]>;

  constructor(
    readonly client: ServiceClient,
    readonly elements: AppElements,
    options: AppOptions = {},
  ) {
    this.layoutSeed = options.layoutSeed ?? 1;
    this.schedulePredict = debounce(() => {
      void this.predictNow();
    }, options.debounceMs ?? 250);
  }

  private readonly layoutSeed: number;

  async start(): Promise<void> {
    try {
      this.metadata = await this.client.getModel();
      this.elements.modelInfo.textContent =
        `checkpoint ${this.metadata.checkpoint_id} · ${this.metadata.classes.length} classes`;
      banner(this.elements.banner, "");
    } catch (error) {
      banner(this.elements.banner, this.describe(error, "service unreachable"));
    }
  }

  async loadAssembly(doc: unknown): Promise<void> {
    try {
      const uploaded = await this.client.uploadAssembly(doc);
      this.state = newSession();
      this.state.bundleId = uploaded.bundle_id;
      this.state.graph = uploaded.graph;
      this.selected = null;
      banner(this.elements.banner, "");
      this.renderAll();
      this.schedulePredict();
    } catch (error) {
      banner(this.elements.banner, this.describe(error, "upload rejected"));
    }
  }

  select(nodeId: string): void {
    this.selected = nodeId;
    this.renderAll();
  }

  setPin(nodeId: string, pin: Pin): void {
    const previous = this.state.pins[nodeId];
    this.state.pins[nodeId] = pin;
    this.renderAll();
    this.requestWithRevert(nodeId, previous);
  }

  unpin(nodeId: string): void {
    const previous = this.state.pins[nodeId];
    if (previous === undefined) return;
    delete this.state.pins[nodeId];
    this.renderAll();
    this.requestWithRevert(nodeId, previous);
  }

  setK(k: number): void {
    this.state.k = k;
    this.schedulePredict();
  }

  exportSession(): SessionExport {
    return exportSession(this.state);
  }

  importSession(doc: SessionExport): void {
    this.state = importSession(doc);
    this.selected = null;
    this.renderAll();
  }

  sessionUrlFragment(): string {
    return serializeState(this.state);
  }

  restoreFromFragment(fragment: string): void {
    this.state = restoreState(fragment);
    this.renderAll();
  }

  /** Issue the debounced predict for a pin change; on a 4xx the pin
   * reverts and the previous predictions stay on screen. */
  private requestWithRevert(nodeId: string, previous: Pin | undefined): void {
    if (!this.state.bundleId) return;
    this.pendingRevert = { nodeId, previous };
    this.schedulePredict();
  }

  private pendingRevert: { nodeId: string; previous: Pin | undefined } | null = null;

  async predictNow(): Promise<void> {
    if (!this.state.bundleId) return;
    const revert = this.pendingRevert;
    try {
      const response = await this.scheduler.run((signal) =>
        this.client.predict(buildPredictRequest(this.state), signal),
      );
      if (response === undefined) return; // superseded by a newer request
      this.state.lastResponse = response;
      this.pendingRevert = null;
      this.renderAll();
    } catch (error) {
      if (error instanceof ServiceError && error.status < 500 && revert) {
        if (revert.previous === undefined) delete this.state.pins[revert.nodeId];
        else this.state.pins[revert.nodeId] = revert.previous;
        this.pendingRevert = null;
        toast(this.elements.toasts, `pin rejected: ${error.reason}`);
        this.renderAll();
      } else {
        toast(this.elements.toasts, this.describe(error, "prediction failed"));
      }
    }
  }

  flushPending(): void {
    this.schedulePredict.flush();
  }

  renderAll(): void {
    const { svg, panel, chips } = this.elements;
    if (this.state.graph) {
      // parse the viewBox attribute directly; SVGSVGElement.viewBox is
      // unavailable in some DOM implementations
      const viewBox = (svg.getAttribute("viewBox") ?? "0 0 640 480").split(/\s+/).map(Number);
      const positions = forceLayout(
        this.state.graph.nodes.map((n) => n.id),
        this.state.graph.edges,
        viewBox[2] || 640,
        viewBox[3] || 480,
        120,
        this.layoutSeed,
      );
      renderGraph(svg, this.state.graph, positions, this.selected,
        new Set(Object.keys(this.state.pins)), { onSelect: (id) => this.select(id) });
    } else {
      svg.textContent = "";
    }
    renderNodePanel(panel, this.state.graph, this.selected,
      this.selected ? this.state.pins[this.selected] : undefined, this.metadata, {
        onPinMaterial: (id, materialId) => this.setPin(id, { kind: "material", materialId }),
        onPinTier: (id, tiers) => this.setPin(id, { kind: "tier", tiers }),
        onUnpin: (id) => this.unpin(id),
      });
    renderChips(chips, this.state.graph, this.state.lastResponse, this.state.pins);
  }

  private describe(error: unknown, fallback: string): string {
    if (error instanceof ServiceError) return `${fallback}: ${error.reason}`;
    if (error instanceof Error) return `${fallback}: ${error.message}`;
    return fallback;
  }
}
