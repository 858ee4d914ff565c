// DOM rendering: SVG node-link view, node detail panel, recommendation
// chips, toasts. Chips show exactly the values of the last service
// response; nothing is recomputed client-side.

import type { Point } from "./layout.js";
import type {
  GraphSummary,
  ModelMetadata,
  Pin,
  PredictResponse,
} from "./types.js";

const SVG_NS = "http://www.w3.org/2000/svg";

const EDGE_CLASS: Record<string, string> = {
  contact: "edge-contact",
  joint: "edge-joint",
  hierarchical: "edge-hierarchical",
};

export interface GraphViewCallbacks {
  onSelect(nodeId: string): void;
}

export function renderGraph(
  svg: SVGSVGElement,
  graph: GraphSummary,
  positions: Map<string, Point>,
  selected: string | null,
  pinned: Set<string>,
  callbacks: GraphViewCallbacks,
): void {
  svg.textContent = "";
  for (const edge of graph.edges) {
    const a = positions.get(edge.source);
    const b = positions.get(edge.target);
    if (!a || !b) continue;
    const line = document.createElementNS(SVG_NS, "line");
    line.setAttribute("x1", String(a.x));
    line.setAttribute("y1", String(a.y));
    line.setAttribute("x2", String(b.x));
    line.setAttribute("y2", String(b.y));
    line.setAttribute("class", `edge ${EDGE_CLASS[edge.kind] ?? ""}`);
    svg.appendChild(line);
  }
  for (const node of graph.nodes) {
    const p = positions.get(node.id);
    if (!p) continue;
    const group = document.createElementNS(SVG_NS, "g");
    group.setAttribute("class", [
      "node",
      selected === node.id ? "node-selected" : "",
      pinned.has(node.id) ? "node-pinned" : "",
    ].join(" ").trim());
    group.setAttribute("data-node-id", node.id);
    const circle = document.createElementNS(SVG_NS, "circle");
    circle.setAttribute("cx", String(p.x));
    circle.setAttribute("cy", String(p.y));
    circle.setAttribute("r", "14");
    const label = document.createElementNS(SVG_NS, "text");
    label.setAttribute("x", String(p.x));
    label.setAttribute("y", String(p.y - 18));
    label.setAttribute("text-anchor", "middle");
    label.textContent = node.name || node.id;
    group.appendChild(circle);
    group.appendChild(label);
    group.addEventListener("click", () => callbacks.onSelect(node.id));
    svg.appendChild(group);
  }
}

export interface PanelCallbacks {
  onPinMaterial(nodeId: string, materialId: string): void;
  onPinTier(nodeId: string, tiers: string[]): void;
  onUnpin(nodeId: string): void;
}

export function renderNodePanel(
  root: HTMLElement,
  graph: GraphSummary | null,
  nodeId: string | null,
  pin: Pin | undefined,
  metadata: ModelMetadata | null,
  callbacks: PanelCallbacks,
): void {
  root.textContent = "";
  const node = graph?.nodes.find((n) => n.id === nodeId);
  if (!node) {
    const empty = document.createElement("p");
    empty.className = "panel-empty";
    empty.textContent = "Select a body to inspect and pin it.";
    root.appendChild(empty);
    return;
  }

  const title = document.createElement("h3");
  title.textContent = node.name || node.id;
  root.appendChild(title);

  const props = document.createElement("dl");
  props.className = "node-props";
  const rows: Array<[string, string]> = [
    ["Body", node.name || "(unnamed)"],
    ["Occurrence", node.occurrence || "(root)"],
    ["Depth", String(node.depth)],
    ["Area", `${node.area.toPrecision(4)} m²`],
    ["Volume", `${node.volume.toPrecision(4)} m³`],
  ];
  for (const [key, value] of rows) {
    const dt = document.createElement("dt");
    dt.textContent = key;
    const dd = document.createElement("dd");
    dd.textContent = value;
    props.appendChild(dt);
    props.appendChild(dd);
  }
  root.appendChild(props);

  if (!metadata) return;

  const pinBox = document.createElement("div");
  pinBox.className = "pin-controls";

  const materialSelect = document.createElement("select");
  materialSelect.className = "pin-material-select";
  const blank = document.createElement("option");
  blank.value = "";
  blank.textContent = "pin a known material…";
  materialSelect.appendChild(blank);
  for (const cls of metadata.classes) {
    if (cls.material_id === "OTHER") continue;
    const option = document.createElement("option");
    option.value = cls.material_id;
    option.textContent = cls.name;
    if (pin?.kind === "material" && pin.materialId === cls.material_id) {
      option.selected = true;
    }
    materialSelect.appendChild(option);
  }
  materialSelect.addEventListener("change", () => {
    if (materialSelect.value) callbacks.onPinMaterial(node.id, materialSelect.value);
  });
  pinBox.appendChild(materialSelect);

  const tierSelect = document.createElement("select");
  tierSelect.className = "pin-tier-select";
  const tierBlank = document.createElement("option");
  tierBlank.value = "";
  tierBlank.textContent = "constrain tier 1…";
  tierSelect.appendChild(tierBlank);
  for (const value of metadata.tier_values.tier1) {
    const option = document.createElement("option");
    option.value = value;
    option.textContent = value;
    if (pin?.kind === "tier" && pin.tiers[0] === value) option.selected = true;
    tierSelect.appendChild(option);
  }
  tierSelect.addEventListener("change", () => {
    if (tierSelect.value) callbacks.onPinTier(node.id, [tierSelect.value]);
  });
  pinBox.appendChild(tierSelect);

  if (pin) {
    const unpin = document.createElement("button");
    unpin.className = "unpin-button";
    unpin.textContent = "unpin";
    unpin.addEventListener("click", () => callbacks.onUnpin(node.id));
    pinBox.appendChild(unpin);
  }
  root.appendChild(pinBox);
}

export function renderChips(
  root: HTMLElement,
  graph: GraphSummary | null,
  response: PredictResponse | null,
  pins: Record<string, Pin>,
): void {
  root.textContent = "";
  if (!graph) return;
  const byNode = new Map(response?.nodes.map((n) => [n.node_id, n]) ?? []);
  for (const node of graph.nodes) {
    const row = document.createElement("div");
    row.className = "chip-row";
    row.dataset.nodeId = node.id;

    const name = document.createElement("span");
    name.className = "chip-node-name";
    name.textContent = node.name || node.id;
    row.appendChild(name);

    const result = byNode.get(node.id);
    if (result?.echoed) row.classList.add("chip-row-echoed");
    if (pins[node.id]) row.classList.add("chip-row-pinned");

    if (!result) {
      const placeholder = document.createElement("span");
      placeholder.className = "chip-placeholder";
      placeholder.textContent = "…";
      row.appendChild(placeholder);
    } else if (result.empty_candidates) {
      const none = document.createElement("span");
      none.className = "chip-empty";
      none.textContent = "no materials satisfy the constraint";
      row.appendChild(none);
    } else {
      for (const item of result.items) {
        const chip = document.createElement("span");
        chip.className = "chip" + (result.echoed ? " chip-echoed" : "");
        chip.dataset.materialId = item.material_id;
        chip.dataset.probability = String(item.probability);
        const bar = document.createElement("span");
        bar.className = "chip-bar";
        bar.style.width = `${Math.round(item.probability * 100)}%`;
        const text = document.createElement("span");
        text.className = "chip-text";
        text.textContent = `${item.name} ${(item.probability * 100).toFixed(1)}%`;
        chip.appendChild(bar);
        chip.appendChild(text);
        row.appendChild(chip);
      }
    }
    root.appendChild(row);
  }
}

export function toast(root: HTMLElement, message: string): void {
  const el = document.createElement("div");
  el.className = "toast";
  el.textContent = message;
  root.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}

export function banner(root: HTMLElement, message: string): void {
  root.textContent = message;
  root.classList.toggle("banner-visible", message.length > 0);
}
