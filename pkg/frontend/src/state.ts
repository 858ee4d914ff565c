// Session state: the loaded graph, per-node pins, the last service
// response, and the k selector. Serializes to a URL-safe string for
// session restore and to a JSON document for audit export.

import type { GraphSummary, Pin, PredictRequestBody, PredictResponse } from "./types.js";

export interface SessionState {
  bundleId: string | null;
  graph: GraphSummary | null;
  pins: Record<string, Pin>;
  k: number;
  lastResponse: PredictResponse | null;
}

export function newSession(): SessionState {
  return { bundleId: null, graph: null, pins: {}, k: 3, lastResponse: null };
}

export function validatePins(state: SessionState): void {
  if (!state.graph) {
    if (Object.keys(state.pins).length > 0) throw new Error("pins without a loaded graph");
    return;
  }
  const ids = new Set(state.graph.nodes.map((n) => n.id));
  for (const nodeId of Object.keys(state.pins)) {
    if (!ids.has(nodeId)) throw new Error(`pin references unknown node ${nodeId}`);
  }
}

export function buildPredictRequest(state: SessionState): PredictRequestBody {
  if (!state.bundleId) throw new Error("no graph loaded");
  const known: Record<string, string> = {};
  const tiers: Record<string, string[]> = {};
  for (const [nodeId, pin] of Object.entries(state.pins)) {
    if (pin.kind === "material") known[nodeId] = pin.materialId;
    else tiers[nodeId] = [...pin.tiers];
  }
  return {
    bundle_id: state.bundleId,
    known_materials: known,
    tier_constraints: tiers,
    k: state.k,
  };
}

// -- URL-safe serialization -------------------------------------------------

function toBase64Url(text: string): string {
  const bytes = new TextEncoder().encode(text);
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
}

function fromBase64Url(encoded: string): string {
  const padded = encoded.replace(/-/g, "+").replace(/_/g, "/");
  const binary = atob(padded + "=".repeat((4 - (padded.length % 4)) % 4));
  const bytes = Uint8Array.from(binary, (c) => c.charCodeAt(0));
  return new TextDecoder().decode(bytes);
}

export function serializeState(state: SessionState): string {
  return toBase64Url(JSON.stringify(state));
}

export function restoreState(encoded: string): SessionState {
  const state = JSON.parse(fromBase64Url(encoded)) as SessionState;
  validatePins(state);
  return state;
}

// -- audit export -----------------------------------------------------------

export interface SessionExport {
  format: "matgraph-session/1";
  checkpoint_id: string | null;
  bundle_id: string | null;
  k: number;
  pins: Record<string, Pin>;
  graph: GraphSummary | null;
  predictions: PredictResponse | null;
}

export function exportSession(state: SessionState): SessionExport {
  return {
    format: "matgraph-session/1",
    checkpoint_id: state.lastResponse ? state.lastResponse.model.checkpoint_id : null,
    bundle_id: state.bundleId,
    k: state.k,
    pins: JSON.parse(JSON.stringify(state.pins)),
    graph: state.graph ? JSON.parse(JSON.stringify(state.graph)) : null,
    predictions: state.lastResponse ? JSON.parse(JSON.stringify(state.lastResponse)) : null,
  };
}

export function importSession(doc: SessionExport): SessionState {
  if (doc.format !== "matgraph-session/1") {
    throw new Error(`unsupported session format ${String(doc.format)}`);
  }
  const state: SessionState = {
    bundleId: doc.bundle_id,
    graph: doc.graph,
    pins: doc.pins ?? {},
    k: doc.k ?? 3,
    lastResponse: doc.predictions,
  };
  validatePins(state);
  return state;
}
