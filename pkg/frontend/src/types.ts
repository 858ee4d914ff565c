// Wire types mirroring the inference service API (docs/service-api.md).

export type EdgeKind = "contact" | "joint" | "hierarchical";

export interface GraphNode {
  id: string;
  name: string;
  occurrence: string;
  area: number;
  volume: number;
  depth: number;
  label_material_id: string;
}

export interface GraphEdge {
  source: string;
  target: string;
  kind: EdgeKind;
}

export interface GraphSummary {
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface UploadResponse {
  bundle_id: string;
  graph: GraphSummary;
}

export interface PredictItem {
  material_id: string;
  name: string;
  probability: number;
}

export interface PredictNodeResult {
  node_id: string;
  echoed: boolean;
  empty_candidates: boolean;
  items: PredictItem[];
}

export interface PredictResponse {
  nodes: PredictNodeResult[];
  model: { checkpoint_id: string; schema_hash: string };
}

export interface ClassInfo {
  material_id: string;
  name: string;
  tiers: [string, string, string];
}

export interface ModelMetadata {
  checkpoint_id: string;
  schema_hash: string;
  classes: ClassInfo[];
  tier_values: { tier1: string[]; tier2: string[]; tier3: string[] };
  has_material_block: boolean;
  tier_depth: number;
}

export interface PredictRequestBody {
  bundle_id: string;
  known_materials: Record<string, string>;
  tier_constraints: Record<string, string[]>;
  k: number;
}

/** A per-node pin: either a known material or a tier constraint. */
export type Pin =
  | { kind: "material"; materialId: string }
  | { kind: "tier"; tiers: string[] };
