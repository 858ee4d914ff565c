"""HTTP inference service: serve a trained checkpoint for interactive
material recommendation.

Endpoints:
  POST /v1/predict  -- graph payload + user constraints -> ranked materials
  GET  /v1/model    -- metadata for the loaded checkpoint
  POST /v1/model    -- load a checkpoint from a path (atomic swap)
  POST /v1/graphs   -- upload an assembly JSON, get a cached graph bundle

Requests run against an immutable model snapshot; loading a new
checkpoint replaces the snapshot atomically, so in-flight requests
finish on the model they started with. The training discard rule is
corpus hygiene and is NOT applied here: single-body graphs are served.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .encoding import EmbeddingTable, FeatureEncoders
from .errors import MatgraphError, ParseError, SchemaError
from .graphs import AssemblyGraph, build_graph, bundle_to_graph, graph_to_bundle
from .ingest import MaterialCatalog, ingest_assembly, parse_assembly
from .model import Checkpoint, load_checkpoint, model_forward
from . import OTHER_LABEL


class PredictRequest(BaseModel):
    assembly: dict | None = None
    bundle: dict | None = None
    bundle_id: str | None = None
    known_materials: dict[str, str] = Field(default_factory=dict)
    tier_constraints: dict[str, list[str]] = Field(default_factory=dict)
    k: int = 3


class LoadModelRequest(BaseModel):
    path: str


class UploadGraphRequest(BaseModel):
    assembly: dict


@dataclass
class ModelRuntime:
    """One immutable serving snapshot: checkpoint + rebuilt encoders."""

    checkpoint: Checkpoint
    encoders: FeatureEncoders
    catalog: MaterialCatalog
    checkpoint_id: str
    tier_depth: int
    bundles: dict[str, AssemblyGraph] = field(default_factory=dict)

    @property
    def vocab(self):
        return self.checkpoint.vocab

    @property
    def has_material_block(self) -> bool:
        return "material_onehot" in self.checkpoint.schema

    @property
    def has_tier_block(self) -> bool:
        return "tier_onehot" in self.checkpoint.schema


def _infer_tier_depth(checkpoint: Checkpoint, encoders: FeatureEncoders) -> int:
    if "tier_onehot" not in checkpoint.schema:
        return 0
    width = checkpoint.schema.block("tier_onehot").width
    for depth in (1, 2, 3):
        if encoders.tier_width(depth) == width:
            return depth
    raise SchemaError(f"tier block width {width} matches no depth in 1..3")


def build_runtime(checkpoint_path, catalog_path=None, semantic_table_path=None,
                  visual_table_path=None) -> ModelRuntime:
    path = Path(checkpoint_path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    checkpoint = load_checkpoint(path)
    semantic = EmbeddingTable.load(semantic_table_path) if semantic_table_path else None
    visual = EmbeddingTable.load(visual_table_path) if visual_table_path else None
    encoders = FeatureEncoders.from_state(checkpoint.encoder_state,
                                          semantic=semantic, visual=visual)
    catalog = MaterialCatalog.load(catalog_path) if catalog_path else encoders.catalog
    checkpoint_id = hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    return ModelRuntime(checkpoint=checkpoint, encoders=encoders, catalog=catalog,
                        checkpoint_id=checkpoint_id,
                        tier_depth=_infer_tier_depth(checkpoint, encoders))


def _error(status: int, reason: str, **extra):
    return HTTPException(status_code=status, detail={"reason": reason, **extra})


def _graph_summary(g: AssemblyGraph, record, runtime: ModelRuntime) -> dict:
    kinds = ("contact", "joint", "hierarchical")
    edges = []
    seen = set()
    kind_idx = g.edge_kinds()
    for e in range(g.num_edges):
        u, v = int(g.edge_index[0, e]), int(g.edge_index[1, e])
        key = (min(u, v), max(u, v), int(kind_idx[e]), e // 2)
        if key in seen:
            continue
        seen.add(key)
        edges.append({"source": g.node_ids[min(u, v)], "target": g.node_ids[max(u, v)],
                      "kind": kinds[int(kind_idx[e])]})
    bodies = {b.uuid: b for b in record.bodies}
    nodes = []
    for i, node_id in enumerate(g.node_ids):
        body = bodies[node_id]
        nodes.append({
            "id": node_id,
            "name": body.body_name,
            "occurrence": body.occurrence_name,
            "area": body.area,
            "volume": body.volume,
            "depth": body.depth,
            "label_material_id": runtime.vocab.classes[int(g.y[i])],
        })
    return {"nodes": nodes, "edges": edges}


def _resolve_graph(request: PredictRequest, runtime: ModelRuntime) -> AssemblyGraph:
    sources = [s for s in (request.assembly, request.bundle, request.bundle_id) if s is not None]
    if len(sources) != 1:
        raise _error(400, "exactly one of assembly, bundle, bundle_id required")
    if request.bundle_id is not None:
        g = runtime.bundles.get(request.bundle_id)
        if g is None:
            raise _error(404, f"unknown bundle id {request.bundle_id}")
        return g
    if request.bundle is not None:
        try:
            g = bundle_to_graph(request.bundle)
        except (KeyError, ValueError, SchemaError) as exc:
            raise _error(400, f"invalid bundle: {exc}")
        if g.schema.to_json() != runtime.checkpoint.schema.to_json():
            raise _error(400, "bundle schema does not match checkpoint schema")
        return g
    _record, g = _build_from_assembly(request.assembly, runtime)
    return g


def _build_from_assembly(doc: dict, runtime: ModelRuntime):
    try:
        raw = parse_assembly(json.dumps(doc), assembly_id=str(doc.get("assembly_id", "upload")))
        record = ingest_assembly(raw, runtime.catalog)
        graph = build_graph(record, runtime.encoders, runtime.vocab,
                            material_block=runtime.has_material_block,
                            tier_depth=runtime.tier_depth)
        return record, graph
    except (ParseError, SchemaError, MatgraphError) as exc:
        raise _error(400, f"invalid assembly: {exc}")


def _apply_constraints(g: AssemblyGraph, request: PredictRequest,
                       runtime: ModelRuntime) -> AssemblyGraph:
    node_index = {nid: i for i, nid in enumerate(g.node_ids)}
    out = g.copy()

    for node_id, material_id in request.known_materials.items():
        if node_id not in node_index:
            raise _error(422, f"unknown node id {node_id}")
        if material_id not in runtime.vocab.classes:
            raise _error(422, f"unknown material id {material_id}")
        if not runtime.has_material_block:
            raise _error(400, "checkpoint schema has no material_onehot block; "
                              "known_materials not supported")
        cols = out.schema.columns("material_onehot")
        row = np.zeros(cols.stop - cols.start, dtype=np.float32)
        row[runtime.vocab.classes.index(material_id)] = 1.0
        out.X[node_index[node_id], cols] = row

    enc = runtime.encoders
    tier_vocabs = (enc.tier1, enc.tier2, enc.tier3)
    for node_id, tiers in request.tier_constraints.items():
        if node_id not in node_index:
            raise _error(422, f"unknown node id {node_id}")
        if not 1 <= len(tiers) <= 3:
            raise _error(422, "tier constraint must list 1..3 tier values")
        for depth_i, value in enumerate(tiers):
            if value not in tier_vocabs[depth_i].values:
                raise _error(422, f"unknown tier{depth_i + 1} value {value!r}")
        if not runtime.has_tier_block:
            raise _error(400, "checkpoint schema has no tier_onehot block; "
                              "tier_constraints cannot be featurized")
        if len(tiers) > runtime.tier_depth:
            raise _error(400, f"checkpoint tier block covers depth {runtime.tier_depth}, "
                              f"constraint has depth {len(tiers)}")
        cols = out.schema.columns("tier_onehot")
        row = np.zeros(cols.stop - cols.start, dtype=np.float32)
        offset = 0
        for depth_i in range(runtime.tier_depth):
            vocab = tier_vocabs[depth_i]
            if depth_i < len(tiers):
                row[offset + vocab.values.index(tiers[depth_i])] = 1.0
            offset += len(vocab)
        out.X[node_index[node_id], cols] = row
    return out


def _consistent_classes(tiers: list[str], runtime: ModelRuntime) -> set[int]:
    """Vocabulary indices of materials whose catalog tiers extend the
    constraint prefix. OTHER never matches a constraint."""
    allowed = set()
    for idx, material_id in enumerate(runtime.vocab.classes):
        if material_id == OTHER_LABEL:
            continue
        entry_tiers = runtime.catalog.tiers(material_id)
        if all(entry_tiers[d] == tiers[d] for d in range(len(tiers))):
            allowed.add(idx)
    return allowed


def _rank_node(probs: np.ndarray, allowed: set[int] | None, k: int,
               runtime: ModelRuntime) -> tuple[list[dict], bool]:
    if allowed is not None:
        if not allowed:
            return [], True
        masked = np.zeros_like(probs)
        for idx in allowed:
            masked[idx] = probs[idx]
        total = masked.sum()
        probs = masked / total if total > 0 else masked
    order = np.argsort(-probs, kind="stable")
    items = []
    for idx in order[:k]:
        if allowed is not None and int(idx) not in allowed:
            continue
        material_id = runtime.vocab.classes[int(idx)]
        items.append({
            "material_id": material_id,
            "name": runtime.catalog.display_name(material_id),
            "probability": float(probs[idx]),
        })
    return items, False


def create_app(checkpoint_path=None, catalog_path=None, semantic_table_path=None,
               visual_table_path=None, cors_origin: str = "*") -> FastAPI:
    app = FastAPI(title="matgraph inference service")
    app.add_middleware(CORSMiddleware, allow_origins=[cors_origin],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.runtime = None
    app.state.paths = {"catalog": catalog_path, "semantic": semantic_table_path,
                       "visual": visual_table_path}
    if checkpoint_path is not None:
        app.state.runtime = build_runtime(checkpoint_path, catalog_path,
                                          semantic_table_path, visual_table_path)

    def runtime_or_503() -> ModelRuntime:
        runtime = app.state.runtime
        if runtime is None:
            raise _error(503, "no model loaded")
        return runtime

    @app.get("/v1/model")
    def model_metadata():
        runtime = runtime_or_503()
        ckpt = runtime.checkpoint
        return {
            "checkpoint_id": runtime.checkpoint_id,
            "schema_hash": ckpt.schema_hash(),
            "model_config": ckpt.config.to_json(),
            "schema": ckpt.schema.to_json(),
            "classes": [
                {"material_id": mid, "name": runtime.catalog.display_name(mid),
                 "tiers": list(runtime.catalog.tiers(mid))}
                for mid in runtime.vocab.classes
            ],
            "tier_values": {
                "tier1": list(runtime.encoders.tier1.values),
                "tier2": list(runtime.encoders.tier2.values),
                "tier3": list(runtime.encoders.tier3.values),
            },
            "has_material_block": runtime.has_material_block,
            "tier_depth": runtime.tier_depth,
            "metadata": ckpt.metadata,
        }

    @app.post("/v1/model")
    def load_model(request: LoadModelRequest):
        try:
            new_runtime = build_runtime(request.path, app.state.paths["catalog"],
                                        app.state.paths["semantic"], app.state.paths["visual"])
        except FileNotFoundError:
            raise _error(404, f"checkpoint not found: {request.path}")
        old = app.state.runtime
        if old is not None:
            new_runtime.bundles = old.bundles
        app.state.runtime = new_runtime  # atomic swap
        return {"checkpoint_id": new_runtime.checkpoint_id}

    @app.post("/v1/graphs")
    def upload_graph(request: UploadGraphRequest):
        runtime = runtime_or_503()
        record, g = _build_from_assembly(request.assembly, runtime)
        bundle = graph_to_bundle(g)
        bundle_id = hashlib.sha256(
            json.dumps(bundle, sort_keys=True).encode()).hexdigest()[:16]
        runtime.bundles[bundle_id] = g
        return {"bundle_id": bundle_id, "graph": _graph_summary(g, record, runtime)}

    @app.post("/v1/predict")
    def predict(request: PredictRequest):
        runtime = runtime_or_503()
        n_classes = len(runtime.vocab)
        if not 1 <= request.k <= n_classes:
            raise _error(400, f"k must be in 1..{n_classes}")
        g = _resolve_graph(request, runtime)
        g = _apply_constraints(g, request, runtime)
        probs = model_forward(g, runtime.checkpoint.params, runtime.checkpoint.config,
                              training=False).data

        nodes = []
        for i, node_id in enumerate(g.node_ids):
            if node_id in request.known_materials:
                material_id = request.known_materials[node_id]
                nodes.append({
                    "node_id": node_id,
                    "echoed": True,
                    "empty_candidates": False,
                    "items": [{"material_id": material_id,
                               "name": runtime.catalog.display_name(material_id),
                               "probability": 1.0}],
                })
                continue
            allowed = None
            if node_id in request.tier_constraints:
                allowed = _consistent_classes(request.tier_constraints[node_id], runtime)
            items, empty = _rank_node(probs[i], allowed, request.k, runtime)
            nodes.append({"node_id": node_id, "echoed": False,
                          "empty_candidates": empty, "items": items})
        return {
            "nodes": nodes,
            "model": {"checkpoint_id": runtime.checkpoint_id,
                      "schema_hash": runtime.checkpoint.schema_hash()},
        }

    return app


def serve(checkpoint_path, catalog_path=None, semantic_table_path=None,
          visual_table_path=None, host: str = "127.0.0.1", port: int = 8765,
          cors_origin: str = "*"):
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    app = create_app(checkpoint_path, catalog_path, semantic_table_path,
                     visual_table_path, cors_origin)
    uvicorn.run(app, host=host, port=port, log_level="info")
