"""Assembly graph construction, the discard rule, protocol augmentations
(ablation, context labels, tier features), and the corpus file format.

Graphs are directed attributed multigraphs in COO form. Every source
connection is materialized as two directed edges so message passing
reaches both endpoints; parallel connections stay parallel edges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .encoding import EDGE_WIDTH, FeatureEncoders, FeatureSchema, encode_connection
from .errors import ConfigError, SchemaError
from .ingest import (
    CONNECTION_KINDS,
    ConnectionRecord,
    IngestedAssembly,
    LabelVocabulary,
)

MIN_NODES = 3
MIN_CONNECTIONS = 2


@dataclass
class AssemblyGraph:
    """One assembly as a trainable graph: features, COO edges, labels."""

    graph_id: str
    node_ids: list[str]
    X: np.ndarray            # (|V|, d_x) float32
    edge_index: np.ndarray   # (2, |E|) int64, directed
    edge_attr: np.ndarray    # (|E|, 3) float32
    y: np.ndarray            # (|V|,) int64
    target_mask: np.ndarray  # (|V|,) bool
    schema: FeatureSchema

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    @property
    def num_connections(self) -> int:
        """Undirected source connections (each yields two directed edges)."""
        return self.num_edges // 2

    def edge_kinds(self) -> np.ndarray:
        """Kind index per directed edge, from the one-hot edge features."""
        if self.num_edges == 0:
            return np.zeros(0, dtype=np.int64)
        return self.edge_attr.argmax(axis=1)

    def copy(self) -> "AssemblyGraph":
        return AssemblyGraph(
            graph_id=self.graph_id,
            node_ids=list(self.node_ids),
            X=self.X.copy(),
            edge_index=self.edge_index.copy(),
            edge_attr=self.edge_attr.copy(),
            y=self.y.copy(),
            target_mask=self.target_mask.copy(),
            schema=self.schema,
        )


def build_graph(assembly: IngestedAssembly, encoders: FeatureEncoders,
                vocab: LabelVocabulary, material_block: bool = False,
                tier_depth: int = 0) -> AssemblyGraph:
    """Encode one ingested assembly into an AssemblyGraph.

    Node rows follow the schema block order; optional material/tier
    blocks are allocated zero-filled (they are populated by the
    protocol-specific injection ops or by the inference service).
    """
    if not assembly.bodies:
        raise SchemaError(f"{assembly.assembly_id}: no visible bodies")
    schema = encoders.schema(len(vocab), material_block=material_block, tier_depth=tier_depth)
    global_vec = encoders.encode_global(assembly.meta)

    node_ids = [b.uuid for b in assembly.bodies]
    index = {uuid: i for i, uuid in enumerate(node_ids)}

    rows = []
    for b in assembly.bodies:
        row = encoders.encode_node(b, global_vec)
        if material_block:
            row = np.concatenate([row, np.zeros(len(vocab))])
        if tier_depth > 0:
            row = np.concatenate([row, np.zeros(encoders.tier_width(tier_depth))])
        if row.shape != (schema.width,):
            raise SchemaError(
                f"{assembly.assembly_id}: node row width {row.shape[0]} != schema width {schema.width}")
        rows.append(row)

    sources, dests, attrs = [], [], []
    for c in assembly.connections:
        one_hot = encode_connection(c.kind)
        u, v = index[c.src], index[c.dst]
        sources.extend((u, v))
        dests.extend((v, u))
        attrs.extend((one_hot, one_hot))

    y = np.array([vocab.index_of(assembly.labels[uuid][0]) for uuid in node_ids], dtype=np.int64)
    return AssemblyGraph(
        graph_id=assembly.assembly_id,
        node_ids=node_ids,
        X=np.asarray(rows, dtype=np.float32).reshape(len(node_ids), schema.width),
        edge_index=np.array([sources, dests], dtype=np.int64).reshape(2, -1),
        edge_attr=(np.asarray(attrs, dtype=np.float32).reshape(-1, EDGE_WIDTH)
                   if attrs else np.zeros((0, EDGE_WIDTH), dtype=np.float32)),
        y=y,
        target_mask=np.ones(len(node_ids), dtype=bool),
        schema=schema,
    )


def validate_graph(g: AssemblyGraph) -> tuple[bool, str]:
    """Training-corpus discard rule: need >= 3 nodes and >= 2 connections."""
    if g.num_nodes < MIN_NODES:
        return False, f"too few nodes ({g.num_nodes} < {MIN_NODES})"
    if g.num_connections < MIN_CONNECTIONS:
        return False, f"too few edges ({g.num_connections} < {MIN_CONNECTIONS})"
    return True, ""


def apply_node_ablation(g: AssemblyGraph, block_name: str) -> AssemblyGraph:
    """Drop one named feature block (or both name blocks for the
    'semantic_names' alias) from X and the schema."""
    targets = g.schema.resolve_ablation(block_name)
    keep_cols = np.ones(g.X.shape[1], dtype=bool)
    for name in targets:
        keep_cols[g.schema.columns(name)] = False
    out = g.copy()
    out.X = np.ascontiguousarray(g.X[:, keep_cols])
    out.schema = g.schema.without(targets)
    assert out.X.shape[1] == out.schema.width
    return out


def apply_edge_ablation(g: AssemblyGraph, kind: str) -> AssemblyGraph:
    """Remove every directed edge of the given kind; edge_index and
    edge_attr shrink in lockstep. The result may fail validate_graph."""
    if kind not in CONNECTION_KINDS:
        raise ConfigError(f"unknown connection kind {kind!r}")
    out = g.copy()
    if g.num_edges == 0:
        return out
    keep = g.edge_kinds() != CONNECTION_KINDS.index(kind)
    out.edge_index = np.ascontiguousarray(g.edge_index[:, keep])
    out.edge_attr = np.ascontiguousarray(g.edge_attr[keep, :])
    return out


def inject_context_labels(g: AssemblyGraph, ratio: float, seed: int) -> AssemblyGraph:
    """Mark ceil(ratio * |V|) seeded-random nodes as context: their
    material_onehot block carries the ground-truth one-hot while target
    nodes keep zeros; target_mask selects exactly the targets."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"context ratio must be in (0, 1), got {ratio}")
    if "material_onehot" not in g.schema:
        raise ConfigError("graph schema has no material_onehot block")
    n = g.num_nodes
    n_context = math.ceil(ratio * n)
    rng = np.random.default_rng(seed)
    context = np.sort(rng.choice(n, size=n_context, replace=False))

    out = g.copy()
    cols = g.schema.columns("material_onehot")
    block = np.zeros((n, cols.stop - cols.start), dtype=np.float32)
    block[context, g.y[context]] = 1.0
    out.X[:, cols] = block
    mask = np.ones(n, dtype=bool)
    mask[context] = False
    out.target_mask = mask
    return out


def inject_tier_features(g: AssemblyGraph, depth: int, encoders: FeatureEncoders,
                         vocab: LabelVocabulary) -> AssemblyGraph:
    """Fill (or resize) the tier_onehot block from each node's
    ground-truth material at the given depth. Depth 0 removes the block,
    which reproduces the fully algorithm-guided input."""
    out = g.copy()
    base = g.schema.without(["tier_onehot"]) if "tier_onehot" in g.schema else g.schema
    if "tier_onehot" in g.schema:
        keep = np.ones(g.X.shape[1], dtype=bool)
        keep[g.schema.columns("tier_onehot")] = False
        out.X = np.ascontiguousarray(out.X[:, keep])
    if depth == 0:
        out.schema = base
        return out

    width = encoders.tier_width(depth)
    block = np.zeros((g.num_nodes, width), dtype=np.float32)
    for i in range(g.num_nodes):
        material_id = vocab.classes[g.y[i]]
        block[i, :] = encoders.encode_tier(material_id, depth)
    out.X = np.concatenate([out.X, block], axis=1)
    out.schema = base.with_block("tier_onehot", width)
    return out


def union_graphs(graphs: list[AssemblyGraph]) -> AssemblyGraph:
    """Disjoint union of graphs for batched forward passes: features and
    labels concatenate, edge indices shift by the node offset of their
    component. Message passing never crosses component boundaries."""
    if not graphs:
        raise ConfigError("union_graphs: empty batch")
    schema = graphs[0].schema
    for g in graphs[1:]:
        if g.schema != schema:
            raise SchemaError("union_graphs: schemas differ across the batch")
    offsets = np.cumsum([0] + [g.num_nodes for g in graphs[:-1]])
    return AssemblyGraph(
        graph_id="union:" + ",".join(g.graph_id for g in graphs),
        node_ids=[f"{g.graph_id}/{nid}" for g in graphs for nid in g.node_ids],
        X=np.concatenate([g.X for g in graphs], axis=0),
        edge_index=np.concatenate([g.edge_index + off for g, off in zip(graphs, offsets)], axis=1),
        edge_attr=np.concatenate([g.edge_attr for g in graphs], axis=0),
        y=np.concatenate([g.y for g in graphs]),
        target_mask=np.concatenate([g.target_mask for g in graphs]),
        schema=schema,
    )


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def graph_to_bundle(g: AssemblyGraph) -> dict:
    return {
        "graph_id": g.graph_id,
        "schema": g.schema.to_json(),
        "x": {"shape": list(g.X.shape), "data": [float(v) for v in g.X.reshape(-1)]},
        "edge_index": [[int(v) for v in g.edge_index[0]], [int(v) for v in g.edge_index[1]]],
        "edge_attr": [[float(v) for v in row] for row in g.edge_attr],
        "y": [int(v) for v in g.y],
        "node_ids": list(g.node_ids),
    }


def bundle_to_graph(doc: dict) -> AssemblyGraph:
    schema = FeatureSchema.from_json(doc["schema"])
    rows, cols = doc["x"]["shape"]
    X = np.asarray(doc["x"]["data"], dtype=np.float32).reshape(rows, cols)
    if cols != schema.width:
        raise SchemaError(f"bundle {doc.get('graph_id')}: x width {cols} != schema width {schema.width}")
    edge_index = np.asarray(doc["edge_index"], dtype=np.int64).reshape(2, -1)
    n_edges = edge_index.shape[1]
    edge_attr = (np.asarray(doc["edge_attr"], dtype=np.float32).reshape(n_edges, EDGE_WIDTH)
                 if n_edges else np.zeros((0, EDGE_WIDTH), dtype=np.float32))
    if edge_index.size and (edge_index.min() < 0 or edge_index.max() >= rows):
        raise SchemaError(f"bundle {doc.get('graph_id')}: edge index out of range")
    return AssemblyGraph(
        graph_id=doc["graph_id"],
        node_ids=list(doc["node_ids"]),
        X=X,
        edge_index=edge_index,
        edge_attr=edge_attr,
        y=np.asarray(doc["y"], dtype=np.int64),
        target_mask=np.ones(rows, dtype=bool),
        schema=schema,
    )


@dataclass
class Corpus:
    """A directory of graph bundles plus the manifest that binds them:
    splits, label vocabulary, schema, fitted encoder state."""

    graphs: dict[str, AssemblyGraph]
    splits: dict[str, list[str]]
    vocab: LabelVocabulary
    schema: FeatureSchema
    encoder_state: dict
    options: dict

    def split_graphs(self, split: str) -> list[AssemblyGraph]:
        return [self.graphs[g] for g in self.splits[split]]

    def save(self, out_dir):
        out = Path(out_dir)
        (out / "graphs").mkdir(parents=True, exist_ok=True)
        order = sorted(self.graphs)
        for gid in order:
            bundle = graph_to_bundle(self.graphs[gid])
            with open(out / "graphs" / f"{gid}.json", "w", encoding="utf-8") as fh:
                json.dump(bundle, fh, sort_keys=True)
        manifest = {
            "corpus_version": 1,
            "graphs": [{"id": gid, "file": f"graphs/{gid}.json"} for gid in order],
            "splits": {k: list(v) for k, v in self.splits.items()},
            "label_vocabulary": self.vocab.to_json(),
            "schema": self.schema.to_json(),
            "encoder_state": self.encoder_state,
            "options": self.options,
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)

    @classmethod
    def load(cls, corpus_dir) -> "Corpus":
        root = Path(corpus_dir)
        with open(root / "manifest.json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        graphs = {}
        for entry in manifest["graphs"]:
            with open(root / entry["file"], "r", encoding="utf-8") as fh:
                graphs[entry["id"]] = bundle_to_graph(json.load(fh))
        return cls(
            graphs=graphs,
            splits={k: list(v) for k, v in manifest["splits"].items()},
            vocab=LabelVocabulary.from_json(manifest["label_vocabulary"]),
            schema=FeatureSchema.from_json(manifest["schema"]),
            encoder_state=manifest["encoder_state"],
            options=manifest.get("options", {}),
        )

    def train_label_counts(self) -> np.ndarray:
        """Per-class counts over training-split target nodes."""
        counts = np.zeros(len(self.vocab), dtype=np.int64)
        for g in self.split_graphs("train"):
            for label in g.y[g.target_mask]:
                counts[label] += 1
        return counts


def build_corpus(assemblies: list[IngestedAssembly], encoders: FeatureEncoders,
                 vocab: LabelVocabulary, splits: dict[str, list[str]],
                 material_block: bool = False, tier_depth: int = 0) -> Corpus:
    """Build and validate graphs for every assembly; apply the discard
    rule; drop discarded ids from the splits."""
    graphs = {}
    dropped = {}
    for assembly in assemblies:
        g = build_graph(assembly, encoders, vocab,
                        material_block=material_block, tier_depth=tier_depth)
        keep, reason = validate_graph(g)
        if keep:
            graphs[g.graph_id] = g
        else:
            dropped[g.graph_id] = reason
    kept_splits = {split: [gid for gid in ids if gid in graphs]
                   for split, ids in splits.items()}
    schema = encoders.schema(len(vocab), material_block=material_block, tier_depth=tier_depth)
    return Corpus(
        graphs=graphs,
        splits=kept_splits,
        vocab=vocab,
        schema=schema,
        encoder_state=encoders.state_json(),
        options={"material_block": material_block, "tier_depth": tier_depth,
                 "dropped": dropped},
    )
