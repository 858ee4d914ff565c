"""Synthetic corpus generators standing in for the external dataset.

Three generators, one per experimental protocol:

  planted   -- the label of a body is a deterministic function of its
               semantic token and a weighted majority vote over its
               neighborhood (self counted twice); body names carry the
               token, so the task is learnable from features plus
               one-hop structure.
  homophily -- labels propagate along a spanning tree with high
               retention and extra same-label edges; node features are
               weak (the label word appears in only a fraction of
               names), so context labels carry most of the signal.
  taxonomy  -- materials form 6 tier-3 groups of 3 variants; names
               reveal only the variant, never the group, so tier
               features are required to pin the material down.

Each generator emits a full workspace (assembly JSON files, catalog,
semantic embedding table, split manifest) and runs the standard
ingest/encode/build pipeline so that synthetic corpora exercise exactly
the production code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import EmbeddingTable, SEMANTIC_DIM, VISUAL_DIM
from .errors import ConfigError
from .graphs import Corpus
from .ingest import MaterialCatalog, SplitManifest
from .pipeline import ingest_directory, prepare_corpus

KINDS = ("planted", "homophily", "taxonomy")

CATEGORIES = ["machine design", "robotics", "product design", "toys"]
INDUSTRIES = ["product design & manufacturing", "other industries", "civil infrastructure"]
PRODUCTS = ["Fusion 360", "Inventor", "AutoCAD", "Eagle"]


@dataclass
class SynthWorkspace:
    root: Path
    kind: str
    assemblies_dir: Path
    catalog_path: Path
    semantic_table_path: Path
    visual_table_path: Path
    split_path: Path

    @classmethod
    def locate(cls, root) -> "SynthWorkspace":
        root = Path(root)
        with open(root / "workspace.json", "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(root=root, kind=doc["kind"],
                   assemblies_dir=root / "assemblies",
                   catalog_path=root / "catalog.json",
                   semantic_table_path=root / "semantic.tsv",
                   visual_table_path=root / "visual.tsv",
                   split_path=root / "split.json")


def _token_table(words: list[str], seed: int, dim: int = SEMANTIC_DIM,
                 scale: float = 1.0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    vectors = {w: scale * rng.normal(size=dim) for w in sorted(words)}
    return EmbeddingTable(dim=dim, vectors=vectors)


def _visual_table(shape_by_uuid: dict[str, int], seed: int,
                  dim: int = VISUAL_DIM, jitter: float = 0.15) -> EmbeddingTable:
    """Visual embeddings cluster by shape prototype, as MVCNN embeddings
    cluster by geometry; a per-body jitter keeps them from being exact
    duplicates without turning them into per-node memorization keys."""
    rng = np.random.default_rng(seed)
    n_protos = max(shape_by_uuid.values()) + 1 if shape_by_uuid else 1
    protos = rng.standard_normal((n_protos, dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    vectors = {}
    for uuid in sorted(shape_by_uuid):
        vec = protos[shape_by_uuid[uuid]] + jitter * rng.standard_normal(dim)
        vectors[uuid] = vec / np.linalg.norm(vec)
    return EmbeddingTable(dim=dim, vectors=vectors)


def _random_topology(rng: np.random.Generator, n: int) -> list[tuple[int, int]]:
    """Connected undirected edge list: spanning tree plus extras."""
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    existing = set(edges)
    for _ in range(int(rng.poisson(0.5 * n))):
        u, v = rng.integers(0, n, size=2)
        u, v = int(min(u, v)), int(max(u, v))
        if u != v and (u, v) not in existing:
            edges.append((u, v))
            existing.add((u, v))
    return edges


def _neighbor_sets(n: int, edges: list[tuple[int, int]]) -> list[set[int]]:
    neighbors = [set() for _ in range(n)]
    for u, v in edges:
        neighbors[u].add(v)
        neighbors[v].add(u)
    return neighbors


def _assign_occurrences(rng: np.random.Generator, n: int) -> list[list[int]]:
    """Group a random subset of nodes into occurrences of 2-4 members;
    members share a hierarchical clique after ingestion."""
    nodes = list(rng.permutation(n))
    groups = []
    i = 0
    while i + 1 < len(nodes):
        if rng.uniform() < 0.5:
            size = int(rng.integers(2, 5))
            group = nodes[i:i + size]
            if len(group) >= 2:
                groups.append([int(x) for x in group])
            i += size
        else:
            i += 1
    return groups


def _physical_properties(rng: np.random.Generator) -> dict:
    return {
        "surface_area": float(np.exp(rng.normal(-1.5, 0.8))),
        "volume": float(np.exp(rng.normal(-4.0, 1.0))),
        "center_of_mass": {
            "x": float(rng.normal(0, 0.1)),
            "y": float(rng.normal(0, 0.1)),
            "z": float(rng.normal(0, 0.1)),
        },
    }


def _assembly_doc(rng: np.random.Generator, assembly_id: str, names: list[str],
                  materials: list[str], edges: list[tuple[int, int]],
                  occurrence_groups: list[list[int]], default_material: str,
                  default_appearance: str,
                  physical: list[dict] | None = None) -> dict:
    """Assemble the JSON document. Hierarchical-clique edges come from
    occurrence membership; the remaining edges are split between
    contacts and joints. ``physical`` overrides the per-body physical
    properties (generators use it to tie size to shape)."""
    n = len(names)
    uuids = [f"{assembly_id}-b{i}" for i in range(n)]
    grouped = {node for group in occurrence_groups for node in group}
    clique_pairs = {(min(a, b), max(a, b))
                    for group in occurrence_groups
                    for a in group for b in group if a < b}

    bodies = {}
    for i in range(n):
        # most bodies carry the label as physical material; some carry it
        # as a non-default appearance over the default physical material
        if rng.uniform() < 0.2:
            material_id, appearance_id = default_material, materials[i]
        else:
            material_id, appearance_id = materials[i], default_appearance
        bodies[uuids[i]] = {
            "name": names[i],
            "physical_properties": physical[i] if physical else _physical_properties(rng),
            "material_id": material_id,
            "appearance_id": appearance_id,
            "is_visible": True,
        }

    occurrences = []
    for gi, group in enumerate(occurrence_groups):
        occurrences.append({
            # default-pattern names encode to zero vectors, as unnamed
            # occurrences do in real exports
            "name": f"Occurrence {gi + 1}",
            "physical_properties": {
                "surface_area": float(np.exp(rng.normal(-0.5, 0.5))),
                "volume": float(np.exp(rng.normal(-3.0, 0.5))),
            },
            "bodies": [uuids[i] for i in group],
            "occurrences": [],
        })

    contacts, joints = [], []
    for u, v in edges:
        if (min(u, v), max(u, v)) in clique_pairs:
            continue  # already connected through the occurrence clique
        pair = {"body_one": uuids[u], "body_two": uuids[v]}
        (contacts if rng.uniform() < 0.6 else joints).append(pair)

    return {
        "assembly_id": assembly_id,
        "tree": {
            "bodies": [uuids[i] for i in range(n) if i not in grouped],
            "occurrences": occurrences,
        },
        "bodies": bodies,
        "joints": joints,
        "as_built_joints": [],
        "contacts": contacts,
        "meta": {
            "category": CATEGORIES[int(rng.integers(0, len(CATEGORIES)))],
            "industry": INDUSTRIES[int(rng.integers(0, len(INDUSTRIES)))],
            "products": [PRODUCTS[i] for i in
                         sorted(rng.choice(len(PRODUCTS), size=int(rng.integers(1, 3)), replace=False))],
            "physical": {
                "center_of_mass": {"x": float(rng.normal(0, 0.05)),
                                   "y": float(rng.normal(0, 0.05)),
                                   "z": float(rng.normal(0, 0.05))},
                "volume": float(np.exp(rng.normal(-2.0, 0.8))),
            },
            "geometric": {name: int(rng.integers(20, 400))
                          for name in ("edges", "faces", "loops", "shells", "vertices")},
        },
    }


def _full_edge_set(edges: list[tuple[int, int]], groups: list[list[int]]) -> list[tuple[int, int]]:
    """Edges as the graph builder will see them: explicit connections
    plus the hierarchical cliques."""
    out = {(min(u, v), max(u, v)) for u, v in edges}
    for group in groups:
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                out.add((min(a, b), max(a, b)))
    return sorted(out)


# ---------------------------------------------------------------------------
# planted labels
# ---------------------------------------------------------------------------

PLANTED_WORDS = ["gear", "shaft", "bolt", "housing", "bracket"]


def _planted_catalog() -> dict:
    tiers = [("Metal", "Ferrous", "Carbon Steel"), ("Metal", "Nonferrous", "Aluminum Alloy"),
             ("Metal", "Nonferrous", "Brass"), ("Plastic", "Thermoplastic", "ABS"),
             ("Plastic", "Thermoplastic", "Nylon")]
    materials = {
        f"MAT-{i:03d}": {"name": f"Material {word}", "tier1": t1, "tier2": t2, "tier3": t3}
        for i, (word, (t1, t2, t3)) in enumerate(zip(PLANTED_WORDS, tiers))
    }
    materials["MAT-DEFAULT"] = {"name": "Default Steel", "tier1": "Metal",
                                "tier2": "Ferrous", "tier3": "Carbon Steel"}
    return {"default_material_id": "MAT-DEFAULT",
            "default_appearance_id": "APP-DEFAULT",
            "materials": materials}


def _planted_assembly(rng: np.random.Generator, assembly_id: str, n: int) -> dict:
    tokens = rng.integers(0, len(PLANTED_WORDS), size=n)
    edges = _random_topology(rng, n)
    groups = _assign_occurrences(rng, n)
    neighbors = _neighbor_sets(n, _full_edge_set(edges, groups))

    labels = []
    for v in range(n):
        votes = np.zeros(len(PLANTED_WORDS), dtype=np.int64)
        votes[tokens[v]] += 2  # self counts twice
        for u in neighbors[v]:
            votes[tokens[u]] += 1
        best = votes.max()
        tied = np.flatnonzero(votes == best)
        labels.append(int(tokens[v]) if tokens[v] in tied else int(tied[0]))

    names = [f"{PLANTED_WORDS[tokens[i]]} mount" for i in range(n)]
    materials = [f"MAT-{label:03d}" for label in labels]
    doc = _assembly_doc(rng, assembly_id, names, materials, edges, groups,
                        "MAT-DEFAULT", "APP-DEFAULT")
    return doc, [int(t) for t in tokens]  # geometry clusters by part type


# ---------------------------------------------------------------------------
# label homophily
# ---------------------------------------------------------------------------

HOMOPHILY_WORDS = ["steel", "aluminum", "brass", "nylon"]


def _homophily_catalog() -> dict:
    tiers = [("Metal", "Ferrous", "Carbon Steel"), ("Metal", "Nonferrous", "Aluminum Alloy"),
             ("Metal", "Nonferrous", "Brass"), ("Plastic", "Thermoplastic", "Nylon")]
    materials = {
        f"HOM-{i:02d}": {"name": word.capitalize(), "tier1": t1, "tier2": t2, "tier3": t3}
        for i, (word, (t1, t2, t3)) in enumerate(zip(HOMOPHILY_WORDS, tiers))
    }
    materials["HOM-DEFAULT"] = {"name": "Default", "tier1": "Metal",
                                "tier2": "Ferrous", "tier3": "Carbon Steel"}
    return {"default_material_id": "HOM-DEFAULT",
            "default_appearance_id": "APP-DEFAULT",
            "materials": materials}


def _homophily_assembly(rng: np.random.Generator, assembly_id: str, n: int,
                        retention: float = 0.92, name_signal: float = 0.05) -> dict:
    n_classes = len(HOMOPHILY_WORDS)
    tree = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    labels = np.zeros(n, dtype=np.int64)
    labels[0] = rng.integers(0, n_classes)
    for parent, child in tree:
        if rng.uniform() < retention:
            labels[child] = labels[parent]
        else:
            labels[child] = rng.integers(0, n_classes)

    # extra edges biased toward same-label pairs
    edges = list(tree)
    existing = {(min(u, v), max(u, v)) for u, v in edges}
    for _ in range(int(rng.poisson(1.2 * n))):
        u = int(rng.integers(0, n))
        same = [v for v in range(n) if v != u and labels[v] == labels[u]]
        pool = same if (same and rng.uniform() < 0.8) else [v for v in range(n) if v != u]
        v = int(pool[rng.integers(0, len(pool))])
        key = (min(u, v), max(u, v))
        if key not in existing:
            edges.append(key)
            existing.add(key)

    names = []
    for i in range(n):
        if rng.uniform() < name_signal:
            names.append(f"{HOMOPHILY_WORDS[labels[i]]} fitting")
        else:
            names.append(f"Body{i + 1}")  # default pattern: zero embedding
    materials = [f"HOM-{label:02d}" for label in labels]
    groups = _assign_occurrences(rng, n)
    doc = _assembly_doc(rng, assembly_id, names, materials, edges, groups,
                        "HOM-DEFAULT", "APP-DEFAULT")
    shapes = [int(s) for s in rng.integers(0, 6, size=n)]  # uncorrelated with labels
    return doc, shapes


# ---------------------------------------------------------------------------
# taxonomy-determined labels
# ---------------------------------------------------------------------------

TAXONOMY_GROUPS = 6
TAXONOMY_VARIANTS = 3
VARIANT_WORDS = ["sleeve", "flange", "spacer"]


def _taxonomy_catalog() -> dict:
    tier1 = ["Metal", "Polymer"]
    tier2 = {"Metal": ["Ferrous", "Nonferrous"], "Polymer": ["Thermoplastic", "Thermoset"]}
    tier3 = ["Carbon Steel", "Tool Steel", "Aluminum Alloy", "Copper Alloy", "Commodity", "Engineering"]
    materials = {}
    for g in range(TAXONOMY_GROUPS):
        t1 = tier1[g // 3]
        t2 = tier2[t1][(g // 3 + g) % 2]
        t3 = tier3[g]
        for v in range(TAXONOMY_VARIANTS):
            mid = f"TAX-{g}{v}"
            materials[mid] = {"name": f"{t3} {VARIANT_WORDS[v]}",
                              "tier1": t1, "tier2": t2, "tier3": t3}
    materials["TAX-DEFAULT"] = {"name": "Default", "tier1": "Metal",
                                "tier2": "Ferrous", "tier3": "Carbon Steel"}
    return {"default_material_id": "TAX-DEFAULT",
            "default_appearance_id": "APP-DEFAULT",
            "materials": materials}


# nominal (area, volume) per variant; jitter keeps them from being exact
_VARIANT_SIZES = [(0.08, 0.001), (0.5, 0.02), (2.0, 0.3)]


def _taxonomy_assembly(rng: np.random.Generator, assembly_id: str, n: int) -> dict:
    groups_idx = rng.integers(0, TAXONOMY_GROUPS, size=n)
    variants = rng.integers(0, TAXONOMY_VARIANTS, size=n)
    # names reveal the variant only; the group is invisible to features
    names = [f"{VARIANT_WORDS[variants[i]]} unit" for i in range(n)]
    materials = [f"TAX-{groups_idx[i]}{variants[i]}" for i in range(n)]
    edges = _random_topology(rng, n)
    occ_groups = _assign_occurrences(rng, n)
    physical = []
    for i in range(n):
        area, volume = _VARIANT_SIZES[variants[i]]
        physical.append({
            "surface_area": float(area * np.exp(rng.normal(0, 0.15))),
            "volume": float(volume * np.exp(rng.normal(0, 0.15))),
            "center_of_mass": {"x": float(rng.normal(0, 0.02)),
                               "y": float(rng.normal(0, 0.02)),
                               "z": float(rng.normal(0, 0.02))},
        })
    doc = _assembly_doc(rng, assembly_id, names, materials, edges, occ_groups,
                        "TAX-DEFAULT", "APP-DEFAULT", physical=physical)
    return doc, [int(v) for v in variants]  # geometry clusters by variant


# ---------------------------------------------------------------------------
# workspace generation and corpus building
# ---------------------------------------------------------------------------

_GENERATORS = {
    # generator fn, catalog fn, table words, table scale (the taxonomy
    # table is kept small so tier one-hots are commensurate with names)
    "planted": (_planted_assembly, _planted_catalog, PLANTED_WORDS + ["mount"], 1.0),
    "homophily": (_homophily_assembly, _homophily_catalog, HOMOPHILY_WORDS + ["fitting"], 1.0),
    "taxonomy": (_taxonomy_assembly, _taxonomy_catalog, VARIANT_WORDS + ["unit"], 0.12),
}


def generate_workspace(kind: str, n_graphs: int, seed: int, out_dir,
                       min_nodes: int = 6, max_nodes: int = 14,
                       test_fraction: float = 0.2) -> SynthWorkspace:
    """Write a synthetic workspace: assemblies/, catalog.json,
    semantic.tsv, split.json, workspace.json."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    if n_graphs < 5:
        raise ConfigError("need at least 5 graphs")
    generator, catalog_fn, words, table_scale = _GENERATORS[kind]
    root = Path(out_dir)
    assemblies_dir = root / "assemblies"
    assemblies_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    ids = []
    shape_by_uuid: dict[str, int] = {}
    for i in range(n_graphs):
        assembly_id = f"{kind}-{i:04d}"
        n = int(rng.integers(min_nodes, max_nodes + 1))
        doc, shapes = generator(rng, assembly_id, n)
        for j, shape in enumerate(shapes):
            shape_by_uuid[f"{assembly_id}-b{j}"] = shape
        with open(assemblies_dir / f"{assembly_id}.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        ids.append(assembly_id)

    catalog_path = root / "catalog.json"
    with open(catalog_path, "w", encoding="utf-8") as fh:
        json.dump(catalog_fn(), fh, sort_keys=True, indent=1)

    table = _token_table(words, seed=seed + 1, scale=table_scale)
    table_path = root / "semantic.tsv"
    table.save(table_path)

    visual_path = root / "visual.tsv"
    _visual_table(shape_by_uuid, seed=seed + 4).save(visual_path)

    n_test = max(1, int(round(test_fraction * n_graphs)))
    test_ids = [ids[int(i)] for i in
                np.sort(np.random.default_rng(seed + 2).choice(n_graphs, size=n_test, replace=False))]
    split_path = root / "split.json"
    with open(split_path, "w", encoding="utf-8") as fh:
        json.dump({"seed": seed + 3, "test_ids": test_ids}, fh, sort_keys=True)

    with open(root / "workspace.json", "w", encoding="utf-8") as fh:
        json.dump({"kind": kind, "n_graphs": n_graphs, "seed": seed}, fh, sort_keys=True)

    return SynthWorkspace(root=root, kind=kind, assemblies_dir=assemblies_dir,
                          catalog_path=catalog_path, semantic_table_path=table_path,
                          visual_table_path=visual_path, split_path=split_path)


def build_workspace_corpus(workspace: SynthWorkspace, material_block: bool = False,
                           tier_depth: int = 0, seed: int = 0) -> Corpus:
    """Run the standard pipeline over a synthetic workspace."""
    catalog = MaterialCatalog.load(workspace.catalog_path)
    records, _summary = ingest_directory(workspace.assemblies_dir, catalog)
    manifest = SplitManifest.load(workspace.split_path)
    semantic = EmbeddingTable.load(workspace.semantic_table_path)
    visual = (EmbeddingTable.load(workspace.visual_table_path)
              if Path(workspace.visual_table_path).exists() else None)
    return prepare_corpus(records, catalog, manifest, semantic, visual=visual,
                          material_block=material_block, tier_depth=tier_depth, seed=seed)


def synth_corpus(kind: str, n_graphs: int, seed: int, out_dir,
                 material_block: bool = False, tier_depth: int = 0,
                 corpus_subdir: str = "corpus", **kwargs) -> tuple[SynthWorkspace, Corpus]:
    """Generate a workspace and build its corpus in one call; the corpus
    is saved under ``out_dir/corpus_subdir``."""
    workspace = generate_workspace(kind, n_graphs, seed, out_dir, **kwargs)
    corpus = build_workspace_corpus(workspace, material_block=material_block,
                                    tier_depth=tier_depth, seed=seed)
    corpus.save(Path(out_dir) / corpus_subdir)
    return workspace, corpus
