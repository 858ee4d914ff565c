"""Feature encoders: semantic name embeddings, physical-property
normalization, visual embeddings (table or deterministic stub),
connection one-hots, global assembly features, and the label/tier
one-hot blocks.

All encoders are total and deterministic given (input, seed, fitted
state). Fitting happens once over the training split; fitted state
serializes to JSON and is embedded verbatim into checkpoints.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SchemaError
from .ingest import (
    CONNECTION_KINDS,
    AssemblyMeta,
    BodyRecord,
    MaterialCatalog,
)

SEMANTIC_DIM = 600
VISUAL_DIM = 512
EDGE_WIDTH = 3

DEFAULT_NAME_PATTERN = r"^(body|component|occurrence)\s*\d*$"

BODY_FIELDS = ("area", "volume", "com_x", "com_y", "com_z")
OCCURRENCE_FIELDS = ("occurrence_area", "occurrence_volume")
GLOBAL_PHYSICAL_FIELDS = ("assembly_com_x", "assembly_com_y", "assembly_com_z", "assembly_volume")
GLOBAL_GEOMETRIC_FIELDS = ("edges", "faces", "loops", "shells", "vertices")


def _seed_from(*parts) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of ints/strings."""
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x00")
    digest = h.digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


# ---------------------------------------------------------------------------
# embedding tables
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingTable:
    """Token -> vector lookup with per-dimension Gaussian statistics,
    used both for semantic keywords and UUID-keyed visual embeddings."""

    dim: int
    vectors: dict[str, np.ndarray]
    mean: np.ndarray = None
    std: np.ndarray = None

    def __post_init__(self):
        for token, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise SchemaError(f"embedding for {token!r} has width {vec.shape}, expected {self.dim}")
        if self.mean is None or self.std is None:
            self.refit_stats()

    def refit_stats(self):
        if self.vectors:
            stacked = np.stack(list(self.vectors.values()))
            self.mean = stacked.mean(axis=0)
            self.std = stacked.std(axis=0)
        else:
            self.mean = np.zeros(self.dim)
            self.std = np.ones(self.dim)

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        """Read the TSV table format: first line ``DIM <n>``, then
        ``token<TAB>f1 f2 ... fn`` per line."""
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split()
            if len(header) != 2 or header[0] != "DIM":
                raise SchemaError(f"{path}: expected 'DIM <n>' header")
            dim = int(header[1])
            vectors = {}
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, values = line.partition("\t")
                vec = np.array(values.split(), dtype=np.float64)
                if vec.shape != (dim,):
                    raise SchemaError(f"{path}: token {token!r} has {vec.size} values, expected {dim}")
                vectors[token] = vec
        return cls(dim=dim, vectors=vectors)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"DIM {self.dim}\n")
            for token in sorted(self.vectors):
                values = " ".join(repr(float(v)) for v in self.vectors[token])
                fh.write(f"{token}\t{values}\n")

    def stats_json(self) -> dict:
        return {
            "dim": self.dim,
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def stats_only(cls, doc: dict) -> "EmbeddingTable":
        """Rebuild an empty table that can still impute from stats."""
        return cls(dim=int(doc["dim"]), vectors={},
                   mean=np.array(doc["mean"], dtype=np.float64),
                   std=np.array(doc["std"], dtype=np.float64))


def clean_name(name: str, default_pattern: str = DEFAULT_NAME_PATTERN) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop default-name tokens."""
    if re.match(default_pattern, name.strip(), flags=re.IGNORECASE):
        return []
    tokens = [t for t in re.split(r"[^a-z0-9]+", name.lower()) if t]
    default_token = re.compile(r"^(body|component|occurrence)\d*$")
    return [t for t in tokens if not default_token.match(t)]


def encode_semantic(name: str, table: EmbeddingTable, seed: int,
                    default_pattern: str = DEFAULT_NAME_PATTERN) -> np.ndarray:
    """Encode a semantic name as the mean of its matched keyword vectors.

    Default or empty names map to zeros. Names whose keywords all miss
    the table get a per-dimension Gaussian imputation drawn from the
    table statistics, deterministic under (name, seed).
    """
    tokens = clean_name(name, default_pattern)
    if not tokens:
        return np.zeros(table.dim)
    matched = sorted(t for t in tokens if t in table.vectors)
    if matched:
        return np.stack([table.vectors[t] for t in matched]).mean(axis=0)
    rng = _seed_from("semantic-impute", seed, name)
    return table.mean + table.std * rng.standard_normal(table.dim)


def visual_embedding(uuid: str, table: EmbeddingTable | None, dim: int = VISUAL_DIM) -> np.ndarray:
    """Look up a body's visual embedding, or synthesize the deterministic
    unit-norm stub vector when no table entry exists."""
    if table is not None:
        vec = table.vectors.get(uuid)
        if vec is not None:
            return vec
        dim = table.dim
    rng = _seed_from("visual-stub", uuid)
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# normalization statistics
# ---------------------------------------------------------------------------


@dataclass
class NormStats:
    """Per-field (mean, std) fitted on the training split. Fields with
    zero variance are marked constant and encode to 0."""

    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)

    def zscore(self, name: str, value: float) -> float:
        sd = self.std.get(name, 0.0)
        if sd <= 0.0:
            return 0.0
        return (value - self.mean.get(name, 0.0)) / sd

    @classmethod
    def fit(cls, samples: dict[str, list[float]]) -> "NormStats":
        stats = cls()
        for name, values in samples.items():
            arr = np.asarray(values, dtype=np.float64)
            stats.mean[name] = float(arr.mean()) if arr.size else 0.0
            stats.std[name] = float(arr.std()) if arr.size else 0.0
        return stats

    def to_json(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_json(cls, doc: dict) -> "NormStats":
        return cls(mean=dict(doc["mean"]), std=dict(doc["std"]))


def body_scalars(b: BodyRecord) -> dict[str, float]:
    return {
        "area": b.area,
        "volume": b.volume,
        "com_x": b.center_of_mass[0],
        "com_y": b.center_of_mass[1],
        "com_z": b.center_of_mass[2],
        "occurrence_area": b.occurrence_area,
        "occurrence_volume": b.occurrence_volume,
    }


def meta_scalars(meta: AssemblyMeta) -> dict[str, float]:
    com = meta.physical.get("center_of_mass", {}) or {}
    out = {
        "assembly_com_x": float(com.get("x", 0.0)),
        "assembly_com_y": float(com.get("y", 0.0)),
        "assembly_com_z": float(com.get("z", 0.0)),
        "assembly_volume": float(meta.physical.get("volume", 0.0)),
    }
    for name in GLOBAL_GEOMETRIC_FIELDS:
        out[name] = float(meta.geometric.get(name, 0.0))
    return out


def normalize_physical(b: BodyRecord, stats: NormStats) -> tuple[np.ndarray, np.ndarray]:
    """z-score the five body scalars and the two occurrence scalars."""
    scalars = body_scalars(b)
    body = np.array([stats.zscore(f, scalars[f]) for f in BODY_FIELDS])
    occurrence = np.array([stats.zscore(f, scalars[f]) for f in OCCURRENCE_FIELDS])
    return body, occurrence


# ---------------------------------------------------------------------------
# categorical vocabularies
# ---------------------------------------------------------------------------


@dataclass
class Vocabulary:
    """Sorted closed vocabulary; out-of-vocabulary encodes to all zeros."""

    values: list[str]

    @classmethod
    def fit(cls, observed) -> "Vocabulary":
        return cls(values=sorted({v for v in observed if v}))

    def __len__(self):
        return len(self.values)

    def one_hot(self, value: str) -> np.ndarray:
        vec = np.zeros(len(self.values))
        try:
            vec[self.values.index(value)] = 1.0
        except ValueError:
            pass
        return vec

    def multi_hot(self, values) -> np.ndarray:
        vec = np.zeros(len(self.values))
        for v in values:
            try:
                vec[self.values.index(v)] = 1.0
            except ValueError:
                pass
        return vec


def encode_connection(kind: str) -> np.ndarray:
    """One-hot over the fixed order [contact, joint, hierarchical]."""
    if kind not in CONNECTION_KINDS:
        raise ConfigError(f"unknown connection kind {kind!r}")
    vec = np.zeros(EDGE_WIDTH)
    vec[CONNECTION_KINDS.index(kind)] = 1.0
    return vec


# ---------------------------------------------------------------------------
# feature schema
# ---------------------------------------------------------------------------


@dataclass
class FeatureBlock:
    name: str
    offset: int
    width: int
    ablatable: bool


class FeatureSchema:
    """Ordered, contiguous, named feature blocks; the contract between
    encoding, ablation, model input width, and checkpoints."""

    ABLATION_ALIAS = "semantic_names"

    def __init__(self, blocks: list[tuple[str, int, bool]]):
        self.blocks: list[FeatureBlock] = []
        offset = 0
        for name, width, ablatable in blocks:
            self.blocks.append(FeatureBlock(name=name, offset=offset, width=width, ablatable=ablatable))
            offset += width
        self._by_name = {b.name: b for b in self.blocks}
        if len(self._by_name) != len(self.blocks):
            raise SchemaError("duplicate feature block names")

    @property
    def width(self) -> int:
        return sum(b.width for b in self.blocks)

    @property
    def edge_width(self) -> int:
        return EDGE_WIDTH

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def block(self, name: str) -> FeatureBlock:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"unknown feature block {name!r}") from None

    def columns(self, name: str) -> slice:
        b = self.block(name)
        return slice(b.offset, b.offset + b.width)

    def block_names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def ablatable_names(self) -> list[str]:
        return [b.name for b in self.blocks if b.ablatable]

    def resolve_ablation(self, name: str) -> list[str]:
        """Map an ablation request to concrete block names;
        'semantic_names' covers both name blocks."""
        key = name.strip().lower().replace(" ", "_")
        if key in (self.ABLATION_ALIAS, "semanticnames"):
            targets = [n for n in ("body_name", "occurrence_name") if n in self]
            if not targets:
                raise ConfigError("schema has no semantic name blocks")
            return targets
        if key not in self._by_name:
            raise ConfigError(f"unknown feature block {name!r}")
        if not self._by_name[key].ablatable:
            raise ConfigError(f"feature block {name!r} is not ablatable")
        return [key]

    def without(self, names: list[str]) -> "FeatureSchema":
        drop = set(names)
        return FeatureSchema([(b.name, b.width, b.ablatable)
                              for b in self.blocks if b.name not in drop])

    def with_block(self, name: str, width: int, ablatable: bool = False) -> "FeatureSchema":
        if name in self:
            raise SchemaError(f"block {name!r} already present")
        return FeatureSchema([(b.name, b.width, b.ablatable) for b in self.blocks]
                             + [(name, width, ablatable)])

    def to_json(self) -> list[dict]:
        return [{"name": b.name, "width": b.width, "ablatable": b.ablatable} for b in self.blocks]

    @classmethod
    def from_json(cls, doc: list[dict]) -> "FeatureSchema":
        return cls([(b["name"], int(b["width"]), bool(b["ablatable"])) for b in doc])

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.to_json() == other.to_json()


# ---------------------------------------------------------------------------
# the fitted encoder bundle
# ---------------------------------------------------------------------------


@dataclass
class FeatureEncoders:
    """Everything needed to turn records into node/edge features.

    Read-only after fitting; safe for concurrent use.
    """

    semantic: EmbeddingTable
    visual: EmbeddingTable | None
    norm: NormStats
    categories: Vocabulary
    industries: Vocabulary
    products: Vocabulary
    tier1: Vocabulary
    tier2: Vocabulary
    tier3: Vocabulary
    catalog: MaterialCatalog
    seed: int = 0
    default_pattern: str = DEFAULT_NAME_PATTERN

    @property
    def global_width(self) -> int:
        return (len(GLOBAL_PHYSICAL_FIELDS) + len(GLOBAL_GEOMETRIC_FIELDS)
                + len(self.categories) + len(self.industries) + len(self.products))

    def tier_width(self, depth: int) -> int:
        if not 0 <= depth <= 3:
            raise ConfigError(f"tier depth must be in 0..3, got {depth}")
        widths = [len(self.tier1), len(self.tier2), len(self.tier3)]
        return sum(widths[:depth])

    def schema(self, classes: int, material_block: bool = False, tier_depth: int = 0) -> FeatureSchema:
        blocks = [
            ("body_name", self.semantic.dim, True),
            ("occurrence_name", self.semantic.dim, True),
            ("body_physical", len(BODY_FIELDS), True),
            ("occurrence_physical", len(OCCURRENCE_FIELDS), True),
            ("body_geometry", self.visual.dim if self.visual else VISUAL_DIM, True),
            ("global", self.global_width, True),
        ]
        if material_block:
            blocks.append(("material_onehot", classes, False))
        if tier_depth > 0:
            blocks.append(("tier_onehot", self.tier_width(tier_depth), False))
        return FeatureSchema(blocks)

    def encode_body_name(self, name: str) -> np.ndarray:
        return encode_semantic(name, self.semantic, self.seed, self.default_pattern)

    def encode_global(self, meta: AssemblyMeta) -> np.ndarray:
        scalars = meta_scalars(meta)
        z = [self.norm.zscore(f, scalars[f]) for f in GLOBAL_PHYSICAL_FIELDS + GLOBAL_GEOMETRIC_FIELDS]
        return np.concatenate([
            np.array(z),
            self.categories.one_hot(meta.category),
            self.industries.one_hot(meta.industry),
            self.products.multi_hot(meta.products),
        ])

    def encode_tier(self, material_id: str, depth: int) -> np.ndarray:
        """Concatenated tier one-hots for tiers 1..depth; materials
        absent from the catalog yield all-zero blocks."""
        if not 0 <= depth <= 3:
            raise ConfigError(f"tier depth must be in 0..3, got {depth}")
        t1, t2, t3 = self.catalog.tiers(material_id)
        parts = []
        for vocab, value in ((self.tier1, t1), (self.tier2, t2), (self.tier3, t3))[:depth]:
            parts.append(vocab.one_hot(value))
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def encode_node(self, b: BodyRecord, meta_vec: np.ndarray) -> np.ndarray:
        body_phys, occ_phys = normalize_physical(b, self.norm)
        return np.concatenate([
            self.encode_body_name(b.body_name),
            self.encode_body_name(b.occurrence_name),
            body_phys,
            occ_phys,
            visual_embedding(b.uuid, self.visual),
            meta_vec,
        ])

    def state_json(self) -> dict:
        """Fitted state (everything except the embedding vectors);
        embedded verbatim into checkpoints and corpus manifests."""
        return {
            "norm_stats": self.norm.to_json(),
            "categories": list(self.categories.values),
            "industries": list(self.industries.values),
            "products": list(self.products.values),
            "tier1": list(self.tier1.values),
            "tier2": list(self.tier2.values),
            "tier3": list(self.tier3.values),
            "semantic_stats": self.semantic.stats_json(),
            "visual_dim": self.visual.dim if self.visual else VISUAL_DIM,
            "seed": self.seed,
            "default_pattern": self.default_pattern,
            "catalog": self.catalog.to_json(),
        }

    @classmethod
    def from_state(cls, state: dict, semantic: EmbeddingTable | None = None,
                   visual: EmbeddingTable | None = None) -> "FeatureEncoders":
        """Rebuild encoders from serialized state. When no semantic table
        is supplied, imputation statistics from the state are used and
        every keyword misses (tokens impute deterministically)."""
        sem = semantic if semantic is not None else EmbeddingTable.stats_only(state["semantic_stats"])
        if sem.dim != int(state["semantic_stats"]["dim"]):
            raise SchemaError("semantic table width differs from fitted state")
        return cls(
            semantic=sem,
            visual=visual,
            norm=NormStats.from_json(state["norm_stats"]),
            categories=Vocabulary(list(state["categories"])),
            industries=Vocabulary(list(state["industries"])),
            products=Vocabulary(list(state["products"])),
            tier1=Vocabulary(list(state["tier1"])),
            tier2=Vocabulary(list(state["tier2"])),
            tier3=Vocabulary(list(state["tier3"])),
            catalog=MaterialCatalog.from_json(state["catalog"]),
            seed=int(state["seed"]),
            default_pattern=state["default_pattern"],
        )


def fit_encoders(train_assemblies, catalog: MaterialCatalog,
                 semantic: EmbeddingTable, visual: EmbeddingTable | None = None,
                 seed: int = 0) -> FeatureEncoders:
    """Fit normalization statistics and categorical vocabularies over the
    training split. ``train_assemblies`` is a list of IngestedAssembly."""
    samples: dict[str, list[float]] = {}
    categories, industries, products = [], [], []
    for a in train_assemblies:
        for b in a.bodies:
            for name, value in body_scalars(b).items():
                samples.setdefault(name, []).append(value)
        for name, value in meta_scalars(a.meta).items():
            samples.setdefault(name, []).append(value)
        categories.append(a.meta.category)
        industries.append(a.meta.industry)
        products.extend(a.meta.products)

    tiers = [catalog.tiers(mid) for mid in sorted(catalog.entries)]
    return FeatureEncoders(
        semantic=semantic,
        visual=visual,
        norm=NormStats.fit(samples),
        categories=Vocabulary.fit(categories),
        industries=Vocabulary.fit(industries),
        products=Vocabulary.fit(products),
        tier1=Vocabulary.fit(t[0] for t in tiers),
        tier2=Vocabulary.fit(t[1] for t in tiers),
        tier3=Vocabulary.fit(t[2] for t in tiers),
        catalog=catalog,
        seed=seed,
    )
