"""Assembly JSON ingestion: parsing, body/connection extraction, dataset
hygiene filters, material resolution and grouping, and the split policy.

The input document layout is described in docs/assembly-schema.md. Unknown
fields are ignored so that real exports with extra keys still parse.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import OTHER_LABEL
from .errors import ManifestError, ParseError, SchemaError

log = logging.getLogger(__name__)

CONTACT = "contact"
JOINT = "joint"
HIERARCHICAL = "hierarchical"
CONNECTION_KINDS = (CONTACT, JOINT, HIERARCHICAL)

TOP_CLASSES = 20


@dataclass
class RawBody:
    uuid: str
    name: str = ""
    area: float = 0.0
    volume: float = 0.0
    center_of_mass: tuple[float, float, float] = (0.0, 0.0, 0.0)
    material_id: str = ""
    appearance_id: str = ""
    visible: bool = True


@dataclass
class RawOccurrence:
    name: str = ""
    path: str = ""
    area: float = 0.0
    volume: float = 0.0
    body_ids: list[str] = field(default_factory=list)
    children: list["RawOccurrence"] = field(default_factory=list)


@dataclass
class AssemblyMeta:
    category: str = ""
    industry: str = ""
    products: list[str] = field(default_factory=list)
    physical: dict = field(default_factory=dict)
    geometric: dict = field(default_factory=dict)


@dataclass
class RawAssembly:
    assembly_id: str
    bodies: dict[str, RawBody]
    root_body_ids: list[str]
    occurrences: list[RawOccurrence]
    joints: list[tuple[str, str]]
    as_built_joints: list[tuple[str, str]]
    contacts: list[tuple[str, str]]
    meta: AssemblyMeta


@dataclass
class BodyRecord:
    """One visible body with the occurrence context it was found in."""

    uuid: str
    body_name: str
    occurrence_name: str
    area: float
    volume: float
    center_of_mass: tuple[float, float, float]
    occurrence_area: float
    occurrence_volume: float
    physical_material_id: str
    appearance_id: str
    visible: bool
    depth: int
    occurrence_path: str = ""


@dataclass
class ConnectionRecord:
    src: str
    dst: str
    kind: str


@dataclass
class MaterialCatalog:
    entries: dict[str, dict]
    default_material_id: str
    default_appearance_id: str

    @classmethod
    def from_json(cls, doc: dict) -> "MaterialCatalog":
        entries = dict(doc.get("materials", {}))
        for mid, entry in entries.items():
            if not entry.get("tier1"):
                raise SchemaError(f"catalog entry {mid} has empty tier1")
            if entry.get("tier3") and not entry.get("tier2"):
                raise SchemaError(f"catalog entry {mid} has tier3 without tier2")
        return cls(
            entries=entries,
            default_material_id=doc["default_material_id"],
            default_appearance_id=doc["default_appearance_id"],
        )

    @classmethod
    def load(cls, path) -> "MaterialCatalog":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "default_material_id": self.default_material_id,
            "default_appearance_id": self.default_appearance_id,
            "materials": self.entries,
        }

    def display_name(self, material_id: str) -> str:
        entry = self.entries.get(material_id)
        return entry["name"] if entry and entry.get("name") else material_id

    def tiers(self, material_id: str) -> tuple[str, str, str]:
        entry = self.entries.get(material_id)
        if entry is None:
            return ("", "", "")
        return (entry.get("tier1", ""), entry.get("tier2", ""), entry.get("tier3", ""))


@dataclass
class LabelVocabulary:
    """Ordered label classes: top material ids by count, then OTHER last."""

    classes: list[str]
    counts: list[int]

    def __post_init__(self):
        if OTHER_LABEL not in self.classes:
            raise SchemaError("label vocabulary must contain OTHER")
        if len(self.classes) != len(self.counts):
            raise SchemaError("classes and counts must be parallel")

    def __len__(self) -> int:
        return len(self.classes)

    def index_of(self, material_id: str) -> int:
        try:
            return self.classes.index(material_id)
        except ValueError:
            return self.classes.index(OTHER_LABEL)

    def to_json(self) -> dict:
        return {"classes": list(self.classes), "counts": [int(c) for c in self.counts]}

    @classmethod
    def from_json(cls, doc: dict) -> "LabelVocabulary":
        return cls(classes=list(doc["classes"]), counts=[int(c) for c in doc["counts"]])


@dataclass
class SplitManifest:
    seed: int
    test_ids: list[str]

    @classmethod
    def load(cls, path) -> "SplitManifest":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(seed=int(doc["seed"]), test_ids=list(doc["test_ids"]))

    def to_json(self) -> dict:
        return {"seed": self.seed, "test_ids": list(self.test_ids)}


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _num(value, default=0.0) -> float:
    return float(value) if isinstance(value, (int, float)) else default


def _parse_body(uuid: str, doc: dict) -> RawBody:
    phys = doc.get("physical_properties", {}) or {}
    com = phys.get("center_of_mass", {}) or {}
    return RawBody(
        uuid=uuid,
        name=str(doc.get("name", "")),
        area=_num(phys.get("surface_area")),
        volume=_num(phys.get("volume")),
        center_of_mass=(_num(com.get("x")), _num(com.get("y")), _num(com.get("z"))),
        material_id=str(doc.get("material_id", "")),
        appearance_id=str(doc.get("appearance_id", "")),
        visible=bool(doc.get("is_visible", True)),
    )


def _parse_occurrence(doc: dict, path: str) -> RawOccurrence:
    phys = doc.get("physical_properties", {}) or {}
    occ = RawOccurrence(
        name=str(doc.get("name", "")),
        path=path,
        area=_num(phys.get("surface_area")),
        volume=_num(phys.get("volume")),
        body_ids=[str(b) for b in doc.get("bodies", [])],
    )
    for i, child in enumerate(doc.get("occurrences", [])):
        occ.children.append(_parse_occurrence(child, f"{path}/{i}"))
    return occ


def _parse_pairs(doc: dict, key: str, bodies: dict) -> list[tuple[str, str]]:
    pairs = []
    for entry in doc.get(key, []):
        one, two = str(entry.get("body_one", "")), str(entry.get("body_two", ""))
        for uuid in (one, two):
            if uuid not in bodies:
                raise SchemaError(f"{key} entry references unknown body {uuid!r}")
        pairs.append((one, two))
    return pairs


def parse_assembly(document: str, assembly_id: str = "") -> RawAssembly:
    """Parse one assembly JSON document into a navigable structure.

    Raises ParseError (with byte offset) on malformed JSON and
    SchemaError when a tree/joint/contact entry references a body UUID
    missing from the bodies map.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise ParseError("assembly document must be a JSON object")

    def expect(value, kind, what):
        if not isinstance(value, kind):
            raise SchemaError(f"{what} must be a JSON {kind.__name__}, got {type(value).__name__}")
        return value

    bodies = {str(uuid): _parse_body(str(uuid), expect(body_doc or {}, dict, f"body {uuid}"))
              for uuid, body_doc in expect(doc.get("bodies", {}) or {}, dict, "bodies").items()}

    tree = expect(doc.get("tree", {}) or {}, dict, "tree")
    root_body_ids = [str(b) for b in expect(tree.get("bodies", []), list, "tree.bodies")]
    occurrences = [_parse_occurrence(expect(child, dict, "occurrence"), f"occ/{i}")
                   for i, child in enumerate(expect(tree.get("occurrences", []), list, "tree.occurrences"))]

    def check_tree(occ: RawOccurrence):
        for uuid in occ.body_ids:
            if uuid not in bodies:
                raise SchemaError(f"tree references unknown body {uuid!r}")
        for child in occ.children:
            check_tree(child)

    for uuid in root_body_ids:
        if uuid not in bodies:
            raise SchemaError(f"tree references unknown body {uuid!r}")
    for occ in occurrences:
        check_tree(occ)

    meta_doc = doc.get("meta", {}) or {}
    meta = AssemblyMeta(
        category=str(meta_doc.get("category", "")),
        industry=str(meta_doc.get("industry", "")),
        products=[str(p) for p in meta_doc.get("products", [])],
        physical=dict(meta_doc.get("physical", {}) or {}),
        geometric=dict(meta_doc.get("geometric", {}) or {}),
    )

    return RawAssembly(
        assembly_id=str(doc.get("assembly_id", "")) or assembly_id,
        bodies=bodies,
        root_body_ids=root_body_ids,
        occurrences=occurrences,
        joints=_parse_pairs(doc, "joints", bodies),
        as_built_joints=_parse_pairs(doc, "as_built_joints", bodies),
        contacts=_parse_pairs(doc, "contacts", bodies),
        meta=meta,
    )


def serialize_assembly(a: RawAssembly) -> str:
    """Inverse of parse_assembly on the supported field subset."""

    def occ_doc(occ: RawOccurrence) -> dict:
        return {
            "name": occ.name,
            "physical_properties": {"surface_area": occ.area, "volume": occ.volume},
            "bodies": list(occ.body_ids),
            "occurrences": [occ_doc(c) for c in occ.children],
        }

    doc = {
        "assembly_id": a.assembly_id,
        "tree": {
            "bodies": list(a.root_body_ids),
            "occurrences": [occ_doc(o) for o in a.occurrences],
        },
        "bodies": {
            uuid: {
                "name": b.name,
                "physical_properties": {
                    "surface_area": b.area,
                    "volume": b.volume,
                    "center_of_mass": {
                        "x": b.center_of_mass[0],
                        "y": b.center_of_mass[1],
                        "z": b.center_of_mass[2],
                    },
                },
                "material_id": b.material_id,
                "appearance_id": b.appearance_id,
                "is_visible": b.visible,
            }
            for uuid, b in a.bodies.items()
        },
        "joints": [{"body_one": u, "body_two": v} for u, v in a.joints],
        "as_built_joints": [{"body_one": u, "body_two": v} for u, v in a.as_built_joints],
        "contacts": [{"body_one": u, "body_two": v} for u, v in a.contacts],
        "meta": {
            "category": a.meta.category,
            "industry": a.meta.industry,
            "products": list(a.meta.products),
            "physical": dict(a.meta.physical),
            "geometric": dict(a.meta.geometric),
        },
    }
    return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------


def extract_bodies(a: RawAssembly) -> list[BodyRecord]:
    """Walk the occurrence tree and collect visible bodies with their
    occurrence context and hierarchy depth. Invisible bodies are dropped."""
    records: list[BodyRecord] = []
    seen: set[str] = set()

    def emit(uuid: str, occ: RawOccurrence | None, depth: int):
        if uuid in seen:
            raise SchemaError(f"body {uuid!r} referenced more than once in tree")
        seen.add(uuid)
        body = a.bodies[uuid]
        if not body.visible:
            return
        records.append(BodyRecord(
            uuid=uuid,
            body_name=body.name,
            occurrence_name=occ.name if occ else "",
            area=body.area,
            volume=body.volume,
            center_of_mass=body.center_of_mass,
            occurrence_area=occ.area if occ else 0.0,
            occurrence_volume=occ.volume if occ else 0.0,
            physical_material_id=body.material_id,
            appearance_id=body.appearance_id,
            visible=True,
            depth=depth,
            occurrence_path=occ.path if occ else "",
        ))

    def walk(occ: RawOccurrence, depth: int):
        for uuid in occ.body_ids:
            emit(uuid, occ, depth)
        for child in occ.children:
            walk(child, depth + 1)

    for uuid in a.root_body_ids:
        emit(uuid, None, 0)
    for occ in a.occurrences:
        walk(occ, 1)
    return records


def extract_connections(a: RawAssembly, bodies: list[BodyRecord]) -> list[ConnectionRecord]:
    """Map contacts/joints to typed records and add pairwise hierarchical
    connections among visible bodies sharing the same immediate occurrence.

    Connections touching invisible or unknown bodies are dropped with a
    warning; self-connections are dropped as well.
    """
    visible = {b.uuid for b in bodies}
    records: list[ConnectionRecord] = []

    def add_pairs(pairs: list[tuple[str, str]], kind: str):
        for src, dst in pairs:
            if src == dst:
                log.warning("%s: dropping self-connection on %s", a.assembly_id, src)
                continue
            if src not in visible or dst not in visible:
                log.warning("%s: dropping %s touching hidden/unknown body (%s, %s)",
                            a.assembly_id, kind, src, dst)
                continue
            records.append(ConnectionRecord(src=src, dst=dst, kind=kind))

    add_pairs(a.contacts, CONTACT)
    add_pairs(a.joints, JOINT)
    add_pairs(a.as_built_joints, JOINT)

    # pairwise cliques per immediate occurrence
    by_occurrence: dict[str, list[str]] = {}
    for b in bodies:
        if b.occurrence_path:
            by_occurrence.setdefault(b.occurrence_path, []).append(b.uuid)
    for path in sorted(by_occurrence):
        members = by_occurrence[path]
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                records.append(ConnectionRecord(src=members[i], dst=members[j], kind=HIERARCHICAL))
    return records


# ---------------------------------------------------------------------------
# dataset hygiene
# ---------------------------------------------------------------------------


def is_default_assembly(bodies: list[BodyRecord], catalog: MaterialCatalog) -> bool:
    """True when every visible body carries both default labels."""
    if not bodies:
        return True
    return all(
        b.physical_material_id == catalog.default_material_id
        and b.appearance_id == catalog.default_appearance_id
        for b in bodies
    )


def filter_default_assemblies(assemblies: dict[str, list[BodyRecord]],
                              catalog: MaterialCatalog) -> dict[str, list[BodyRecord]]:
    """Keep assemblies where at least one body shows a deliberate
    material or appearance choice."""
    return {aid: bodies for aid, bodies in assemblies.items()
            if not is_default_assembly(bodies, catalog)}


def resolve_material(b: BodyRecord, catalog: MaterialCatalog) -> tuple[str, bool]:
    """Pick the ground-truth material id for a body.

    A non-default physical material wins; otherwise a non-default
    appearance is used; otherwise the default material id is returned
    with the default flag set. Ids absent from the catalog map to OTHER.
    """

    def known(mid: str) -> str:
        if mid in catalog.entries:
            return mid
        log.warning("unknown material id %r mapped to %s", mid, OTHER_LABEL)
        return OTHER_LABEL

    if b.physical_material_id and b.physical_material_id != catalog.default_material_id:
        return known(b.physical_material_id), False
    if b.appearance_id and b.appearance_id != catalog.default_appearance_id:
        return known(b.appearance_id), False
    return catalog.default_material_id, True


def group_materials(counts: dict[str, int], top: int = TOP_CLASSES) -> LabelVocabulary:
    """Keep the ``top`` most frequent material ids (ties broken
    lexicographically by id) and fold the rest into OTHER."""
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [mid for mid, _ in ranked[:top] if mid != OTHER_LABEL]
    other_count = sum(c for mid, c in counts.items() if mid not in kept)
    classes = kept + [OTHER_LABEL]
    class_counts = [counts[mid] for mid in kept] + [other_count]
    return LabelVocabulary(classes=classes, counts=class_counts)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(graph_ids: list[str], manifest: SplitManifest) -> tuple[list[str], list[str], list[str]]:
    """Partition ids into (train, val, test).

    The test set is fixed by the manifest; the remainder is shuffled
    with the manifest seed and split 70/30 (train count rounded half
    up), giving overall proportions 56/24/20 when the test share is 20%.
    """
    id_set = set(graph_ids)
    missing = [t for t in manifest.test_ids if t not in id_set]
    if missing:
        raise ManifestError(f"test ids not present in corpus: {missing[:5]}")
    test = list(manifest.test_ids)
    rest = sorted(id_set - set(test))
    rng = np.random.default_rng(manifest.seed)
    order = rng.permutation(len(rest))
    shuffled = [rest[i] for i in order]
    n_train = _round_half_up(0.7 * len(shuffled))
    return shuffled[:n_train], shuffled[n_train:], test


# ---------------------------------------------------------------------------
# ingest records (the file handed from `ingest` to `build-graphs`)
# ---------------------------------------------------------------------------


def body_to_json(b: BodyRecord) -> dict:
    return {
        "uuid": b.uuid,
        "body_name": b.body_name,
        "occurrence_name": b.occurrence_name,
        "area": b.area,
        "volume": b.volume,
        "center_of_mass": list(b.center_of_mass),
        "occurrence_area": b.occurrence_area,
        "occurrence_volume": b.occurrence_volume,
        "physical_material_id": b.physical_material_id,
        "appearance_id": b.appearance_id,
        "visible": b.visible,
        "depth": b.depth,
        "occurrence_path": b.occurrence_path,
    }


def body_from_json(doc: dict) -> BodyRecord:
    return BodyRecord(
        uuid=doc["uuid"],
        body_name=doc["body_name"],
        occurrence_name=doc["occurrence_name"],
        area=doc["area"],
        volume=doc["volume"],
        center_of_mass=tuple(doc["center_of_mass"]),
        occurrence_area=doc["occurrence_area"],
        occurrence_volume=doc["occurrence_volume"],
        physical_material_id=doc["physical_material_id"],
        appearance_id=doc["appearance_id"],
        visible=doc["visible"],
        depth=doc["depth"],
        occurrence_path=doc.get("occurrence_path", ""),
    )


@dataclass
class IngestedAssembly:
    """All per-assembly state the graph builder needs."""

    assembly_id: str
    bodies: list[BodyRecord]
    connections: list[ConnectionRecord]
    labels: dict[str, tuple[str, bool]]  # uuid -> (material_id, default flag)
    meta: AssemblyMeta

    def to_json(self) -> dict:
        return {
            "assembly_id": self.assembly_id,
            "bodies": [body_to_json(b) for b in self.bodies],
            "connections": [{"src": c.src, "dst": c.dst, "kind": c.kind} for c in self.connections],
            "labels": {uuid: {"material_id": mid, "default": flag}
                       for uuid, (mid, flag) in self.labels.items()},
            "meta": {
                "category": self.meta.category,
                "industry": self.meta.industry,
                "products": list(self.meta.products),
                "physical": dict(self.meta.physical),
                "geometric": dict(self.meta.geometric),
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "IngestedAssembly":
        return cls(
            assembly_id=doc["assembly_id"],
            bodies=[body_from_json(b) for b in doc["bodies"]],
            connections=[ConnectionRecord(c["src"], c["dst"], c["kind"]) for c in doc["connections"]],
            labels={uuid: (entry["material_id"], entry["default"])
                    for uuid, entry in doc["labels"].items()},
            meta=AssemblyMeta(
                category=doc["meta"]["category"],
                industry=doc["meta"]["industry"],
                products=list(doc["meta"]["products"]),
                physical=dict(doc["meta"]["physical"]),
                geometric=dict(doc["meta"]["geometric"]),
            ),
        )


def ingest_assembly(a: RawAssembly, catalog: MaterialCatalog) -> IngestedAssembly:
    bodies = extract_bodies(a)
    connections = extract_connections(a, bodies)
    labels = {b.uuid: resolve_material(b, catalog) for b in bodies}
    return IngestedAssembly(
        assembly_id=a.assembly_id,
        bodies=bodies,
        connections=connections,
        labels=labels,
        meta=a.meta,
    )


def write_records(path, assemblies: list[IngestedAssembly]):
    with open(path, "w", encoding="utf-8") as fh:
        for a in assemblies:
            fh.write(json.dumps(a.to_json(), sort_keys=True))
            fh.write("\n")


def read_records(path) -> list[IngestedAssembly]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(IngestedAssembly.from_json(json.loads(line)))
    return out
