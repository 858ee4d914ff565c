"""Tests for assembly parsing, extraction, hygiene filters, grouping,
and the split policy."""

import json
from pathlib import Path

import pytest

from matgraph.errors import ManifestError, ParseError, SchemaError
from matgraph.ingest import (
    CONTACT,
    HIERARCHICAL,
    JOINT,
    BodyRecord,
    MaterialCatalog,
    SplitManifest,
    extract_bodies,
    extract_connections,
    filter_default_assemblies,
    group_materials,
    ingest_assembly,
    is_default_assembly,
    parse_assembly,
    read_records,
    resolve_material,
    serialize_assembly,
    split_dataset,
    write_records,
)

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="module")
def gearbox():
    return parse_assembly(FIXTURES.joinpath("gearbox.json").read_text(), assembly_id="gearbox")


@pytest.fixture(scope="module")
def catalog():
    return MaterialCatalog.load(FIXTURES / "catalog.json")


def make_body(uuid, material="PrismMaterial-018", appearance="Prism-Appearance-Default",
              occurrence_path="", occurrence_name=""):
    return BodyRecord(
        uuid=uuid, body_name=uuid, occurrence_name=occurrence_name,
        area=1.0, volume=0.1, center_of_mass=(0.0, 0.0, 0.0),
        occurrence_area=0.0, occurrence_volume=0.0,
        physical_material_id=material, appearance_id=appearance,
        visible=True, depth=0, occurrence_path=occurrence_path,
    )


# ---------------------------------------------------------------------------
# parse_assembly
# ---------------------------------------------------------------------------


def test_parse_minimal_single_body():
    doc = json.dumps({
        "tree": {"bodies": [], "occurrences": [{"name": "Occ", "bodies": ["A"]}]},
        "bodies": {"A": {"name": "part"}},
    })
    a = parse_assembly(doc, assembly_id="one")
    assert len(a.bodies) == 1
    assert a.contacts == [] and a.joints == [] and a.as_built_joints == []


def test_parse_malformed_json_reports_offset():
    with pytest.raises(ParseError) as err:
        parse_assembly('{"tree": }')
    assert err.value.offset is not None


def test_parse_dangling_contact_reference():
    doc = json.dumps({
        "tree": {"bodies": ["A"]},
        "bodies": {"A": {"name": "part"}},
        "contacts": [{"body_one": "A", "body_two": "GHOST"}],
    })
    with pytest.raises(SchemaError, match="GHOST"):
        parse_assembly(doc)


def test_parse_gearbox_counts(gearbox):
    assert len(gearbox.bodies) == 7
    n_connections = len(gearbox.contacts) + len(gearbox.joints) + len(gearbox.as_built_joints)
    assert n_connections == 5
    assert len(gearbox.occurrences) == 2


def test_parse_serialize_parse_round_trip(gearbox):
    text = serialize_assembly(gearbox)
    again = parse_assembly(text)
    assert serialize_assembly(again) == text


def test_unknown_fields_ignored():
    doc = json.dumps({
        "tree": {"bodies": ["A"]},
        "bodies": {"A": {"name": "part", "mystery_field": 42}},
        "export_version": "9.9",
    })
    a = parse_assembly(doc)
    assert list(a.bodies) == ["A"]


# ---------------------------------------------------------------------------
# extract_bodies
# ---------------------------------------------------------------------------


def test_extract_root_body_depth_zero():
    doc = json.dumps({"tree": {"bodies": ["A"]}, "bodies": {"A": {"name": "part"}}})
    records = extract_bodies(parse_assembly(doc))
    assert records[0].depth == 0
    assert records[0].occurrence_name == ""


def test_extract_nested_occurrence_depth_two():
    doc = json.dumps({
        "tree": {"occurrences": [{
            "name": "outer",
            "occurrences": [{"name": "inner", "bodies": ["A"]}],
        }]},
        "bodies": {"A": {"name": "part"}},
    })
    records = extract_bodies(parse_assembly(doc))
    assert records[0].depth == 2
    assert records[0].occurrence_name == "inner"


def test_extract_skips_invisible(gearbox):
    records = extract_bodies(gearbox)
    assert len(records) == 6
    assert "B7" not in {r.uuid for r in records}


def test_extract_carries_occurrence_properties(gearbox):
    records = {r.uuid: r for r in extract_bodies(gearbox)}
    assert records["B2"].occurrence_name == "Gear Train"
    assert records["B2"].occurrence_area == pytest.approx(0.61)
    assert records["B1"].occurrence_area == 0.0


# ---------------------------------------------------------------------------
# extract_connections
# ---------------------------------------------------------------------------


def test_hierarchical_clique_for_shared_occurrence():
    doc = json.dumps({
        "tree": {"occurrences": [{"name": "grp", "bodies": ["A", "B", "C"]}]},
        "bodies": {u: {"name": u.lower()} for u in "ABC"},
    })
    a = parse_assembly(doc)
    records = extract_connections(a, extract_bodies(a))
    pairs = {(c.src, c.dst) for c in records if c.kind == HIERARCHICAL}
    assert pairs == {("A", "B"), ("A", "C"), ("B", "C")}


def test_as_built_joint_maps_to_joint(gearbox):
    records = extract_connections(gearbox, extract_bodies(gearbox))
    joints = [c for c in records if c.kind == JOINT]
    assert {(c.src, c.dst) for c in joints} == {("B1", "B4"), ("B3", "B5")}


def test_duplicate_contacts_retained():
    doc = json.dumps({
        "tree": {"bodies": ["A", "B"]},
        "bodies": {"A": {"name": "a"}, "B": {"name": "b"}},
        "contacts": [
            {"body_one": "A", "body_two": "B"},
            {"body_one": "A", "body_two": "B"},
        ],
    })
    a = parse_assembly(doc)
    records = extract_connections(a, extract_bodies(a))
    assert len([c for c in records if c.kind == CONTACT]) == 2


def test_connections_touching_invisible_dropped():
    doc = json.dumps({
        "tree": {"bodies": ["A", "B"]},
        "bodies": {"A": {"name": "a"}, "B": {"name": "b", "is_visible": False}},
        "contacts": [{"body_one": "A", "body_two": "B"}],
    })
    a = parse_assembly(doc)
    assert extract_connections(a, extract_bodies(a)) == []


def test_gearbox_connection_tally(gearbox):
    records = extract_connections(gearbox, extract_bodies(gearbox))
    by_kind = {}
    for c in records:
        by_kind[c.kind] = by_kind.get(c.kind, 0) + 1
    # 3 contacts, 2 joints, hierarchical pairs: {B2,B3} and {B4,B5}
    assert by_kind == {CONTACT: 3, JOINT: 2, HIERARCHICAL: 2}


def test_hierarchical_cliques_are_disjoint(gearbox):
    records = extract_connections(gearbox, extract_bodies(gearbox))
    touched = {}
    for c in records:
        if c.kind != HIERARCHICAL:
            continue
        for u in (c.src, c.dst):
            body = [b for b in extract_bodies(gearbox) if b.uuid == u][0]
            touched.setdefault(u, body.occurrence_path)
    # every body participating in hierarchical edges has exactly one occurrence
    assert all(path for path in touched.values())


# ---------------------------------------------------------------------------
# hygiene filters
# ---------------------------------------------------------------------------


def test_filter_removes_all_default_assembly(catalog):
    assemblies = {
        "all-default": [make_body("A"), make_body("B")],
        "one-appearance": [make_body("A"), make_body("B", appearance="Prism-047")],
    }
    kept = filter_default_assemblies(assemblies, catalog)
    assert set(kept) == {"one-appearance"}


def test_filter_is_a_fixed_point(catalog):
    assemblies = {
        "x": [make_body("A", material="PrismMaterial-002")],
        "y": [make_body("A")],
    }
    once = filter_default_assemblies(assemblies, catalog)
    twice = filter_default_assemblies(once, catalog)
    assert once == twice


def test_default_assembly_predicate(catalog):
    assert is_default_assembly([make_body("A")], catalog)
    assert not is_default_assembly([make_body("A", material="PrismMaterial-002")], catalog)


def test_resolve_material_precedence(catalog):
    aluminum = make_body("A", material="PrismMaterial-002")
    assert resolve_material(aluminum, catalog) == ("PrismMaterial-002", False)
    chrome = make_body("A", appearance="Prism-047")
    assert resolve_material(chrome, catalog) == ("Prism-047", False)
    plain = make_body("A")
    assert resolve_material(plain, catalog) == ("PrismMaterial-018", True)


def test_resolve_unknown_id_maps_to_other(catalog):
    body = make_body("A", material="NOT-A-MATERIAL")
    material, flagged = resolve_material(body, catalog)
    assert material == "OTHER" and not flagged


# ---------------------------------------------------------------------------
# grouping
# ---------------------------------------------------------------------------


def test_group_materials_top20_plus_other():
    counts = {f"M{i:03d}": 1000 - i for i in range(30)}
    vocab = group_materials(counts)
    assert len(vocab) == 21
    assert vocab.classes[-1] == "OTHER"
    assert vocab.classes[0] == "M000"
    # the 10 dropped ids fold into OTHER
    assert vocab.counts[-1] == sum(1000 - i for i in range(20, 30))


def test_group_materials_degenerate_few_classes():
    vocab = group_materials({"A": 3, "B": 2, "C": 2, "D": 1, "E": 1})
    assert len(vocab) == 6
    assert vocab.classes[-1] == "OTHER"
    assert vocab.counts[-1] == 0


def test_group_materials_tie_break_lexicographic():
    counts = {f"M{i:02d}": 100 for i in range(19)}
    counts["AAA"] = 7
    counts["ZZZ"] = 7  # tied at the boundary; AAA wins rank 20
    vocab = group_materials(counts)
    assert "AAA" in vocab.classes
    assert "ZZZ" not in vocab.classes


def test_vocab_index_of_falls_back_to_other():
    vocab = group_materials({"A": 5, "B": 3})
    assert vocab.index_of("A") == 0
    assert vocab.index_of("unseen") == vocab.classes.index("OTHER")


def test_vocab_serialization_stable():
    vocab = group_materials({"A": 5, "B": 3})
    doc = vocab.to_json()
    assert doc == json.loads(json.dumps(doc))


# ---------------------------------------------------------------------------
# split
# ---------------------------------------------------------------------------


def test_split_100_into_56_24_20():
    ids = [f"g{i:03d}" for i in range(100)]
    manifest = SplitManifest(seed=7, test_ids=ids[:20])
    train, val, test = split_dataset(ids, manifest)
    assert (len(train), len(val), len(test)) == (56, 24, 20)


def test_split_small_rounding():
    ids = [f"g{i}" for i in range(10)]
    manifest = SplitManifest(seed=1, test_ids=ids[:2])
    train, val, test = split_dataset(ids, manifest)
    assert (len(train), len(val), len(test)) == (6, 2, 2)


def test_split_deterministic_and_disjoint():
    ids = [f"g{i}" for i in range(37)]
    manifest = SplitManifest(seed=123, test_ids=ids[:7])
    first = split_dataset(ids, manifest)
    second = split_dataset(ids, manifest)
    assert first == second
    train, val, test = first
    assert set(train) | set(val) | set(test) == set(ids)
    assert not (set(train) & set(val)) and not (set(train) & set(test)) and not (set(val) & set(test))


def test_split_rejects_foreign_test_ids():
    with pytest.raises(ManifestError):
        split_dataset(["a", "b"], SplitManifest(seed=0, test_ids=["zzz"]))


# ---------------------------------------------------------------------------
# ingest records round trip
# ---------------------------------------------------------------------------


def test_ingest_records_round_trip(tmp_path, gearbox, catalog):
    ingested = ingest_assembly(gearbox, catalog)
    path = tmp_path / "records.jsonl"
    write_records(path, [ingested])
    loaded = read_records(path)
    assert len(loaded) == 1
    assert loaded[0].to_json() == ingested.to_json()
    assert loaded[0].labels["B2"] == ("Prism-047", False)
    assert loaded[0].labels["B3"] == ("PrismMaterial-018", True)
