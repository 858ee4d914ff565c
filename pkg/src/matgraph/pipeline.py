"""Glue between pipeline stages: directory ingestion and corpus
preparation (vocabulary fitting, encoder fitting, graph building).

Stages communicate through the documented file formats so each one can
be re-run and inspected independently.
"""

from __future__ import annotations

import logging
from pathlib import Path

from .encoding import EmbeddingTable, fit_encoders
from .errors import ParseError, SchemaError
from .graphs import Corpus, build_corpus
from .ingest import (
    IngestedAssembly,
    MaterialCatalog,
    SplitManifest,
    filter_default_assemblies,
    group_materials,
    ingest_assembly,
    parse_assembly,
    split_dataset,
)

log = logging.getLogger(__name__)


def ingest_directory(assemblies_dir, catalog: MaterialCatalog) -> tuple[list[IngestedAssembly], dict]:
    """Parse every ``*.json`` under the directory, apply the default-
    material filter, and resolve ground-truth labels.

    Returns (kept records, summary counts).
    """
    paths = sorted(Path(assemblies_dir).glob("*.json"))
    parsed = {}
    failures = {}
    for path in paths:
        try:
            raw = parse_assembly(path.read_text(encoding="utf-8"), assembly_id=path.stem)
        except (ParseError, SchemaError) as exc:
            failures[path.stem] = str(exc)
            log.warning("skipping %s: %s", path.name, exc)
            continue
        parsed[raw.assembly_id] = raw

    bodies_by_id = {aid: [] for aid in parsed}
    records_by_id = {}
    for aid, raw in parsed.items():
        record = ingest_assembly(raw, catalog)
        records_by_id[aid] = record
        bodies_by_id[aid] = record.bodies

    kept_ids = set(filter_default_assemblies(bodies_by_id, catalog))
    records = [records_by_id[aid] for aid in sorted(kept_ids)]
    summary = {
        "parsed": len(parsed),
        "failed": len(failures),
        "kept": len(records),
        "dropped_default": len(parsed) - len(records),
        "failures": failures,
    }
    return records, summary


def prepare_corpus(records: list[IngestedAssembly], catalog: MaterialCatalog,
                   manifest: SplitManifest, semantic: EmbeddingTable,
                   visual: EmbeddingTable | None = None,
                   material_block: bool = False, tier_depth: int = 0,
                   seed: int = 0) -> Corpus:
    """Split, fit the label vocabulary and encoders on the training
    split only, and build the validated graph corpus."""
    ids = [r.assembly_id for r in records]
    train_ids, val_ids, test_ids = split_dataset(ids, manifest)
    by_id = {r.assembly_id: r for r in records}

    counts: dict[str, int] = {}
    for aid in train_ids:
        for material_id, _flag in by_id[aid].labels.values():
            counts[material_id] = counts.get(material_id, 0) + 1
    vocab = group_materials(counts)

    encoders = fit_encoders([by_id[aid] for aid in train_ids], catalog, semantic,
                            visual=visual, seed=seed)
    splits = {"train": train_ids, "val": val_ids, "test": test_ids}
    return build_corpus(records, encoders, vocab, splits,
                        material_block=material_block, tier_depth=tier_depth)
