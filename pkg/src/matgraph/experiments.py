"""The four experimental protocols (fully guided, partial guided, user
guided, feature ablation), corpus statistics, and report emission.

Every experiment writes three artifacts into its output directory:
metrics.csv (one row per run/metric), report.json (aggregates plus the
exact configuration used), and table.md (a human-readable summary
table). All outputs are byte-stable given the same corpus and seeds.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from .encoding import FeatureEncoders
from .errors import ConfigError
from .evaluation import (
    evaluate_predictions,
    majority_probs,
    topk_score,
    train_linear_softmax,
)
from .graphs import (
    AssemblyGraph,
    Corpus,
    apply_edge_ablation,
    apply_node_ablation,
    inject_context_labels,
    inject_tier_features,
    validate_graph,
)
from .model import ModelConfig
from .training import TrainConfig, predict_corpus, train, write_metrics_csv

log = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_DEPTHS = (0, 1, 2, 3)
DEFAULT_KS = (1, 2, 3)


def _graph_seed(seed: int, graph_id: str) -> int:
    digest = hashlib.sha256(f"{seed}/{graph_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2 ** 31)


def _test_eval(corpus: Corpus, graphs: dict[str, AssemblyGraph], params, config,
               ks=DEFAULT_KS) -> dict:
    """Aggregate test-split metrics over target-masked nodes."""
    test = [graphs[gid] for gid in corpus.splits["test"] if gid in graphs]
    probs_rows, y_rows, mask_rows = [], [], []
    for g in test:
        probs = predict_corpus([g], params, config)[0]
        probs_rows.append(probs)
        y_rows.append(g.y)
        mask_rows.append(g.target_mask)
    probs = np.concatenate(probs_rows, axis=0)
    y = np.concatenate(y_rows)
    mask = np.concatenate(mask_rows)
    report = evaluate_predictions(probs, y, corpus.vocab.classes, mask=mask,
                                  ks=[k for k in ks if k <= probs.shape[1]])
    return {"micro_f1": report.micro_f1, "weighted_f1": report.weighted_f1,
            **{f"top_{k}": v for k, v in report.top_k.items()}}


def _aggregate(per_run: list[dict]) -> dict:
    out = {}
    for key in per_run[0]:
        values = np.array([r[key] for r in per_run], dtype=np.float64)
        out[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return out


def _metric_rows(experiment: str, run: int, seed: int, metrics: dict,
                 split: str = "test") -> list[dict]:
    rows = []
    for name, value in sorted(metrics.items()):
        if name.startswith("top_"):
            rows.append({"experiment": experiment, "run": run, "seed": seed,
                         "split": split, "metric": "top_k", "k": int(name[4:]),
                         "value": value})
        else:
            rows.append({"experiment": experiment, "run": run, "seed": seed,
                         "split": split, "metric": name, "value": value})
    return rows


def _write_report(out_dir, report: dict, rows: list[dict], table: str):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", rows)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    with open(out / "table.md", "w", encoding="utf-8") as fh:
        fh.write(table)


def _fmt(stat: dict) -> str:
    return f"{stat['mean']:.3f} ± {stat['std']:.2f}"


# ---------------------------------------------------------------------------
# fully algorithm-guided
# ---------------------------------------------------------------------------


def run_fully_guided(corpus: Corpus, model_config: ModelConfig, train_config: TrainConfig,
                     out_dir, seed0: int = 0, with_baselines: bool = True) -> dict:
    """Train with no material information in the inputs, evaluate
    top-1/2/3 on the test split, and compare against the baselines."""
    rows = []
    per_run = []
    for i in range(train_config.runs):
        seed = seed0 + i
        ckpt, _history = train(model_config, train_config, corpus, seed)
        metrics = _test_eval(corpus, corpus.graphs, ckpt.params, model_config)
        per_run.append(metrics)
        rows.extend(_metric_rows("fully_guided", i, seed, metrics))

    baselines = {}
    if with_baselines:
        test_graphs = corpus.split_graphs("test")
        y = np.concatenate([g.y for g in test_graphs])

        major = np.concatenate(majority_probs(corpus, test_graphs), axis=0)
        baselines["majority_class"] = {
            f"top_{k}": {"mean": topk_score(major, y, k), "std": 0.0} for k in DEFAULT_KS}
        rows.extend(_metric_rows("fully_guided/majority_class", 0, seed0,
                                 {f"top_{k}": topk_score(major, y, k) for k in DEFAULT_KS}))

        for name, block in (("linear_softmax", None), ("visual_only", "body_geometry")):
            runs = []
            for i in range(train_config.runs):
                seed = seed0 + i
                model = train_linear_softmax(corpus, seed=seed, block=block)
                probs = np.concatenate([model.predict(g.X) for g in test_graphs], axis=0)
                metrics = {f"top_{k}": topk_score(probs, y, k) for k in DEFAULT_KS}
                runs.append(metrics)
                rows.extend(_metric_rows(f"fully_guided/{name}", i, seed, metrics))
            baselines[name] = _aggregate(runs)

    aggregate = _aggregate(per_run)
    report = {
        "experiment": "fully_guided",
        "model": aggregate,
        "baselines": baselines,
        "runs": per_run,
        "config": {"model": model_config.to_json(), "train": train_config.to_json(),
                   "seed0": seed0},
    }

    lines = ["| model | top-1 | top-2 | top-3 |", "|---|---|---|---|"]
    lines.append("| gnn | " + " | ".join(_fmt(aggregate[f"top_{k}"]) for k in DEFAULT_KS) + " |")
    for name, stats in baselines.items():
        lines.append(f"| {name} | " + " | ".join(_fmt(stats[f"top_{k}"]) for k in DEFAULT_KS) + " |")
    _write_report(out_dir, report, rows, "\n".join(lines) + "\n")
    return report


# ---------------------------------------------------------------------------
# partial algorithm-guided
# ---------------------------------------------------------------------------


def _inject_corpus(corpus: Corpus, ratio: float, seed: int) -> dict[str, AssemblyGraph]:
    if ratio == 0:
        return corpus.graphs
    return {gid: inject_context_labels(g, ratio, _graph_seed(seed, gid))
            for gid, g in corpus.graphs.items()}


def _zero_material_block(graphs: dict[str, AssemblyGraph], ids: list[str]) -> dict[str, AssemblyGraph]:
    out = dict(graphs)
    for gid in ids:
        g = out[gid].copy()
        g.X[:, g.schema.columns("material_onehot")] = 0.0
        out[gid] = g
    return out


def run_partial_guided(corpus: Corpus, ratios=DEFAULT_RATIOS, layer_counts=(1, 2, 3, 4, 5, 6, 7, 8),
                       model_config: ModelConfig | None = None,
                       train_config: TrainConfig | None = None,
                       out_dir=None, seed0: int = 0,
                       zero_context_at_eval: bool = False) -> dict:
    """Grid over (context ratio, layer count): per run, every graph gets
    a seeded context-node sample whose ground-truth one-hots become
    input features; metrics cover target nodes only.

    By default validation/test context nodes keep their ground-truth
    feature and are merely excluded from metrics; ``zero_context_at_eval``
    switches to the alternative reading where the label features are
    zeroed outside training.
    """
    if "material_onehot" not in corpus.schema:
        raise ConfigError("partial-guided protocol needs a corpus built with the material block")
    train_config = train_config or TrainConfig()
    base = model_config or ModelConfig(d_x=corpus.schema.width, classes=len(corpus.vocab))

    rows = []
    matrix = {}
    for ratio in ratios:
        for layers in layer_counts:
            config = ModelConfig(d_x=base.d_x, classes=base.classes, num_layers=layers,
                                 hidden=base.hidden, layer_kind=base.layer_kind,
                                 edge_proj=base.edge_proj, seed=base.seed)
            cell_runs = []
            for i in range(train_config.runs):
                seed = seed0 + i
                graphs = _inject_corpus(corpus, ratio, seed)
                if zero_context_at_eval and ratio != 0:
                    graphs = _zero_material_block(
                        graphs, corpus.splits["val"] + corpus.splits["test"])
                ckpt, _ = train(config, train_config, corpus, seed, graphs=graphs)
                metrics = _test_eval(corpus, graphs, ckpt.params, config)
                cell_runs.append(metrics)
                rows.extend(_metric_rows(f"partial_guided/r{ratio}/k{layers}", i, seed, metrics))
            matrix[f"{ratio}|{layers}"] = _aggregate(cell_runs)

    report = {
        "experiment": "partial_guided",
        "ratios": list(ratios),
        "layer_counts": list(layer_counts),
        "cells": matrix,
        "config": {"model": base.to_json(), "train": train_config.to_json(), "seed0": seed0},
    }

    header = "| ratio \\ layers | " + " | ".join(str(k) for k in layer_counts) + " |"
    lines = [header, "|" + "---|" * (len(layer_counts) + 1)]
    for ratio in ratios:
        cells = [f"{matrix[f'{ratio}|{k}']['top_1']['mean']:.3f}" for k in layer_counts]
        lines.append(f"| {ratio} | " + " | ".join(cells) + " |")
    if out_dir is not None:
        _write_report(out_dir, report, rows, "\n".join(lines) + "\n")
    return report


# ---------------------------------------------------------------------------
# user-guided
# ---------------------------------------------------------------------------


def run_user_guided(corpus: Corpus, depths=DEFAULT_DEPTHS, ks=DEFAULT_KS,
                    model_config: ModelConfig | None = None,
                    train_config: TrainConfig | None = None,
                    out_dir=None, seed0: int = 0) -> dict:
    """Inject ground-truth tier features at each depth for every node,
    retrain, and report micro/weighted F1 per (depth, k)."""
    train_config = train_config or TrainConfig()
    encoders = FeatureEncoders.from_state(corpus.encoder_state)
    rows = []
    by_depth = {}
    for depth in depths:
        graphs = {gid: inject_tier_features(g, depth, encoders, corpus.vocab)
                  for gid, g in corpus.graphs.items()}
        width = next(iter(graphs.values())).schema.width
        base = model_config or ModelConfig(d_x=width, classes=len(corpus.vocab))
        config = ModelConfig(d_x=width, classes=len(corpus.vocab), num_layers=base.num_layers,
                             hidden=base.hidden, layer_kind=base.layer_kind,
                             edge_proj=base.edge_proj, seed=base.seed)
        depth_runs = []
        for i in range(train_config.runs):
            seed = seed0 + i
            ckpt, _ = train(config, train_config, corpus, seed, graphs=graphs)
            metrics = _test_eval(corpus, graphs, ckpt.params, config, ks=ks)
            depth_runs.append(metrics)
            rows.extend(_metric_rows(f"user_guided/d{depth}", i, seed, metrics))
        by_depth[str(depth)] = _aggregate(depth_runs)

    report = {
        "experiment": "user_guided",
        "depths": list(depths),
        "ks": list(ks),
        "by_depth": by_depth,
        "config": {"model": (model_config.to_json() if model_config else None),
                   "train": train_config.to_json(), "seed0": seed0},
    }

    lines = ["| top-k | tier depth | micro-F1 | weighted-F1 |", "|---|---|---|---|"]
    for k in ks:
        for depth in depths:
            stats = by_depth[str(depth)]
            lines.append(f"| {k} | {depth} | " + _fmt(stats[f"top_{k}"]) + " | "
                         + (_fmt(stats["weighted_f1"]) if k == 1 else "-") + " |")
    if out_dir is not None:
        _write_report(out_dir, report, rows, "\n".join(lines) + "\n")
    return report


# ---------------------------------------------------------------------------
# feature ablation
# ---------------------------------------------------------------------------


def run_feature_ablation(corpus: Corpus, blocks=None, edge_modes=("none", "hierarchical"),
                         model_config: ModelConfig | None = None,
                         train_config: TrainConfig | None = None,
                         out_dir=None, seed0: int = 0) -> dict:
    """For each (node block or none) x (edge ablation mode): rebuild the
    corpus with the ablation applied, retrain, and report top-1 micro-F1."""
    train_config = train_config or TrainConfig()
    if blocks is None:
        blocks = [name for name in ("body_name", "occurrence_name", "semantic_names",
                                    "body_physical", "occurrence_physical",
                                    "body_geometry", "global")
                  if name == "semantic_names" or name in corpus.schema]
    cells = {}
    rows = []
    for edge_mode in edge_modes:
        for block in [None] + list(blocks):
            graphs = {}
            for gid, g in corpus.graphs.items():
                variant = g
                if block is not None:
                    variant = apply_node_ablation(variant, block)
                if edge_mode != "none":
                    variant = apply_edge_ablation(variant, edge_mode)
                    if not validate_graph(variant)[0]:
                        continue
                graphs[gid] = variant
            if not any(gid in graphs for gid in corpus.splits["train"]):
                raise ConfigError(f"ablation ({block}, {edge_mode}) empties the training split")
            width = next(iter(graphs.values())).schema.width
            base = model_config or ModelConfig(d_x=width, classes=len(corpus.vocab))
            config = ModelConfig(d_x=width, classes=len(corpus.vocab),
                                 num_layers=base.num_layers, hidden=base.hidden,
                                 layer_kind=base.layer_kind, edge_proj=base.edge_proj,
                                 seed=base.seed)
            cell_runs = []
            label = block or "none"
            for i in range(train_config.runs):
                seed = seed0 + i
                ckpt, _ = train(config, train_config, corpus, seed, graphs=graphs)
                metrics = _test_eval(corpus, graphs, ckpt.params, config)
                cell_runs.append(metrics)
                rows.extend(_metric_rows(f"ablation/{label}/{edge_mode}", i, seed, metrics))
            cells[f"{label}|{edge_mode}"] = {**_aggregate(cell_runs), "d_x": width}

    report = {
        "experiment": "feature_ablation",
        "blocks": [None] + list(blocks),
        "edge_modes": list(edge_modes),
        "cells": cells,
        "config": {"train": train_config.to_json(), "seed0": seed0},
    }

    lines = ["| node ablation | " + " | ".join(edge_modes) + " |",
             "|" + "---|" * (len(edge_modes) + 1)]
    for block in [None] + list(blocks):
        label = block or "none"
        row = [ _fmt(cells[f"{label}|{mode}"]["top_1"]) for mode in edge_modes]
        lines.append(f"| {label} | " + " | ".join(row) + " |")
    if out_dir is not None:
        _write_report(out_dir, report, rows, "\n".join(lines) + "\n")
    return report


# ---------------------------------------------------------------------------
# dataset statistics
# ---------------------------------------------------------------------------


def dataset_stats(corpus: Corpus) -> dict:
    """Node/edge count statistics, edge-type distribution, and material
    label counts over the whole corpus."""
    nodes = np.array([g.num_nodes for g in corpus.graphs.values()], dtype=np.float64)
    connections = np.array([g.num_connections for g in corpus.graphs.values()], dtype=np.float64)
    kind_counts = {"contact": 0, "joint": 0, "hierarchical": 0}
    for g in corpus.graphs.values():
        kinds = g.edge_kinds()
        for idx, name in enumerate(("contact", "joint", "hierarchical")):
            kind_counts[name] += int((kinds == idx).sum()) // 2

    label_counts = np.zeros(len(corpus.vocab), dtype=np.int64)
    for g in corpus.graphs.values():
        for y in g.y:
            label_counts[y] += 1

    def describe(arr):
        return {"mean": float(arr.mean()), "max": float(arr.max()),
                "min": float(arr.min()), "std": float(arr.std()), "total": float(arr.sum())}

    return {
        "graphs": len(corpus.graphs),
        "nodes": describe(nodes),
        "connections": describe(connections),
        "edge_types": kind_counts,
        "labels": [{"material_id": mid, "count": int(c)}
                   for mid, c in zip(corpus.vocab.classes, label_counts)],
        "splits": {k: len(v) for k, v in corpus.splits.items()},
    }


# ---------------------------------------------------------------------------
# experiment manifests
# ---------------------------------------------------------------------------


def load_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    for key in ("protocol", "corpus", "out_dir"):
        if key not in manifest:
            raise ConfigError(f"experiment manifest missing {key!r}")
    return manifest


def run_manifest(manifest: dict) -> dict:
    """Dispatch a manifest: {protocol, corpus, out_dir, model?, train?,
    seed0?, ratios?, layers?, depths?, blocks?, edge_modes?}."""
    corpus = Corpus.load(manifest["corpus"])
    model_doc = dict(manifest.get("model", {}))
    model_doc.setdefault("d_x", corpus.schema.width)
    model_doc.setdefault("classes", len(corpus.vocab))
    model_config = ModelConfig.from_json(model_doc)
    train_config = TrainConfig.from_json(manifest.get("train", {}))
    seed0 = int(manifest.get("seed0", 0))
    out_dir = manifest["out_dir"]
    protocol = manifest["protocol"]
    if protocol == "fully":
        return run_fully_guided(corpus, model_config, train_config, out_dir, seed0=seed0)
    if protocol == "partial":
        return run_partial_guided(corpus, ratios=tuple(manifest.get("ratios", DEFAULT_RATIOS)),
                                  layer_counts=tuple(manifest.get("layers", (1, 2, 3, 4, 5, 6, 7, 8))),
                                  model_config=model_config, train_config=train_config,
                                  out_dir=out_dir, seed0=seed0)
    if protocol == "user":
        return run_user_guided(corpus, depths=tuple(manifest.get("depths", DEFAULT_DEPTHS)),
                               ks=tuple(manifest.get("ks", DEFAULT_KS)),
                               model_config=model_config, train_config=train_config,
                               out_dir=out_dir, seed0=seed0)
    if protocol == "ablation":
        return run_feature_ablation(corpus, blocks=manifest.get("blocks"),
                                    edge_modes=tuple(manifest.get("edge_modes", ("none", "hierarchical"))),
                                    model_config=model_config, train_config=train_config,
                                    out_dir=out_dir, seed0=seed0)
    raise ConfigError(f"unknown protocol {protocol!r}")
