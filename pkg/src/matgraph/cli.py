"""Command-line entry point: one subcommand per pipeline stage.

Stages communicate via files only, so every stage can be re-run and
inspected independently. Exit codes: 0 success, 1 validation failure,
2 usage error.
"""

from __future__ import annotations

import functools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .encoding import EmbeddingTable
from .errors import MatgraphError
from .evaluation import evaluate_predictions
from .experiments import (
    DEFAULT_DEPTHS,
    DEFAULT_KS,
    DEFAULT_RATIOS,
    dataset_stats,
    load_manifest,
    run_feature_ablation,
    run_fully_guided,
    run_manifest,
    run_partial_guided,
    run_user_guided,
)
from .graphs import Corpus
from .ingest import MaterialCatalog, SplitManifest, parse_assembly, ingest_assembly, write_records, read_records
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import ingest_directory, prepare_corpus
from .service import serve as run_service
from .synth import KINDS, generate_workspace, build_workspace_corpus
from .training import (
    TrainConfig,
    grid_search,
    predict_corpus,
    train as train_run,
    write_metrics_csv,
)

log = logging.getLogger(__name__)


def wraps_errors(fn):
    """Translate package errors into exit code 1 with a clean message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MatgraphError as exc:
            raise click.ClickException(str(exc)) from exc
        except FileNotFoundError as exc:
            raise click.ClickException(f"missing file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise click.ClickException(f"invalid JSON input: {exc}") from exc

    return wrapper


def int_list(_ctx, _param, value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v]


def float_list(_ctx, _param, value: str) -> list[float]:
    return [float(v) for v in value.split(",") if v]


def str_list(_ctx, _param, value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


@click.group()
@click.option("--seed", default=0, show_default=True, help="Base random seed.")
@click.option("--out-dir", default=None,
              help="Output directory [default: $MATGRAPH_OUT or ./out].")
@click.option("--log-level", default="warning", show_default=True,
              type=click.Choice(["debug", "info", "warning", "error"]),
              help="Logging threshold.")
@click.pass_context
def main(ctx, seed, out_dir, log_level):
    """Material recommendation for CAD assemblies."""
    logging.basicConfig(level=getattr(logging, log_level.upper()))
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["out_dir"] = Path(out_dir or os.environ.get("MATGRAPH_OUT", "out"))


def out_dir(ctx) -> Path:
    path = ctx.obj["out_dir"]
    path.mkdir(parents=True, exist_ok=True)
    return path


def model_options(fn):
    fn = click.option("--layers", default=3, show_default=True,
                      help="Number of message-passing layers (1..8).")(fn)
    fn = click.option("--hidden", default=64, show_default=True, help="Hidden width.")(fn)
    fn = click.option("--kind", default="sage_mean", show_default=True,
                      type=click.Choice(["sage_mean", "sage_lstm", "gconv"]),
                      help="Message-passing layer kind.")(fn)
    fn = click.option("--no-edge-proj", is_flag=True, default=False, show_default=True,
                      help="Disable the edge-feature message projection.")(fn)
    return fn


def train_options(fn):
    fn = click.option("--epochs", default=40, show_default=True, help="Training epochs.")(fn)
    fn = click.option("--patience", default=15, show_default=True,
                      help="Early-stop patience on validation micro-F1.")(fn)
    fn = click.option("--batch", default=8, show_default=True, help="Graphs per Adam step.")(fn)
    fn = click.option("--lr", default=0.001, show_default=True, help="Base learning rate.")(fn)
    fn = click.option("--runs", default=1, show_default=True, help="Repeated seeded runs.")(fn)
    fn = click.option("--weight-mode", default="inverse_frequency", show_default=True,
                      type=click.Choice(["inverse_frequency", "uniform"]),
                      help="Class-weight mode for the loss.")(fn)
    return fn


def build_model_config(corpus: Corpus, layers, hidden, kind, no_edge_proj, seed) -> ModelConfig:
    return ModelConfig(d_x=corpus.schema.width, classes=len(corpus.vocab),
                       num_layers=layers, hidden=hidden, layer_kind=kind,
                       edge_proj=not no_edge_proj, seed=seed)


def build_train_config(epochs, patience, batch, lr, runs, weight_mode) -> TrainConfig:
    return TrainConfig(epochs=epochs, patience=patience, batch_graphs=batch,
                       lr=lr, runs=runs, weight_mode=weight_mode)


# ---------------------------------------------------------------------------
# pipeline stages
# ---------------------------------------------------------------------------


@main.command()
@click.option("--assemblies", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of assembly JSON files.")
@click.option("--catalog", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Material catalog JSON.")
@click.option("--jobs", default=1, show_default=True, help="Parallel parse workers.")
@click.pass_context
@wraps_errors
def ingest(ctx, assemblies, catalog, jobs):
    """Parse assemblies, filter defaults, resolve labels; write records."""
    catalog_obj = MaterialCatalog.load(catalog)
    if jobs > 1:
        paths = sorted(Path(assemblies).glob("*.json"))
        cat = catalog_obj

        def one(path):
            raw = parse_assembly(path.read_text(encoding="utf-8"), assembly_id=path.stem)
            return ingest_assembly(raw, cat)

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parsed = list(pool.map(one, paths))
        from .ingest import filter_default_assemblies

        kept_ids = set(filter_default_assemblies(
            {r.assembly_id: r.bodies for r in parsed}, cat))
        records = sorted((r for r in parsed if r.assembly_id in kept_ids),
                         key=lambda r: r.assembly_id)
        summary = {"parsed": len(parsed), "failed": 0, "kept": len(records),
                   "dropped_default": len(parsed) - len(records), "failures": {}}
    else:
        records, summary = ingest_directory(assemblies, catalog_obj)
    out = out_dir(ctx)
    write_records(out / "records.jsonl", records)
    with open(out / "ingest-summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
    click.echo(f"parsed {summary['parsed']} assemblies; kept {summary['kept']} "
               f"(dropped {summary['dropped_default']} all-default, {summary['failed']} failed)")


@main.command("build-graphs")
@click.option("--records", required=True, type=click.Path(exists=True, dir_okay=False),
              help="records.jsonl from the ingest stage.")
@click.option("--catalog", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Material catalog JSON.")
@click.option("--split", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Split manifest JSON {seed, test_ids}.")
@click.option("--semantic-table", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Semantic embedding table (DIM header TSV).")
@click.option("--visual-table", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Visual embedding table; omit to use the stub encoder.")
@click.option("--material-block", is_flag=True, default=False, show_default=True,
              help="Allocate the material one-hot block (partial-guided corpora).")
@click.option("--tier-depth", default=0, show_default=True,
              help="Allocate tier one-hot blocks up to this depth (0..3).")
@click.pass_context
@wraps_errors
def build_graphs(ctx, records, catalog, split, semantic_table, visual_table,
                 material_block, tier_depth):
    """Encode records into a validated graph corpus."""
    corpus = prepare_corpus(
        read_records(records),
        MaterialCatalog.load(catalog),
        SplitManifest.load(split),
        EmbeddingTable.load(semantic_table),
        visual=EmbeddingTable.load(visual_table) if visual_table else None,
        material_block=material_block,
        tier_depth=tier_depth,
        seed=ctx.obj["seed"],
    )
    target = out_dir(ctx) / "corpus"
    corpus.save(target)
    dropped = corpus.options.get("dropped", {})
    click.echo(f"built {len(corpus.graphs)} graphs into {target} "
               f"(discarded {len(dropped)}); d_x={corpus.schema.width}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus directory (bundles + manifest).")
@click.pass_context
@wraps_errors
def stats(ctx, corpus_dir):
    """Corpus statistics: node/edge distributions, labels, splits."""
    corpus = Corpus.load(corpus_dir)
    report = dataset_stats(corpus)
    with open(out_dir(ctx) / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
    click.echo(f"graphs: {report['graphs']}")
    click.echo(f"nodes: mean {report['nodes']['mean']:g} max {report['nodes']['max']:g} "
               f"std {report['nodes']['std']:g}")
    click.echo(f"connections: mean {report['connections']['mean']:g} "
               f"max {report['connections']['max']:g} std {report['connections']['std']:g}")
    click.echo(f"edge types: {report['edge_types']}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus directory.")
@model_options
@train_options
@click.pass_context
@wraps_errors
def train(ctx, corpus_dir, layers, hidden, kind, no_edge_proj,
          epochs, patience, batch, lr, runs, weight_mode):
    """Train a model; write the checkpoint, history, and test metrics."""
    corpus = Corpus.load(corpus_dir)
    seed = ctx.obj["seed"]
    model_config = build_model_config(corpus, layers, hidden, kind, no_edge_proj, seed)
    train_config = build_train_config(epochs, patience, batch, lr, runs, weight_mode)
    out = out_dir(ctx)
    rows = []
    best = None
    for i in range(runs):
        run_seed = seed + i
        ckpt, history = train_run(model_config, train_config, corpus, run_seed)
        history.write_csv(out / f"history-run{i}.csv")
        test_graphs = corpus.split_graphs("test")
        probs = np.concatenate(predict_corpus(test_graphs, ckpt.params, model_config), axis=0)
        y = np.concatenate([g.y for g in test_graphs])
        mask = np.concatenate([g.target_mask for g in test_graphs])
        report = evaluate_predictions(probs, y, corpus.vocab.classes, mask=mask)
        for metric_k, value in report.top_k.items():
            rows.append({"experiment": "train", "run": i, "seed": run_seed, "split": "test",
                         "metric": "top_k", "k": metric_k, "value": value})
        rows.append({"experiment": "train", "run": i, "seed": run_seed, "split": "test",
                     "metric": "micro_f1", "value": report.micro_f1})
        rows.append({"experiment": "train", "run": i, "seed": run_seed, "split": "test",
                     "metric": "weighted_f1", "value": report.weighted_f1})
        if best is None or history.best_val_micro_f1 > best[0]:
            best = (history.best_val_micro_f1, i, ckpt)
        click.echo(f"run {i} (seed {run_seed}): best val micro-F1 "
                   f"{history.best_val_micro_f1:.3f} at epoch {history.best_epoch}; "
                   f"test top-1 {report.top_k.get(1, float('nan')):.3f}")
    save_checkpoint(out / "model.ckpt", best[2])
    write_metrics_csv(out / "metrics.csv", rows)
    click.echo(f"checkpoint (best of {runs} runs: run {best[1]}) -> {out / 'model.ckpt'}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus directory.")
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Checkpoint file from `train`.")
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]), help="Split to score.")
@click.pass_context
@wraps_errors
def evaluate(ctx, corpus_dir, checkpoint, split):
    """Score a checkpoint on one corpus split."""
    corpus = Corpus.load(corpus_dir)
    ckpt = load_checkpoint(checkpoint)
    if ckpt.schema.to_json() != corpus.schema.to_json():
        raise click.ClickException("checkpoint schema does not match corpus schema")
    graphs = corpus.split_graphs(split)
    probs = np.concatenate(predict_corpus(graphs, ckpt.params, ckpt.config), axis=0)
    y = np.concatenate([g.y for g in graphs])
    mask = np.concatenate([g.target_mask for g in graphs])
    report = evaluate_predictions(probs, y, corpus.vocab.classes, mask=mask)
    out = out_dir(ctx)
    rows = []
    for metric_k, value in report.top_k.items():
        rows.append({"experiment": "evaluate", "run": 0, "seed": ctx.obj["seed"],
                     "split": split, "metric": "top_k", "k": metric_k, "value": value})
    rows.append({"experiment": "evaluate", "run": 0, "seed": ctx.obj["seed"], "split": split,
                 "metric": "micro_f1", "value": report.micro_f1})
    rows.append({"experiment": "evaluate", "run": 0, "seed": ctx.obj["seed"], "split": split,
                 "metric": "weighted_f1", "value": report.weighted_f1})
    write_metrics_csv(out / "metrics.csv", rows)
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, sort_keys=True, indent=1)
    click.echo(f"{split}: micro-F1 {report.micro_f1:.3f} weighted-F1 {report.weighted_f1:.3f} "
               + " ".join(f"top-{metric_k} {value:.3f}" for metric_k, value in sorted(report.top_k.items())))


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus directory.")
@click.option("--blocks", default="", callback=str_list,
              help="Comma-separated node blocks to ablate [default: all ablatable].")
@click.option("--edge-modes", default="none,hierarchical", callback=str_list, show_default=True,
              help="Edge ablation modes.")
@model_options
@train_options
@click.pass_context
@wraps_errors
def ablate(ctx, corpus_dir, blocks, edge_modes, layers, hidden, kind, no_edge_proj,
           epochs, patience, batch, lr, runs, weight_mode):
    """Feature-importance ablation grid (node blocks x edge modes)."""
    corpus = Corpus.load(corpus_dir)
    seed = ctx.obj["seed"]
    report = run_feature_ablation(
        corpus, blocks=blocks or None, edge_modes=tuple(edge_modes),
        model_config=build_model_config(corpus, layers, hidden, kind, no_edge_proj, seed),
        train_config=build_train_config(epochs, patience, batch, lr, runs, weight_mode),
        out_dir=out_dir(ctx), seed0=seed)
    for key, cell in report["cells"].items():
        click.echo(f"{key}: top-1 {cell['top_1']['mean']:.3f} ± {cell['top_1']['std']:.3f}")


@main.command()
@click.argument("protocol", type=click.Choice(["fully", "partial", "user"]))
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True, file_okay=False),
              help="Corpus directory (unless --manifest is given).")
@click.option("--manifest", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Experiment manifest JSON; overrides the other options.")
@click.option("--ratios", default=",".join(str(r) for r in DEFAULT_RATIOS),
              callback=float_list, show_default=True, help="Context ratios (partial).")
@click.option("--grid-layers", default="1,2,3,4,5,6,7,8", callback=int_list,
              show_default=True, help="Layer counts (partial).")
@click.option("--depths", default=",".join(str(d) for d in DEFAULT_DEPTHS),
              callback=int_list, show_default=True, help="Tier depths (user).")
@click.option("--ks", default=",".join(str(k) for k in DEFAULT_KS), callback=int_list,
              show_default=True, help="Top-k values (user).")
@model_options
@train_options
@click.pass_context
@wraps_errors
def experiment(ctx, protocol, corpus_dir, manifest, ratios, grid_layers, depths, ks,
               layers, hidden, kind, no_edge_proj,
               epochs, patience, batch, lr, runs, weight_mode):
    """Run one of the three protocol experiments end to end."""
    if manifest:
        report = run_manifest(load_manifest(manifest))
        click.echo(f"experiment {report['experiment']} complete")
        return
    if not corpus_dir:
        raise click.UsageError("--corpus is required without --manifest")
    corpus = Corpus.load(corpus_dir)
    seed = ctx.obj["seed"]
    model_config = build_model_config(corpus, layers, hidden, kind, no_edge_proj, seed)
    train_config = build_train_config(epochs, patience, batch, lr, runs, weight_mode)
    out = out_dir(ctx)
    if protocol == "fully":
        report = run_fully_guided(corpus, model_config, train_config, out, seed0=seed)
        agg = report["model"]
        click.echo(" ".join(f"top-{j}: {agg[f'top_{j}']['mean']:.3f}±{agg[f'top_{j}']['std']:.3f}"
                            for j in (1, 2, 3)))
    elif protocol == "partial":
        report = run_partial_guided(corpus, ratios=tuple(ratios), layer_counts=tuple(grid_layers),
                                    model_config=model_config, train_config=train_config,
                                    out_dir=out, seed0=seed)
        for key, cell in report["cells"].items():
            click.echo(f"ratio|layers {key}: top-1 {cell['top_1']['mean']:.3f}")
    else:
        report = run_user_guided(corpus, depths=tuple(depths), ks=tuple(ks),
                                 model_config=model_config, train_config=train_config,
                                 out_dir=out, seed0=seed)
        for depth, cell in report["by_depth"].items():
            click.echo(f"depth {depth}: top-1 {cell['top_1']['mean']:.3f} "
                       f"top-3 {cell.get('top_3', cell['top_1'])['mean']:.3f}")


@main.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Corpus directory.")
@click.option("--grid-layers", default="1,2,3,4,5,6,7,8", callback=int_list, show_default=True,
              help="Layer counts to try.")
@click.option("--grid-hidden", default="64,128,256,512", callback=int_list, show_default=True,
              help="Hidden widths to try.")
@click.option("--kinds", default="sage_mean,sage_lstm,gconv", callback=str_list, show_default=True,
              help="Layer kinds to try.")
@click.option("--runs-per-cell", default=1, show_default=True, help="Seeded runs per grid cell.")
@train_options
@click.pass_context
@wraps_errors
def grid(ctx, corpus_dir, grid_layers, grid_hidden, kinds, runs_per_cell,
         epochs, patience, batch, lr, runs, weight_mode):
    """Hyperparameter grid search ranked by validation micro-F1."""
    corpus = Corpus.load(corpus_dir)
    train_config = build_train_config(epochs, patience, batch, lr, runs, weight_mode)
    results = grid_search(corpus, grid_layers, grid_hidden, kinds, train_config,
                          runs_per_cell=runs_per_cell, seed0=ctx.obj["seed"])
    out = out_dir(ctx)
    with open(out / "grid.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, sort_keys=True, indent=1)
    best = results[0]
    with open(out / "best-config.json", "w", encoding="utf-8") as fh:
        json.dump({"num_layers": best["num_layers"], "hidden": best["hidden"],
                   "layer_kind": best["layer_kind"]}, fh, sort_keys=True, indent=1)
    for row in results:
        click.echo(f"layers={row['num_layers']} hidden={row['hidden']} kind={row['layer_kind']}: "
                   f"val micro-F1 {row['val_micro_f1_mean']:.3f} ± {row['val_micro_f1_std']:.3f}")


@main.command()
@click.option("--kind", required=True, type=click.Choice(list(KINDS)),
              help="Synthetic corpus family.")
@click.option("--graphs", "n_graphs", default=200, show_default=True,
              help="Number of assemblies to generate.")
@click.option("--min-nodes", default=6, show_default=True, help="Smallest assembly size.")
@click.option("--max-nodes", default=14, show_default=True, help="Largest assembly size.")
@click.option("--material-block", is_flag=True, default=False, show_default=True,
              help="Allocate the material one-hot block in the corpus.")
@click.option("--tier-depth", default=0, show_default=True,
              help="Allocate tier one-hot blocks up to this depth (0..3).")
@click.pass_context
@wraps_errors
def synth(ctx, kind, n_graphs, min_nodes, max_nodes, material_block, tier_depth):
    """Generate a synthetic workspace and build its corpus."""
    out = out_dir(ctx)
    workspace = generate_workspace(kind, n_graphs, ctx.obj["seed"], out,
                                   min_nodes=min_nodes, max_nodes=max_nodes)
    corpus = build_workspace_corpus(workspace, material_block=material_block,
                                    tier_depth=tier_depth, seed=ctx.obj["seed"])
    corpus.save(out / "corpus")
    click.echo(f"{kind}: {len(corpus.graphs)} graphs -> {out / 'corpus'} "
               f"(d_x={corpus.schema.width}, classes={len(corpus.vocab)})")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Checkpoint to serve.")
@click.option("--catalog", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Material catalog override [default: catalog embedded in the checkpoint].")
@click.option("--semantic-table", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Semantic embedding table for name encoding.")
@click.option("--visual-table", default=None, type=click.Path(exists=True, dir_okay=False),
              help="Visual embedding table; omit to use the stub encoder.")
@click.option("--host", default="127.0.0.1", show_default=True, help="Bind address.")
@click.option("--port", default=8765, show_default=True, help="Listen port.")
@click.option("--cors-origin", default="*", show_default=True,
              help="Allowed CORS origin for the companion UI.")
@wraps_errors
def serve(checkpoint, catalog, semantic_table, visual_table, host, port, cors_origin):
    """Serve a checkpoint over HTTP for interactive recommendation."""
    run_service(checkpoint, catalog, semantic_table, visual_table,
                host=host, port=port, cors_origin=cors_origin)


if __name__ == "__main__":
    main()
