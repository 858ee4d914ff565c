"""Training orchestration: class weighting, the epoch loop with early
stopping, repeated seeded runs, and grid search."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tape, adam_step, cosine_lr, zero_grads
from .errors import ConfigError
from .evaluation import micro_f1
from .graphs import AssemblyGraph, Corpus, union_graphs
from .model import Checkpoint, ModelConfig, copy_params, init_params, model_forward

log = logging.getLogger(__name__)

WEIGHT_MODES = ("inverse_frequency", "uniform")


@dataclass
class TrainConfig:
    epochs: int = 100
    patience: int = 20
    batch_graphs: int = 8
    runs: int = 10
    lr: float = 0.001
    weight_mode: str = "inverse_frequency"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class RunHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_micro_f1: float = -1.0

    def append(self, epoch: int, train_loss: float, val_micro_f1: float, lr: float):
        self.epochs.append({"epoch": epoch, "train_loss": train_loss,
                            "val_micro_f1": val_micro_f1, "lr": lr})

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_micro_f1", "lr"])
            for row in self.epochs:
                writer.writerow([row["epoch"], repr(row["train_loss"]),
                                 repr(row["val_micro_f1"]), repr(row["lr"])])


def class_weights(counts: np.ndarray, mode: str = "inverse_frequency") -> np.ndarray:
    """Per-class loss weights: inversely proportional to training
    frequency (floored at 1), rescaled to mean 1. Uniform mode is ones."""
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "uniform":
        return np.ones_like(counts)
    if mode != "inverse_frequency":
        raise ConfigError(f"unknown weight mode {mode!r}")
    inv = 1.0 / np.maximum(counts, 1.0)
    return inv / inv.mean()


def _eval_micro_f1(graphs: list[AssemblyGraph], params: dict, config: ModelConfig,
                   perm_seed: int = 0) -> float:
    preds, trues = [], []
    for g in graphs:
        if not g.target_mask.any():
            continue
        probs = model_forward(g, params, config, training=False, perm_seed=perm_seed)
        preds.append(probs.data[g.target_mask].argmax(axis=1))
        trues.append(g.y[g.target_mask])
    if not preds:
        raise ConfigError("no target nodes to evaluate")
    return micro_f1(np.concatenate(preds), np.concatenate(trues))


def predict_corpus(graphs: list[AssemblyGraph], params: dict, config: ModelConfig,
                   perm_seed: int = 0) -> list[np.ndarray]:
    """Eval-mode class probabilities for each graph."""
    return [model_forward(g, params, config, training=False, perm_seed=perm_seed).data
            for g in graphs]


def train(model_config: ModelConfig, train_config: TrainConfig, corpus: Corpus,
          seed: int, graphs: dict[str, AssemblyGraph] | None = None) -> tuple[Checkpoint, RunHistory]:
    """One supervised training run.

    Per epoch: shuffle the training graphs (seeded), accumulate the
    class-weighted cross entropy over target-masked nodes in batches of
    ``batch_graphs`` (sum of per-graph losses divided by the batch
    size), take one Adam step per batch at the cosine-annealed rate, and
    track validation micro-F1; the checkpoint holds the parameters of
    the best validation epoch, with early stopping after ``patience``
    epochs without improvement.

    ``graphs`` substitutes protocol-specific graph variants (context
    injection, tier features) while keeping the corpus splits.
    """
    graphs = graphs if graphs is not None else corpus.graphs
    train_ids = [gid for gid in corpus.splits["train"] if gid in graphs]
    val_ids = [gid for gid in corpus.splits["val"] if gid in graphs]
    if not train_ids:
        raise ConfigError("empty training split")

    counts = np.zeros(len(corpus.vocab), dtype=np.int64)
    for gid in train_ids:
        g = graphs[gid]
        for label in g.y[g.target_mask]:
            counts[label] += 1
    weights = class_weights(counts, train_config.weight_mode)

    params = init_params(model_config, seed=seed)
    opt = OptimizerState(lr=train_config.lr)
    rng = np.random.default_rng(seed)
    history = RunHistory()
    best_params = copy_params(params)
    epochs_since_best = 0

    val_graphs = [graphs[gid] for gid in val_ids]

    for epoch in range(train_config.epochs):
        lr = cosine_lr(epoch, train_config.epochs, train_config.lr)
        order = rng.permutation(len(train_ids))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), train_config.batch_graphs):
            batch = [graphs[train_ids[i]] for i in order[start:start + train_config.batch_graphs]]
            batch = [g for g in batch if g.target_mask.any()]
            if not batch:
                continue
            # one forward over the disjoint union so batch-norm statistics
            # pool across graphs, as in minibatched full-graph training;
            # the objective stays the mean of per-graph losses
            union = union_graphs(batch)
            zero_grads(params)
            with Tape() as tape:
                probs = model_forward(union, params, model_config, training=True, perm_seed=seed)
                total = None
                offset = 0
                for g in batch:
                    rows = np.arange(offset, offset + g.num_nodes)
                    offset += g.num_nodes
                    graph_probs = ad.index_select_rows(probs, rows)
                    loss = ad.weighted_cross_entropy(graph_probs, g.y, weights, g.target_mask)
                    total = loss if total is None else ad.add(total, loss)
                total = ad.scale(total, 1.0 / len(batch))
                tape.backward(total)
            adam_step(params, opt, lr=lr)
            epoch_loss += total.item()
            n_batches += 1

        val_f1 = _eval_micro_f1(val_graphs, params, model_config, perm_seed=seed) if val_graphs else 0.0
        history.append(epoch, epoch_loss / max(n_batches, 1), val_f1, lr)

        if val_f1 > history.best_val_micro_f1:
            history.best_val_micro_f1 = val_f1
            history.best_epoch = epoch
            best_params = copy_params(params)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if val_graphs and epochs_since_best >= train_config.patience:
                log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break

    if not val_graphs:
        # no validation split: ship the final parameters
        history.best_epoch = len(history.epochs) - 1
        best_params = copy_params(params)

    checkpoint = Checkpoint(
        params=best_params,
        config=model_config,
        schema=corpus.schema,
        vocab=corpus.vocab,
        encoder_state=corpus.encoder_state,
        metadata={
            "seed": seed,
            "train_config": train_config.to_json(),
            "best_epoch": history.best_epoch,
            "best_val_micro_f1": history.best_val_micro_f1,
            "class_weights": [float(w) for w in weights],
        },
    )
    return checkpoint, history


def multi_run(n: int, model_config: ModelConfig, train_config: TrainConfig,
              corpus: Corpus, seed0: int = 0, run_fn=None) -> dict:
    """n seeded runs (seeds seed0..seed0+n-1); reports population
    mean/std per metric. ``run_fn(seed) -> dict of metrics`` overrides
    the default train+validate run for protocol experiments."""
    per_run = []
    for i in range(n):
        seed = seed0 + i
        if run_fn is not None:
            metrics = run_fn(seed)
        else:
            ckpt, history = train(model_config, train_config, corpus, seed)
            metrics = {"val_micro_f1": history.best_val_micro_f1}
        per_run.append({"run": i, "seed": seed, "metrics": metrics})
    aggregate = {}
    for key in per_run[0]["metrics"]:
        values = np.array([r["metrics"][key] for r in per_run], dtype=np.float64)
        aggregate[key] = {"mean": float(values.mean()), "std": float(values.std())}
    return {"runs": per_run, "aggregate": aggregate}


def grid_search(corpus: Corpus, layer_counts: list[int], hidden_sizes: list[int],
                layer_kinds: list[str], train_config: TrainConfig,
                runs_per_cell: int = 1, seed0: int = 0) -> list[dict]:
    """Train every (layers, hidden, kind) combination and rank cells by
    mean validation micro-F1 (descending)."""
    cells = [(k, h, kind) for k in layer_counts for h in hidden_sizes for kind in layer_kinds]
    if not cells:
        raise ConfigError("empty grid")
    results = []
    for layers, hidden, kind in cells:
        config = ModelConfig(d_x=corpus.schema.width, classes=len(corpus.vocab),
                             num_layers=layers, hidden=hidden, layer_kind=kind, seed=seed0)
        outcome = multi_run(runs_per_cell, config, train_config, corpus, seed0=seed0)
        results.append({
            "num_layers": layers,
            "hidden": hidden,
            "layer_kind": kind,
            "val_micro_f1_mean": outcome["aggregate"]["val_micro_f1"]["mean"],
            "val_micro_f1_std": outcome["aggregate"]["val_micro_f1"]["std"],
        })
    results.sort(key=lambda r: (-r["val_micro_f1_mean"], r["num_layers"], r["hidden"], r["layer_kind"]))
    return results


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------

METRICS_HEADER = ["experiment", "run", "seed", "split", "metric", "k", "value"]


def write_metrics_csv(path, rows: list[dict]):
    """Rows carry the columns experiment,run,seed,split,metric,k,value;
    floats are rendered with repr for byte-stable output."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([
                row["experiment"], row["run"], row["seed"], row["split"],
                row["metric"], row.get("k", ""), repr(float(row["value"])),
            ])


def read_metrics_csv(path) -> list[dict]:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
