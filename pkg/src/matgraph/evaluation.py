"""Metrics (micro-F1, weighted-F1, top-k hit rates), ranked prediction
sets, baseline models, and report assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tape, Tensor, adam_step, cosine_lr, zero_grads
from .errors import MetricError
from .graphs import AssemblyGraph, Corpus


def _as_mask(mask, n: int) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise MetricError(f"mask shape {mask.shape} does not match {n} instances")
    return mask


def micro_f1(pred: np.ndarray, true: np.ndarray, mask=None) -> float:
    """Micro-averaged F1 with globally pooled TP/FP/FN. For single-label
    multiclass prediction this equals accuracy."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    mask = _as_mask(mask, len(true))
    if not mask.any():
        raise MetricError("micro_f1: empty mask")
    p, t = pred[mask], true[mask]
    classes = np.unique(np.concatenate([p, t]))
    tp = fp = fn = 0
    for c in classes:
        tp += int(((p == c) & (t == c)).sum())
        fp += int(((p == c) & (t != c)).sum())
        fn += int(((p != c) & (t == c)).sum())
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def weighted_f1(pred: np.ndarray, true: np.ndarray, mask=None) -> float:
    """Per-class F1 averaged with support weights (support = true count)."""
    pred = np.asarray(pred)
    true = np.asarray(true)
    mask = _as_mask(mask, len(true))
    if not mask.any():
        raise MetricError("weighted_f1: empty mask")
    p, t = pred[mask], true[mask]
    total = len(t)
    score = 0.0
    for c in np.unique(t):
        tp = int(((p == c) & (t == c)).sum())
        fp = int(((p == c) & (t != c)).sum())
        fn = int(((p != c) & (t == c)).sum())
        support = tp + fn
        f1 = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
        score += f1 * support / total
    return score


def per_class_report(pred: np.ndarray, true: np.ndarray, classes: list[str], mask=None) -> list[dict]:
    pred = np.asarray(pred)
    true = np.asarray(true)
    mask = _as_mask(mask, len(true))
    p, t = pred[mask], true[mask]
    rows = []
    for idx, label in enumerate(classes):
        tp = int(((p == idx) & (t == idx)).sum())
        fp = int(((p == idx) & (t != idx)).sum())
        fn = int(((p != idx) & (t == idx)).sum())
        rows.append({
            "label": label,
            "precision": tp / (tp + fp) if tp + fp else 0.0,
            "recall": tp / (tp + fn) if tp + fn else 0.0,
            "support": tp + fn,
        })
    return rows


def rank_rows(probs: np.ndarray) -> np.ndarray:
    """Class indices per row in descending probability; probability ties
    break toward the lower class index (stable sort on -p)."""
    return np.argsort(-probs, axis=1, kind="stable")


def topk_score(probs: np.ndarray, true: np.ndarray, k: int, mask=None) -> float:
    """Fraction of instances whose true label is within the first k
    ranked labels (micro pooling over correct/incorrect)."""
    probs = np.asarray(probs)
    true = np.asarray(true)
    if k < 1 or k > probs.shape[1]:
        raise MetricError(f"topk_score: k={k} outside 1..{probs.shape[1]}")
    mask = _as_mask(mask, len(true))
    if not mask.any():
        raise MetricError("topk_score: empty mask")
    ranked = rank_rows(probs[mask])
    hits = (ranked[:, :k] == true[mask, None]).any(axis=1)
    return float(hits.mean())


@dataclass
class PredictionSet:
    """Per-node ranked (label index, probability) lists, full length C."""

    node_ids: list[str]
    ranking: np.ndarray  # (n, C) label indices, descending probability
    probabilities: np.ndarray  # (n, C) aligned with ranking

    @classmethod
    def from_probs(cls, node_ids: list[str], probs: np.ndarray) -> "PredictionSet":
        ranked = rank_rows(probs)
        return cls(node_ids=list(node_ids), ranking=ranked,
                   probabilities=np.take_along_axis(probs, ranked, axis=1))

    def top(self, k: int) -> list[list[tuple[int, float]]]:
        return [[(int(self.ranking[i, j]), float(self.probabilities[i, j])) for j in range(k)]
                for i in range(len(self.node_ids))]


@dataclass
class MetricsReport:
    micro_f1: float
    weighted_f1: float
    top_k: dict[int, float]
    per_class: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "weighted_f1": self.weighted_f1,
            "top_k": {str(k): v for k, v in self.top_k.items()},
            "per_class": self.per_class,
        }


def evaluate_predictions(probs: np.ndarray, true: np.ndarray, classes: list[str],
                         mask=None, ks=(1, 2, 3)) -> MetricsReport:
    pred = np.asarray(probs).argmax(axis=1)
    return MetricsReport(
        micro_f1=micro_f1(pred, true, mask),
        weighted_f1=weighted_f1(pred, true, mask),
        top_k={k: topk_score(probs, true, k, mask) for k in ks if k <= np.asarray(probs).shape[1]},
        per_class=per_class_report(pred, true, classes, mask),
    )


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def majority_class(corpus: Corpus) -> int:
    """Modal class over training-split target nodes."""
    counts = corpus.train_label_counts()
    return int(counts.argmax())


def majority_probs(corpus: Corpus, graphs: list[AssemblyGraph]) -> list[np.ndarray]:
    """Constant distribution ranking classes by training frequency."""
    counts = corpus.train_label_counts().astype(np.float64)
    dist = counts / max(counts.sum(), 1.0)
    return [np.tile(dist, (g.num_nodes, 1)) for g in graphs]


@dataclass
class LinearSoftmaxModel:
    """One linear layer + softmax over node features: the structure-free
    baseline. ``columns`` restricts the input to a feature block."""

    W: Tensor
    b: Tensor
    columns: slice | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        data = X[:, self.columns] if self.columns is not None else X
        logits = data.astype(np.float32) @ self.W.data + self.b.data
        return ad.softmax_rows(Tensor(logits)).data


def train_linear_softmax(corpus: Corpus, seed: int = 0, epochs: int = 60,
                         lr: float = 0.05, block: str | None = None,
                         weights: np.ndarray | None = None) -> LinearSoftmaxModel:
    """Fit multinomial logistic regression on training-split nodes with
    Adam + cosine schedule; ``block`` restricts features to one schema
    block (the visual-only baseline uses body_geometry)."""
    columns = corpus.schema.columns(block) if block else None
    rows, labels, mask_rows = [], [], []
    for g in corpus.split_graphs("train"):
        X = g.X[:, columns] if columns is not None else g.X
        rows.append(X)
        labels.append(g.y)
        mask_rows.append(g.target_mask)
    X = np.concatenate(rows, axis=0)
    y = np.concatenate(labels, axis=0)
    mask = np.concatenate(mask_rows, axis=0)
    n_classes = len(corpus.vocab)
    if weights is None:
        weights = np.ones(n_classes)

    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(max(X.shape[1], 1))
    W = Tensor(rng.uniform(-bound, bound, size=(X.shape[1], n_classes)).astype(np.float32),
               requires_grad=True)
    b = Tensor(np.zeros((1, n_classes), dtype=np.float32), requires_grad=True)
    params = {"W": W, "b": b}
    state = OptimizerState(lr=lr)
    features = Tensor(X.astype(np.float32))
    for epoch in range(epochs):
        zero_grads(params)
        with Tape() as tape:
            probs = ad.softmax_rows(ad.add(ad.matmul(features, W), b))
            loss = ad.weighted_cross_entropy(probs, y, weights, mask)
            tape.backward(loss)
        adam_step(params, state, lr=cosine_lr(epoch, epochs, lr))
    return LinearSoftmaxModel(W=W, b=b, columns=columns)
