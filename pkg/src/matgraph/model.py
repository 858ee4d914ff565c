"""The message-passing encoder, jumping-knowledge summation, and the MLP
classifier head, built on the tensor engine.

Layer kinds:
  sage_mean  -- mean aggregation over projected in-edge messages,
                combine h' = ReLU(W [h || a]).
  sage_lstm  -- LSTM aggregation over a seeded random permutation of the
                in-edge messages (the aggregator is order-sensitive).
  gconv      -- degree-normalized mean (self included) followed by a
                linear map + ReLU; no self/aggregate concatenation.

Edge features enter through the message projection
m = [h_u || e_uv] P_e; disable with edge_proj=False, in which case
messages are the raw neighbor states.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .encoding import EDGE_WIDTH, FeatureSchema
from .errors import ConfigError, SchemaError
from .graphs import AssemblyGraph
from .ingest import LabelVocabulary

LAYER_KINDS = ("sage_mean", "sage_lstm", "gconv")

LEAKY_SLOPE = 0.2
PRELU_INIT = 0.25


@dataclass
class ModelConfig:
    d_x: int
    classes: int
    num_layers: int = 7
    hidden: int = 256
    layer_kind: str = "sage_mean"
    edge_proj: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_layers <= 8:
            raise ConfigError(f"num_layers must be in 1..8, got {self.num_layers}")
        if self.hidden < 1 or self.d_x < 1 or self.classes < 1:
            raise ConfigError("widths must be positive")
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"layer_kind must be one of {LAYER_KINDS}, got {self.layer_kind!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def _uniform(rng: np.random.Generator, rows: int, cols: int, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(np.float32)


def init_params(config: ModelConfig, seed: int | None = None,
                dtype=np.float32) -> dict[str, Tensor]:
    """Seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization.

    Parameters are created in a fixed order so a seed pins every value.
    Batch-norm running buffers ride along as non-trainable tensors.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    h = config.hidden
    params: dict[str, Tensor] = {}

    def add(name, rows, cols, fan_in, trainable=True):
        params[name] = Tensor(_uniform(rng, rows, cols, fan_in).astype(dtype),
                              requires_grad=trainable, dtype=dtype)

    add("input_proj.W", config.d_x, h, config.d_x)
    add("input_proj.b", 1, h, config.d_x)

    for k in range(config.num_layers):
        prefix = f"layer{k}"
        if config.edge_proj:
            add(f"{prefix}.P_e", h + EDGE_WIDTH, h, h + EDGE_WIDTH)
        if config.layer_kind in ("sage_mean", "sage_lstm"):
            add(f"{prefix}.W", 2 * h, h, 2 * h)
        else:  # gconv
            add(f"{prefix}.W", h, h, h)
        if config.layer_kind == "sage_lstm":
            add(f"{prefix}.lstm.W_ih", h, 4 * h, h)
            add(f"{prefix}.lstm.W_hh", h, 4 * h, h)
            add(f"{prefix}.lstm.b", 1, 4 * h, h)

    for i, width_out in ((1, h), (2, h)):
        add(f"mlp.fc{i}.W", h, width_out, h)
        add(f"mlp.fc{i}.b", 1, width_out, h)
        params[f"mlp.bn{i}.gamma"] = Tensor(np.ones((1, width_out), dtype=dtype),
                                            requires_grad=True, dtype=dtype)
        params[f"mlp.bn{i}.beta"] = Tensor(np.zeros((1, width_out), dtype=dtype),
                                           requires_grad=True, dtype=dtype)
        params[f"mlp.bn{i}.running_mean"] = Tensor(np.zeros((1, width_out), dtype=dtype), dtype=dtype)
        params[f"mlp.bn{i}.running_var"] = Tensor(np.ones((1, width_out), dtype=dtype), dtype=dtype)
        params[f"mlp.act{i}.alpha"] = Tensor(np.full((1, 1), PRELU_INIT, dtype=dtype),
                                             requires_grad=True, dtype=dtype)
    add("mlp.out.W", h, config.classes, h)
    add("mlp.out.b", 1, config.classes, h)
    return params


def copy_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {name: t.copy() for name, t in params.items()}


def _linear(x: Tensor, params: dict, prefix: str) -> Tensor:
    return ad.add(ad.matmul(x, params[f"{prefix}.W"]), params[f"{prefix}.b"])


def _bn_state(params: dict, prefix: str) -> BatchNormState:
    return BatchNormState(
        running_mean=params[f"{prefix}.running_mean"].data,
        running_var=params[f"{prefix}.running_var"].data,
    )


def _node_permutation(perm_seed: int, layer: int, node: int, count: int) -> np.ndarray:
    digest = hashlib.sha256(f"{perm_seed}/{layer}/{node}".encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))
    return rng.permutation(count)


def sage_layer(h: Tensor, edge_index: np.ndarray, edge_attr: Tensor, params: dict,
               layer: int, kind: str, edge_proj: bool, dtype,
               perm_seed: int = 0) -> Tensor:
    """One message-passing layer; isolated nodes aggregate to zero."""
    n = h.shape[0]
    hidden = h.shape[1]
    prefix = f"layer{layer}"
    combine_w = params[f"{prefix}.W"]

    if edge_index.size == 0:
        if kind == "gconv":
            # zero in-degree: the self-inclusive mean reduces to h itself
            return ad.relu(ad.matmul(h, combine_w))
        agg = Tensor(np.zeros((n, hidden), dtype=dtype), dtype=dtype)
        return ad.relu(ad.matmul(ad.concat_cols(h, agg), combine_w))

    src, dst = edge_index[0], edge_index[1]
    h_src = ad.index_select_rows(h, src)
    if edge_proj:
        messages = ad.matmul(ad.concat_cols(h_src, edge_attr), params[f"{prefix}.P_e"])
    else:
        messages = h_src

    in_degree = np.bincount(dst, minlength=n).astype(np.float64)

    if kind in ("sage_mean", "gconv"):
        summed = ad.scatter_add_rows(messages, dst, n)
        if kind == "sage_mean":
            inv = (1.0 / np.maximum(in_degree, 1.0)).reshape(-1, 1)
            agg = ad.scale_rows(summed, inv.astype(dtype))
            return ad.relu(ad.matmul(ad.concat_cols(h, agg), combine_w))
        # gconv: degree-normalized mean including the node itself
        inv = (1.0 / (in_degree + 1.0)).reshape(-1, 1)
        agg = ad.scale_rows(ad.add(summed, h), inv.astype(dtype))
        return ad.relu(ad.matmul(agg, combine_w))

    # sage_lstm: run the cell over a seeded permutation of each node's messages
    w_ih = params[f"{prefix}.lstm.W_ih"]
    w_hh = params[f"{prefix}.lstm.W_hh"]
    b = params[f"{prefix}.lstm.b"]
    order = np.argsort(dst, kind="stable")
    offsets = np.concatenate([[0], np.cumsum(np.bincount(dst, minlength=n))])
    zero_row = Tensor(np.zeros((1, hidden), dtype=dtype), dtype=dtype)
    finals = []
    for v in range(n):
        rows = order[offsets[v]:offsets[v + 1]]
        if rows.size == 0:
            finals.append(zero_row)
            continue
        perm = _node_permutation(perm_seed, layer, v, rows.size)
        h_state = zero_row
        c_state = zero_row
        for r in rows[perm]:
            x_step = ad.index_select_rows(messages, np.array([r]))
            h_state, c_state = ad.lstm_cell_step(x_step, h_state, c_state, w_ih, w_hh, b)
        finals.append(h_state)
    agg = ad.concat_rows(*finals)
    return ad.relu(ad.matmul(ad.concat_cols(h, agg), combine_w))


def jk_aggregate(embeddings: list[Tensor]) -> Tensor:
    """Jumping-knowledge summation over the per-layer embeddings."""
    if not embeddings:
        raise ConfigError("jk_aggregate: no embeddings")
    out = embeddings[0]
    for e in embeddings[1:]:
        out = ad.add(out, e)
    return out


def mlp_head(z: Tensor, params: dict, training: bool) -> Tensor:
    """Two hidden layers (linear -> batch norm -> PReLU) at model width,
    then a linear map to class logits and a row softmax."""
    x = z
    for i in (1, 2):
        x = _linear(x, params, f"mlp.fc{i}")
        x = ad.batch_norm(x, params[f"mlp.bn{i}.gamma"], params[f"mlp.bn{i}.beta"],
                          _bn_state(params, f"mlp.bn{i}"), training=training)
        x = ad.prelu(x, params[f"mlp.act{i}.alpha"])
    logits = _linear(x, params, "mlp.out")
    return ad.softmax_rows(logits)


def model_forward(g: AssemblyGraph, params: dict, config: ModelConfig,
                  training: bool = False, perm_seed: int = 0,
                  dtype=np.float32) -> Tensor:
    """Full forward pass: input projection, K message-passing layers with
    leaky-ReLU between, JK summation, MLP head. Returns (|V|, C) class
    probabilities."""
    if g.X.shape[1] != config.d_x:
        raise SchemaError(f"graph width {g.X.shape[1]} != model d_x {config.d_x}")
    x = Tensor(g.X.astype(dtype), dtype=dtype)
    edge_attr = Tensor(g.edge_attr.astype(dtype), dtype=dtype)
    h = _linear(x, params, "input_proj")
    layer_outputs = []
    for k in range(config.num_layers):
        h = sage_layer(h, g.edge_index, edge_attr, params, k, config.layer_kind,
                       config.edge_proj, dtype, perm_seed=perm_seed)
        h = ad.leaky_relu(h, LEAKY_SLOPE)
        layer_outputs.append(h)
    z = jk_aggregate(layer_outputs)
    return mlp_head(z, params, training=training)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, Tensor]
    config: ModelConfig
    schema: FeatureSchema
    vocab: LabelVocabulary
    encoder_state: dict
    metadata: dict = field(default_factory=dict)

    def schema_hash(self) -> str:
        canon = json.dumps(self.schema.to_json(), sort_keys=True).encode()
        return hashlib.sha256(canon).hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint):
    ad.save_params(path, ckpt.params, header_extra={
        "model_config": ckpt.config.to_json(),
        "feature_schema": ckpt.schema.to_json(),
        "label_vocabulary": ckpt.vocab.to_json(),
        "encoder_state": ckpt.encoder_state,
        "metadata": ckpt.metadata,
    })


def load_checkpoint(path) -> Checkpoint:
    params, header = ad.load_params(path)
    return Checkpoint(
        params=params,
        config=ModelConfig.from_json(header["model_config"]),
        schema=FeatureSchema.from_json(header["feature_schema"]),
        vocab=LabelVocabulary.from_json(header["label_vocabulary"]),
        encoder_state=header["encoder_state"],
        metadata=header.get("metadata", {}),
    )
