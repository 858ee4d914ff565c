"""Tests for class weighting, the training loop, multi-run aggregation,
grid search, and the metrics CSV format."""

import numpy as np
import pytest

from matgraph.errors import ConfigError
from matgraph.graphs import Corpus
from matgraph.model import ModelConfig, load_checkpoint, model_forward, save_checkpoint
from matgraph.synth import generate_workspace, build_workspace_corpus
from matgraph.training import (
    TrainConfig,
    class_weights,
    grid_search,
    multi_run,
    predict_corpus,
    read_metrics_csv,
    train,
    write_metrics_csv,
)


@pytest.fixture(scope="module")
def planted(tmp_path_factory):
    root = tmp_path_factory.mktemp("planted")
    ws = generate_workspace("planted", 30, seed=5, out_dir=root)
    return build_workspace_corpus(ws, seed=5)


def small_config(corpus, **kw):
    defaults = dict(d_x=corpus.schema.width, classes=len(corpus.vocab),
                    num_layers=2, hidden=32, seed=0)
    defaults.update(kw)
    return ModelConfig(**defaults)


# ---------------------------------------------------------------------------
# class weights
# ---------------------------------------------------------------------------


def test_class_weights_uniform_counts():
    np.testing.assert_allclose(class_weights(np.array([5, 5, 5])), np.ones(3))


def test_class_weights_inverse_frequency():
    w = class_weights(np.array([1, 1, 2]))
    np.testing.assert_allclose(w, [1.2, 1.2, 0.6])


def test_class_weights_zero_count_floored():
    w = class_weights(np.array([0, 10]))
    assert np.isfinite(w).all()
    assert w[0] > w[1]


def test_class_weights_uniform_mode():
    np.testing.assert_allclose(class_weights(np.array([1, 100]), mode="uniform"), [1, 1])


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_train_deterministic_checkpoints(planted):
    config = small_config(planted)
    tc = TrainConfig(epochs=3, patience=3, runs=1)
    ckpt1, hist1 = train(config, tc, planted, seed=11)
    ckpt2, hist2 = train(config, tc, planted, seed=11)
    for name in ckpt1.params:
        np.testing.assert_array_equal(ckpt1.params[name].data, ckpt2.params[name].data)
    assert hist1.epochs == hist2.epochs


def test_train_loss_decreases_on_separable_corpus(planted):
    config = small_config(planted)
    tc = TrainConfig(epochs=2, patience=2, runs=1)
    _, hist = train(config, tc, planted, seed=3)
    assert hist.epochs[1]["train_loss"] < hist.epochs[0]["train_loss"]


def test_train_empty_split_rejected(planted):
    config = small_config(planted)
    empty = Corpus(graphs=planted.graphs,
                   splits={"train": [], "val": [], "test": []},
                   vocab=planted.vocab, schema=planted.schema,
                   encoder_state=planted.encoder_state, options={})
    with pytest.raises(ConfigError):
        train(config, TrainConfig(epochs=1, runs=1), empty, seed=0)


def test_early_stopping_respects_patience(planted):
    config = small_config(planted)
    tc = TrainConfig(epochs=40, patience=2, runs=1)
    _, hist = train(config, tc, planted, seed=7)
    # training stops at most patience epochs after the best one
    assert len(hist.epochs) <= hist.best_epoch + tc.patience + 1
    best = max(row["val_micro_f1"] for row in hist.epochs)
    assert hist.best_val_micro_f1 == best


def test_checkpoint_round_trip_reproduces_validation(tmp_path, planted):
    config = small_config(planted)
    tc = TrainConfig(epochs=3, patience=3, runs=1)
    ckpt, hist = train(config, tc, planted, seed=13)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)

    val_graphs = planted.split_graphs("val")
    preds, trues = [], []
    for g in val_graphs:
        probs = model_forward(g, loaded.params, loaded.config, training=False)
        preds.append(probs.data.argmax(axis=1))
        trues.append(g.y)
    from matgraph.evaluation import micro_f1
    reproduced = micro_f1(np.concatenate(preds), np.concatenate(trues))
    assert reproduced == hist.best_val_micro_f1


def test_gradient_flow_reaches_all_layers(planted):
    # one step on one graph changes at least one parameter per layer
    from matgraph import autodiff as ad
    from matgraph.autodiff import OptimizerState, Tape, adam_step, zero_grads
    from matgraph.model import init_params
    from matgraph.training import class_weights as cw

    config = small_config(planted, num_layers=3)
    params = init_params(config, seed=1)
    before = {n: t.data.copy() for n, t in params.items()}
    g = planted.split_graphs("train")[0]
    zero_grads(params)
    with Tape() as tape:
        probs = model_forward(g, params, config, training=True)
        loss = ad.weighted_cross_entropy(probs, g.y, np.ones(len(planted.vocab)), g.target_mask)
        tape.backward(loss)
    adam_step(params, OptimizerState(lr=0.001))
    for k in range(3):
        changed = any(not np.array_equal(before[n], params[n].data)
                      for n in params if n.startswith(f"layer{k}."))
        assert changed, f"layer {k} unchanged"
    assert not np.array_equal(before["input_proj.W"], params["input_proj.W"].data)
    assert not np.array_equal(before["mlp.out.W"], params["mlp.out.W"].data)


def test_uniform_weights_on_balanced_counts_match_inverse(planted):
    balanced = np.array([7, 7, 7, 7])
    np.testing.assert_allclose(class_weights(balanced, "inverse_frequency"),
                               class_weights(balanced, "uniform"), atol=1e-6)


# ---------------------------------------------------------------------------
# multi-run and grid search
# ---------------------------------------------------------------------------


def test_multi_run_single_run_std_zero(planted):
    config = small_config(planted)
    tc = TrainConfig(epochs=2, patience=2, runs=1)
    outcome = multi_run(1, config, tc, planted, seed0=0)
    assert outcome["aggregate"]["val_micro_f1"]["std"] == 0.0


def test_multi_run_population_std():
    outcome = multi_run(2, None, None, None, seed0=0,
                        run_fn=lambda seed: {"metric": 0.4 if seed == 0 else 0.6})
    agg = outcome["aggregate"]["metric"]
    assert agg["mean"] == pytest.approx(0.5)
    assert agg["std"] == pytest.approx(0.1)


def test_grid_search_ranks_and_reports(planted):
    tc = TrainConfig(epochs=2, patience=2, runs=1)
    results = grid_search(planted, layer_counts=[1, 2], hidden_sizes=[16],
                          layer_kinds=["sage_mean"], train_config=tc, runs_per_cell=1)
    assert len(results) == 2
    assert results[0]["val_micro_f1_mean"] >= results[1]["val_micro_f1_mean"]
    with pytest.raises(ConfigError):
        grid_search(planted, [], [], [], tc)


# ---------------------------------------------------------------------------
# metrics CSV
# ---------------------------------------------------------------------------


def test_metrics_csv_round_trip(tmp_path):
    rows = [
        {"experiment": "fully_guided", "run": 0, "seed": 0, "split": "test",
         "metric": "top_k", "k": 1, "value": 0.91},
        {"experiment": "fully_guided", "run": 0, "seed": 0, "split": "test",
         "metric": "micro_f1", "value": 0.91},
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, rows)
    loaded = read_metrics_csv(path)
    assert loaded[0]["metric"] == "top_k" and loaded[0]["k"] == "1"
    assert loaded[1]["k"] == ""
    assert float(loaded[0]["value"]) == 0.91
    first = path.read_bytes()
    write_metrics_csv(path, rows)
    assert path.read_bytes() == first
