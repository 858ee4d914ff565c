"""CLI tests: help goldens, stage wiring, idempotence, exit codes."""

import json
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from matgraph.cli import main

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"

runner = CliRunner()


def invoke(args, **kw):
    result = runner.invoke(main, args, prog_name="matgraph", **kw)
    return result


# ---------------------------------------------------------------------------
# help goldens
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("command", [
    None, "ingest", "build-graphs", "stats", "train", "evaluate", "ablate",
    "experiment", "grid", "synth", "serve",
])
def test_help_matches_golden(command):
    args = ["--help"] if command is None else [command, "--help"]
    name = "main" if command is None else command
    result = invoke(args)
    assert result.exit_code == 0
    assert result.output == (GOLDEN / f"help-{name}.txt").read_text()


# ---------------------------------------------------------------------------
# stage wiring
# ---------------------------------------------------------------------------


@pytest.fixture()
def assemblies_dir(tmp_path):
    target = tmp_path / "assemblies"
    target.mkdir()
    shutil.copy(FIXTURES / "gearbox.json", target / "gearbox.json")
    # an all-default assembly that the filter must drop
    default_doc = {
        "assembly_id": "plain",
        "tree": {"bodies": ["X1", "X2", "X3"]},
        "bodies": {
            uid: {
                "name": f"Body{i}",
                "physical_properties": {"surface_area": 0.1, "volume": 0.01,
                                        "center_of_mass": {"x": 0, "y": 0, "z": 0}},
                "material_id": "PrismMaterial-018",
                "appearance_id": "Prism-Appearance-Default",
                "is_visible": True,
            } for i, uid in enumerate(["X1", "X2", "X3"])
        },
        "contacts": [{"body_one": "X1", "body_two": "X2"},
                     {"body_one": "X2", "body_two": "X3"}],
        "meta": {"category": "toys", "industry": "other industries", "products": [],
                 "physical": {}, "geometric": {}},
    }
    (target / "plain.json").write_text(json.dumps(default_doc))
    return target


def test_ingest_fixture_tally(tmp_path, assemblies_dir):
    result = invoke(["--out-dir", str(tmp_path / "out"), "ingest",
                     "--assemblies", str(assemblies_dir),
                     "--catalog", str(FIXTURES / "catalog.json")])
    assert result.exit_code == 0, result.output
    assert "kept 1" in result.output and "dropped 1" in result.output
    summary = json.loads((tmp_path / "out" / "ingest-summary.json").read_text())
    assert summary == {"parsed": 2, "failed": 0, "kept": 1,
                       "dropped_default": 1, "failures": {}}


def test_synth_train_evaluate_smoke(tmp_path):
    synth_out = tmp_path / "synth"
    result = invoke(["--seed", "3", "--out-dir", str(synth_out), "synth",
                     "--kind", "planted", "--graphs", "16",
                     "--min-nodes", "5", "--max-nodes", "8"])
    assert result.exit_code == 0, result.output
    assert (synth_out / "corpus" / "manifest.json").exists()

    train_out = tmp_path / "run"
    result = invoke(["--seed", "3", "--out-dir", str(train_out), "train",
                     "--corpus", str(synth_out / "corpus"),
                     "--layers", "1", "--hidden", "16", "--epochs", "2", "--patience", "2"])
    assert result.exit_code == 0, result.output
    assert (train_out / "model.ckpt").exists()
    assert (train_out / "metrics.csv").exists()
    assert (train_out / "history-run0.csv").exists()

    eval_out = tmp_path / "eval"
    result = invoke(["--out-dir", str(eval_out), "evaluate",
                     "--corpus", str(synth_out / "corpus"),
                     "--checkpoint", str(train_out / "model.ckpt")])
    assert result.exit_code == 0, result.output
    assert "top-1" in result.output


def test_build_graphs_from_records(tmp_path, assemblies_dir):
    out1 = tmp_path / "ingested"
    invoke(["--out-dir", str(out1), "ingest", "--assemblies", str(assemblies_dir),
            "--catalog", str(FIXTURES / "catalog.json")])
    split = tmp_path / "split.json"
    split.write_text(json.dumps({"seed": 0, "test_ids": []}))
    table = tmp_path / "semantic.tsv"
    table.write_text("DIM 4\ngear\t0.1 0.2 0.3 0.4\nshaft\t0.5 0.5 0.1 0.1\n")
    out2 = tmp_path / "built"
    result = invoke(["--out-dir", str(out2), "build-graphs",
                     "--records", str(out1 / "records.jsonl"),
                     "--catalog", str(FIXTURES / "catalog.json"),
                     "--split", str(split), "--semantic-table", str(table)])
    assert result.exit_code == 0, result.output
    manifest = json.loads((out2 / "corpus" / "manifest.json").read_text())
    assert len(manifest["graphs"]) == 1  # gearbox kept, valid


def test_stats_arithmetic(tmp_path):
    synth_out = tmp_path / "s"
    invoke(["--seed", "1", "--out-dir", str(synth_out), "synth", "--kind", "planted",
            "--graphs", "8", "--min-nodes", "4", "--max-nodes", "6"])
    result = invoke(["--out-dir", str(tmp_path / "st"), "stats",
                     "--corpus", str(synth_out / "corpus")])
    assert result.exit_code == 0, result.output
    stats = json.loads((tmp_path / "st" / "stats.json").read_text())
    assert stats["graphs"] >= 6
    assert stats["nodes"]["max"] <= 6


def test_experiment_fully_and_grid(tmp_path):
    synth_out = tmp_path / "s"
    invoke(["--seed", "2", "--out-dir", str(synth_out), "synth", "--kind", "planted",
            "--graphs", "14", "--min-nodes", "5", "--max-nodes", "7"])
    corpus = str(synth_out / "corpus")
    result = invoke(["--seed", "2", "--out-dir", str(tmp_path / "exp"), "experiment", "fully",
                     "--corpus", corpus, "--layers", "1", "--hidden", "16",
                     "--epochs", "1", "--patience", "1", "--runs", "1"])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "exp" / "table.md").exists()

    result = invoke(["--seed", "2", "--out-dir", str(tmp_path / "grid"), "grid",
                     "--corpus", corpus, "--grid-layers", "1", "--grid-hidden", "16",
                     "--kinds", "sage_mean", "--epochs", "1", "--patience", "1"])
    assert result.exit_code == 0, result.output
    best = json.loads((tmp_path / "grid" / "best-config.json").read_text())
    assert best == {"num_layers": 1, "hidden": 16, "layer_kind": "sage_mean"}


# ---------------------------------------------------------------------------
# idempotence and exit codes
# ---------------------------------------------------------------------------


def test_synth_idempotent_bytes(tmp_path):
    for sub in ("a", "b"):
        invoke(["--seed", "9", "--out-dir", str(tmp_path / sub), "synth",
                "--kind", "homophily", "--graphs", "8",
                "--min-nodes", "4", "--max-nodes", "6", "--material-block"])
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "corpus" / "manifest.json").read_bytes() == (b / "corpus" / "manifest.json").read_bytes()
    for bundle in sorted((a / "corpus" / "graphs").iterdir()):
        assert bundle.read_bytes() == (b / "corpus" / "graphs" / bundle.name).read_bytes()


def test_train_idempotent_metrics(tmp_path):
    synth_out = tmp_path / "s"
    invoke(["--seed", "4", "--out-dir", str(synth_out), "synth", "--kind", "planted",
            "--graphs", "12", "--min-nodes", "4", "--max-nodes", "6"])
    for sub in ("r1", "r2"):
        result = invoke(["--seed", "4", "--out-dir", str(tmp_path / sub), "train",
                         "--corpus", str(synth_out / "corpus"),
                         "--layers", "1", "--hidden", "16", "--epochs", "2", "--patience", "2"])
        assert result.exit_code == 0, result.output
    assert ((tmp_path / "r1" / "metrics.csv").read_bytes()
            == (tmp_path / "r2" / "metrics.csv").read_bytes())
    assert ((tmp_path / "r1" / "model.ckpt").read_bytes()
            == (tmp_path / "r2" / "model.ckpt").read_bytes())


def test_usage_error_exit_code_2():
    result = invoke(["train"])  # missing required --corpus
    assert result.exit_code == 2


def test_validation_failure_exit_code_1(tmp_path):
    bad = tmp_path / "corpus"
    bad.mkdir()
    (bad / "manifest.json").write_text("{not json")
    result = invoke(["--out-dir", str(tmp_path / "o"), "stats", "--corpus", str(bad)])
    assert result.exit_code == 1


def test_unknown_synth_kind_is_usage_error(tmp_path):
    result = invoke(["--out-dir", str(tmp_path), "synth", "--kind", "fractal", "--graphs", "8"])
    assert result.exit_code == 2  # click rejects the choice
