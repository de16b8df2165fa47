"""Shared fixtures: one expensive end-to-end experiment reused by the
acceptance suite (training runs, evaluation reports, margin analysis)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest
from click.testing import CliRunner

from idil_ood import cli, data, metrics
from idil_ood.data import feature_matrix
from idil_ood.model import MlpClassifier

CONFIG_TOML = """\
[data]
in_dist = "in_dist.jsonl"
ood = ["ood.jsonl"]
feature_dim = 4096

[model]
hidden_dim = 64

[train]
loss = "idil"
epochs = 5
batch_size = 16
seeds = [1, 2, 3]

[output]
dir = "run_a"
"""


@dataclass
class EndToEnd:
    """Artifacts of the pinned disjoint-domain experiment (4 labels, 200
    docs/label, zero overlap, corpus seed 1; defaults; train seeds 1-3)."""

    root: Path
    config_path: Path
    run_a: Path
    run_b: Path
    report_a: bytes
    report_b: bytes
    idil_rows: list = field(default_factory=list)  # unrounded, incl. mean row
    ce_rows: list = field(default_factory=list)
    maha_rows: list = field(default_factory=list)
    margin_mass: dict = field(default_factory=dict)  # seed -> OOD mass >= min in-dist
    train_eval_seconds: float = 0.0

    def seed_rows(self, rows):
        return [r for r in rows if r["seed"] != "mean"]


def _report_bytes(cfg) -> tuple[list, bytes]:
    rows = cli.run_evaluation(cfg)
    path = Path(cfg.out_dir) / "report.csv"
    cli.write_report(rows, path)
    return rows, path.read_bytes()


@pytest.fixture(scope="session")
def e2e(tmp_path_factory) -> EndToEnd:
    root = tmp_path_factory.mktemp("e2e")
    runner = CliRunner()
    result = runner.invoke(
        cli.main,
        ["synth", "--labels", "4", "--n", "200", "--overlap", "0.0", "--seed", "1",
         "--out", str(root)],
    )
    assert result.exit_code == 0, result.output
    config_path = root / "config.toml"
    config_path.write_text(CONFIG_TOML, encoding="utf-8")

    # timed pipeline at the pinned defaults
    cfg_a = cli.load_config(config_path)
    t0 = time.perf_counter()
    cli.run_training(cfg_a)
    rows_a, report_a = _report_bytes(cfg_a)
    elapsed = time.perf_counter() - t0

    # identical repeat into a second directory
    cfg_b = cli.load_config(config_path, {"out_dir": root / "run_b"})
    cli.run_training(cfg_b)
    _, report_b = _report_bytes(cfg_b)

    # cross-entropy baseline over the same seeds
    cfg_ce = cli.load_config(config_path, {"loss": "ce", "out_dir": root / "run_ce"})
    cli.run_training(cfg_ce)
    ce_rows = cli.run_evaluation(cfg_ce)

    # Mahalanobis rescoring of the existing ranking-loss checkpoints
    cfg_maha = cli.load_config(config_path, {"confidence": "mahalanobis"})
    maha_rows = cli.run_evaluation(cfg_maha)

    # per-seed margin analysis on max-softmax scores
    ds = data.load(root / "in_dist.jsonl")
    ood_docs = data.load(root / "ood.jsonl").documents
    x_ood = feature_matrix(ood_docs, cfg_a.feature_dim)
    margin_mass = {}
    for seed in cfg_a.seeds:
        model = MlpClassifier.load(root / "run_a" / f"ckpt_idil_seed{seed}.json")
        _, _, test_split = data.split(ds, seed)
        probs_in, _ = model.forward(feature_matrix(test_split.documents, cfg_a.feature_dim))
        probs_ood, _ = model.forward(x_ood)
        s = metrics.ScoreSet(
            metrics.max_softmax(probs_in.values), metrics.max_softmax(probs_ood.values)
        )
        margin_mass[seed] = metrics.percentile_table(s, bins=100).ood_mass_at_threshold

    return EndToEnd(
        root=root,
        config_path=config_path,
        run_a=root / "run_a",
        run_b=root / "run_b",
        report_a=report_a,
        report_b=report_b,
        idil_rows=rows_a,
        ce_rows=ce_rows,
        maha_rows=maha_rows,
        margin_mass=margin_mass,
        train_eval_seconds=elapsed,
    )
