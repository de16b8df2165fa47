"""Experiment harness: generate/ingest corpora, train, evaluate, sweep, analyze.

Exit codes: 0 success, 2 usage/config error, 3 runtime/data error.  The env
var ``IDIL_OOD_OUT`` overrides the output directory from config or flags.
All CSV output is UTF-8, comma-separated, header row, LF line endings.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import click
import numpy as np

from . import __version__, data, mahalanobis, metrics, plots
from .data import CorpusError, feature_matrix
from .losses import LossVariant
from .model import MlpClassifier, ModelConfig
from .trainer import TrainConfig, TrainingDiverged, TrainLog, train

EXIT_USAGE = 2
EXIT_RUNTIME = 3

OUT_ENV_VAR = "IDIL_OOD_OUT"


class ConfigError(Exception):
    """Bad configuration or unusable invocation."""


@dataclass
class ExperimentConfig:
    in_dist: Path
    ood: list[Path]
    feature_dim: int = 4096
    hidden_dim: int = 64
    loss: str = "idil"
    epochs: int = 5
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 0.01
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    confidence: str = "max-softmax"
    out_dir: Path = Path("runs/exp")

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.confidence not in ("max-softmax", "mahalanobis"):
            raise ConfigError(f"unknown confidence source {self.confidence!r}")
        try:
            LossVariant.parse(self.loss)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def variant(self) -> LossVariant:
        return LossVariant.parse(self.loss)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Parse a sectioned TOML config file; flat overrides win over file keys."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"unreadable config {path}: {e}") from e

    sec_data = raw.get("data", {})
    sec_model = raw.get("model", {})
    sec_train = raw.get("train", {})
    sec_eval = raw.get("eval", {})
    sec_out = raw.get("output", {})
    if "in_dist" not in sec_data:
        raise ConfigError(f"{path}: [data] section must set in_dist")

    base = path.parent
    kwargs = {
        "in_dist": base / sec_data["in_dist"],
        "ood": [base / p for p in sec_data.get("ood", [])],
        "feature_dim": sec_data.get("feature_dim", 4096),
        "hidden_dim": sec_model.get("hidden_dim", 64),
        "loss": sec_train.get("loss", "idil"),
        "epochs": sec_train.get("epochs", 5),
        "batch_size": sec_train.get("batch_size", 16),
        "lr": sec_train.get("lr", 1e-3),
        "weight_decay": sec_train.get("weight_decay", 0.01),
        "seeds": list(sec_train.get("seeds", [1, 2, 3])),
        "confidence": sec_eval.get("confidence", "max-softmax"),
        "out_dir": base / sec_out.get("dir", "runs/exp"),
    }
    for key, value in (overrides or {}).items():
        if value is not None:
            kwargs[key] = value
    if OUT_ENV_VAR in os.environ:
        kwargs["out_dir"] = Path(os.environ[OUT_ENV_VAR])
    return ExperimentConfig(**kwargs)


def _require_exists(path: Path, what: str) -> None:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")


def _checkpoint_path(out_dir: Path, loss: str, seed: int) -> Path:
    return out_dir / f"ckpt_{loss}_seed{seed}.json"


def _config_hash(cfg: ExperimentConfig) -> str:
    payload = json.dumps(
        {k: str(v) for k, v in vars(cfg).items()}, sort_keys=True
    ).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def run_training(cfg: ExperimentConfig) -> dict[int, TrainLog]:
    """Train one model per seed; reads only the in-distribution corpus."""
    _require_exists(cfg.in_dist, "in-distribution corpus")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = data.load(cfg.in_dist)
    if not ds.labeled:
        raise CorpusError(f"{cfg.in_dist}: training corpus must be fully labeled")

    logs: dict[int, TrainLog] = {}
    for seed in cfg.seeds:
        train_split, _, _ = data.split(ds, seed)
        features = feature_matrix(train_split.documents, cfg.feature_dim)
        labels = train_split.label_indices()
        model = MlpClassifier.init(
            ModelConfig(
                input_dim=cfg.feature_dim,
                hidden_dim=cfg.hidden_dim,
                num_labels=len(ds.vocab),
                init_seed=seed,
            )
        )
        tcfg = TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            weight_decay=cfg.weight_decay,
            seed=seed,
            variant=cfg.variant,
        )
        log = train(model, features, labels, tcfg)
        model.save(_checkpoint_path(out_dir, cfg.loss, seed))
        log.write_csv(out_dir / f"trainlog_{cfg.loss}_seed{seed}.csv")
        plots.plot_loss_curve(
            log.step_losses,
            out_dir / f"trainloss_{cfg.loss}_seed{seed}.svg",
            title=f"{cfg.loss} seed {seed}",
        )
        logs[seed] = log

    manifest = {
        "config_hash": _config_hash(cfg),
        "loss": cfg.loss,
        "seeds": cfg.seeds,
        "labels": ds.vocab.names,
        "feature_dim": cfg.feature_dim,
        "versions": {"idil_ood": __version__, "numpy": np.__version__},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return logs


def _confidence_scores(
    cfg: ExperimentConfig,
    model: MlpClassifier,
    probs: np.ndarray,
    hidden: np.ndarray,
    stats: mahalanobis.GaussianStats | None,
) -> list[float]:
    if cfg.confidence == "mahalanobis":
        assert stats is not None
        return mahalanobis.confidences(stats, hidden)
    return metrics.max_softmax(probs)


def run_evaluation(cfg: ExperimentConfig) -> list[dict]:
    """Per-(seed, OOD source) metric rows plus one mean row per OOD source.

    Rows hold unrounded values; CSV serialization rounds to two decimals.
    """
    _require_exists(cfg.in_dist, "in-distribution corpus")
    if not cfg.ood:
        raise ConfigError("evaluation requires at least one OOD source")
    for p in cfg.ood:
        _require_exists(p, "OOD corpus")
    out_dir = Path(cfg.out_dir)

    ds = data.load(cfg.in_dist)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest["labels"] != ds.vocab.names:
            raise RuntimeError(
                f"vocabulary mismatch: checkpoint trained on {manifest['labels']}, "
                f"data has {ds.vocab.names}"
            )
    ood_sets = {p: data.load(p) for p in cfg.ood}
    method = cfg.loss + ("+maha" if cfg.confidence == "mahalanobis" else "")
    in_name = Path(cfg.in_dist).stem

    rows: list[dict] = []
    per_ood: dict[Path, list[dict]] = {p: [] for p in cfg.ood}
    for seed in cfg.seeds:
        ckpt = _checkpoint_path(out_dir, cfg.loss, seed)
        _require_exists(ckpt, "checkpoint")
        model = MlpClassifier.load(ckpt)
        if model.cfg.num_labels != len(ds.vocab):
            raise RuntimeError(
                f"vocabulary mismatch: checkpoint has {model.cfg.num_labels} labels, "
                f"data has {len(ds.vocab)}"
            )
        train_split, _, test_split = data.split(ds, seed)
        x_test = feature_matrix(test_split.documents, cfg.feature_dim)
        probs_t, hidden_t = model.forward(x_test)
        acc = metrics.accuracy(probs_t.values, test_split.label_indices())

        stats = None
        if cfg.confidence == "mahalanobis":
            x_train = feature_matrix(train_split.documents, cfg.feature_dim)
            _, hidden_train = model.forward(x_train)
            stats = mahalanobis.fit(hidden_train.values, train_split.label_indices())

        in_scores = _confidence_scores(cfg, model, probs_t.values, hidden_t.values, stats)
        for ood_path in cfg.ood:
            x_ood = feature_matrix(ood_sets[ood_path].documents, cfg.feature_dim)
            probs_o, hidden_o = model.forward(x_ood)
            ood_scores = _confidence_scores(
                cfg, model, probs_o.values, hidden_o.values, stats
            )
            report = metrics.evaluate(
                metrics.ScoreSet(in_scores, ood_scores), accuracy_value=acc
            )
            row = {
                "in_dist": in_name,
                "ood": Path(ood_path).stem,
                "method": method,
                "seed": seed,
                "fpr95": report.fpr95,
                "err": report.err,
                "auroc": report.auroc,
                "aupr": report.aupr,
                "accuracy": report.accuracy,
            }
            per_ood[ood_path].append(row)

    for ood_path in cfg.ood:
        seed_rows = per_ood[ood_path]
        rows.extend(seed_rows)
        mean_row = {
            "in_dist": in_name,
            "ood": Path(ood_path).stem,
            "method": method,
            "seed": "mean",
        }
        for key in ("fpr95", "err", "auroc", "aupr", "accuracy"):
            mean_row[key] = sum(r[key] for r in seed_rows) / len(seed_rows)
        rows.append(mean_row)
    return rows


REPORT_FIELDS = ["in_dist", "ood", "method", "seed", "fpr95", "err", "auroc", "aupr", "accuracy"]


def write_report(rows: list[dict], path: str | Path) -> None:
    """Metric values as percentages with two decimals."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            out = []
            for key in REPORT_FIELDS:
                value = row[key]
                out.append(f"{value:.2f}" if isinstance(value, float) else str(value))
            writer.writerow(out)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def handle_errors(f):
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (ConfigError, ValueError) as e:
            _fail(EXIT_USAGE, str(e))
        except (CorpusError, TrainingDiverged, RuntimeError, OSError) as e:
            _fail(EXIT_RUNTIME, str(e))

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Self-supervised OOD detection experiments with ranking-loss training."""


@main.command()
@click.option("--labels", type=int, default=4, show_default=True)
@click.option("--n", "n_per_label", type=int, default=200, show_default=True)
@click.option("--overlap", type=float, default=0.0, show_default=True)
@click.option("--doc-len", type=int, default=50, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("."))
@handle_errors
def synth(labels, n_per_label, overlap, doc_len, seed, out_dir):
    """Generate a two-domain synthetic corpus pair (in_dist.jsonl, ood.jsonl)."""
    if OUT_ENV_VAR in os.environ:
        out_dir = Path(os.environ[OUT_ENV_VAR])
    in_ds, ood_ds = data.synth_generate(n_per_label, labels, overlap, doc_len, seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    data.save_jsonl(in_ds, out_dir / "in_dist.jsonl")
    data.save_jsonl(ood_ds, out_dir / "ood.jsonl")
    click.echo(f"wrote {len(in_ds)} in-dist docs and {len(ood_ds)} OOD docs to {out_dir}")


def _config_overrides(loss, epochs, batch_size, lr, seeds, out_dir) -> dict:
    overrides: dict = {
        "loss": loss,
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "out_dir": out_dir,
    }
    if seeds:
        overrides["seeds"] = list(seeds)
    return overrides


_shared_train_options = [
    click.option("--config", "config_path", required=True, type=click.Path(path_type=Path)),
    click.option("--loss", default=None),
    click.option("--epochs", type=int, default=None),
    click.option("--batch-size", type=int, default=None),
    click.option("--lr", type=float, default=None),
    click.option("--seed", "seeds", type=int, multiple=True),
    click.option("--out", "out_dir", type=click.Path(path_type=Path), default=None),
]


def shared_train_options(f):
    for opt in reversed(_shared_train_options):
        f = opt(f)
    return f


@main.command(name="train")
@shared_train_options
@handle_errors
def cmd_train(config_path, loss, epochs, batch_size, lr, seeds, out_dir):
    """Train one checkpoint per seed on the in-distribution corpus only."""
    cfg = load_config(config_path, _config_overrides(loss, epochs, batch_size, lr, seeds, out_dir))
    logs = run_training(cfg)
    for seed, log in logs.items():
        click.echo(
            f"seed {seed}: {len(log.step_losses)} steps, "
            f"final loss {log.step_losses[-1]:.6f}"
        )


@main.command(name="eval")
@shared_train_options
@click.option("--mahalanobis", "use_maha", is_flag=True, default=False)
@handle_errors
def cmd_eval(config_path, loss, epochs, batch_size, lr, seeds, out_dir, use_maha):
    """Evaluate checkpoints on every (seed, OOD source) pair; write report.csv."""
    overrides = _config_overrides(loss, epochs, batch_size, lr, seeds, out_dir)
    if use_maha:
        overrides["confidence"] = "mahalanobis"
    cfg = load_config(config_path, overrides)
    rows = run_evaluation(cfg)
    report_path = Path(cfg.out_dir) / "report.csv"
    write_report(rows, report_path)
    click.echo(f"wrote {len(rows)} rows to {report_path}")


@main.command(name="sweep-batch")
@shared_train_options
@click.option("--sizes", default="4,8,16,32", show_default=True)
@handle_errors
def cmd_sweep_batch(config_path, loss, epochs, batch_size, lr, seeds, out_dir, sizes):
    """Train and evaluate across batch sizes; emit sweep.csv and sweep.svg."""
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --sizes value {sizes!r}") from e
    if not size_list or any(s < 2 for s in size_list):
        raise ConfigError("batch sizes must all be >= 2 (pair terms need two documents)")

    base = load_config(config_path, _config_overrides(loss, epochs, batch_size, lr, seeds, out_dir))
    if not base.ood:
        raise ConfigError("sweep requires at least one OOD source")
    sweep_dir = Path(base.out_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)

    all_rows: list[dict] = []
    mean_rows: list[dict] = []
    for size in size_list:
        cfg = ExperimentConfig(
            **{
                **vars(base),
                "batch_size": size,
                "ood": [base.ood[0]],
                "out_dir": sweep_dir / f"bs{size}",
            }
        )
        run_training(cfg)
        rows = run_evaluation(cfg)
        for row in rows:
            entry = {"batch_size": size, **{k: row[k] for k in ("seed", "fpr95", "err", "auroc", "aupr")}}
            if row["seed"] == "mean":
                mean_rows.append(entry)
            all_rows.append(entry)

    sweep_csv = sweep_dir / "sweep.csv"
    with open(sweep_csv, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["batch_size", "seed", "fpr95", "err", "auroc", "aupr"])
        for row in all_rows:
            writer.writerow(
                [row["batch_size"], row["seed"]]
                + [f"{row[k]:.2f}" for k in ("fpr95", "err", "auroc", "aupr")]
            )
    plots.plot_batch_sweep(mean_rows, sweep_dir / "sweep.svg")
    click.echo(f"wrote {sweep_csv} ({len(size_list)} sizes x {len(base.seeds)} seeds)")


@main.command(name="analyze")
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path))
@click.option("--in-dist", "in_dist", required=True, type=click.Path(path_type=Path))
@click.option("--ood", required=True, type=click.Path(path_type=Path))
@click.option("--bins", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=1, show_default=True, help="split seed")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("."))
@handle_errors
def cmd_analyze(checkpoint, in_dist, ood, bins, seed, out_dir):
    """Max-softmax percentile curves and the OOD mass above the least in-dist score."""
    _require_exists(checkpoint, "checkpoint")
    _require_exists(in_dist, "in-distribution corpus")
    _require_exists(ood, "OOD corpus")
    if OUT_ENV_VAR in os.environ:
        out_dir = Path(os.environ[OUT_ENV_VAR])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = MlpClassifier.load(checkpoint)
    dim = model.cfg.input_dim
    ds = data.load(in_dist)
    if len(ds.vocab) != model.cfg.num_labels:
        raise RuntimeError(
            f"vocabulary mismatch: checkpoint has {model.cfg.num_labels} labels, "
            f"data has {len(ds.vocab)}"
        )
    _, _, test_split = data.split(ds, seed)
    probs_in, _ = model.forward(feature_matrix(test_split.documents, dim))
    probs_ood, _ = model.forward(feature_matrix(data.load(ood).documents, dim))
    score_set = metrics.ScoreSet(
        metrics.max_softmax(probs_in.values), metrics.max_softmax(probs_ood.values)
    )
    table = metrics.percentile_table(score_set, bins)

    csv_path = out_dir / "percentile.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["threshold", "pct_in", "pct_ood"])
        for threshold, pct_in, pct_ood in table.rows:
            writer.writerow([f"{threshold:.6f}", f"{pct_in:.2f}", f"{pct_ood:.2f}"])
    plots.plot_percentiles(table, out_dir / "percentile.svg")
    click.echo(
        f"least in-dist score {table.min_in_score:.6f}; "
        f"OOD mass at threshold {table.ood_mass_at_threshold:.4f}"
    )


if __name__ == "__main__":
    main()
