"""Training loop, evaluation, one-axis hyperparameter sweeps and report
emission.

The harness owns policy, not math: it walks epochs, enforces split
hygiene, aborts on the first non-finite value naming the batch and layer,
and records everything needed to reproduce a run (all four seeds, the full
config, the metric semantics) into run.json plus three CSVs.
"""

import csv
import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import data as datapipe
from . import models, optim, weights
from .errors import NumericsError, StateError, ValidationError

RUN_ARTIFACTS = ("run.json", "epochs.csv", "confusion.csv", "plotdata.csv")

# How the per-epoch training numbers are to be read: accuracy and loss are
# running averages over the epoch's batches (dropout active), not a
# post-epoch re-evaluation. Recorded in run.json so the choice travels
# with the results.
METRIC_NOTES = {
    "train_metrics": "running average over the epoch, train-mode forward",
    "val_metrics": "post-epoch evaluation in infer mode",
    "test_metrics": "evaluated once, after the final epoch",
    "seconds": "wall clock per epoch; recorded as 0.0 in deterministic mode",
}


@dataclass(frozen=True)
class Seeds:
    split: int = 0
    shuffle: int = 0
    init: int = 0
    dropout: int = 0


@dataclass(frozen=True)
class TrainConfig:
    architecture: str = "paper_cnn"
    batch_size: int = 90
    epochs: int = 10
    learning_rate: float = 0.001
    seeds: Seeds = Seeds()
    augmentation: datapipe.AugmentConfig = datapipe.AugmentConfig()
    fractions: tuple[float, float, float] = datapipe.DEFAULT_FRACTIONS
    base_weights: str | None = None
    freeze_base: bool = True
    target_size: int = 224
    deterministic: bool = False
    f64_verify: bool = False

    def validate(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(
                f"learning_rate must be positive, got {self.learning_rate}")
        if self.target_size < 1:
            raise ValidationError(
                f"target_size must be >= 1, got {self.target_size}")
        return self

    def to_dict(self):
        payload = asdict(self)
        payload["fractions"] = list(self.fractions)
        seed = self.augmentation.rng_seed
        payload["augmentation"]["rng_seed"] = (
            list(seed) if isinstance(seed, tuple) else seed)
        return payload

    @classmethod
    def from_dict(cls, payload):
        payload = dict(payload)
        payload["seeds"] = Seeds(**payload["seeds"])
        aug = dict(payload["augmentation"])
        if isinstance(aug.get("rng_seed"), list):
            aug["rng_seed"] = tuple(aug["rng_seed"])
        payload["augmentation"] = datapipe.AugmentConfig(**aug)
        payload["fractions"] = tuple(payload["fractions"])
        return cls(**payload)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class RunReport:
    config: TrainConfig
    architecture_id: str
    class_names: tuple[str, ...]
    epochs: tuple[EpochLog, ...]
    test_metrics: optim.MetricsReport
    total_parameters: int
    trainable_parameters: int
    preprocessing: weights.Preprocessing
    artifacts: tuple[str, ...] = ()

    def as_dict(self):
        return {
            "config": self.config.to_dict(),
            "architecture_id": self.architecture_id,
            "class_names": list(self.class_names),
            "epochs": [asdict(log) for log in self.epochs],
            "test": self.test_metrics.as_dict(),
            "parameters": {
                "total": self.total_parameters,
                "trainable": self.trainable_parameters,
            },
            "preprocessing": {
                "scale": self.preprocessing.scale,
                "offsets": list(self.preprocessing.offsets),
            },
            "notes": dict(METRIC_NOTES),
            "artifacts": list(self.artifacts),
        }


@dataclass(frozen=True)
class DataSource:
    """A manifest plus its split assignment; ``loader`` optionally
    overrides image decoding (tests feed arrays), ``prefetch`` > 0 enables
    the pipeline's producer thread."""

    manifest: datapipe.DatasetManifest
    assignment: datapipe.SplitAssignment
    loader: object = None
    prefetch: int = 0


def load_source(data_dir, config, skip_report_path=None):
    """Scan a class-per-directory tree and split it per the config."""
    scan = datapipe.scan_dataset(data_dir)
    if skip_report_path is not None and scan.skipped:
        datapipe.save_skip_report(scan.skipped, skip_report_path)
    assignment = datapipe.stratified_split(
        scan.manifest, fractions=config.fractions, rng_seed=config.seeds.split)
    return DataSource(scan.manifest, assignment)


def canonical_architecture(name):
    """CLI-friendly aliases: bare mobilenet_v2 means width 1.0."""
    if name == "mobilenet_v2":
        return models.mobilenet_v2_architecture_id(1.0)
    return name


def prepare_graph(config, num_classes):
    """Build and populate the graph a config describes: scratch models get
    a seeded initialization, transfer runs load the base container, attach
    the default head and initialize only the head."""
    arch = canonical_architecture(config.architecture)
    if config.base_weights is None:
        graph = models.build_for_architecture(arch, num_classes=num_classes)
        graph.initialize(seed=config.seeds.init)
    else:
        container = weights.load_weights(config.base_weights)
        if arch not in (container.architecture_id,
                        container.architecture_id + "_transfer"):
            raise ValidationError(
                f"model {config.architecture!r} does not match the base "
                f"container's architecture {container.architecture_id!r}")
        base = weights.graph_for_container(container)
        if base.headed:
            raise ValidationError(
                "base container carries a classifier head; transfer "
                "training expects a headless base")
        head = models.default_head(num_classes, base.architecture_id)
        graph = models.attach_transfer_head(base, head,
                                            freeze_base=config.freeze_base)
        weights.apply_base_weights(graph, container)
        graph.initialize(seed=config.seeds.init, only_missing=True)
    if config.f64_verify:
        graph.to_dtype(np.float64)
    return graph


def _batches(graph, source, split, config, epoch, shuffle):
    mode = "container_declared" if graph.preprocessing is not None else "unit_scale"
    return datapipe.make_batches(
        source.manifest, source.assignment, split, config.batch_size,
        shuffle_seed=config.seeds.shuffle, epoch=epoch,
        target_size=config.target_size, normalize_mode=mode,
        preprocessing=graph.preprocessing, augment_config=config.augmentation,
        shuffle=shuffle, dtype=graph.dtype, loader=source.loader,
        prefetch=source.prefetch)


def train(graph, source, config):
    """Run the full regime and return (weight container, run report).

    The test split is consumed exactly once, by the final evaluation;
    every training batch is tag-checked on the way in.
    """
    config.validate()
    graph.require_populated()
    unfrozen_bn = [s.name for s in graph.layers
                   if s.kind == "batchnorm" and not s.frozen]
    if unfrozen_bn:
        raise ValidationError(
            "batchnorm runs inference-only statistics and cannot be "
            f"trained; freeze the base owning {unfrozen_bn[0]!r}")
    trainable = graph.trainable_names()
    if not trainable:
        raise ValidationError("graph has no trainable parameters")
    state = optim.init_adam(graph.params, trainable, config.learning_rate)

    logs = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        seen = 0
        loss_sum = 0.0
        correct = 0
        for index, batch in enumerate(
                _batches(graph, source, "train", config, epoch - 1, True)):
            if batch.split != "train":
                raise StateError(
                    f"split hygiene violated: {batch.split!r} batch reached "
                    "the gradient loop")
            try:
                probs, fwd = models.model_forward(
                    graph, batch.inputs, mode="train",
                    dropout_seed=config.seeds.dropout, step=step)
                loss, logit_grad = optim.cross_entropy_with_softmax(
                    fwd.logits, batch.labels)
                if not np.isfinite(loss):
                    raise NumericsError("loss is not finite")
                grads = models.model_backward(graph, fwd, logit_grad)
                optim.adam_step(graph.params, grads, state)
            except NumericsError as exc:
                raise NumericsError(
                    f"aborted at epoch {epoch}, batch {index}: {exc}") from None
            n = len(batch.labels)
            seen += n
            loss_sum += float(loss) * n
            correct += int((np.argmax(probs, axis=1) == batch.labels).sum())
            step += 1
        val = evaluate(graph, source, "val", config)
        seconds = 0.0 if config.deterministic else time.perf_counter() - started
        logs.append(EpochLog(epoch, loss_sum / seen, correct / seen,
                             val.loss, val.accuracy, seconds))

    test = evaluate(graph, source, "test", config)
    container = weights.container_from_graph(graph)
    report = RunReport(
        config=config,
        architecture_id=graph.architecture_id,
        class_names=tuple(source.manifest.class_names),
        epochs=tuple(logs),
        test_metrics=test,
        total_parameters=models.count_parameters(graph),
        trainable_parameters=models.count_parameters(graph, trainable_only=True),
        preprocessing=container.preprocessing,
    )
    return container, report


def evaluate(graph, source, split, config):
    """Infer-mode metrics over one split, unshuffled; deterministic for a
    populated graph."""
    graph.require_populated()
    all_probs = []
    all_labels = []
    for batch in _batches(graph, source, split, config, 0, False):
        probs, _ = models.model_forward(graph, batch.inputs, mode="infer")
        all_probs.append(np.asarray(probs, dtype=np.float64))
        all_labels.append(batch.labels)
    return optim.evaluate_metrics(np.concatenate(all_probs),
                                  np.concatenate(all_labels))


# ---------------------------------------------------------------------------
# hyperparameter sweep


@dataclass(frozen=True)
class SweepGrid:
    """One-axis-at-a-time grids; defaults are the reference regime's
    batch, epoch and learning-rate comparisons."""

    batch_sizes: tuple[int, ...] = (90, 50, 15)
    epoch_counts: tuple[int, ...] = (10, 4, 2)
    learning_rates: tuple[float, ...] = (0.01, 0.001, 0.0001)

    def validate(self):
        for axis in ("batch_sizes", "epoch_counts", "learning_rates"):
            if not getattr(self, axis):
                raise ValidationError(f"sweep grid axis {axis} is empty")
        return self


@dataclass
class SweepCell:
    value: float
    status: str
    final_train_accuracy: float | None = None
    final_train_loss: float | None = None
    final_val_accuracy: float | None = None
    final_val_loss: float | None = None
    test_accuracy: float | None = None
    test_loss: float | None = None


@dataclass
class SweepTable:
    axis: str
    cells: tuple[SweepCell, ...]


@dataclass
class SweepResult:
    config: TrainConfig
    tables: tuple[SweepTable, ...]

    def as_dict(self):
        return {
            "config": self.config.to_dict(),
            "tables": [
                {"axis": t.axis, "cells": [asdict(c) for c in t.cells]}
                for t in self.tables
            ],
        }


def sweep(source, config, grid=SweepGrid()):
    """Train one fresh model per cell, varying a single axis per table and
    holding every seed fixed. A numerically diverged cell is recorded as
    failed; the sweep continues."""
    grid.validate()
    config.validate()
    num_classes = source.manifest.num_classes
    tables = []
    for axis, values in (("batch_size", grid.batch_sizes),
                         ("epochs", grid.epoch_counts),
                         ("learning_rate", grid.learning_rates)):
        cells = []
        for value in values:
            cell_config = replace(config, **{axis: value})
            try:
                graph = prepare_graph(cell_config, num_classes)
                _, report = train(graph, source, cell_config)
            except NumericsError as exc:
                cells.append(SweepCell(value=value, status=f"failed: {exc}"))
                continue
            last = report.epochs[-1]
            cells.append(SweepCell(
                value=value,
                status="ok",
                final_train_accuracy=last.train_accuracy,
                final_train_loss=last.train_loss,
                final_val_accuracy=last.val_accuracy,
                final_val_loss=last.val_loss,
                test_accuracy=report.test_metrics.accuracy,
                test_loss=report.test_metrics.loss,
            ))
        tables.append(SweepTable(axis, tuple(cells)))
    return SweepResult(config, tuple(tables))


# ---------------------------------------------------------------------------
# report emission


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def emit_report(report, out_dir):
    """Write run.json plus the three CSVs. Content is a pure function of
    the report (no timestamps), so re-emitting is byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.artifacts = RUN_ARTIFACTS
    paths = [out / name for name in RUN_ARTIFACTS]

    (out / "run.json").write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")

    _write_csv(out / "epochs.csv",
               ["epoch", "train_loss", "train_acc", "val_loss", "val_acc",
                "seconds"],
               [[log.epoch, log.train_loss, log.train_accuracy, log.val_loss,
                 log.val_accuracy, log.seconds] for log in report.epochs])

    confusion = report.test_metrics.confusion
    _write_csv(out / "confusion.csv",
               ["true_class", *report.class_names],
               [[name, *confusion[i].tolist()]
                for i, name in enumerate(report.class_names)])

    plot_rows = []
    for log in report.epochs:
        plot_rows.append(["train_loss", log.epoch, log.train_loss])
        plot_rows.append(["train_acc", log.epoch, log.train_accuracy])
        plot_rows.append(["val_loss", log.epoch, log.val_loss])
        plot_rows.append(["val_acc", log.epoch, log.val_accuracy])
    _write_csv(out / "plotdata.csv", ["series", "epoch", "value"], plot_rows)

    return [str(p) for p in paths]


def emit_sweep(result, out_dir):
    """Write sweep.json plus one CSV per axis table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "sweep.json"]
    (out / "sweep.json").write_text(
        json.dumps(result.as_dict(), indent=2, sort_keys=True) + "\n")
    header = ["value", "final_train_accuracy", "final_val_accuracy",
              "test_accuracy", "test_loss", "status"]
    for table in result.tables:
        path = out / f"sweep_{table.axis}.csv"
        _write_csv(path, header,
                   [[c.value, c.final_train_accuracy, c.final_val_accuracy,
                     c.test_accuracy, c.test_loss, c.status]
                    for c in table.cells])
        paths.append(path)
    return [str(p) for p in paths]
