"""Command-line entry point.

Subcommands: split, train, eval, predict, sweep, inspect-weights. Every
run prints its resolved configuration to stdout before doing work, so a
run is reproducible from its own log. Exit codes: 0 success, 1 validation
error (including bad flags), 2 I/O error, 3 numerical abort.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, models, training, weights
from .errors import EngineError, NumericsError, ValidationError


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; this artifact reserves 2
    for I/O, so flag problems are rethrown as validation errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _add_train_flags(parser):
    parser.add_argument("--model", default=None,
                        help="architecture id: paper_cnn, mini_cnn, vgg16, "
                             "mobilenet_v2 (or an explicit mobilenet_v2_wNNN)")
    parser.add_argument("--base-weights", default=None,
                        help="headless base container for transfer learning")
    parser.add_argument("--freeze-base", action=argparse.BooleanOptionalAction,
                        default=True)
    parser.add_argument("--batch-size", type=int, default=90)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--seed-split", type=int, default=0)
    parser.add_argument("--seed-shuffle", type=int, default=0)
    parser.add_argument("--seed-init", type=int, default=0)
    parser.add_argument("--seed-dropout", type=int, default=0)
    parser.add_argument("--augment", action="store_true")
    parser.add_argument("--deterministic", action="store_true")
    parser.add_argument("--f64-verify", action="store_true",
                        help="run the engine in 64-bit floats")


def build_parser():
    parser = _Parser(prog="aerialcnn",
                     description="Aerial landscape classification engine")
    sub = parser.add_subparsers(dest="command", required=True)

    split = sub.add_parser("split", help="scan a dataset and write the split")
    split.add_argument("--data", required=True)
    split.add_argument("--out", required=True)
    split.add_argument("--seed-split", type=int, default=0)
    split.set_defaults(func=_cmd_split)

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True,
                       help="directory for run artifacts and weights")
    train.add_argument("--weights", default=None,
                       help="output container path (default <out>/weights.bin)")
    _add_train_flags(train)
    train.set_defaults(func=_cmd_train)

    evaluate = sub.add_parser("eval", help="evaluate a weight container")
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--weights", required=True)
    evaluate.add_argument("--split", default="test",
                          choices=sorted(data.SPLIT_TAGS))
    evaluate.add_argument("--out", default=None,
                          help="optional directory for metrics.json")
    evaluate.add_argument("--batch-size", type=int, default=90)
    evaluate.add_argument("--seed-split", type=int, default=0)
    evaluate.add_argument("--f64-verify", action="store_true")
    evaluate.set_defaults(func=_cmd_eval)

    predict = sub.add_parser("predict", help="classify images")
    predict.add_argument("--weights", required=True)
    predict.add_argument("--class-names", default=None,
                         help="comma-separated names; default class_<k>")
    predict.add_argument("--f64-verify", action="store_true")
    predict.add_argument("images", nargs="+")
    predict.set_defaults(func=_cmd_predict)

    sweep = sub.add_parser("sweep", help="run the one-axis hyperparameter sweep")
    sweep.add_argument("--data", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--batch-sizes", default="90,50,15",
                       help="comma-separated batch-size axis")
    sweep.add_argument("--epoch-counts", default="10,4,2",
                       help="comma-separated epoch axis")
    sweep.add_argument("--learning-rates", default="0.01,0.001,0.0001",
                       help="comma-separated learning-rate axis")
    _add_train_flags(sweep)
    sweep.set_defaults(func=_cmd_sweep)

    inspect = sub.add_parser("inspect-weights", help="describe a container")
    inspect.add_argument("--weights", required=True)
    inspect.set_defaults(func=_cmd_inspect)

    return parser


def _print_config(payload):
    print("resolved config:")
    print(json.dumps(payload, indent=2, sort_keys=True))


def _resolve_architecture(args):
    if args.model is not None:
        return training.canonical_architecture(args.model)
    if args.base_weights is not None:
        return weights.load_weights(args.base_weights).architecture_id
    return "paper_cnn"


def _train_config(args, architecture, target_size):
    return training.TrainConfig(
        architecture=architecture,
        batch_size=args.batch_size,
        epochs=args.epochs,
        learning_rate=args.lr,
        seeds=training.Seeds(split=args.seed_split, shuffle=args.seed_shuffle,
                             init=args.seed_init, dropout=args.seed_dropout),
        augmentation=data.AugmentConfig(enabled=args.augment),
        base_weights=args.base_weights,
        freeze_base=args.freeze_base,
        target_size=target_size,
        deterministic=args.deterministic,
        f64_verify=args.f64_verify,
    ).validate()


def _target_size_for(architecture):
    probe = models.build_for_architecture(architecture, num_classes=4)
    return probe.input_shape[1]


# ---------------------------------------------------------------------------
# subcommands


def _cmd_split(args):
    config = training.TrainConfig(seeds=training.Seeds(split=args.seed_split))
    _print_config({"command": "split", "data": args.data, "out": args.out,
                   "seed_split": args.seed_split,
                   "fractions": list(config.fractions)})
    scan = data.scan_dataset(args.data)
    assignment = data.stratified_split(scan.manifest,
                                       fractions=config.fractions,
                                       rng_seed=args.seed_split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.save_manifest_csv(scan.manifest, out / "manifest.csv")
    data.save_split_csv(scan.manifest, assignment, out / "splits.csv")
    if scan.skipped:
        data.save_skip_report(scan.skipped, out / "skipped.csv")
        print(f"skipped {len(scan.skipped)} unreadable files "
              f"(see {out / 'skipped.csv'})")
    for tag, count in sorted(assignment.counts().items()):
        print(f"{tag}: {count}")
    return 0


def _cmd_train(args):
    architecture = _resolve_architecture(args)
    config = _train_config(args, architecture, _target_size_for(architecture))
    payload = config.to_dict()
    payload.update({"command": "train", "data": args.data, "out": args.out})
    _print_config(payload)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    source = training.load_source(args.data, config,
                                  skip_report_path=out / "skipped.csv")
    graph = training.prepare_graph(config, source.manifest.num_classes)
    container, report = training.train(graph, source, config)

    paths = training.emit_report(report, out)
    weights_path = Path(args.weights) if args.weights else out / "weights.bin"
    weights.save_weights(container, weights_path)
    paths.append(str(weights_path))
    last = report.epochs[-1]
    print(f"final train accuracy: {last.train_accuracy:.4f}")
    print(f"final val accuracy:   {last.val_accuracy:.4f}")
    print(f"test accuracy:        {report.test_metrics.accuracy:.4f}")
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_eval(args):
    container = weights.load_weights(args.weights)
    graph = weights.graph_for_container(container)
    weights.apply_weights(graph, container)
    if args.f64_verify:
        graph.to_dtype(np.float64)
    config = training.TrainConfig(
        architecture=graph.architecture_id,
        batch_size=args.batch_size,
        seeds=training.Seeds(split=args.seed_split),
        target_size=graph.input_shape[1],
        f64_verify=args.f64_verify,
    ).validate()
    payload = config.to_dict()
    payload.update({"command": "eval", "data": args.data,
                    "weights": args.weights, "split": args.split})
    _print_config(payload)

    source = training.load_source(args.data, config)
    metrics = training.evaluate(graph, source, args.split, config)
    print(json.dumps(metrics.as_dict(), indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(
            json.dumps(metrics.as_dict(), indent=2, sort_keys=True) + "\n")
        print(f"wrote {out / 'metrics.json'}")
    return 0


def _cmd_predict(args):
    container = weights.load_weights(args.weights)
    graph = weights.graph_for_container(container)
    weights.apply_weights(graph, container)
    if args.f64_verify:
        graph.to_dtype(np.float64)
    _print_config({"command": "predict", "weights": args.weights,
                   "images": list(args.images),
                   "class_names": args.class_names,
                   "architecture_id": graph.architecture_id})

    target = graph.input_shape[1]
    names = None
    if graph.headed:
        k = graph.num_classes
        names = (args.class_names.split(",") if args.class_names
                 else [f"class_{i}" for i in range(k)])
        if len(names) != k:
            raise ValidationError(
                f"--class-names lists {len(names)} names for {k} classes")

    for path in args.images:
        image = data.load_image(path)
        pixels = data.resize_to_target(data.square_crop(image), target)
        x = data.normalize(pixels, "container_declared", graph.preprocessing)
        batch = x[None].astype(graph.dtype)
        output, _ = models.model_forward(graph, batch, mode="infer")
        values = np.asarray(output[0])
        if values.ndim == 3:
            # Headless base: emit the channel-mean feature vector so the
            # line is layout-independent and comparable across stacks.
            values = values.mean(axis=(1, 2))
        values = values.reshape(-1)
        rendered = " ".join(f"{v:.9g}" for v in values)
        if graph.headed:
            print(f"{path} {names[int(np.argmax(values))]} {rendered}")
        else:
            print(f"{path} {rendered}")
    return 0


def _split_axis(raw, cast, flag):
    try:
        values = tuple(cast(part) for part in raw.split(",") if part)
    except ValueError:
        raise ValidationError(f"{flag} expects comma-separated numbers, "
                              f"got {raw!r}") from None
    return values


def _cmd_sweep(args):
    architecture = _resolve_architecture(args)
    config = _train_config(args, architecture, _target_size_for(architecture))
    grid = training.SweepGrid(
        batch_sizes=_split_axis(args.batch_sizes, int, "--batch-sizes"),
        epoch_counts=_split_axis(args.epoch_counts, int, "--epoch-counts"),
        learning_rates=_split_axis(args.learning_rates, float,
                                   "--learning-rates"),
    ).validate()
    payload = config.to_dict()
    payload.update({"command": "sweep", "data": args.data, "out": args.out,
                    "batch_sizes": list(grid.batch_sizes),
                    "epoch_counts": list(grid.epoch_counts),
                    "learning_rates": list(grid.learning_rates)})
    _print_config(payload)

    source = training.load_source(args.data, config)
    result = training.sweep(source, config, grid)
    paths = training.emit_sweep(result, args.out)
    for table in result.tables:
        print(f"table {table.axis}:")
        for cell in table.cells:
            if cell.status == "ok":
                print(f"  {cell.value}: train {cell.final_train_accuracy:.4f} "
                      f"val {cell.final_val_accuracy:.4f} "
                      f"test {cell.test_accuracy:.4f}")
            else:
                print(f"  {cell.value}: {cell.status}")
    for path in paths:
        print(f"wrote {path}")
    return 0


def _cmd_inspect(args):
    container = weights.load_weights(args.weights)
    _print_config({"command": "inspect-weights", "weights": args.weights})
    print(f"architecture: {container.architecture_id}")
    pre = container.preprocessing
    print(f"preprocessing: scale {pre.scale:.9g}, offsets "
          f"({pre.offsets[0]:.9g}, {pre.offsets[1]:.9g}, {pre.offsets[2]:.9g})")
    print(f"entries: {len(container.entries)}")
    for name, value in container.entries.items():
        shape = "x".join(str(d) for d in value.shape)
        print(f"  {name}  {shape}  ({value.size:,})")
    print(f"total parameters: {container.total_parameters:,}")
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except NumericsError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
