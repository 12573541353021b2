"""Command-line entry point.

Subcommands: prep, train, eval, predict, inspect, gradcheck.  Exit codes:
0 success, 1 validation error, 2 I/O or file-format error, 3 internal
invariant failure.  All randomized behavior flows through --seed, which
defaults to 2020.
"""

import argparse
import os
import sys

import numpy as np

from . import datapipe, gradcheck, metrics, training, weights_io
from .errors import DataFormatError, FckitError, InternalError, ValidationError
from .model import DEFAULT_SEED, SEQ_LEN, count_params


class _Parser(argparse.ArgumentParser):
    # argument mistakes are validation errors: exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._print_and_code(message))

    def _print_and_code(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return 1


def _build_parser():
    parser = _Parser(prog="fckit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="filter, balance, and summarize a manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--filter", action="store_true",
                   help="drop label-incoherent samples")
    p.add_argument("--balance", choices=("cat", "dim", "none"), default="none",
                   help="oversample classes (cat) or valence bins (dim)")
    p.add_argument("--stats", action="store_true",
                   help="write distribution histograms")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--neutral-threshold", type=float, default=0.5)
    p.add_argument("--neutral-any", action="store_true",
                   help="neutral rule fires on either axis instead of both")

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("manifest")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--val-manifest")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--base-weights", help="fc checkpoint to grow the fcs model from")
    p.add_argument("--resume", help="checkpoint path to resume from")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--seed", type=int, help=f"default {DEFAULT_SEED}")
    p.add_argument("--tasks", help="comma list from arousal,valence,expression")
    p.add_argument("--variant", choices=("fc", "fcs"))
    p.add_argument("--freeze-trunk", action="store_true", default=None)
    p.add_argument("--seq-mode", choices=("sequential", "concat"))

    p = sub.add_parser("eval", help="score a weights file against a manifest")
    p.add_argument("weights")
    p.add_argument("manifest")
    p.add_argument("--oracle", action="store_true",
                   help="feed labels back as predictions (pipeline check)")
    p.add_argument("--f1-average", choices=("macro", "weighted"), default="macro")
    p.add_argument("--out-dir", help="also write metrics.csv and confusion.csv")

    p = sub.add_parser("predict", help="run one image (fc) or a 10-frame clip (fcs)")
    p.add_argument("weights")
    p.add_argument("images", nargs="+")

    p = sub.add_parser("inspect", help="describe a weights or config file")
    p.add_argument("target")

    p = sub.add_parser("gradcheck", help="finite-difference check of every primitive")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)

    return parser


# ---------------------------------------------------------------------------
# subcommands

def _cmd_prep(args):
    samples = datapipe.parse_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    print(f"parsed {len(samples)} samples")
    if args.filter:
        samples, report = datapipe.filter_coherence(
            samples,
            neutral_threshold=args.neutral_threshold,
            neutral_both=not args.neutral_any,
        )
        report_path = os.path.join(args.out_dir, "filter_report.txt")
        with open(report_path, "w") as fh:
            fh.write(report.text())
        print(f"filter kept {report.kept} of {report.input_count}"
              f" ({report.removed} removed)")
    if args.balance == "cat":
        samples = datapipe.balance_categorical(samples, args.seed)
        print(f"balanced classes to {len(samples)} samples")
    elif args.balance == "dim":
        samples = datapipe.balance_dimensional(samples, args.seed)
        print(f"balanced valence bins to {len(samples)} samples")
    out_manifest = os.path.join(args.out_dir, "prepped.csv")
    datapipe.write_manifest(samples, out_manifest)
    print(f"wrote {out_manifest}")
    if args.stats:
        report = datapipe.stats(samples)
        for name, text in (("stats.txt", report.text()),
                           ("class_hist.csv", report.class_csv()),
                           ("dim_hist.csv", report.dims_csv())):
            path = os.path.join(args.out_dir, name)
            with open(path, "w") as fh:
                fh.write(text)
            print(f"wrote {path}")
    return 0


def _train_overrides(args):
    return {
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "seed": args.seed,
        "tasks": args.tasks,
        "variant": args.variant,
        "freeze_trunk": args.freeze_trunk,
        "seq_mode": args.seq_mode,
    }


def _cmd_train(args):
    file_values = training.parse_config_file(args.config) if args.config else None
    config = training.build_config(file_values, _train_overrides(args))
    samples = datapipe.parse_manifest(args.manifest)
    val = datapipe.parse_manifest(args.val_manifest) if args.val_manifest else None
    cache = {}
    if config.variant == "fcs":
        samples = datapipe.window_sequences(samples, length=SEQ_LEN, stride=SEQ_LEN)
        if val is not None:
            val = datapipe.window_sequences(val, length=SEQ_LEN, stride=SEQ_LEN)
        print(f"windowed into {len(samples)} clips")
    result = training.train(
        config, samples, val_items=val, out_dir=args.out_dir,
        base_weights=args.base_weights, resume_from=args.resume, cache=cache,
    )
    print(f"trained {result.epochs_run} epochs, final loss {result.final_loss:.6f}")
    print(f"log {result.log_path}")
    print(f"checkpoint {result.last_path}")
    if result.best_path:
        print(f"best {result.best_path} (val loss {result.best_val_loss:.6f})")
    return 0


def _oracle_report(samples, k, f1_average):
    labeled = [s for s in samples if s.expression is not None]
    if not labeled:
        raise ValidationError("evaluation set has no expression labels")
    gc = np.array([s.expression for s in labeled])
    score, conf = metrics.f1_macro(gc, gc, k, average=f1_average)
    ga = np.array([s.arousal for s in samples])
    gv = np.array([s.valence for s in samples])
    return metrics.MetricsReport(
        ccc_arousal=metrics.ccc(ga, ga),
        ccc_valence=metrics.ccc(gv, gv),
        accuracy=metrics.accuracy(gc, gc),
        f1=score,
        confusion=conf,
        n=len(labeled),
    )


def _cmd_eval(args):
    samples = datapipe.parse_manifest(args.manifest)
    if args.oracle:
        report = _oracle_report(samples, k=len(datapipe.CLASS_NAMES),
                                f1_average=args.f1_average)
    else:
        graph = weights_io.graph_from_weights(args.weights)
        items = samples
        if graph.variant == "fcs":
            items = datapipe.window_sequences(samples, length=SEQ_LEN, stride=SEQ_LEN)
        report = training.evaluate(graph, items, f1_average=args.f1_average)
    print("Arousal,Valence,F1-Score,Accuracy")
    print(report.table_row())
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        for name, text in (("metrics.csv", report.metrics_csv()),
                           ("confusion.csv", report.confusion_csv())):
            with open(os.path.join(args.out_dir, name), "w") as fh:
                fh.write(text)
    return 0


def _cmd_predict(args):
    graph = weights_io.graph_from_weights(args.weights)
    images = [datapipe.decode_image(p) for p in args.images]
    if graph.variant == "fcs":
        if len(images) != SEQ_LEN:
            raise ValidationError(
                f"fcs model needs exactly {SEQ_LEN} frames, got {len(images)}"
            )
        batch = np.stack(images)[None]
        preds = graph.forward_sequence(batch)
    else:
        if len(images) != 1:
            raise ValidationError(f"fc model takes one image, got {len(images)}")
        preds = graph.forward_frame(np.stack(images))
    triple = preds.triple(0)
    cls = int(np.argmax(triple.class_distribution))
    conf = float(triple.class_distribution[cls])
    print(f"{triple.arousal:.4f},{triple.valence:.4f},{cls},{conf:.4f}")
    return 0


def _looks_like_weights(path):
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == weights_io.MAGIC
    except OSError:
        return False


def _cmd_inspect(args):
    if args.target.endswith(".fcw") or _looks_like_weights(args.target):
        graph = weights_io.graph_from_weights(args.target)
        variant = graph.variant
        print(f"variant: {variant}")
        print(f"classes: {graph.class_count}")
        if variant == "fcs":
            print(f"sequence mode: {graph.seq_mode}")
        print(f"{'layer':<16} {'kind':<8} {'detail':<20} params")
        for name, kind, detail, n in graph.layer_table():
            print(f"{name:<16} {kind:<8} {detail:<20} {n}")
        print(f"total parameters: {count_params(graph)}")
        return 0
    # fall back to config inspection
    values = training.parse_config_file(args.target)
    config = training.build_config(values)
    print(f"resolved config from {args.target}")
    for key in sorted(training._CONFIG_PARSERS):
        value = getattr(config, key)
        if isinstance(value, training.TaskMask):
            value = value.names()
        print(f"{key} = {value}")
    return 0


def _cmd_gradcheck(args):
    reports = gradcheck.run_suite(seeds=args.seeds, tol=args.tolerance)
    failed = []
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.op:<14} max rel err {r.max_rel_err:.3e}  {status}")
        if not r.passed:
            failed.append(r.op)
    if failed:
        raise InternalError(f"gradient check failed: {', '.join(failed)}")
    print(f"all primitives within {args.tolerance:g}")
    return 0


_COMMANDS = {
    "prep": _cmd_prep,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "inspect": _cmd_inspect,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (DataFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FckitError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
