"""Command-line entry point: ``gndv <command> [flags]``.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import kernels
from .data import Dataset, load_csv, load_idx, minmax_scale, split, subsample
from .evaluation import classification_report, knn_predict, trustworthiness
from .generation import GenStrategy, generate, grid_map, to_bytes, write_pgm
from .model import (
    SUPERVISED,
    UNSUPERVISED,
    ModelConfig,
    embedding,
    load_checkpoint,
    save_checkpoint,
)
from .numeric import RandomSource
from .training import GRADCHECK_TOL, gradcheck, train

log = logging.getLogger("gndv")

MODE_FLAGS = {"unsup": UNSUPERVISED, "sup": SUPERVISED}


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be >= 1")
    return values


def _fraction(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {value}")
    return value


def _fmt(x):
    return "%.17g" % x


# -- data ---------------------------------------------------------------------

def _add_data_args(p, required=True):
    p.add_argument("--data", required=required, help="IDX image file or CSV")
    p.add_argument("--data-format", choices=["idx", "csv"], help="default: from the file extension")
    p.add_argument("--labels", nargs="?", const="last",
                   help="IDX label file, or bare flag for CSV (last column holds labels)")
    p.add_argument("--no-scale", action="store_true", help="skip MinMax scaling of CSV data")
    p.add_argument("--subsample-fraction", type=_fraction, default=1.0)


def load_dataset(args) -> Dataset:
    path = Path(args.data)
    fmt = args.data_format or ("csv" if path.suffix.lower() in (".csv", ".txt") else "idx")
    if fmt == "idx":
        labels = None if args.labels in (None, "last") else args.labels
        ds = load_idx(path, labels)
    else:
        ds = load_csv(path, has_labels=args.labels is not None)
        if not args.no_scale:
            ds = minmax_scale(ds)
    if args.subsample_fraction < 1.0:
        # separate stream so the subset does not depend on training draws
        ds = subsample(ds, args.subsample_fraction, RandomSource(args.seed ^ 0x5B5A))
    return ds


def read_embedding_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    try:
        [float(c) for c in header]
    except ValueError:
        rows = rows[1:]
    else:
        header = None
    arr = np.array(rows, dtype=np.float64)
    if header is not None and header[-1] == "label":
        arr = arr[:, :-1]
    return arr


# -- manifest -----------------------------------------------------------------

class Run:
    """Collects what a command did and writes ``manifest.json`` on exit."""

    def __init__(self, command, args):
        self.command = command
        self.args = {k: v for k, v in vars(args).items() if k != "func"}
        self.out_dir = Path(args.out_dir)
        self.outputs = []
        self.extra = {}
        self.started = time.perf_counter()
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def write(self):
        manifest = {
            "command": self.command,
            "args": self.args,
            "seed": self.args.get("seed"),
            "kernel_backend": kernels.BACKEND,
            "outputs": self.outputs,
            **self.extra,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
        # timing stays out of the manifest so reruns are byte-identical
        log.info("%s finished in %.3fs", self.command, time.perf_counter() - self.started)


# -- commands -----------------------------------------------------------------

def cmd_train(args, run):
    ds = load_dataset(args)
    config = ModelConfig(
        latent_dim=args.latent_dim,
        hidden_widths=tuple(args.hidden),
        beta=args.beta,
        gamma1=args.gamma1,
        gamma2=args.gamma2,
        gamma3=args.gamma3,
        gamma4=args.gamma4,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        mode=MODE_FLAGS[args.mode],
        seed=args.seed,
        tol=args.tol,
        patience=args.patience,
    )
    run.extra["config"] = asdict(config)
    run.extra["dataset"] = {"n": ds.n, "d": ds.d, "c": ds.c}
    params, history = train(ds, config,
                            callback=lambda e, lb: log.info("epoch %d  loss %.6g", e, lb.total))
    save_checkpoint(params, run.path("checkpoint.gndv"))
    history.write_csv(run.path("history.csv"))
    run.extra["epochs_completed"] = len(history)
    print(f"trained {len(history)} epochs, final loss {history.totals()[-1] if len(history) else float('nan'):.6g}")


def _embedding_for(params, ds):
    if params.mode != UNSUPERVISED:
        raise CommandError("embedding export needs an unsupervised checkpoint")
    if params.n_inputs != ds.n or params.output_dim != ds.d:
        raise CommandError(f"checkpoint is for n={params.n_inputs}, d={params.output_dim}; "
                           f"dataset has n={ds.n}, d={ds.d}")
    return embedding(params)


def cmd_embed(args, run):
    ds = load_dataset(args)
    E = _embedding_for(load_checkpoint(args.checkpoint), ds)
    with open(run.path("embedding.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = [f"dim{j}" for j in range(E.shape[1])]
        if ds.labels is not None:
            writer.writerow(header + ["label"])
            writer.writerows([_fmt(v) for v in row] + [int(lab)] for row, lab in zip(E, ds.labels))
        else:
            writer.writerow(header)
            writer.writerows([_fmt(v) for v in row] for row in E)


def cmd_generate(args, run):
    params = load_checkpoint(args.checkpoint)
    strategy = GenStrategy.parse(args.strategy)
    samples = generate(params, strategy, args.count, RandomSource(args.seed))
    with open(run.path("samples.csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows([_fmt(v) for v in row] for row in samples)
    if args.image_h and args.image_w:
        if args.image_h * args.image_w != params.output_dim:
            raise CommandError(f"{args.image_h}x{args.image_w} does not match d={params.output_dim}")
        for i, row in enumerate(samples):
            write_pgm(to_bytes(row).reshape(args.image_h, args.image_w), run.path(f"sample_{i:04d}.pgm"))


def cmd_gridmap(args, run):
    params = load_checkpoint(args.checkpoint)
    if params.latent_dim != 2:
        raise CommandError(f"grid maps need k=2, checkpoint has k={params.latent_dim}")
    if args.embedding:
        E = read_embedding_csv(args.embedding)
    else:
        E = (params.mu_table + params.mu_bias[:, None]).T
    image = grid_map(params, E, args.grid_res, args.image_h, args.image_w)
    write_pgm(image, run.path("gridmap.pgm"))


def cmd_eval(args, run):
    ds = load_dataset(args)
    if args.embedding:
        E = read_embedding_csv(args.embedding)
        if E.shape[0] != ds.n:
            raise CommandError(f"embedding has {E.shape[0]} rows, dataset has {ds.n}")
    elif args.checkpoint:
        E = _embedding_for(load_checkpoint(args.checkpoint), ds)
    else:
        raise CommandError("need --checkpoint or --embedding")
    rows = []
    knn_k = args.knn_k if args.knn_k is not None else ([5] if ds.labels is not None else [])
    if knn_k:
        if ds.labels is None:
            raise CommandError("k-NN evaluation needs labelled data")
        emb_ds = Dataset(X=E, labels=ds.labels, n_classes=ds.c)
        train_part, test_part = split(emb_ds, args.split, RandomSource(args.seed))
        for k in knn_k:
            pred = knn_predict(train_part.X, train_part.labels, test_part.X, k)
            report = classification_report(pred, test_part.labels, ds.c)
            rows += [(f"knn_{name}", k, value) for name, value in report.metrics().items()]
    for k in args.trust_k or []:
        rows.append(("trustworthiness", k, trustworthiness(ds.X, E, k).value))
    with open(run.path("metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "parameter", "value"])
        writer.writerows((m, p, _fmt(v)) for m, p, v in rows)
    for m, p, v in rows:
        print(f"{m}[{p}] = {v:.6f}")


def cmd_gradcheck(args, run):
    errors = gradcheck(args.trials, seed=args.seed, corrupt=args.corrupt)
    worst = max(errors)
    run.extra["errors"] = errors
    print(f"max relative error over {args.trials} trials: {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    if worst > GRADCHECK_TOL:
        raise CommandError("gradient check failed")


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    defaults = ModelConfig()
    parser = argparse.ArgumentParser(prog="gndv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        return p

    p = command("train", cmd_train, "fit a model and write a checkpoint")
    _add_data_args(p)
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default="unsup")
    p.add_argument("--latent-dim", type=_positive_int, default=defaults.latent_dim)
    p.add_argument("--hidden", type=_int_list, default=list(defaults.hidden_widths),
                   help="comma-separated hidden widths")
    p.add_argument("--beta", type=float, default=defaults.beta)
    for g in ("gamma1", "gamma2", "gamma3", "gamma4"):
        p.add_argument(f"--{g}", type=float, default=getattr(defaults, g))
    p.add_argument("--lr", type=float, default=defaults.learning_rate)
    p.add_argument("--batch-size", type=_positive_int, default=defaults.batch_size)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--tol", type=float, default=defaults.tol)
    p.add_argument("--patience", type=int, default=defaults.patience,
                   help="saturation window in epochs; 0 disables early stopping")

    p = command("embed", cmd_embed, "export the per-sample latent means")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)

    p = command("generate", cmd_generate, "sample new data points")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--strategy", default="posterior", help="prior | posterior | class:<id>")
    p.add_argument("--count", type=_positive_int, default=10)
    p.add_argument("--image-h", type=_positive_int)
    p.add_argument("--image-w", type=_positive_int)

    p = command("gridmap", cmd_gridmap, "decode a lattice over the 2-D embedding into a tiled PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embedding", help="embedding CSV defining the bounding box (default: checkpoint means)")
    p.add_argument("--grid-res", type=int, default=30)
    p.add_argument("--image-h", type=_positive_int, default=28)
    p.add_argument("--image-w", type=_positive_int, default=28)

    p = command("eval", cmd_eval, "k-NN metrics and trustworthiness of an embedding")
    _add_data_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--embedding", help="embedding CSV instead of a checkpoint")
    p.add_argument("--knn-k", type=_int_list, help="default: 5 when labels are available")
    p.add_argument("--trust-k", type=_int_list, default=[5])
    p.add_argument("--split", type=float, default=0.8)

    p = command("gradcheck", cmd_gradcheck, "compare backprop with finite differences")
    p.add_argument("--trials", type=_positive_int, default=5)
    p.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "gridmap" and args.grid_res < 2:
        parser.error("--grid-res must be >= 2")
    run = Run(args.command, args)
    try:
        args.func(args, run)
    except (CommandError, ValueError, OSError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.extra["error"] = str(exc)
        run.write()
        return 1
    run.write()
    return 0


if __name__ == "__main__":
    sys.exit(main())
