"""Command line entry points: train, predict, launch, kernel-check.

Exit codes: 0 ok, 2 bad configuration or dimensions, 3 file errors,
4 divergence, 5 communication failure.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from .blockadmm import DivergenceError, Model, SolverConfig, run_worker, solve
from .comm import CommError, SocketCommunicator
from .featuremap import TransformDescriptor, approximation_report
from .matrixio import (
    DatasetError,
    LabelEncoding,
    ModelFormatError,
    balanced_offsets,
    encode_labels,
    load_dataset,
    load_model,
    save_model,
)

log = logging.getLogger("kernelsplit")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_COMM = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _add_data_args(p):
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--format", default="csv", choices=["csv", "svmlight"])
    p.add_argument("--label-column", type=int, default=None,
                   help="csv label column (default: last)")
    p.add_argument("--n-features", type=int, default=None,
                   help="svmlight input dimension (default: largest index)")


def _add_train_args(p):
    _add_data_args(p)
    p.add_argument("--loss", default="hinge", choices=["squared", "hinge", "absolute"])
    p.add_argument("--task", default="auto", choices=["auto", "regression", "classification"],
                   help="auto: classification for hinge, regression otherwise")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--features", type=int, default=256, help="number of random features s")
    p.add_argument("--sigma", type=float, default=1.0, help="Gaussian kernel bandwidth")
    p.add_argument("--rows", type=int, default=1, help="row splits R (worker count)")
    p.add_argument("--cols", type=int, default=None, help="column splits C (default ceil(kappa*s/d))")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", default="inprocess", choices=["inprocess", "socket"])
    p.add_argument("--rendezvous", default="127.0.0.1:29500", help="host:port of rank 0")
    p.add_argument("--rank", type=int, default=0, help="this process's rank (socket backend)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--out", default="model.bin")
    p.add_argument("--log", default=None, help="iteration report file (default: <out>.log)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kernelsplit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train_args(sub.add_parser("train", help="fit a model"))
    _add_train_args(sub.add_parser("launch", help="spawn R socket-backend ranks and train"))

    p = sub.add_parser("predict", help="score a dataset with a saved model")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="-", help="predictions file ('-' for stdout)")

    p = sub.add_parser("kernel-check", help="random-feature kernel approximation error")
    _add_data_args(p)
    p.add_argument("--features", type=int, default=4096)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    return parser


# --------------------------------------------------------------------------


def _load(args):
    try:
        return load_dataset(args.data, args.format, label_column=args.label_column,
                            n_features=args.n_features)
    except FileNotFoundError as exc:
        raise CliError(f"cannot read {args.data}: {exc.strerror}", EXIT_IO) from None
    except (OSError, DatasetError) as exc:
        raise CliError(f"{args.data}: {exc}", EXIT_IO) from None


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(
            features=args.features, sigma=args.sigma, loss=args.loss, lam=args.lam,
            rho=args.rho, max_iter=args.iters, R=args.rows, C=args.cols,
            threads=args.threads, seed=args.seed, tol=args.tol, kappa=args.kappa,
            timeout=args.timeout,
        )
    except ValueError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None


def _encoding(args, labels) -> LabelEncoding:
    task = args.task
    if task == "auto":
        task = "classification" if args.loss == "hinge" else "regression"
    if task == "regression":
        if labels.dtype == object:
            raise CliError("regression needs numeric labels", EXIT_CONFIG)
        return LabelEncoding((), "regression")
    return LabelEncoding.fit(labels, "one-vs-all")


def _write_log(path, reports) -> None:
    with open(path, "w") as fh:
        for rep in reports:
            fh.write(rep.to_line() + "\n")


def cmd_train(args) -> int:
    cfg = _config(args)
    X, labels = _load(args)
    encoding = _encoding(args, labels)
    try:
        Y = encode_labels(labels, encoding)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    n, d = X.shape
    if cfg.R > n:
        raise CliError(f"cannot split {n} rows over {cfg.R} workers", EXIT_CONFIG)
    if cfg.loss == "hinge" and encoding.mode != "one-vs-all":
        raise CliError("hinge loss needs classification labels", EXIT_CONFIG)

    est = cfg.memory_estimate(n, d, Y.shape[1])
    print(
        f"memory estimate: {est.bytes_per_process:.0f} bytes per worker "
        f"({est.bytes_per_process / 2**20:.2f} MiB), C={cfg.column_blocks(d)}",
        flush=True,
    )

    if args.backend == "inprocess":
        model, reports = solve(cfg, X, Y, encoding)
    else:
        if not 0 <= args.rank < cfg.R:
            raise CliError(f"rank {args.rank} out of range for R={cfg.R}", EXIT_CONFIG)
        rows = balanced_offsets(n, cfg.R)
        sl = slice(rows[args.rank], rows[args.rank + 1])
        try:
            comm = SocketCommunicator(args.rank, cfg.R, args.rendezvous, cfg.timeout)
        except ValueError as exc:
            raise CliError(str(exc), EXIT_CONFIG) from None
        with comm:
            Wbar, reports, _ = run_worker(cfg, X[sl], Y[sl], comm, n)
        if args.rank != 0:
            return EXIT_OK
        model = Model(Wbar.copy(), cfg.descriptor(d), encoding, cfg.loss, d)

    try:
        save_model(args.out, model)
        _write_log(args.log or f"{args.out}.log", reports)
    except OSError as exc:
        raise CliError(f"cannot write output: {exc}", EXIT_IO) from None
    if reports and np.isfinite(reports[-1].objective):
        print(f"final objective: {reports[-1].objective!r}")
    return EXIT_OK


_TRAIN_FLAGS = {
    "data": "--data", "format": "--format", "label_column": "--label-column",
    "n_features": "--n-features", "loss": "--loss", "task": "--task", "lam": "--lambda",
    "rho": "--rho", "features": "--features", "sigma": "--sigma", "rows": "--rows",
    "cols": "--cols", "kappa": "--kappa", "threads": "--threads", "iters": "--iters",
    "tol": "--tol", "seed": "--seed", "rendezvous": "--rendezvous", "timeout": "--timeout",
    "out": "--out", "log": "--log",
}


def _train_argv(args) -> list[str]:
    argv = ["train", "--backend", "socket"]
    for attr, flag in _TRAIN_FLAGS.items():
        val = getattr(args, attr)
        if val is not None:
            argv += [flag, repr(val) if isinstance(val, float) else str(val)]
    return argv


def cmd_launch(args) -> int:
    _config(args)
    if not Path(args.data).exists():
        raise CliError(f"cannot read {args.data}", EXIT_IO)
    base = [sys.executable, "-m", "kernelsplit"] + _train_argv(args)
    procs = []
    for r in range(args.rows):
        procs.append(subprocess.Popen(base + ["--rank", str(r)]))
    codes = [None] * len(procs)
    deadline = time.monotonic() + max(args.timeout, 1.0) * 4 + 600
    while any(c is None for c in codes):
        for r, p in enumerate(procs):
            if codes[r] is None:
                codes[r] = p.poll()
        failed = [r for r, c in enumerate(codes) if c not in (None, 0)]
        if failed or time.monotonic() > deadline:
            for p in procs:
                if p.poll() is None:
                    p.kill()
            for p in procs:
                p.wait()
            if failed:
                log.error("rank(s) %s failed with exit code(s) %s", failed,
                          [codes[r] for r in failed])
                code = codes[failed[0]]
                return code if code in (EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE) else EXIT_COMM
            return EXIT_COMM
        time.sleep(0.02)
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model = load_model(args.model)
    except FileNotFoundError:
        raise CliError(f"cannot read {args.model}", EXIT_IO) from None
    except (OSError, ModelFormatError) as exc:
        raise CliError(f"{args.model}: {exc}", EXIT_IO) from None
    try:
        text = Path(args.data).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {args.data}: {exc.strerror}", EXIT_IO) from None

    if not text.strip():
        preds, truth = [], None
    else:
        X, truth = _load_for_predict(args, model)
        preds = model.predict(X)

    lines = "".join(f"{_fmt(p)}\n" for p in preds)
    if args.out == "-":
        sys.stdout.write(lines)
    else:
        try:
            Path(args.out).write_text(lines)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    if truth is not None and len(preds):
        if model.encoding.mode == "one-vs-all":
            acc = np.mean([_same(p, t) for p, t in zip(preds, truth)])
            print(f"accuracy: {acc:.2f}", file=sys.stderr if args.out == "-" else sys.stdout)
        else:
            rmse = float(np.sqrt(np.mean((np.asarray(preds) - np.asarray(truth, dtype=float)) ** 2)))
            print(f"rmse: {rmse!r}", file=sys.stderr if args.out == "-" else sys.stdout)
    return EXIT_OK


def _load_for_predict(args, model: Model):
    if args.format == "svmlight":
        X, labels = load_dataset(args.data, "svmlight", n_features=args.n_features or model.d)
        if X.shape[1] != model.d:
            raise CliError(f"data has {X.shape[1]} features, model expects {model.d}", EXIT_CONFIG)
        return X, labels
    try:
        # a csv with exactly d columns carries no labels
        raw = np.loadtxt(args.data, delimiter=",", ndmin=2, dtype=str)
    except ValueError as exc:
        raise CliError(f"{args.data}: {exc}", EXIT_IO) from None
    width = raw.shape[1]
    if width == model.d:
        try:
            return raw.astype(np.float64), None
        except ValueError as exc:
            raise CliError(f"{args.data}: {exc}", EXIT_IO) from None
    if width == model.d + 1:
        return _load(args)
    raise CliError(f"data has {width} columns, model expects {model.d} (+1 label)", EXIT_CONFIG)


def _fmt(p) -> str:
    if isinstance(p, (float, np.floating)):
        return repr(float(p))
    return str(p)


def _same(a, b) -> bool:
    try:
        return float(a) == float(b)
    except (TypeError, ValueError):
        return str(a) == str(b)


def cmd_kernel_check(args) -> int:
    X, _ = _load(args)
    try:
        desc = TransformDescriptor.create(args.features, 1, args.sigma, args.seed)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    rep = approximation_report(desc, X, args.pairs, seed=args.seed)
    print(f"features={args.features} sigma={args.sigma!r} pairs={rep.pairs} "
          f"max_abs_err={rep.max_abs_err!r} rms_err={rep.rms_err!r}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "launch": cmd_launch,
    "predict": cmd_predict,
    "kernel-check": cmd_kernel_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CommError as exc:
        print(f"error: communication failure: {exc}", file=sys.stderr)
        return EXIT_COMM


if __name__ == "__main__":
    sys.exit(main())
