"""Command-line front end: ``rotbnn {train,eval,analyze,bench}``.

Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, seeds
from .data import (
    CIFAR10_MEAN,
    CIFAR10_STD,
    MNIST_MEAN,
    MNIST_STD,
    DatasetFormatError,
    load_cifar10,
    load_mnist,
    synthetic_classification,
    synthetic_gaussian_weights,
)
from .linalg import backend_name, kronecker
from .metrics import emit_reports, flip_rate
from .nn import VARIANTS, NonFiniteError, TrainConfig, evaluate, train
from .nn.checkpoint import (
    CheckpointError,
    load_checkpoint,
    read_blob_file,
    read_checkpoint_blobs,
    save_checkpoint,
)
from .quantize import quantization_error
from .rotation import RotationPair, align, reshape_to_block, rotate_flat, sign

log = logging.getLogger("rotbnn")

VARIANT_CHOICES = ("rbnn",) + tuple(VARIANTS) + ("baseline-xnor", "xnor")
DATASETS = ("mnist", "cifar10", "synthetic")
DEFAULT_ARCH = {
    "mnist": "mlp:784-256-256-10",
    "cifar10": "cnn:3x32x32-32-64-10",
    "synthetic": "mlp:16-32-32-4",
}
MANIFEST_NAME = "run.cfg"


class UsageError(Exception):
    """Bad flags or config; maps to exit status 2."""


@dataclass
class DataConfig:
    dataset: str = "mnist"
    data_dir: str = ""
    train_limit: int = 0
    test_limit: int = 0
    synthetic_n: int = 512
    mean: str = ""
    std: str = ""

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise UsageError(f"dataset must be one of {', '.join(DATASETS)}, got {self.dataset!r}")

    def norm_constants(self) -> tuple[tuple, tuple]:
        defaults = {"mnist": (MNIST_MEAN, MNIST_STD), "cifar10": (CIFAR10_MEAN, CIFAR10_STD),
                    "synthetic": ((0.0,), (1.0,))}[self.dataset]
        mean = _floats(self.mean) if self.mean else defaults[0]
        std = _floats(self.std) if self.std else defaults[1]
        return mean, std


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _convert(cls, key: str, raw: str):
    types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
    if key not in types:
        raise UsageError(f"unknown config key {key!r}")
    kind = types[key]
    try:
        if kind is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        return kind(raw)
    except (KeyError, ValueError):
        raise UsageError(f"config key {key!r}: cannot read {raw!r} as {kind.__name__}") from None


def read_config(path) -> tuple[dict, dict]:
    """``[train]`` and ``[data]`` sections of an INI file as typed dicts."""
    cp = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise UsageError(f"--config: {exc}") from None
    for section in cp.sections():
        if section not in ("train", "data", "meta"):
            raise UsageError(f"unknown config section [{section}]")
    train_kw = {k: _convert(TrainConfig, k, v) for k, v in cp.items("train")} if cp.has_section("train") else {}
    data_kw = {k: _convert(DataConfig, k, v) for k, v in cp.items("data")} if cp.has_section("data") else {}
    return train_kw, data_kw


def resolve(args) -> tuple[TrainConfig, DataConfig]:
    """Defaults < config file < command-line flags."""
    train_kw, data_kw = read_config(args.config) if args.config else ({}, {})
    for flag, key in (("seed", "seed"), ("variant", "variant"), ("epochs", "epochs"),
                      ("batch_size", "batch_size"), ("lr", "lr"), ("arch", "arch")):
        if getattr(args, flag, None) is not None:
            train_kw[key] = getattr(args, flag)
    for flag in ("dataset", "data_dir", "train_limit", "test_limit"):
        if getattr(args, flag, None) is not None:
            data_kw[flag] = getattr(args, flag)
    data = DataConfig(**data_kw)
    train_kw.setdefault("arch", DEFAULT_ARCH[data.dataset])
    try:
        cfg = TrainConfig(**train_kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg, data


def write_manifest(path: Path, cfg: TrainConfig, data: DataConfig, started: str):
    mean, std = data.norm_constants()
    cp = configparser.ConfigParser()
    cp["train"] = {k: str(v) for k, v in cfg.to_dict().items()}
    data_dict = asdict(data)
    data_dict["mean"] = ",".join(repr(m) for m in mean)
    data_dict["std"] = ",".join(repr(s) for s in std)
    cp["data"] = {k: str(v) for k, v in data_dict.items()}
    cp["meta"] = {"version": __version__, "backend": backend_name(), "started": started,
                  "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)


def load_datasets(data: DataConfig, classes_hint: int = 4):
    mean, std = data.norm_constants()
    if data.dataset == "synthetic":
        features = 16
        tr = synthetic_classification(data.synthetic_n, features, classes_hint, seed=0, split="train")
        te = synthetic_classification(max(data.synthetic_n // 2, 1), features, classes_hint, seed=0, split="test")
    else:
        if not data.data_dir:
            raise UsageError(f"--data-dir is required for --dataset {data.dataset}")
        root = Path(data.data_dir)
        if not root.is_dir():
            raise UsageError(f"--data-dir: {root} does not exist")
        try:
            if data.dataset == "mnist":
                tr, te = (load_mnist(root, s, mean=mean, std=std) for s in ("train", "test"))
            else:
                tr, te = (load_cifar10(root, s, mean=mean, std=std) for s in ("train", "test"))
        except FileNotFoundError as exc:
            raise UsageError(f"--data-dir: missing file {exc.filename}") from None
    if data.train_limit:
        tr = tr.subset(data.train_limit)
    if data.test_limit:
        te = te.subset(data.test_limit)
    return tr, te


def _classes_of(arch: str) -> int:
    try:
        return int(arch.rsplit("-", 1)[1])
    except (IndexError, ValueError):
        raise UsageError(f"cannot parse architecture {arch!r}") from None


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg, data = resolve(args)
    tr, te = load_datasets(data, _classes_of(cfg.arch))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    log.info("training %s (%s) on %s: %d train / %d test samples", cfg.arch, cfg.variant,
             data.dataset, len(tr), len(te))
    try:
        net, records = train(cfg, tr, te)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    emit_reports(records, out)
    save_checkpoint(net, out / "checkpoint")
    write_manifest(out / MANIFEST_NAME, cfg, data, started)
    if records:
        last = records[-1]
        print(f"epoch {last.epoch}: loss {last.loss:.4f} train_acc {last.train_acc:.4f} "
              f"test_acc {last.test_acc:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    data = DataConfig(dataset=args.dataset or "mnist", data_dir=args.data_dir or "",
                      test_limit=args.test_limit or 0)
    _, te = load_datasets(data, _classes_of(net.arch))
    acc = evaluate(net, te)
    print(f"test_acc {acc:.4f} ({len(te)} samples, variant {net.variant.name}, epoch {net.epoch})")
    return 0


ANALYZE_COLUMNS = ("tensor", "n", "n1", "n2", "cos_before", "cos_after", "qerr_base", "qerr_rot",
                   "flip_rate", "objective_first", "objective_last")


def analyze_tensor(name: str, w: np.ndarray, cycles: int, init: str, seed: int) -> dict:
    block = reshape_to_block(w, (w.size,), name)
    n1, n2 = block.matrix.shape
    warm = None
    if init == "random":
        warm = RotationPair.random(n1, n2, seeds.purpose_rng(seed, seeds.ROTATION))
    res = align(block, cycles=cycles, warm_start=warm)
    rotated = rotate_flat(w, res.rotation)
    trace = res.objective_trace
    return {
        "tensor": name, "n": w.size, "n1": n1, "n2": n2,
        "cos_before": res.cos_before, "cos_after": res.cos_after,
        "qerr_base": quantization_error(w).error, "qerr_rot": quantization_error(rotated).error,
        "flip_rate": flip_rate(sign(w), sign(rotated)),
        "objective_first": trace[0] if trace else float("nan"),
        "objective_last": trace[-1] if trace else float("nan"),
        "trace": trace,
    }


def cmd_analyze(args) -> int:
    tensors = []
    if args.synthetic is not None:
        if args.synthetic < 1:
            raise UsageError("--synthetic needs n >= 1")
        tensors.append((f"synthetic-{args.synthetic}-{args.seed}", synthetic_gaussian_weights(args.synthetic, args.seed)))
    elif args.weights:
        tensors.append((Path(args.weights).name, read_blob_file(args.weights)))
    else:
        manifest, blobs = read_checkpoint_blobs(args.checkpoint)
        for name, arr in blobs.items():
            if name.endswith(".init_sign"):
                layer = name[: -len(".init_sign")]
                tensors.append((layer, blobs[f"{layer}.weight"]))
        if not tensors:
            raise UsageError(f"--checkpoint: {args.checkpoint} has no binarized layers")

    rows = [analyze_tensor(name, w, args.cycles, args.init, args.seed) for name, w in tensors]
    print("  ".join(f"{c:>12}" for c in ANALYZE_COLUMNS))
    for r in rows:
        print("  ".join(f"{r[c]:>12.6g}" if isinstance(r[c], float) else f"{r[c]!s:>12}" for c in ANALYZE_COLUMNS))
    if len(rows) == 1:
        print("objective history: " + " ".join(f"{v:.6g}" for v in rows[0]["trace"]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "analysis.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ANALYZE_COLUMNS + ("objective_trace",))
            for r in rows:
                writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in ANALYZE_COLUMNS]
                                + [" ".join(repr(v) for v in r["trace"])])
    return 0


BENCH_COLUMNS = ("n", "n1", "n2", "birot_seconds", "full_seconds", "align_seconds", "max_abs_diff")


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_rows(sizes, repeats: int = 5, seed: int = 0) -> list[dict]:
    """Bi-rotation vs explicit ``(R1 kron R2)^T w`` for each size."""
    rows = []
    for n in sizes:
        rng = seeds.purpose_rng(seed, seeds.ROTATION, n)
        w = rng.standard_normal(n)
        block = reshape_to_block(w, (n,))
        n1, n2 = block.matrix.shape
        rot = RotationPair.random(n1, n2, rng)
        fast = rotate_flat(w, rot)
        full = kronecker(rot.r1, rot.r2).T @ w
        rows.append({
            "n": n, "n1": n1, "n2": n2,
            "birot_seconds": _best_time(lambda: rotate_flat(w, rot), repeats),
            "full_seconds": _best_time(lambda: kronecker(rot.r1, rot.r2).T @ w, repeats),
            "align_seconds": _best_time(lambda: align(block), max(1, repeats // 5)),
            "max_abs_diff": float(np.max(np.abs(fast - full))),
        })
    return rows


def cmd_bench(args) -> int:
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes: expected comma-separated integers, got {args.sizes!r}") from None
    if not sizes or min(sizes) < 1:
        raise UsageError("--sizes needs positive integers")
    rows = bench_rows(sizes, args.repeats, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            writer.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in BENCH_COLUMNS])
    for r in rows:
        print(f"n={r['n']:>6} ({r['n1']}x{r['n2']}): bi-rotation {r['birot_seconds'] * 1e6:9.1f} us  "
              f"full {r['full_seconds'] * 1e6:11.1f} us  align {r['align_seconds'] * 1e3:8.2f} ms  "
              f"max diff {r['max_abs_diff']:.2e}")
    print(f"wrote {out / 'bench.csv'} (svd backend: {backend_name()})")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotbnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"rotbnn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI file with [train] and [data] sections")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--variant", choices=VARIANT_CHOICES)
        sp.add_argument("--dataset", choices=DATASETS)
        sp.add_argument("--data-dir")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--lr", type=float)

    t = sub.add_parser("train", help="train a model and write reports + checkpoint")
    common(t, "runs/latest")
    t.add_argument("--arch", help="e.g. mlp:784-256-256-10, cnn:1x28x28-16-32-10")
    t.add_argument("--train-limit", type=int, help="use only the first N training samples")
    t.add_argument("--test-limit", type=int, help="use only the first N test samples")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(e, "runs/latest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--test-limit", type=int)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="align one weight tensor and report the diagnostics")
    src = a.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", type=int, metavar="N", help="seeded Gaussian tensor of length N")
    src.add_argument("--weights", help="file holding one length-prefixed float32 blob")
    src.add_argument("--checkpoint", help="checkpoint directory; analyzes every binarized layer")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--cycles", type=int, default=3)
    a.add_argument("--init", choices=("identity", "random"), default="identity",
                   help="starting rotations for the alternating optimizer")
    a.add_argument("--out", help="also write analysis.csv here")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="time bi-rotation against the explicit Kronecker rotation")
    b.add_argument("--sizes", default="64,256,1024")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="runs/bench")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rotbnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, DatasetFormatError, CheckpointError, OSError, ArithmeticError) as exc:
        print(f"rotbnn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
