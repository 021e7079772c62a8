"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Tables go to stdout as CSV; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint, save_checkpoint
from .exceptions import DataError, NumericalError
from .graph import format_edges, knn, build_graph
from .model import ModelConfig, TINet, prepare
from .pointcloud import SHAPE_KINDS, load_cloud, load_dataset, shape_dataset, write_manifest, write_xyz
from .pooling import coarsen, farthest_point_sample, uniform_sample
from .presets import PRESETS, preset
from .ti_encoder import encode
from .training import TrainConfig, evaluate, metrics_csv, train

log = logging.getLogger("tinet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None

    return parse


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    flat = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        flat[key.strip()] = value.strip()
    return flat


def _configs(args, n_classes: int) -> tuple:
    flat = read_config_file(args.config) if args.config else {}
    name = flat.pop("preset", args.preset)
    model_fields = ModelConfig.__dataclass_fields__
    train_fields = TrainConfig.__dataclass_fields__
    unknown = [k for k in flat if k not in model_fields and k not in train_fields]
    if unknown:
        raise UsageError(f"unknown config key {unknown[0]!r}")
    flat.setdefault("n_classes", str(n_classes))
    base_model, base_train = preset(name)
    m_flat = {**base_model.to_flat(), **{k: v for k, v in flat.items() if k in model_fields}}
    t_flat = {**base_train.to_flat(), **{k: v for k, v in flat.items() if k in train_fields}}
    if getattr(args, "seed", None) is not None:
        t_flat["seed"] = str(args.seed)
    if getattr(args, "epochs", None) is not None:
        t_flat["epochs"] = str(args.epochs)
    try:
        return ModelConfig.from_flat(m_flat), TrainConfig.from_flat(t_flat)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    unknown = [c for c in args.classes if c not in SHAPE_KINDS]
    if unknown:
        raise UsageError(f"unknown class {unknown[0]!r}; choose from {', '.join(SHAPE_KINDS)}")
    if args.per_class < 1 or args.points < 8:
        raise UsageError("--per-class must be >= 1 and --points >= 8")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    clouds, labels = shape_dataset(args.classes, args.per_class, args.points, args.seed, args.jitter, args.offset)
    entries = []
    try:
        for i, (cloud, y) in enumerate(zip(clouds, labels)):
            path = out / f"{args.classes[y]}_{i:05d}.xyz"
            write_xyz(cloud, path)
            entries.append((path, y))
        write_manifest(out / "manifest.txt", entries)
    except OSError as exc:
        raise DataError(f"cannot write dataset: {exc}") from exc
    log.info("wrote %d clouds to %s", len(entries), out)
    print(out / "manifest.txt")
    return EXIT_OK


def cmd_encode(args) -> int:
    cloud = load_cloud(args.input, args.format)
    raw, _ = encode(cloud.points, min(args.k, cloud.n_points - 1), args.K, args.include_order0)
    F = raw.matrix
    if args.l2_normalize:
        norm = np.linalg.norm(F)
        F = F / norm if norm > 0 else F
    text = "".join(" ".join("%.17g" % v for v in row) + "\n" for row in F)
    _write_text(args.out, text)
    return EXIT_OK


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _n_classes(*label_arrays) -> int:
    return max(2, int(max(int(y.max()) for y in label_arrays)) + 1)


def cmd_train(args) -> int:
    clouds, labels = load_dataset(args.manifest)
    val = load_dataset(args.val_manifest) if args.val_manifest else None
    model_cfg, train_cfg = _configs(args, _n_classes(labels, *( [val[1]] if val else [])))
    model = TINet(model_cfg, seed=train_cfg.seed)
    history = train(model, clouds, labels, train_cfg, val=val)
    text = metrics_csv(history)
    sys.stdout.write(text)
    if args.metrics:
        _write_text(args.metrics, text)
    if args.ckpt:
        save_checkpoint(model, args.ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    clouds, labels = load_dataset(args.manifest)
    if labels.max() >= model.config.n_classes:
        raise DataError(f"dataset labels exceed the model's {model.config.n_classes} classes")
    report = evaluate(model, clouds, labels, args.mode, args.seed)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_rotate_test(args) -> int:
    clouds, labels = load_dataset(args.manifest)
    test_clouds, test_labels = load_dataset(args.test_manifest)
    model_cfg, train_cfg = _configs(args, _n_classes(labels, test_labels))
    train_cfg.rotation = "z"
    model = TINet(model_cfg, seed=train_cfg.seed)
    train(model, clouds, labels, train_cfg)
    if args.ckpt:
        save_checkpoint(model, args.ckpt)
    lines = ["mode,accuracy"]
    for mode in ("none", "z", "so3"):
        acc = evaluate(model, test_clouds, test_labels, mode, train_cfg.seed).accuracy
        lines.append(f"{mode},{acc:.6f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .pointcloud import SyntheticShapeSpec, generate_shape

    print("points,k,graph_ms,encode_ms,forward_ms")
    for n in args.points:
        cloud = generate_shape(SyntheticShapeSpec("sphere", n, args.seed, 0.01))
        for k in args.k:
            cfg = ModelConfig(graph_k=k)
            model = TINet(cfg, seed=args.seed)
            times = {"graph": [], "encode": [], "forward": []}
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                build_graph(knn(cloud.points, min(k, n - 1)))
                t1 = time.perf_counter()
                encode(cloud.points, min(k, n - 1), cfg.ti_order)
                t2 = time.perf_counter()
                model.predict_logits(prepare(cloud, cfg))
                t3 = time.perf_counter()
                times["graph"].append(t1 - t0)
                times["encode"].append(t2 - t1)
                times["forward"].append(t3 - t2)
            med = {key: 1000 * float(np.median(v)) for key, v in times.items()}
            print(f"{n},{k},{med['graph']:.4f},{med['encode']:.4f},{med['forward']:.4f}")
    return EXIT_OK


def cmd_coarsen(args) -> int:
    cloud = load_cloud(args.input, args.format)
    n = cloud.n_points
    n_keep = args.keep if args.keep is not None else max(1, int(round(n * args.ratio)))
    if not 1 <= n_keep <= n:
        raise UsageError(f"--keep must lie in [1, {n}]")
    pts = cloud.points - cloud.points.mean(axis=0)
    if args.method == "ti":
        raw, _ = encode(pts, min(args.k, n - 1), 1)
        kept = coarsen(pts, raw, n_keep, min(args.m, n)).kept
    elif args.method == "uniform":
        kept = uniform_sample(n, n_keep, args.seed)
    else:
        kept = farthest_point_sample(pts, n_keep)
    _write_text(args.out, "".join(f"{i}\n" for i in kept))
    return EXIT_OK


def cmd_dump_graph(args) -> int:
    cloud = load_cloud(args.input, args.format)
    g = build_graph(knn(cloud.points - cloud.points.mean(axis=0), min(args.k, cloud.n_points - 1)))
    _write_text(args.out, format_edges(g))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tinet", description="Transform-invariant point cloud learning on kNN graphs.")
    p.add_argument("--threads", type=int, default=None, help="upper bound on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic shape dataset and manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--classes", type=_csv_list(str), default=list(SHAPE_KINDS))
    g.add_argument("--per-class", type=int, default=20)
    g.add_argument("--points", type=int, default=512)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--jitter", type=float, default=0.0)
    g.add_argument("--offset", type=int, default=0, help="sample index offset (disjoint splits)")
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("encode", help="dump per-point TI features (N x 2K)")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--format", choices=("xyz", "off"))
    e.add_argument("--k", type=int, default=16)
    e.add_argument("--K", type=int, default=3)
    e.add_argument("--include-order0", action="store_true")
    e.add_argument("--l2-normalize", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=cmd_encode)

    def model_args(sp):
        sp.add_argument("--config", help="flat key=value file of model/train settings")
        sp.add_argument("--preset", choices=sorted(PRESETS), default="default")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--epochs", type=int)

    t = sub.add_parser("train", help="train a classifier; metrics CSV on stdout")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--ckpt")
    t.add_argument("--metrics")
    model_args(t)
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="accuracy report for a checkpoint")
    v.add_argument("--manifest", required=True)
    v.add_argument("--ckpt", required=True)
    v.add_argument("--mode", choices=("none", "z", "so3"), default="none")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("rotate-test", help="train with z rotations, test under none/z/so3")
    r.add_argument("--manifest", required=True)
    r.add_argument("--test-manifest", required=True)
    r.add_argument("--ckpt")
    model_args(r)
    r.set_defaults(func=cmd_rotate_test)

    b = sub.add_parser("bench", help="median timings of graph build, encoding and forward")
    b.add_argument("--points", type=_csv_list(int), default=[1024])
    b.add_argument("--k", type=_csv_list(int), default=[16])
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("coarsen", help="kept indices of TI, uniform or farthest point sampling")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--format", choices=("xyz", "off"))
    c.add_argument("--method", choices=("ti", "uniform", "fps"), default="ti")
    c.add_argument("--k", type=int, default=16)
    c.add_argument("--m", type=int, default=8)
    grp = c.add_mutually_exclusive_group()
    grp.add_argument("--keep", type=int)
    grp.add_argument("--ratio", type=float, default=0.25)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_coarsen)

    d = sub.add_parser("dump-graph", help="edge list 'i j w' of the kNN graph")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--format", choices=("xyz", "off"))
    d.add_argument("--k", type=int, default=16)
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump_graph)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    if getattr(args, "repeat", 1) < 1:
        parser.error("--repeat must be >= 1")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tinet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"tinet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"tinet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"tinet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
