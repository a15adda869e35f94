"""Command-line entry point: ``smallbig <command> ...``.

Exit codes: 0 success, 2 config or usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .analytics import count_flops, parse_shape
from .harness.gradcheck import gradcheck_net
from .harness.sampling import ViewRunner, multiview_predict
from .harness.serialization import DataError, load_weights, save_weights
from .harness.synthetic import gen_synth, load_dataset, save_dataset
from .harness.train import TrainConfig, accuracy, fit
from .network import ConfigError, build_net, load_config, tiny_spec
from .tensor_ops import NumericError, ShapeError

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def write_atomic(path, data) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, out) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def _spec(args):
    return load_config(args.config) if args.config else tiny_spec()


def _dataset(args, n, seed):
    if args.data == "synth":
        if n < 2:
            raise DataError("synthetic data needs --n of at least 2")
        return gen_synth(n, seed)
    try:
        return load_dataset(Path(args.data).read_bytes())
    except OSError as e:
        raise DataError(f"cannot read data file {args.data}: {e}") from e


def _load_net(spec, weights):
    net = build_net(spec, np.float32, seed=0)
    if weights:
        try:
            buf = Path(weights).read_bytes()
        except OSError as e:
            raise DataError(f"cannot read weights {weights}: {e}") from e
        load_weights(buf, net.store)
    return net


def _stamp(args) -> float:
    return float(args.epoch_time) if args.epoch_time is not None else time.time()


# --------------------------------------------------------------------------
# commands


def cmd_count(args) -> int:
    spec = load_config(args.config)
    try:
        shape = parse_shape(args.input) if args.input else spec.input_shape
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if shape[0] != spec.in_channels:
        raise ConfigError(f"input has {shape[0]} channels, config expects {spec.in_channels}")
    rep = count_flops(build_net(spec, seed=None), shape)
    text = rep.to_json() if args.format == "json" else rep.to_csv()
    if args.views > 1 and args.format == "csv":
        text += f"total_x{args.views}_views,total,{rep.params},{rep.flops * args.views}\n"
    emit(text, args.out)
    if args.out:
        print(rep.summary())
    return 0


def cmd_train(args) -> int:
    spec = _spec(args)
    ds = _dataset(args, args.n + args.val, args.seed)
    train, val = ds.split(len(ds) - args.val) if args.val else (ds, None)
    cfg = TrainConfig(epochs=args.epochs, base_lr=args.lr, batch_size=args.batch_size,
                      weight_decay=args.wd, schedule=args.schedule, seed=args.seed)
    net = build_net(spec, np.float32, seed=args.seed)
    log = (lambda e, loss: print(f"epoch {e} loss {loss:.6f}", flush=True)) if args.verbose else None
    history = fit(net, train.clips, train.labels, cfg, log=log)
    report = {
        "config": spec.name or args.config,
        "epochs": args.epochs,
        "loss": history,
        "train_accuracy": accuracy(net, train.clips, train.labels),
        "timestamp": _stamp(args),
    }
    if val is not None:
        report["val_accuracy"] = accuracy(net, val.clips, val.labels)
    write_atomic(args.out, save_weights(net.store))
    if args.report:
        write_atomic(args.report, json.dumps(report, indent=2, sort_keys=True) + "\n")
    line = f"final loss {history[-1]:.6f} train acc {report['train_accuracy']:.4f}"
    if val is not None:
        line += f" val acc {report['val_accuracy']:.4f}"
    print(line)
    return 0


def cmd_eval(args) -> int:
    spec = _spec(args)
    net = _load_net(spec, args.weights)
    ds = _dataset(args, args.n, args.seed)
    runner = ViewRunner(net)
    correct = 0
    for clip, label in zip(ds.clips, ds.labels):
        probs, _ = multiview_predict(net, clip, args.clips, args.crops, runner=runner)
        correct += int(np.argmax(probs) == label)
    text = (f"videos {len(ds)} clips {args.clips} crops {args.crops} "
            f"forwards_per_video {runner.forwards // len(ds)} forwards {runner.forwards} "
            f"accuracy {correct / len(ds):.4f}\n")
    emit(text, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    spec = _spec(args)
    if not args.f64:
        print("note: gradient checks always run in 64-bit", file=sys.stderr)
    try:
        tol = float(args.tol)
    except ValueError as e:
        raise ConfigError(f"bad --tol {args.tol!r}") from e
    r = gradcheck_net(spec, seed=args.seed, tol=tol)
    if r.passed:
        print(f"PASS tol={args.tol}")
        return 0
    worst = max(r.per_tensor, key=r.per_tensor.get)
    print(f"FAIL tol={args.tol} rel_error={r.rel_error:.3e} worst={worst}")
    return EXIT_NUMERIC


def cmd_gen_data(args) -> int:
    if args.n < 2:
        raise DataError("--n must be at least 2")
    write_atomic(args.out, save_dataset(gen_synth(args.n, args.seed)))
    return 0


def cmd_dump_activations(args) -> int:
    spec = _spec(args)
    net = _load_net(spec, args.weights)
    ds = _dataset(args, max(args.index + 1, 2), args.seed)
    trace = []
    net.forward(ds.clips[args.index:args.index + 1], training=False, trace=trace)
    acts = dict(trace)
    if args.layer not in acts:
        raise ConfigError(f"unknown layer {args.layer!r}; available: {', '.join(acts)}")
    fmap = acts[args.layer].data[0].mean(axis=0)  # channel mean, (T, H, W)
    lines = ["t,h,w,value"]
    for (t, h, w), v in np.ndenumerate(fmap):
        lines.append(f"{t},{h},{w},{v:.8g}")
    write_atomic(args.out, "\n".join(lines) + "\n")
    return 0


def cmd_compare(args) -> int:
    paths = [p for p in args.configs.split(",") if p]
    if not paths:
        raise ConfigError("--configs needs at least one path")
    specs = [load_config(p) for p in paths]
    ds = _dataset(args, args.n + args.val, args.seed)
    train, val = ds.split(len(ds) - args.val)
    rows = ["config,params,flops,val_accuracy"]
    for path, spec in zip(paths, specs):
        net = build_net(spec, np.float32, seed=args.seed)
        rep = count_flops(net)
        acc = float("nan")
        if args.epochs > 0:
            cfg = TrainConfig(epochs=args.epochs, base_lr=args.lr, batch_size=args.batch_size,
                              seed=args.seed)
            fit(net, train.clips, train.labels, cfg)
            acc = accuracy(net, val.clips, val.labels)
        rows.append(f"{spec.name or Path(path).stem},{rep.params},{rep.flops},{acc:.4f}")
    emit("\n".join(rows) + "\n", args.out)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smallbig", description="SmallBig video network toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epoch-time", type=float, default=None,
                        help="fixed timestamp for reports (byte-stable output)")
    sub = p.add_subparsers(dest="command", metavar="command")

    c = sub.add_parser("count", parents=[common], help="analytic parameter and FLOP report")
    c.add_argument("--config", required=True)
    c.add_argument("--input", help="CxTxHxW, default from the config")
    c.add_argument("--format", choices=("csv", "json"), default="csv")
    c.add_argument("--views", type=int, default=1, help="clips x crops multiplier line (csv)")
    c.add_argument("--out")
    c.set_defaults(func=cmd_count)

    def data_flags(q, n, seed):
        q.add_argument("--data", default="synth", help="'synth' or a data container path")
        q.add_argument("--n", type=int, default=n)
        q.add_argument("--seed", type=int, default=seed)

    t = sub.add_parser("train", parents=[common], help="train on synthetic or stored clips")
    t.add_argument("--config")
    data_flags(t, 2000, 7)
    t.add_argument("--val", type=int, default=0, help="extra held-out clips")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--wd", type=float, default=1e-4)
    t.add_argument("--schedule", choices=("cosine", "step"), default="cosine")
    t.add_argument("--out", required=True)
    t.add_argument("--report")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="multi-clip multi-crop evaluation")
    e.add_argument("--config")
    e.add_argument("--weights", required=True)
    data_flags(e, 100, 0)
    e.add_argument("--clips", type=int, default=2)
    e.add_argument("--crops", type=int, choices=(1, 3), default=3)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    g.add_argument("--config")
    g.add_argument("--f64", action="store_true")
    g.add_argument("--tol", default="1e-4", help="norm-wise relative error bound")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("gen-data", parents=[common], help="write a synthetic data container")
    d.add_argument("--n", type=int, default=1000)
    d.add_argument("--seed", type=int, default=42)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("dump-activations", parents=[common], help="channel-mean feature map of one layer as CSV")
    a.add_argument("--config")
    a.add_argument("--weights")
    a.add_argument("--layer", required=True)
    a.add_argument("--index", type=int, default=0, help="clip index in the data")
    data_flags(a, 2, 0)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_dump_activations)

    m = sub.add_parser("compare", parents=[common], help="side-by-side cost and accuracy table")
    m.add_argument("--configs", required=True, help="comma-separated config paths")
    data_flags(m, 2000, 7)
    m.add_argument("--val", type=int, default=500)
    m.add_argument("--epochs", type=int, default=4)
    m.add_argument("--lr", type=float, default=0.05)
    m.add_argument("--batch-size", type=int, default=16)
    m.add_argument("--out")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ShapeError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
