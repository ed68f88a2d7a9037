"""``mlpair`` command line: gen, train, eval, count, bench, gradcheck.

Every option has a flat config key (``data.seed``, ``model.blocks``, ...). A JSON
file passed with ``--config`` supplies values; explicit flags override it, and
the effective config is echoed to ``<out>/config.echo``.

Exit codes: 0 ok, 1 usage, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from .data import SynthSpec
from .relation import ModelConfig

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ArgParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class Opt:
    flag: str
    key: str
    type: type | None = None
    default: object = None
    help: str = ""
    choices: tuple | None = None
    const: object = None  # set for boolean switches


_SYNTH = SynthSpec()
DATA_OPTS = [
    Opt("--frames", "data.frames", int, _SYNTH.frames, "frames per episode (T)"),
    Opt("--actors", "data.actors", int, _SYNTH.actors, "actors per frame (N)"),
    Opt("--dim", "data.dim", int, _SYNTH.dim, "feature channels (D)"),
    Opt("--groups", "data.group_classes", int, _SYNTH.group_classes, "group activity classes"),
    Opt("--actions", "data.action_classes", int, _SYNTH.action_classes, "individual action classes"),
    Opt("--noise", "data.noise", float, _SYNTH.noise, "Gaussian noise level"),
    Opt("--motif-scale", "data.motif_scale", float, _SYNTH.motif_scale, "amplitude of the planted relational motif"),
    Opt("--scene-dim", "data.scene_dim", int, _SYNTH.scene_dim, "scene feature size (0 disables)"),
]

GEN_OPTS = [
    Opt("--seed", "data.seed", int, 0, "generator seed"),
    Opt("--episodes", "data.episodes", int, 2481, "number of episodes"),
    Opt("--split", "data.split", float, 1 / 3, "test fraction"),
    *DATA_OPTS,
]

MODEL_OPTS = [
    Opt("--method", "model.method", str, "mlp", "relation method", ("mlp", "gcn", "transformer")),
    Opt("--path", "model.paths", str, "dual", "path mode", ("st", "ts", "dual")),
    Opt("--no-mlp-r", "model.mlp_r", None, True, "drop MLP-R from SRM/TRM", const=False),
    Opt("--mlp-r-only", "model.token_mix", None, True, "keep only MLP-R (no cross-actor/time mixing)", const=False),
    Opt("--scene", "model.scene", None, False, "add the scene head", const=True),
    Opt("--blocks", "model.blocks", int, 1, "stacked SRMs/TRMs per path"),
    Opt("--dropout", "model.dropout", float, 0.3, "dropout rate"),
    Opt("--lam", "model.lam", float, 1.0, "weight of the individual-action loss"),
    Opt("--heads", "model.heads", int, 8, "attention heads (transformer)"),
]

TRAIN_OPTS = [
    Opt("--data", "train.data", str, None, "dataset directory"),
    Opt("--seed", "train.seed", int, 0, "init / shuffle / dropout seed"),
    Opt("--epochs", "train.epochs", int, 150, "training epochs"),
    Opt("--warmup", "train.warmup_epochs", int, 30, "linear warmup epochs"),
    Opt("--lr", "train.base_lr", float, 2e-4, "base learning rate"),
    Opt("--weight-decay", "train.weight_decay", float, 0.01, "AdamW decoupled weight decay"),
    Opt("--batch-size", "train.batch_size", int, 32, "mini-batch size"),
    *MODEL_OPTS,
]

COUNT_OPTS = [
    Opt("--frames", "count.frames", int, 9, "T"),
    Opt("--actors", "count.actors", int, 12, "N"),
    Opt("--dim", "count.dim", int, 256, "D"),
    Opt("--path", "model.paths", str, "dual", "path mode", ("st", "ts", "dual")),
    Opt("--no-mlp-r", "model.mlp_r", None, True, "drop MLP-R", const=False),
]


def _add_opts(p: argparse.ArgumentParser, opts: list[Opt]) -> None:
    for o in opts:
        if o.const is not None:
            p.add_argument(o.flag, dest=o.key, action="store_const", const=o.const, default=None, help=o.help)
        else:
            p.add_argument(o.flag, dest=o.key, type=o.type, choices=o.choices, default=None, help=o.help)


def _resolve(args: argparse.Namespace, opts: list[Opt]) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {o.key: o.default for o in opts}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a flat JSON object")
        unknown = set(loaded) - set(values)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for o in opts:
        v = getattr(args, o.key)
        if v is not None:
            values[o.key] = v
    return values


def _echo(out: Path, command: str, values: dict) -> None:
    payload = {"command": command, **values}
    (out / "config.echo").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    probe = out / ".write-test"
    probe.write_text("")
    probe.unlink()
    return out


def _section(values: dict, prefix: str) -> dict:
    return {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith(prefix + ".")}


# commands


def cmd_gen(args) -> int:
    from .data import concat_splits, generate, save, split

    values = _resolve(args, GEN_OPTS)
    d = _section(values, "data")
    spec = SynthSpec(**{k: d[k] for k in vars(SynthSpec()) if k in d})
    out = _outdir(args.out)
    ds = generate(d["seed"], d["episodes"], spec)
    train, test = split(ds, d["split"], d["seed"])
    save(concat_splits(train, test), out)
    _echo(out, "gen", values)
    print(f"wrote {len(ds)} episodes to {out} (train {len(train)}, test {len(test)})")
    return EXIT_OK


def _model_config(values: dict, dataset) -> ModelConfig:
    m = _section(values, "model")
    spec = dataset.spec
    return ModelConfig(
        frames=spec.frames, actors=spec.actors, dim=spec.dim,
        group_classes=spec.group_classes, action_classes=spec.action_classes,
        scene_dim=max(spec.scene_dim, 1), seed=values["train.seed"], **m,
    )


def _print_report(report, class_names) -> None:
    print(f"test MCA {report.mca:.2f}  MPCA {report.mpca:.2f}  loss {report.loss:.6f}")
    for name, (mca, mpca) in report.per_path.items():
        print(f"  {name:<6} MCA {mca:.2f}  MPCA {mpca:.2f}")


def cmd_train(args) -> int:
    from .data import load
    from .train import TrainConfig, evaluate, fit, write_confusion_csv

    values = _resolve(args, TRAIN_OPTS)
    if not values["train.data"]:
        raise UsageError("train needs --data (or train.data in the config file)")
    dataset = load(values["train.data"])
    cfg = _model_config(values, dataset)
    if cfg.scene and dataset.scene is None:
        raise UsageError("--scene needs a dataset generated with --scene-dim > 0")
    t = _section(values, "train")
    tc = TrainConfig(epochs=t["epochs"], warmup_epochs=t["warmup_epochs"], base_lr=t["base_lr"],
                     weight_decay=t["weight_decay"], batch_size=t["batch_size"], seed=t["seed"])
    out = _outdir(args.out)
    _echo(out, "train", values)
    train_set = dataset.subset("train") if "train" in dataset.splits else dataset
    test_set = dataset.subset("test") if "test" in dataset.splits else None
    state, _ = fit(cfg, train_set, test_set, tc, out)
    report = evaluate(state.model, test_set if test_set is not None else train_set)
    write_confusion_csv(report.confusion, dataset.class_names, out / "confusion.csv")
    print(f"best epoch {state.best_epoch}")
    _print_report(report, dataset.class_names)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .data import load
    from .train import evaluate, metric_rows, write_confusion_csv, write_metrics_csv

    ckpt = Path(args.checkpoint) if args.checkpoint else Path(args.run) / "checkpoint"
    model, _ = load_checkpoint(ckpt)
    dataset = load(args.data)
    subset = dataset.subset(args.split) if args.split in dataset.splits else dataset
    report = evaluate(model, subset)
    if args.out:
        out = _outdir(args.out)
        write_metrics_csv(metric_rows(-1, args.split, 0.0, report), out / "eval_metrics.csv")
        write_confusion_csv(report.confusion, dataset.class_names, out / "confusion.csv")
        if args.embeddings:
            from .train import export_embeddings
            export_embeddings(model, subset, out / "embeddings.csv")
    _print_report(report, dataset.class_names)
    return EXIT_OK


def _methods(raw: list[str]) -> list[str]:
    return ["mlp", "gcn", "transformer"] if "all" in raw else raw


def cmd_count(args) -> int:
    from .accounting import comparison_csv, comparison_table, count_macs, emit_comparison, report_table
    from .relation import ModelConfig

    values = _resolve(args, COUNT_OPTS)
    c = _section(values, "count")
    overrides = _section(values, "model")
    methods = _methods(args.method)
    rows = emit_comparison(methods, args.blocks, c["frames"], c["actors"], c["dim"], **overrides)
    print(comparison_table(rows))
    if args.detail:
        for m in methods:
            for b in args.blocks:
                cfg = ModelConfig(method=m, frames=c["frames"], actors=c["actors"], dim=c["dim"], blocks=b, **overrides)
                print(f"\n[{m} blocks={b}]")
                print(report_table(count_macs(cfg)))
    if args.out:
        out = _outdir(args.out)
        (out / "costs.csv").write_text(comparison_csv(rows))
        _echo(out, "count", {**values, "methods": methods, "blocks": args.blocks})
    return EXIT_OK


def cmd_bench(args) -> int:
    from .accounting import comparison_csv, comparison_table, emit_comparison
    from .benchmark import bench, host_info

    values = _resolve(args, COUNT_OPTS)
    c = _section(values, "count")
    if args.iters < 100:
        raise UsageError("bench needs at least 100 timed iterations")
    methods = _methods(args.method)
    lat = bench(methods, args.blocks, c["frames"], c["actors"], c["dim"], args.iters, args.warmup)
    rows = emit_comparison(methods, args.blocks, c["frames"], c["actors"], c["dim"],
                           latencies={k: v["median_us"] for k, v in lat.items()})
    print(comparison_table(rows))
    host = host_info()
    print("host: " + ", ".join(f"{k}={v}" for k, v in host.items()))
    if args.out:
        out = _outdir(args.out)
        (out / "costs.csv").write_text(comparison_csv(rows))
        (out / "host.json").write_text(json.dumps(host, indent=2, sort_keys=True) + "\n")
        _echo(out, "bench", {**values, "methods": methods, "blocks": args.blocks, "iters": args.iters})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    import contextlib

    from .gradcheck import format_report, inject_sign_error, run_suite

    try:
        dims = tuple(int(v) for v in args.dims.split(","))
    except ValueError:
        raise UsageError(f"--dims must look like T,N,D, got {args.dims!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise UsageError(f"--dims must be three positive integers, got {args.dims!r}")
    guard = inject_sign_error(args.inject_fault) if args.inject_fault else contextlib.nullcontext()
    with guard:
        results = run_suite(args.selector, dims, args.h, args.tol, args.seed)
    print(format_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def build_parser() -> ArgParser:
    from .gradcheck import SELECTORS

    parser = ArgParser(prog="mlpair", description="MLP actor-relation models, cost accounting and benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgParser)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_opts(p, GEN_OPTS)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    _add_opts(p, TRAIN_OPTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--run", help="training output directory")
    g.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.add_argument("--embeddings", action="store_true", help="also export group embeddings")
    p.set_defaults(func=cmd_eval)

    for name, func, text in (("count", cmd_count, "analytic params / MACs"), ("bench", cmd_bench, "forward latency")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--method", nargs="+", default=["all"], choices=("mlp", "gcn", "transformer", "all"))
        p.add_argument("--blocks", nargs="*", type=int, default=[1])
        p.add_argument("--out")
        p.add_argument("--config")
        if name == "count":
            p.add_argument("--detail", action="store_true", help="per-component rows and assumptions")
        else:
            p.add_argument("--iters", type=int, default=100)
            p.add_argument("--warmup", type=int, default=10)
        _add_opts(p, COUNT_OPTS)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("selector", nargs="?", default="all", choices=SELECTORS)
    p.add_argument("--dims", default="3,3,3")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="OP", help="negate one op's backward rule, e.g. Affine")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    from .autograd import NonFiniteError
    from .checkpoint import CheckpointError
    from .data import DatasetFormatError
    from .train import TrainingDiverged

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, KeyError) as exc:
        if isinstance(exc, (DatasetFormatError, CheckpointError)):
            print(f"mlpair: error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"mlpair: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, NonFiniteError, ArithmeticError) as exc:
        print(f"mlpair: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"mlpair: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
