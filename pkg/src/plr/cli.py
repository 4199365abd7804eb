"""``plr`` command line: corrupt, train, bench, scaling and replay.

Exit codes: 0 ok, 2 input error, 3 divergence, 4 bench failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__, _backend, datagen, experiments, report, trainer
from .model import save_model

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED, EXIT_BENCH = 0, 2, 3, 4
DEFAULT_BENCH_ROOT = "plr_runs"
FAMILIES = ("supervised", "avgl", "avgv", "ident", "pident")


class InputError(ValueError):
    pass


class BenchFailure(RuntimeError):
    pass


# -- argument helpers -------------------------------------------------------------


def resolve_method(method: str, loss: str | None = None) -> str:
    """Map ``avgl`` + ``mae`` (or ``avgl-mae``) to a key of ``trainer.METHODS``."""
    if "-" in method and method in trainer.METHODS:
        if loss and not method.endswith("-" + loss):
            raise InputError(f"--loss {loss} conflicts with method {method}")
        return method
    if method in ("avgl", "avgv"):
        name = f"{method}-{loss or 'mse'}"
        if name in trainer.METHODS:
            return name
    elif method in FAMILIES and loss in (None, "mse"):
        return method
    raise InputError(f"unknown method {method!r} with loss {loss!r}; families are {', '.join(FAMILIES)}")


def float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def str_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def fraction_list(text: str) -> tuple[float, ...]:
    vals = float_list(text)
    if not vals:
        raise argparse.ArgumentTypeError("at least one fraction is required")
    for v in vals:
        if not 0 < v <= 1:
            raise argparse.ArgumentTypeError(f"fractions must lie in (0, 1], got {v}")
    return vals


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _sources(args) -> list[experiments.DataSource]:
    if args.data or args.schema:
        if not (args.data and args.schema):
            raise InputError("--data and --schema must be given together")
        for p in (args.data, args.schema):
            if not Path(p).is_file():
                raise InputError(f"no such file: {p}")
        return [experiments.DataSource.from_paths(args.data, args.schema)]
    names = str_list(args.dataset) if args.dataset else ()
    if not names:
        raise InputError("give --dataset NAME or --data CSV --schema JSON")
    try:
        return [experiments.DataSource.bundled(n) for n in names]
    except (FileNotFoundError, ValueError) as e:
        raise InputError(str(e)) from None


def _grid(args) -> experiments.Grid:
    return experiments.Grid(
        learning_rates=args.lr,
        huber_deltas=args.huber_delta,
        beta2s=args.beta2,
        beta1=args.beta1,
        epochs=args.epochs,
        batch_size=args.batch_size,
        model_kind=args.model,
        validation_metric=args.validation_metric,
    )


# -- manifests -------------------------------------------------------------------


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    return json.loads(json.dumps(cfg))


def write_manifest(out_dir, args, inputs, outputs) -> Path:
    """Everything needed to rerun the command; only ``created`` varies between reruns."""
    manifest = {
        "command": args.command,
        "config": resolved_config(args),
        "base_seed": args.seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        "package_version": __version__,
        "backend": _backend.NAME,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def config_hash(config: dict, ignore=("out", "workers")) -> str:
    payload = {k: v for k, v in config.items() if k not in ignore}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


# -- commands --------------------------------------------------------------------


def cmd_corrupt(args) -> int:
    if args.num_false < 0:
        raise InputError(f"--num-false must be >= 0, got {args.num_false}")
    (src,) = _sources(args)
    table = experiments.load_table(src)
    tr, va, te = datagen.make_splits(table, args.num_false, args.seed, not args.clean_validation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for part in (tr, va, te):
        p = out / f"{part.split_tag}.jsonl"
        datagen.write_jsonl(p, part)
        paths.append(p)
    write_manifest(out, args, [src.csv, src.schema], paths)
    lo, hi = float(tr.y_true.min()), float(tr.y_true.max())
    print(f"{src.name}: train {len(tr)}, validation {len(va)}, test {len(te)} records")
    print(f"label span [{lo:g}, {hi:g}], |S_bar| = {args.num_false}, candidate set size {tr.n_candidates}")
    print(f"wrote {out}")
    return EXIT_OK


def _load_split(data_dir: Path, tag: str) -> datagen.PartialDataset:
    return datagen.read_jsonl(data_dir / f"{tag}.jsonl", tag)


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise InputError(f"--data must be a directory written by 'plr corrupt', got {data_dir}")
    tr, va, te = (_load_split(data_dir, t) for t in datagen.SPLITS)
    method = resolve_method(args.method, args.loss)
    cfg = trainer.config_for(
        method,
        model_kind=args.model, learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        seed=args.seed, beta1=args.beta1, beta2=args.beta2, huber_delta=args.huber_delta,
        validation_metric=args.validation_metric,
    )  # fmt: skip
    outcome = trainer.fit(cfg, tr, va)
    test_mse = trainer.evaluate(outcome.model, te, "true_labels")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = outcome.to_json()
    record.pop("seconds")
    record.update(method=method, test_mse=test_mse)
    outputs = [out / "outcome.json"]
    outputs[0].write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    if args.save:
        save_model(outcome.model, args.save)
        outputs.append(Path(args.save))
    write_manifest(out, args, [data_dir / f"{t}.jsonl" for t in datagen.SPLITS], outputs)
    print(f"test MSE (true labels): {test_mse:.6g}")
    print(f"validation {cfg.selection_target.replace('_', ' ')} MSE: {outcome.final_validation:.6g}")
    print(f"fit took {outcome.seconds:.2f}s on the {_backend.NAME} backend")
    return EXIT_OK


def bench_root(args) -> Path:
    return Path(args.out or os.environ.get("PLR_BENCH_OUT") or DEFAULT_BENCH_ROOT)


def cmd_bench(args) -> int:
    sources = _sources(args)
    methods = [resolve_method(m) for m in str_list(args.method)]
    if not methods or not args.num_false or args.repeats < 1:
        raise InputError("bench needs at least one method, one --num-false value and --repeats >= 1")
    if any(k < 0 for k in args.num_false):
        raise InputError("--num-false values must be >= 0")
    cfg = resolved_config(args)
    run_dir = bench_root(args) / f"bench-{config_hash(cfg)}"
    jobs = experiments.bench_jobs(sources, methods, args.num_false, args.repeats, args.seed, _grid(args))
    meta = {"config_hash": config_hash(cfg), "backend": _backend.NAME}
    outcome = experiments.run_bench(jobs, run_dir, args.workers, meta, echo=print)
    outputs = [p for p in sorted(run_dir.iterdir()) if p.name != "manifest.json"]
    write_manifest(run_dir, args, [p for s in sources for p in (s.csv, s.schema)], outputs)
    print(f"{outcome.new_trials} trials run, results in {run_dir}")
    if outcome.report.cells:
        print(report.render_table(outcome.report, "markdown"), end="")
    if outcome.empty_cells:
        raise BenchFailure(f"no successful trial for cells {outcome.empty_cells}")
    return EXIT_OK


def cmd_scaling(args) -> int:
    (src,) = _sources(args)
    method = resolve_method(args.method, args.loss)
    points, per = experiments.run_scaling(
        src, method, args.num_false, args.fractions, args.repeats, args.seed, _grid(args), args.workers
    )
    out = Path(args.out)
    csv_path, svg_path = report.emit_scaling_curve(points, out, f"scaling-{src.name}-{method}")
    values = out / f"scaling-{src.name}-{method}.json"
    values.write_text(json.dumps({repr(f): v for f, v in per.items()}, indent=1, sort_keys=True) + "\n")
    write_manifest(out, args, [src.csv, src.schema], [csv_path, svg_path, values])
    for f, m, s in points:
        print(f"fraction {f:g}: test MSE {m:.4f} ({s:.4f})")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        config = dict(manifest["config"])
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot read manifest {args.manifest}: {e}") from None
    for path, digest in manifest.get("inputs", {}).items():
        if not Path(path).is_file() or sha256_file(path) != digest:
            raise InputError(f"input {path} is missing or changed since the manifest was written")
    if args.out:
        config["out"] = args.out
    replayed = argparse.Namespace(**config)
    replayed.func = COMMANDS[config["command"]]
    return replayed.func(replayed)


COMMANDS = {"corrupt": cmd_corrupt, "train": cmd_train, "bench": cmd_bench, "scaling": cmd_scaling}


# -- parser ----------------------------------------------------------------------


def _add_source(p):
    p.add_argument("--dataset", help="bundled dataset name(s): abalone, concrete")
    p.add_argument("--data", help="CSV file")
    p.add_argument("--schema", help="JSON schema for --data")


def _add_training(p, grid: bool):
    p.add_argument("--model", choices=("linear", "mlp"), default="mlp")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--beta1", type=float, default=0.5)
    p.add_argument("--validation-metric", choices=trainer.VALIDATION_METRICS, default="partial_min")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    if grid:
        p.add_argument("--lr", type=float_list, default=trainer.LEARNING_RATES, help="comma-separated grid")
        p.add_argument("--beta2", type=float_list, default=trainer.PIDENT_BETA2S, help="grid for pident")
        p.add_argument("--huber-delta", type=float_list, default=trainer.HUBER_DELTAS, help="grid for huber")
        p.add_argument("--workers", type=int, default=1)
    else:
        p.add_argument("--lr", type=float, default=0.001)
        p.add_argument("--beta2", type=float, default=100.0)
        p.add_argument("--huber-delta", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plr", description="Partial-label regression experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="split, preprocess and corrupt a dataset")
    _add_source(p)
    p.add_argument("--num-false", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clean-validation", action="store_true", help="keep only true labels in validation")
    p.add_argument("--out", default="corrupted")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("train", help="fit one model on corrupted splits")
    p.add_argument("--data", required=True, help="directory written by 'plr corrupt'")
    p.add_argument("--method", required=True, help=f"one of {', '.join(FAMILIES)} or e.g. avgl-mae")
    p.add_argument("--loss", choices=("mse", "mae", "huber"), default=None)
    _add_training(p, grid=False)
    p.add_argument("--out", default="train-out")
    p.add_argument("--save", help="write a model checkpoint here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="repeated trials over datasets, methods and |S_bar|")
    _add_source(p)
    p.add_argument("--method", default=",".join(trainer.METHODS), help="comma-separated method names")
    p.add_argument("--num-false", type=int_list, default=(2, 4, 8))
    p.add_argument("--repeats", type=int, default=10)
    _add_training(p, grid=True)
    p.add_argument("--out", help="output root (default $PLR_BENCH_OUT or ./plr_runs)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("scaling", help="test error against training-set fraction")
    _add_source(p)
    p.add_argument("--method", default="ident")
    p.add_argument("--loss", choices=("mse", "mae", "huber"), default=None)
    p.add_argument("--num-false", type=int, default=4)
    p.add_argument("--fractions", type=fraction_list, default=(0.2, 0.4, 0.6, 0.8, 1.0))
    p.add_argument("--repeats", type=int, default=5)
    _add_training(p, grid=True)
    p.add_argument("--out", default="scaling-out")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write outputs here instead of the recorded location")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (trainer.DivergenceError, trainer.SelectionError) as e:
        print(f"plr: diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except BenchFailure as e:
        print(f"plr: bench failed: {e}", file=sys.stderr)
        return EXIT_BENCH
    except (InputError, datagen.LoadError, datagen.SplitError, datagen.CorruptionError, ValueError, OSError) as e:
        print(f"plr: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
