"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ._io import dump_json, read_json, write_json, write_text_atomic
from ._seeding import derived_seed
from .ddim import DEFAULT_INFERENCE_STEPS, ScheduleError, build_schedule
from .distill import (
    DEFAULT_IPC,
    DEFAULT_M,
    DEFAULT_WEIGHTS,
    MODES,
    DistillConfig,
    DistilledSet,
    distill_dataset,
    regenerate_from_stats,
    stats_bundle,
)
from .evaluation import (
    EvalReport,
    TrainConfig,
    ablation_csv,
    ablation_run,
    classwise_energy_distance,
    evaluate_classifier,
    report_csv,
    sweep_csv,
    timestep_sweep,
    train_classifier,
)
from .gmm_world import Dataset, GmmSpec, SpecError, default_world, sample_dataset

log = logging.getLogger("diffdistill")

OK, USAGE, INVALID, IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# -- loading helpers ----------------------------------------------------------


def _load_json(path) -> dict:
    try:
        return read_json(path)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})")


def _load_dataset(path) -> Dataset:
    doc = _load_json(path)
    try:
        return Dataset.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed dataset ({exc})")


def _load_world(args, near: str | None) -> GmmSpec:
    if getattr(args, "default_world", False):
        return default_world()
    path = args.world
    if path is None and near is not None:
        path = str(Path(near).parent / "world.json")
    if path is None:
        raise UsageError("no world given: pass --world PATH or --default-world")
    return GmmSpec.from_dict(_load_json(path))


def _check_digest(data_digest: str, spec: GmmSpec, what: str) -> None:
    if data_digest and data_digest != spec.digest():
        raise ValidationError(f"{what} was not generated from the given world (digest mismatch)")


def _add_world_args(p) -> None:
    p.add_argument("--world", help="GmmSpec JSON (default: world.json beside the input file)")
    p.add_argument("--default-world", action="store_true", help="use the built-in seeded world")


# -- commands -----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.default_world:
        spec = default_world()
    elif args.spec:
        spec = GmmSpec.from_dict(_load_json(args.spec))
    else:
        raise UsageError("gen-data needs --spec PATH or --default-world")
    if args.n_per_class < 1:
        raise UsageError("--n-per-class must be positive")
    n_test = args.n_test_per_class or args.n_per_class
    train = sample_dataset(spec, args.n_per_class, derived_seed(args.seed, 0))
    test = sample_dataset(spec, n_test, derived_seed(args.seed, 1))
    out = Path(args.out)
    write_json(out / "world.json", spec.to_dict())
    write_json(out / "train.json", train.to_dict())
    write_json(out / "test.json", test.to_dict())
    log.info("gen-data: wrote %d train / %d test points to %s", len(train), len(test), out)
    return OK


def _distill_config(args, schedule) -> DistillConfig:
    return DistillConfig(
        ipc=args.ipc, m=args.m, weights=args.weights, mode=args.mode, seed=args.seed,
        var_scale=args.var_scale, schedule=schedule,
    )


def cmd_distill(args) -> int:
    data = _load_dataset(args.data)
    spec = _load_world(args, args.data)
    _check_digest(data.spec_digest, spec, args.data)
    schedule = build_schedule(num_inference=args.steps)
    config = _distill_config(args, schedule)
    distilled = distill_dataset(data, spec, config)
    write_json(args.out, distilled.to_dict())
    if args.stats_out:
        write_json(args.stats_out, stats_bundle(distilled, config))
    log.info("distill: %s mode, %d points -> %s", config.mode, len(distilled.labels), args.out)
    return OK


def cmd_regen(args) -> int:
    bundle = _load_json(args.stats)
    spec = _load_world(args, args.stats)
    _check_digest(bundle.get("spec_digest", ""), spec, args.stats)
    if args.ipc < 1:
        raise UsageError("--ipc must be positive")
    distilled = regenerate_from_stats(bundle, args.ipc, spec, args.seed)
    write_json(args.out, distilled.to_dict())
    log.info("regen: %d points -> %s", len(distilled.labels), args.out)
    return OK


def cmd_eval(args) -> int:
    train_doc = _load_json(args.train)
    train = _load_dataset(args.train)
    test = _load_dataset(args.test)
    if len(test) == 0:
        raise ValidationError(f"{args.test}: test set is empty")
    if len(train) and train.dimension != test.dimension:
        raise ValidationError("train and test dimensions differ")
    n_classes = max(train.classes() + test.classes()) + 1
    model = train_classifier(train, TrainConfig(args.lr, args.epochs, args.l2), n_classes=n_classes)
    acc = evaluate_classifier(model, test)
    energy = 0.0
    if args.full:
        full = _load_dataset(args.full)
        energy = classwise_energy_distance(train, full)
    report = EvalReport(mode=train_doc.get("mode", "full"), accuracy=acc, energy_distance=energy,
                        label=Path(args.train).name)
    report_path = Path(args.report)
    write_text_atomic(report_path, dump_json(report.to_dict()))
    write_text_atomic(report_path.with_suffix(".csv"), report_csv([report]))
    log.info("eval: accuracy %.4f", acc)
    return OK


def _test_path(args) -> str:
    return args.test or str(Path(args.data).parent / "test.json")


def cmd_sweep(args) -> int:
    data = _load_dataset(args.data)
    test = _load_dataset(_test_path(args))
    spec = _load_world(args, args.data)
    _check_digest(data.spec_digest, spec, args.data)
    if not args.steps_list or any(k < 1 for k in args.steps_list):
        raise UsageError("--steps-list needs positive integers")
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    config = DistillConfig(ipc=args.ipc, m=args.m, weights=args.weights, mode=args.mode)
    rows = timestep_sweep(data, test, spec, args.steps_list, config, seeds=range(args.seeds))
    write_text_atomic(args.out, sweep_csv(rows))
    log.info("sweep-steps: %d rows -> %s", len(rows), args.out)
    return OK


def cmd_ablate(args) -> int:
    data = _load_dataset(args.data)
    test = _load_dataset(_test_path(args))
    spec = _load_world(args, args.data)
    _check_digest(data.spec_digest, spec, args.data)
    if args.seeds < 2:
        raise UsageError("--seeds must be at least 2")
    config = DistillConfig(ipc=args.ipc, m=args.m, weights=args.weights,
                           schedule=build_schedule(num_inference=args.steps))
    rows = ablation_run(data, test, spec, config, list(range(args.seeds)), weight_grid=args.weight_grid)
    write_text_atomic(args.out, ablation_csv(rows))
    log.info("ablate: %d rows -> %s", len(rows), args.out)
    return OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="diffdistill", description="Distribution-matched dataset distillation on Gaussian-mixture worlds.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-stage progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="sample train/test datasets from a world")
    p.add_argument("--spec", help="GmmSpec JSON file")
    p.add_argument("--default-world", action="store_true", help="use the built-in seeded world")
    p.add_argument("--n-per-class", type=int, required=True, help="training points per class")
    p.add_argument("--n-test-per-class", type=int, default=None, help="test points per class (default: same)")
    p.add_argument("--seed", type=int, required=True, help="base seed; train and test use derived streams")
    p.add_argument("--out", required=True, help="output directory (world.json, train.json, test.json)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("distill", help="distil a dataset")
    p.add_argument("--data", required=True, help="training Dataset JSON")
    _add_world_args(p)
    p.add_argument("--mode", choices=MODES, default="group", help="group (full method), random or ddpm baseline")
    p.add_argument("--ipc", type=int, default=DEFAULT_IPC, help="points per class")
    p.add_argument("--m", type=int, default=DEFAULT_M, help="candidate subsets for group sampling")
    p.add_argument("--steps", type=int, default=DEFAULT_INFERENCE_STEPS, help="DDIM inversion/sampling steps K")
    p.add_argument("--weights", type=_floats, default=DEFAULT_WEIGHTS, help="loss weights mu,sigma,skew")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="DistilledSet JSON output")
    p.add_argument("--stats-out", help="also write the per-class stats bundle here")
    p.add_argument("--var-scale", type=float, default=1.0, help="multiply the fitted variances before sampling")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("regen", help="regenerate a distilled set from a stats bundle")
    p.add_argument("--stats", required=True, help="stats bundle JSON")
    _add_world_args(p)
    p.add_argument("--ipc", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="DistilledSet JSON output")
    p.set_defaults(func=cmd_regen)

    p = sub.add_parser("eval", help="train the classifier on one set and test on another")
    p.add_argument("--train", required=True, help="Dataset or DistilledSet JSON")
    p.add_argument("--test", required=True, help="Dataset JSON")
    p.add_argument("--report", required=True, help="EvalReport JSON (a .csv twin is written beside it)")
    p.add_argument("--full", help="full training Dataset for the energy-distance column")
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--l2", type=float, default=TrainConfig.l2)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-steps", help="normality / round-trip / accuracy per inversion step count")
    p.add_argument("--data", required=True, help="training Dataset JSON")
    p.add_argument("--test", help="test Dataset JSON (default: test.json beside --data)")
    _add_world_args(p)
    p.add_argument("--steps-list", type=_ints, required=True, help="comma-separated K values")
    p.add_argument("--seeds", type=int, default=1, help="distillation seeds 0..N-1 averaged per row")
    p.add_argument("--mode", choices=MODES, default="group")
    p.add_argument("--ipc", type=int, default=DEFAULT_IPC)
    p.add_argument("--m", type=int, default=DEFAULT_M)
    p.add_argument("--weights", type=_floats, default=DEFAULT_WEIGHTS)
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="mode (and loss-term) ablation over seeds")
    p.add_argument("--data", required=True, help="training Dataset JSON")
    p.add_argument("--test", help="test Dataset JSON (default: test.json beside --data)")
    _add_world_args(p)
    p.add_argument("--seeds", type=int, required=True, help="number of distillation seeds (0..N-1)")
    p.add_argument("--weight-grid", action="store_true", help="add the seven loss-term combinations")
    p.add_argument("--ipc", type=int, default=DEFAULT_IPC)
    p.add_argument("--m", type=int, default=DEFAULT_M)
    p.add_argument("--steps", type=int, default=DEFAULT_INFERENCE_STEPS)
    p.add_argument("--weights", type=_floats, default=DEFAULT_WEIGHTS)
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"diffdistill: usage error: {exc}", file=sys.stderr)
        return USAGE
    except SystemExit as exc:  # --help
        return OK if not exc.code else USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"diffdistill: usage error: {exc}", file=sys.stderr)
        return USAGE
    except (ValidationError, SpecError, ScheduleError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"diffdistill: invalid input: {exc}".replace("\n", " "), file=sys.stderr)
        return INVALID
    except OSError as exc:
        print(f"diffdistill: I/O error: {exc}", file=sys.stderr)
        return IO


if __name__ == "__main__":
    sys.exit(main())
