"""``dctnav`` command line: train-dnn, eval-dnn, run, sweep, report.

Exit codes: 0 success, 1 task failure, 2 configuration error, 3 internal fault.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from ..errors import TrainingError, ValidationError

EXIT_OK, EXIT_TASK, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3
ENDPOINT_ENV = "DCTNAV_VLM_ENDPOINT"

log = logging.getLogger("dctnav")


def _coerce(raw: str, default, name):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ValidationError(f"{name}: expected true or false, got {raw!r}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ValidationError(f"{name}: expected an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"{name}: expected a number, got {raw!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or len(value) != len(default):
            raise ValidationError(f"{name}: expected a list of {len(default)} numbers, got {raw!r}")
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        return str(value)
    raise ValidationError(f"{name}: cannot be overridden from the command line")


def apply_overrides(obj, pairs, prefix):
    """Replace dataclass fields from ``name=value`` strings, type-checked against current values."""
    if not pairs:
        return obj
    fields = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for name, raw in pairs:
        if name not in fields:
            raise ValidationError(f"unknown field {prefix}.{name}")
        changes[name] = _coerce(raw, getattr(obj, name), f"{prefix}.{name}")
    try:
        return dataclasses.replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{prefix}: {exc}") from exc


def parse_sets(items):
    out = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"--set expects group.field=value, got {item!r}")
        key, raw = item.split("=", 1)
        group, name = key.split(".", 1)
        out.setdefault(group, []).append((name, raw))
    unknown = set(out) - {"planner", "perception", "partition", "correction", "navigator", "episode"}
    if unknown:
        raise ValidationError(f"unknown override group(s): {', '.join(sorted(unknown))}")
    return out


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _engine(args):
    from ..dualdist import ExactDualSolver, DualDistanceMLP, load_default_model
    if args.exact_solver:
        return ExactDualSolver().fit()
    if getattr(args, "model", None):
        return DualDistanceMLP.load(args.model)
    return load_default_model()


def _filter(args, scenario):
    from ..vpp.filters import GroundTruthFilter, RejectAllFilter, RemoteFilter
    if getattr(args, "all_fixed", False):
        return RejectAllFilter()
    url = args.vlm_endpoint or os.environ.get(ENDPOINT_ENV)
    if url:
        return RemoteFilter(url, timeout=args.vlm_timeout)
    return GroundTruthFilter(scenario.movability_labels())


def _scenario(name_or_path, seed):
    from ..sim.scenarios import by_name
    from ..sim.world import load_scenario
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise ValidationError(f"scenario file {path} does not exist")
        return load_scenario(path)
    return by_name(name_or_path, seed)


def _run_kwargs(args, sets):
    from ..sim.episode import EpisodeConfig
    from ..vgn.correction import CorrectionConfig
    from ..vgn.mpc import PlannerParams
    from ..vgn.navigator import NavigatorConfig
    from ..vpp.memory import PartitionConfig
    from ..vpp.pipeline import PerceptionConfig

    partition = apply_overrides(PartitionConfig(), sets.get("partition"), "partition")
    perception = apply_overrides(PerceptionConfig(partition=partition), sets.get("perception"), "perception")
    episode = EpisodeConfig(timeout=args.timeout, mode=args.mode)
    return {
        "planner": apply_overrides(PlannerParams(), sets.get("planner"), "planner"),
        "perception": perception,
        "cfg": apply_overrides(episode, sets.get("episode"), "episode"),
        "correction": apply_overrides(CorrectionConfig(), sets.get("correction"), "correction"),
        "navigator": apply_overrides(NavigatorConfig(), sets.get("navigator"), "navigator"),
    }


# -- commands -----------------------------------------------------------------
def cmd_train_dnn(args) -> int:
    from ..dualdist import SamplingRanges, default_polytope, evaluate_surrogate, generate_demos, train_mlp
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ranges = SamplingRanges(args.r_min, args.r_max, args.count)
    demos = generate_demos(ranges, default_polytope(), seed=args.seed)
    try:
        model = train_mlp(demos, epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch_size,
                          seed=args.seed)
    except TrainingError as exc:
        log.error("training diverged at epoch %s: %s", exc.epoch, exc)
        return EXIT_TASK
    model.calibrate_margin(demos.points)
    model_path = Path(args.model_out) if args.model_out else out / "dual_mlp.json"
    model.save(model_path)
    report = evaluate_surrogate(model, count=max(1, args.count // 10), seed=args.seed + 1,
                                r_min=args.r_min, r_max=args.r_max)
    report.update(finalLoss=float(model.loss_curve_[-1]), trainSampleCount=len(demos),
                  margin=model.margin_, model=str(model_path))
    _write_json(out / "train_report.json", report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_eval_dnn(args) -> int:
    from ..dualdist import evaluate_surrogate
    report = evaluate_surrogate(_engine(args), count=args.count, seed=args.seed, r_min=args.r_min,
                                r_max=args.r_max)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_report.json", report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    from ..sim.episode import compute_metrics, run_episode
    sets = parse_sets(args.set)
    scenario = _scenario(args.scenario, args.seed)
    kw = _run_kwargs(args, sets)
    trace = run_episode(scenario, seed=args.seed, engine=_engine(args),
                        movability_filter=_filter(args, scenario), **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}_seed{args.seed}"
    trace.write(out / f"{stem}.jsonl")
    metrics = compute_metrics(trace).to_dict()
    metrics["status"] = trace.status
    _write_json(out / f"{stem}_metrics.json", metrics)
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK if trace.status == "success" else EXIT_TASK


def cmd_sweep(args) -> int:
    from .evaluation import FXMY_LEVELS, NOISE_LEVELS, fxmy_sweep, noise_dial, write_csv
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.family == "fxmy":
        levels = args.levels.split(",") if args.levels else list(FXMY_LEVELS)
        kw = _run_kwargs(args, parse_sets(args.set))
        rows = fxmy_sweep(levels, args.reps, args.seed, engine=_engine(args), **kw)
    else:
        levels = [float(x) for x in args.levels.split(",")] if args.levels else list(NOISE_LEVELS)
        rows = noise_dial(levels, args.reps, args.seed, scenario=args.scenario or "F1M3")
    path = out / f"sweep_{args.family}.csv"
    write_csv(rows, path)
    print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    from .evaluation import report_traces
    written, skipped = report_traces(args.traces, args.out)
    for p in written:
        print(p)
    if skipped:
        print("skipped: " + ", ".join(str(p) for p in skipped), file=sys.stderr)
    return EXIT_OK


# -- parser -------------------------------------------------------------------
def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0))
    p.add_argument("--mode", choices=("lockstep", "decoupled"), default=d("lockstep"))
    p.add_argument("--out", default=d(None), help="output directory (default ./out; report writes beside the traces)")
    p.add_argument("--exact-solver", action="store_true", default=d(False))
    p.add_argument("--vlm-endpoint", default=d(None), help=f"movability filter URL (else ${ENDPOINT_ENV})")
    p.add_argument("--vlm-timeout", type=float, default=d(10.0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dctnav", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-dnn", parents=[common], help="generate demonstrations and train the surrogate")
    p.add_argument("--count", type=int, default=100_000)
    p.add_argument("--r-min", type=float, default=0.0)
    p.add_argument("--r-max", type=float, default=5.0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_train_dnn)

    p = sub.add_parser("eval-dnn", parents=[common], help="held-out distance error of a surrogate")
    p.add_argument("--model")
    p.add_argument("--count", type=int, default=10_000)
    p.add_argument("--r-min", type=float, default=0.0)
    p.add_argument("--r-max", type=float, default=5.0)
    p.set_defaults(func=cmd_eval_dnn)

    run_common = argparse.ArgumentParser(add_help=False)
    run_common.add_argument("--model")
    run_common.add_argument("--timeout", type=float, default=60.0)
    run_common.add_argument("--set", action="append", metavar="GROUP.FIELD=VALUE",
                            help="override a planner/perception/partition/correction/navigator/episode field")

    p = sub.add_parser("run", parents=[common, run_common], help="run one episode")
    p.add_argument("scenario", help="library name (case1, case2, case3, heavy, FxMy) or scenario JSON file")
    p.add_argument("--all-fixed", action="store_true", help="ablation: treat every obstacle as fixed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common, run_common], help="repeat episodes over levels")
    p.add_argument("family", choices=("fxmy", "noise-dial"))
    p.add_argument("--levels", help="comma-separated levels")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--scenario", help="scenario for the noise dial (default F1M3)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="CSV series from trace files")
    p.add_argument("traces", help="directory of .jsonl traces")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "reps", 1) < 1:
        print("error: --reps must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.out is None and args.command != "report":
        args.out = "out"
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything else is a bug or a simulation fault
        log.exception("internal fault")
        print(f"internal fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
