"""Command line entry point: ``rsrkit <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 regime violation outside a
sweep, 4 estimator failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..errors import ConfigError, NeedsGroundTruth, RegimeViolation
from ..io import save_truth, truth_path, write_csv, write_dataset
from . import experiments as ex

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_ESTIMATOR = 0, 2, 3, 4

KIND_FOR = {
    "run": "convergence",
    "noise-sweep": "noise_sweep",
    "phase": "phase_diagram",
    "compare": "tme_vs_ste",
    "diagnose": "diagnose",
}


def _common(p):
    p.add_argument("--config", help="JSON experiment spec")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamps and wall times so reruns are byte-identical")
    p.add_argument("--threads", type=int, default=1, help="worker processes for grid cells")


def build_parser():
    parser = argparse.ArgumentParser(prog="rsrkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("gen", help="generate a dataset file from a spec's model")
    _common(p)
    p.add_argument("--name", default="dataset", help="base file name (default: dataset)")
    for name, helptext in (("run", "STE convergence traces"),
                           ("noise-sweep", "final error across noise levels"),
                           ("phase", "recovery map over dssnr / gamma / alpha"),
                           ("compare", "TME alone vs TME-initialised STE")):
        _common(sub.add_parser(name, help=helptext))
    p = sub.add_parser("diagnose", help="condition numbers and condition margins for one instance")
    _common(p)
    p.add_argument("--dataset", help="dataset file (truth read from the .truth.json sidecar)")
    p.add_argument("--truth", help="explicit ground-truth file")
    p.add_argument("--gamma", type=float, help="shrinkage used for the condition")
    return parser


def _load_spec(args, kind):
    if args.config:
        obj = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if obj is None:
            raise ConfigError(f"config file {args.config} not found")
    elif kind == "diagnose" and getattr(args, "dataset", None):
        obj = {"kind": "diagnose", "model": {}}
    else:
        raise ConfigError("--config is required")
    if not isinstance(obj, dict):
        raise ConfigError("spec must be a JSON object")
    if kind is not None:
        obj["kind"] = kind
    obj.setdefault("kind", "convergence")
    if args.seed is not None:
        obj["seed"] = args.seed
    if getattr(args, "dataset", None):
        obj["model"] = {**obj.get("model", {}), "dataset": args.dataset}
        if args.truth:
            obj["model"]["truth"] = args.truth
    if getattr(args, "gamma", None) is not None:
        obj.setdefault("estimator", {})["gamma"] = args.gamma
    if "dataset" in obj.get("model", {}) and "d" not in obj.get("estimator", {}):
        tp = obj["model"].get("truth") or truth_path(obj["model"]["dataset"])
        if not Path(tp).exists():
            raise NeedsGroundTruth(f"no ground truth at {tp}")
        basis = json.loads(Path(tp).read_text())["basis"]
        obj.setdefault("estimator", {})["d"] = len(basis[0])
    return ex.ExperimentSpec.from_dict(obj)


def _zero_times(records, names):
    for r in records:
        for n in names:
            if n in r:
                r[n] = 0.0


def _finish(spec, rows):
    """Exit status for a finished row set: only single-task runs escalate."""
    if spec.is_sweep or not rows:
        return EXIT_OK
    status = rows[0]["status"]
    if status.startswith("estimator_failure"):
        return EXIT_ESTIMATOR
    if status == "regime_violation":
        return EXIT_REGIME
    return EXIT_OK


def cmd_gen(args):
    spec = _load_spec(args, None)
    out = Path(args.out)
    cell = spec.cells()[0]
    data, truth, _ = ex.build_instance(spec, cell, 0, 0)
    path = out / f"{args.name}.rsrd"
    write_dataset(path, data, epsilon=truth.noise_epsilon)
    save_truth(truth_path(path), truth)
    if args.format == "csv":
        write_csv(out / f"{args.name}.csv", data)
    print(path)
    return EXIT_OK


def cmd_rows(args, kind):
    spec = _load_spec(args, kind)
    out = Path(args.out)
    ts = not args.no_timestamp
    suffix = args.format
    if kind == "convergence":
        rows, traces = ex.run_convergence(spec, args.threads)
        if not ts:
            _zero_times(traces, ["wall_time"])
        ex.write_table(out / f"convergence_trace.{suffix}", traces, ex.TRACE_FIELDS, args.format, ts)
        extra = None
    elif kind == "noise_sweep":
        rows, summary = ex.run_noise_sweep(spec, args.threads)
        ex.write_json(out / "noise_sweep_summary.json", summary, ts)
        extra = summary
    elif kind == "phase_diagram":
        rows, summary = ex.run_phase_diagram(spec, args.threads)
        ex.write_table(out / f"phase_summary.{suffix}", summary, ex.PHASE_SUMMARY_FIELDS, args.format, ts)
        extra = None
    else:
        rows = ex.run_tme_vs_ste(spec, args.threads)
        extra = None
    if not ts:
        _zero_times(rows, ["runtime"])
    path = ex.write_table(out / f"{kind}.{suffix}", rows, ex.ROW_FIELDS, args.format, ts)
    print(path)
    if extra is not None:
        print(json.dumps(ex.json_value({k: v for k, v in extra.items() if k != "noisy_constants"})))
    return _finish(spec, rows)


def cmd_diagnose(args):
    spec = _load_spec(args, "diagnose")
    report, conditions = ex.diagnose(spec)
    out = Path(args.out)
    (out / "diagnostics.json").write_text(report.to_json(indent=1) + "\n")
    ex.write_json(out / "conditions.json", conditions, timestamp=not args.no_timestamp)
    print(report.to_json(indent=1))
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1:
            raise ConfigError("--threads must be positive")
        Path(args.out).mkdir(parents=True, exist_ok=True)
        if args.command == "gen":
            return cmd_gen(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
        return cmd_rows(args, KIND_FOR[args.command])
    except (ConfigError, NeedsGroundTruth, json.JSONDecodeError) as exc:
        print(f"rsrkit: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeViolation as exc:
        print(f"rsrkit: regime violation: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except ex.ESTIMATOR_FAILURES as exc:
        print(f"rsrkit: estimator failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR


if __name__ == "__main__":
    sys.exit(main())
