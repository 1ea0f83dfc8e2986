"""Command-line entry point: ``ildata <subcommand> [flags]``.

Every subcommand reads an optional JSON config (``--config``), applies
``--set dotted.key=value`` overrides and then its own flags (flags win),
and writes its outputs into ``--output-dir``. Tabular outputs are CSV whose
first line is a ``#`` provenance comment (tool version, seed, config hash).

Exit codes: 0 success, 1 module error, 2 usage error, 3 bound verification failed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bc import TrainConfig, load_policy, save_policy, train
from .coverage import CurveSpec, curves_to_csv, emit_coverage_curves
from .dataset import load_dataset, save_dataset
from .harness import (
    SweepSpec, export_results, provenance_line, run_combined_noise_sweep,
    run_policy_noise_sweep, run_system_noise_sweep,
)
from .mdp import verify_lemma1, verify_theorem1
from .metrics import ClusterParams, default_epsilon, format_report, metrics_report
from .pmobstacle import EnvConfig, ScriptedExpert, collect_dataset, evaluate, successful_only

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_BOUND_FAILED = 0, 1, 2, 3

log = logging.getLogger("ildata")


class UsageError(Exception):
    pass


def _csv_list(cast):
    def parse(text: str):
        try:
            return [cast(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {exc}") from exc
    return parse


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def set_dotted(config: dict, key: str, value) -> None:
    parts = key.split(".")
    node = config
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise UsageError(f"override {key!r}: {p!r} is not a section")
    node[parts[-1]] = value


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# flag dest -> dotted config key, per subcommand
FLAG_KEYS = {
    "collect": {"episodes": "episodes", "sigma_s": "env.sigma_s", "sigma_p": "expert.sigma_p",
                "successful_only": "successful_only"},
    "metrics": {"epsilon": "epsilon", "norm": "norm", "accel": "accel"},
    "coverage": {"panel": "panels", "n": "ps_ns", "epsilon": "ps_epsilon", "pb_n": "pb_n",
                 "sigma_p": "pb_sigma_p", "alpha": "alpha", "d": "d"},
    "verify-bounds": {"seeds": "seeds", "bound": "bound"},
    "train": {"epochs": "train.epochs", "min_updates": "train.min_updates",
              "learning_rate": "train.learning_rate", "batch_size": "train.batch_size",
              "hidden": "train.hidden_sizes", "successful_only": "successful_only"},
    "eval": {"sigma_s": "sigma_s", "episodes": "episodes"},
    "sweep": {"kind": "kind", "repeats": "repeats", "dataset_sizes": "dataset_sizes",
              "n_eval_episodes": "n_eval_episodes", "workers": "workers"},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file for this subcommand")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key by dotted path; value parsed as JSON when possible")
    common.add_argument("--output-dir", type=Path, default=Path("."), help="directory for output files")
    common.add_argument("--seed", type=int, default=0, help="base seed (nonnegative)")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")

    parser = argparse.ArgumentParser(prog="ildata", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ildata {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    p = sub.add_parser("collect", parents=[common], help="roll out the scripted expert into a dataset")
    p.add_argument("--episodes", type=int, help="number of expert episodes (default 10)")
    p.add_argument("--sigma-s", type=float, help="system noise std during collection")
    p.add_argument("--sigma-p", type=float, help="policy noise std on expert actions")
    p.add_argument("--successful-only", action="store_true", default=None,
                   help="drop failed expert episodes before saving")

    p = sub.add_parser("metrics", parents=[common], help="action variance, state similarity and horizon")
    p.add_argument("dataset", type=Path, help="dataset JSONL file")
    p.add_argument("--epsilon", type=float, help="cluster radius (default: 0.05 x mean state std)")
    p.add_argument("--norm", choices=["l2", "linf", "l1"], help="state distance norm")
    p.add_argument("--accel", choices=["none", "grid"], help="neighbor search backend")

    p = sub.add_parser("coverage", parents=[common], help="coverage probability curves as CSV")
    p.add_argument("--panel", choices=["ps", "pb", "both"], help="which curve family to emit")
    p.add_argument("--n", type=_csv_list(int), help="comma-separated sample counts for the P_S panel")
    p.add_argument("--epsilon", type=float, help="coverage tolerance for the P_S panel")
    p.add_argument("--pb-n", type=int, help="sample count for the P_B panel")
    p.add_argument("--sigma-p", type=float, help="base policy noise for the P_B panel")
    p.add_argument("--alpha", type=float, help="policy noise gain for the P_B panel")
    p.add_argument("--d", type=int, help="state dimension")

    p = sub.add_parser("verify-bounds", parents=[common], help="check the distribution-shift bounds")
    p.add_argument("--seeds", type=int, help="number of random tabular instances (default 1000)")
    p.add_argument("--bound", choices=["theorem1", "lemma1", "both"], help="which bound to check")

    p = sub.add_parser("train", parents=[common], help="fit a behavioral-cloning policy")
    p.add_argument("dataset", type=Path, help="dataset JSONL file")
    p.add_argument("--epochs", type=int, help="minimum number of epochs")
    p.add_argument("--min-updates", type=int, help="train until at least this many Adam steps")
    p.add_argument("--learning-rate", type=float, help="Adam step size")
    p.add_argument("--batch-size", type=int, help="minibatch size")
    p.add_argument("--hidden", type=_csv_list(int), help="comma-separated hidden layer widths")
    p.add_argument("--successful-only", action="store_true", default=None,
                   help="train only on successful trajectories")

    p = sub.add_parser("eval", parents=[common], help="success rate of a policy checkpoint")
    p.add_argument("policy", type=Path, help="policy checkpoint JSON")
    p.add_argument("--sigma-s", type=float, help="system noise std at evaluation")
    p.add_argument("--episodes", type=int, help="number of evaluation episodes (default 100)")

    p = sub.add_parser("sweep", parents=[common], help="data-noising sweep: collect, train, evaluate")
    p.add_argument("--kind", choices=["system", "policy", "combined", "all"], help="which sweep to run")
    p.add_argument("--repeats", type=int, help="datasets per cell")
    p.add_argument("--dataset-sizes", type=_csv_list(int), help="comma-separated episode counts")
    p.add_argument("--n-eval-episodes", type=int, help="evaluation episodes per cell")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    config: dict = {}
    if args.config is not None:
        try:
            config = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(config, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        set_dotted(config, key, _parse_value(value))
    for dest, key in FLAG_KEYS[args.command].items():
        value = getattr(args, dest, None)
        if value is not None:
            set_dotted(config, key, value)
    return config


def _write_csv(path: Path, provenance: str, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(provenance + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _env_expert(config: dict) -> tuple[EnvConfig, ScriptedExpert]:
    env = EnvConfig.from_dict(config.get("env", {}))
    e = dict(config.get("expert", {}))
    if "waypoints" in e:
        e["waypoints"] = tuple(tuple(float(x) for x in w) for w in e["waypoints"])
    return env, ScriptedExpert(**e)


def cmd_collect(config, args, prov) -> int:
    env, expert = _env_expert(config)
    ds = collect_dataset(env, expert, int(config.get("episodes", 10)), args.seed)
    if config.get("successful_only", False):
        ds = successful_only(ds)
    out = args.output_dir / "dataset.jsonl"
    save_dataset(ds, out)
    n_ok = sum(t.success for t in ds.trajectories)
    print(f"wrote {len(ds)} trajectories ({n_ok} successful) to {out}")
    return EXIT_OK


def cmd_metrics(config, args, prov) -> int:
    ds = load_dataset(args.dataset)
    eps = config.get("epsilon")
    params = ClusterParams(default_epsilon(ds) if eps is None else float(eps), config.get("norm", "l2"))
    report = metrics_report(ds, params, config.get("accel", "none"))
    print(format_report(report))
    d = report.as_dict()
    _write_csv(args.output_dir / "metrics.csv", prov, list(d), [[repr(v) if isinstance(v, float) else v
                                                                  for v in d.values()]])
    return EXIT_OK


def cmd_coverage(config, args, prov) -> int:
    config = dict(config)
    panel = config.pop("panels", "both")
    if isinstance(panel, str):
        panel = ("ps", "pb") if panel == "both" else (panel,)
    for key in ("ps_ns", "pb_multipliers", "sigmas"):
        if key in config:
            config[key] = tuple(config[key])
    spec = CurveSpec(panels=tuple(panel), **config)
    text = curves_to_csv(emit_coverage_curves(spec))
    (args.output_dir / "coverage.csv").write_text(prov + "\n" + text, encoding="utf-8")
    print(f"wrote {text.count(chr(10)) - 1} rows to {args.output_dir / 'coverage.csv'}")
    return EXIT_OK


def cmd_verify_bounds(config, args, prov) -> int:
    n = int(config.get("seeds", 1000))
    which = config.get("bound", "both")
    if n < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = range(args.seed, args.seed + n)
    suites = []
    if which in ("theorem1", "both"):
        suites.append(("theorem1", verify_theorem1(seeds)))
    if which in ("lemma1", "both"):
        suites.append(("lemma1", verify_lemma1(seeds)))
    rows, ok = [], True
    for name, reports in suites:
        held = sum(r.holds for r in reports)
        ok &= held == len(reports)
        print(f"{name}: {held}/{len(reports)} hold")
        rows += [[name, s, repr(r.lhs), repr(r.rhs), repr(r.slack), r.holds] for s, r in zip(seeds, reports)]
    _write_csv(args.output_dir / "bounds.csv", prov, ["bound", "seed", "lhs", "rhs", "slack", "holds"], rows)
    return EXIT_OK if ok else EXIT_BOUND_FAILED


def cmd_train(config, args, prov) -> int:
    ds = load_dataset(args.dataset)
    if config.get("successful_only", False):
        ds = successful_only(ds)
    tc = TrainConfig(**{**config.get("train", {}), "seed": args.seed})
    history: list[float] = []
    policy = train(ds, tc, history)
    out = args.output_dir / "policy.json"
    save_policy(policy, out)
    _write_csv(args.output_dir / "train_loss.csv", prov, ["epoch", "loss"],
               [[i, repr(v)] for i, v in enumerate(history)])
    print(f"final loss {history[-1]:.6g}; wrote {out}")
    return EXIT_OK


def cmd_eval(config, args, prov) -> int:
    policy = load_policy(args.policy)
    env = EnvConfig.from_dict(config.get("env", {}))
    sigma = float(config.get("sigma_s", env.sigma_s))
    episodes = int(config.get("episodes", 100))
    rate, stderr = evaluate(policy, env, sigma, episodes, args.seed)
    print(f"success {rate:.1f}% (stderr {stderr:.1f}) over {episodes} episodes at sigma_s={sigma:g}")
    _write_csv(args.output_dir / "eval.csv", prov, ["sigma_s", "episodes", "success_rate", "stderr"],
               [[repr(sigma), episodes, repr(rate), repr(stderr)]])
    return EXIT_OK


def cmd_sweep(config, args, prov) -> int:
    config = dict(config)
    kind = config.pop("kind", "all")
    spec = SweepSpec.from_dict({**config, "base_seed": args.seed})
    runners = {"system": run_system_noise_sweep, "policy": run_policy_noise_sweep,
               "combined": run_combined_noise_sweep}
    kinds = list(runners) if kind == "all" else [kind]
    cache: dict = {}
    result = None
    for k in kinds:
        part = runners[k](spec, cache)
        result = part if result is None else result + part
    paths = export_results(result, args.output_dir, prov)
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


COMMANDS = {"collect": cmd_collect, "metrics": cmd_metrics, "coverage": cmd_coverage,
            "verify-bounds": cmd_verify_bounds, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed < 0:
            raise UsageError("--seed must be nonnegative")
        config = resolve_config(args)
        args.output_dir.mkdir(parents=True, exist_ok=True)
        prov = provenance_line(args.seed, config_hash({"command": args.command, **config}))
        return COMMANDS[args.command](config, args, prov)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ildata: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError, KeyError, OSError, ArithmeticError) as exc:
        print(f"ildata {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
