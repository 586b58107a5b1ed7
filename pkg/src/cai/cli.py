"""Command-line harness: reproducible runs, the enumeration oracle, and
the quadrant report.

Exit codes: 0 success, 2 validation error, 3 numeric failure,
4 resource limit.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import elbo_exact, enumeration_posterior, log_evidence
from .dists import PolicyTable
from .envs import OptimalityModel, TabularMDP, make_env, list_env_ids
from .errors import CaiError, InvalidInputError, NumericError, ResourceLimitError
from .registry import ALGORITHMS, get_algorithm, quadrant_table, run_algorithm
from .softdp import optimal_posterior, soft_backward_pass

CSV_HEADER = ["iter", "step", "elbo", "return", "entropy", "aux1", "aux2", "wall_ms"]


@dataclass
class RunResult:
    metrics_csv: str
    log_jsonl: str
    checkpoint: str
    config_echo: str
    version: str


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if not np.isfinite(value):
            return ""
        return format(value, ".12g")
    return str(value)


def _write_outputs(out_dir: Path, config: dict, result: dict,
                   include_timings: bool) -> RunResult:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for row in result["rows"]:
            writer.writerow([_format_cell(row.get(col)) for col in CSV_HEADER[:-1]]
                            + [_format_cell(row.get("wall_ms")) if include_timings else ""])
    jsonl_path = out_dir / "log.jsonl"
    with open(jsonl_path, "w", encoding="utf-8") as handle:
        for record in result["log"]:
            record = dict(record)
            if not include_timings:
                record.pop("wall_ms", None)
            handle.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")
    checkpoint_path = out_dir / "checkpoint.json"
    checkpoint_path.write_text(
        json.dumps(result["checkpoint"], sort_keys=True, default=_json_default),
        encoding="utf-8")
    config_path = out_dir / "config.json"
    config_path.write_text(json.dumps(config, sort_keys=True, indent=2), encoding="utf-8")
    return RunResult(str(csv_path), str(jsonl_path), str(checkpoint_path),
                     str(config_path), f"cai-toolkit {__version__}")


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)!r}")


def _set_dot_path(doc: dict, dotted: str, raw_value: str) -> None:
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    keys = dotted.split(".")
    node = doc
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise InvalidInputError(f"--set path {dotted!r} crosses a non-object value")
    node[keys[-1]] = value


def validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise InvalidInputError("config must be a JSON object")
    if "algorithm" not in config:
        raise InvalidInputError("config needs an 'algorithm' key")
    entry = get_algorithm(str(config["algorithm"]))
    config.setdefault("env_id", entry.default_env)
    make_env(str(config["env_id"]))  # validates the id
    config.setdefault("seed", 0)
    if not isinstance(config["seed"], int):
        raise InvalidInputError("seed must be an integer")
    config.setdefault("params", {})
    if not isinstance(config["params"], dict):
        raise InvalidInputError("params must be an object")
    return config


def cmd_run(args) -> int:
    config = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    for assignment in args.set or []:
        if "=" not in assignment:
            raise InvalidInputError(f"--set expects key=value, got {assignment!r}")
        key, value = assignment.split("=", 1)
        _set_dot_path(config, key, value)
    if args.algorithm:
        config["algorithm"] = args.algorithm
    if args.env:
        config["env_id"] = args.env
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out:
        config["out_dir"] = args.out
    config = validate_config(config)
    out_dir = Path(config.get("out_dir") or "runs") / (
        f"{config['algorithm']}-{config['env_id']}-seed{config['seed']}")
    result = run_algorithm(config["algorithm"], config["env_id"],
                           config["seed"], config)
    run_result = _write_outputs(out_dir, config, result, args.timings)
    print(f"algorithm : {config['algorithm']}")
    print(f"env       : {config['env_id']}")
    print(f"metrics   : {run_result.metrics_csv}")
    print(f"log       : {run_result.log_jsonl}")
    print(f"checkpoint: {run_result.checkpoint}")
    print(f"version   : {run_result.version}")
    return 0


def cmd_oracle(args) -> int:
    env = make_env(args.env)
    if not isinstance(env, TabularMDP):
        raise InvalidInputError("the oracle enumerates tabular environments only")
    optimality = OptimalityModel(beta=args.beta)
    posterior, reachable = enumeration_posterior(env, optimality)
    evidence = log_evidence(env, optimality)
    if args.policy:
        policy = PolicyTable(np.array(json.loads(Path(args.policy).read_text()),
                                      dtype=np.float64))
    else:
        policy = PolicyTable(posterior)
    report = elbo_exact(env, policy, optimality)

    print(f"env          : {args.env}  (|S|={env.n_states}, |A|={env.n_actions}, "
          f"T={env.horizon})")
    print(f"beta         : {args.beta}")
    print(f"log-evidence : {evidence:.10f}")
    print(f"elbo         : {report.elbo:.10f}  (entropy form "
          f"{report.entropy_form_elbo:.10f}, constant {report.prior_constant:.10f})")
    print("exact posterior p(a | s_t, optimal):")
    for t in range(env.horizon):
        for s in range(env.n_states):
            if reachable[t, s]:
                row = ", ".join(f"{p:.6f}" for p in posterior[t, s])
                print(f"  t={t} s={s}: [{row}]")
    if args.out:
        payload = {
            "env_id": args.env, "beta": args.beta,
            "log_evidence": evidence,
            "posterior": posterior.tolist(),
            "reachable": reachable.tolist(),
            "elbo_report": json.loads(report.to_json()),
        }
        Path(args.out).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        print(f"written      : {args.out}")
    return 0


def cmd_quadrants(args) -> int:
    table = quadrant_table()
    if args.json:
        print(json.dumps(table, indent=2, sort_keys=True))
        return 0
    if args.quadrant:
        table = [row for row in table if row["quadrant"] == args.quadrant]
    width = max(len(row["algorithm"]) for row in table)
    print(f"{'algorithm'.ljust(width)}  {'quadrant'.ljust(17)}  module     description")
    for row in table:
        print(f"{row['algorithm'].ljust(width)}  {row['quadrant'].ljust(17)}  "
              f"{row['module'].ljust(9)}  {row['description']}")
    return 0


def cmd_envs(args) -> int:
    for env_id in list_env_ids():
        print(env_id)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cai", description="control-as-inference toolkit harness")
    parser.add_argument("--version", action="version",
                        version=f"cai-toolkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a registered algorithm")
    run_p.add_argument("--config", help="JSON config file")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dot-path config key")
    run_p.add_argument("--algorithm", help="registry key (overrides config)")
    run_p.add_argument("--env", help="environment id (overrides config)")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--out", help="output directory root")
    run_p.add_argument("--timings", action="store_true",
                       help="include wall times in outputs (breaks byte reproducibility)")
    run_p.set_defaults(func=cmd_run)

    oracle_p = sub.add_parser("oracle", help="exact enumeration ground truth")
    oracle_p.add_argument("--env", required=True)
    oracle_p.add_argument("--beta", type=float, default=1.0)
    oracle_p.add_argument("--policy", help="JSON policy table to evaluate")
    oracle_p.add_argument("--out", help="write the oracle report as JSON")
    oracle_p.set_defaults(func=cmd_oracle)

    quad_p = sub.add_parser("quadrants", help="algorithm-by-quadrant report")
    quad_p.add_argument("--json", action="store_true")
    quad_p.add_argument("--quadrant", help="filter, e.g. amortised-plan")
    quad_p.set_defaults(func=cmd_quadrants)

    envs_p = sub.add_parser("envs", help="list environment registry ids")
    envs_p.set_defaults(func=cmd_envs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (InvalidInputError, CaiError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
