"""Command-line interface.

Exit codes: 0 success (and every requested verdict replicable), 1 at least
one requested verdict not replicable, 2 configuration or data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import AssessmentConfig, ConfigError
from .decision import DecisionError, optimal_threshold_empirical
from .evaluation import EvaluationError, fmt17, matrix_csv, utility_matrix, utility_vector
from .inference import (
    InferenceError,
    bootstrap_within,
    cluster_bootstrap,
    permutation_test,
    study_strap_statistics,
)
from .replicability import (
    ReplicabilityError,
    absolute_epsilon,
    benchmark_compare,
    classify_region,
    distance_epsilon,
    distance_table,
    dominance,
    relative_epsilon,
)
from .simgen import SimulationError, generate
from .studyset import StudySetError, restrict, validate, write_collection

logger = logging.getLogger("predrep")

EXIT_OK, EXIT_NOT_REPLICABLE, EXIT_ERROR = 0, 1, 2
REPORT_FILES = ("report.json", "report.txt", "distances.csv", "utilities.csv")

_USER_ERRORS = (ConfigError, StudySetError, DecisionError, EvaluationError, ReplicabilityError,
                InferenceError, SimulationError, FileNotFoundError, KeyError)


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def canonical_body(report: dict[str, Any]) -> str:
    """Serialized report minus the timestamp and the hash itself."""
    body = {k: v for k, v in report.items() if k not in ("timestamp", "canonical_sha256")}
    return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False)


def build_report(command: str, config: AssessmentConfig | None, body: dict[str, Any]) -> dict[str, Any]:
    report = {
        "tool": "predrep",
        "tool_version": __version__,
        "command": command,
        "seed": config.seed if config else None,
        "config": _jsonable(config.echo()) if config else None,
        "body": _jsonable(body),
    }
    report["canonical_sha256"] = hashlib.sha256(canonical_body(report).encode()).hexdigest()
    report["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return report


def report_schema() -> dict[str, Any]:
    """The JSON schema every ``report.json`` validates against."""
    text = resources.files("predrep").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def write_json(path: Path, obj: Any) -> None:
    with path.open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _summary_lines(report: dict[str, Any]) -> list[str]:
    body = report["body"]
    lines = [f"predrep {report['tool_version']}  command: {report['command']}  seed: {report['seed']}"]
    if "utilities" in body:
        lines.append("")
        lines.append("Average utility per study")
        for sid, v in zip(body["utilities"]["study_ids"], body["utilities"]["values"]):
            lines.append(f"  {sid:<20} {v: .6f}")
    for v in body.get("verdicts", []):
        state = "REPLICABLE" if v["replicable"] else "NOT REPLICABLE"
        extra = f" [{v['backend']}]" if v.get("backend") else ""
        lines.append(f"{v['definition']}{extra}: achieved {v['achieved']:.6g} vs epsilon "
                     f"{v['epsilon']:.6g} -> {state} (worst pair {v['worst_pair'][0]} / {v['worst_pair'][1]})")
    if "dropped_studies" in body and body["dropped_studies"]:
        lines.append(f"studies dropped by restriction: {', '.join(body['dropped_studies'])}")
    if "test" in body:
        t = body["test"]
        lines.append(f"permutation test ({t['statistic']}): observed {t['statistic_observed']:.6g}, "
                     f"p = {t['p_value']:.6g} over {t['permutations']} permutations")
    if "resample" in body:
        r = body["resample"]
        if "studies" in r:
            for s in r["studies"]:
                lines.append(f"  {s['study_id']:<20} var {s['variance']:.6g}  "
                             f"CI [{s['ci'][0]:.6g}, {s['ci'][1]:.6g}]")
        else:
            lines.append(f"{r['scheme']} ({r['statistic']}): observed {r['observed']:.6g}, "
                         f"median {r['percentiles']['50']:.6g}")
            if "epsilon_rate" in r:
                lines.append(f"  proportion of replicates with statistic <= {r['epsilon']:g}: "
                             f"{r['epsilon_rate']:.4f}")
    if "benchmark" in body:
        b = body["benchmark"]
        lines.append(f"benchmark: mean utility {b['mean_utility']:.6g}, u0 {b['benchmark']:.6g}, "
                     f"gap {b['gap']:.6g}")
    if "validation" in body:
        flags = body["validation"]["flags"]
        lines.append("validation: " + ("no flags" if not flags else f"{len(flags)} flag(s)"))
        lines.extend(f"  - {f}" for f in flags)
    lines.append(f"canonical sha256: {report['canonical_sha256']}")
    return lines


def emit(out: Path, report: dict[str, Any], quiet: bool, extra_files: dict[str, str] | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", report)
    text = "\n".join(_summary_lines(report)) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    for name, content in (extra_files or {}).items():
        (out / name).write_text(content, encoding="utf-8")
    if not quiet:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _prepare(config: AssessmentConfig):
    collection = config.collection()
    dropped: tuple[str, ...] = ()
    predicate = config.predicate()
    if predicate is not None:
        collection, dropped = restrict(collection, predicate)
    return collection, dropped


def _utilities_csv(vector, matrix) -> str:
    lines = ["study_id,average_utility," + ",".join(f"diff_{s}" for s in vector.study_ids)]
    for sid, v, row in zip(vector.study_ids, vector.values, matrix.entries):
        lines.append(",".join([sid, fmt17(v), *(fmt17(x) for x in row)]))
    return "\n".join(lines) + "\n"


def cmd_assess(config: AssessmentConfig) -> tuple[dict[str, Any], int, dict[str, str]]:
    collection, dropped = _prepare(config)
    utility = config.utility()
    rule = config.rule(collection)
    vector = utility_vector(collection, rule, utility)
    matrix = utility_matrix(vector)
    verdicts = []
    for name in ("absolute", "relative", "distance"):
        if name not in config.definitions:
            continue
        eps = config.definitions[name]
        if name == "absolute":
            verdicts.append(absolute_epsilon(vector, eps))
        elif name == "relative":
            verdicts.append(relative_epsilon(vector, eps))
        else:
            verdicts.append(distance_epsilon(collection, config.distance_backend, eps, rule))
    body: dict[str, Any] = {
        "studies": [{"id": s.id, "n": s.n} for s in collection],
        "dropped_studies": list(dropped),
        "rule": rule.to_dict(),
        "utility": utility.to_dict(),
        "utilities": vector.to_dict(),
        "utility_matrix": matrix.to_dict(),
        "verdicts": [v.to_dict() for v in verdicts],
    }
    prev = config.prevalence(collection)
    if prev is not None:
        body["prevalence"] = {"value": prev.value, "source": prev.source}
    if collection.schema.has_score and all(u.score is not None for u in collection.pooled()):
        body["diagnostics"] = {
            "note": "per-study optimal thresholds; diagnostic only, the assessed rule is fixed",
            "per_study_optimal_thresholds": {
                s.id: optimal_threshold_empirical(s, utility) for s in collection
            },
        }
    try:
        dist = distance_table(collection, config.distance_backend, rule)
        distances_csv = matrix_csv(dist, collection.ids)
        body["distance_table"] = {"backend": config.distance_backend, "entries": dist.tolist()}
    except (ReplicabilityError, EvaluationError, DecisionError) as exc:
        distances_csv = f"# distance table unavailable: {exc}\n"
    alternatives = []
    for alt in config.raw.get("alternatives") or []:
        alt_rule = config.rule(collection, alt.get("rule", alt))
        alt_vec = utility_vector(collection, alt_rule, utility)
        dom = dominance(vector, alt_vec)
        entry = {"name": alt.get("name", "alternative"), "rule": alt_rule.to_dict(),
                 "utilities": list(alt_vec.values), "relation_of_assessed_rule": dom.relation,
                 "spread_assessed": dom.spread_a, "spread_alternative": dom.spread_b}
        if collection.K == 2:
            entry["region"] = classify_region(vector.values, alt_vec.values)
        alternatives.append(entry)
    if alternatives:
        body["alternatives"] = alternatives
    code = EXIT_OK if all(v.replicable for v in verdicts) else EXIT_NOT_REPLICABLE
    body["exit_code"] = code
    return body, code, {"distances.csv": distances_csv, "utilities.csv": _utilities_csv(vector, matrix)}


def cmd_test(config: AssessmentConfig, permutations=None, adjust=None) -> dict[str, Any]:
    collection, dropped = _prepare(config)
    utility = config.utility()
    rule = config.rule(collection)
    opts = config.test_options()
    result = permutation_test(
        collection, rule, utility, opts["statistic"],
        permutations if permutations is not None else opts["permutations"],
        config.seed, adjust or opts["adjust"], config.distance_backend,
    )
    return {"studies": [{"id": s.id, "n": s.n} for s in collection],
            "dropped_studies": list(dropped), "rule": rule.to_dict(),
            "test": result.to_dict(include_draws=opts["include_draws"])}


def cmd_resample(config: AssessmentConfig, scheme=None, replicates=None, gamma=None,
                 epsilon=None) -> dict[str, Any]:
    collection, dropped = _prepare(config)
    utility = config.utility()
    rule = config.rule(collection)
    opts = config.resample_options()
    plan = config.resample_plan(scheme, replicates, gamma)
    include = bool(opts.get("include_statistics", False))
    eps = epsilon if epsilon is not None else opts.get("epsilon")
    statistic = opts.get("statistic", "max_abs_diff")
    if plan.scheme == "within_study_bootstrap":
        res = bootstrap_within(collection, rule, utility, plan).to_dict(include_draws=include)
    elif plan.scheme == "cluster_bootstrap":
        res = cluster_bootstrap(collection, rule, utility, statistic, plan,
                                config.distance_backend).to_dict(include, eps)
    else:
        res = study_strap_statistics(collection, rule, utility, statistic, plan,
                                     opts.get("sizes"), config.distance_backend).to_dict(include, eps)
    return {"studies": [{"id": s.id, "n": s.n} for s in collection],
            "dropped_studies": list(dropped), "rule": rule.to_dict(), "resample": res}


def cmd_simulate(config: AssessmentConfig, out: Path) -> dict[str, Any]:
    spec = config.simulation()
    collection = generate(spec)
    manifest = write_collection(collection, out)
    return {"simulation": {"seed": spec.seed, "studies": [s.to_dict() for s in spec.studies]},
            "manifest": manifest}


def cmd_benchmark(config: AssessmentConfig) -> dict[str, Any]:
    collection, dropped = _prepare(config)
    utility = config.utility()
    rule = config.rule(collection)
    u0 = config.benchmark_value()
    b = config.raw.get("benchmark") or {}
    if "study" in b:
        study = collection.study(b["study"])
    elif collection.K == 1:
        study = collection.studies[0]
    else:
        raise ConfigError("benchmark compares one study; set benchmark.study when K > 1")
    summary = benchmark_compare(study, rule, utility, u0)
    return {"rule": rule.to_dict(), "dropped_studies": list(dropped),
            "benchmark": summary.to_dict(include_units=bool(b.get("include_units", False)))}


def cmd_validate(config: AssessmentConfig) -> dict[str, Any]:
    return {"validation": validate(config.collection()).to_dict()}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="assessment config (YAML or JSON)")
    common.add_argument("--out", default=None, help="output directory (default: ./predrep-out)")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
    common.add_argument("--quiet", action="store_true", help="do not print the summary")

    p = argparse.ArgumentParser(prog="predrep", description="Replicability of prediction rules across studies.")
    p.add_argument("--version", action="version", version=f"predrep {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("assess", parents=[common], help="utility vector, matrix and replicability verdicts")
    t = sub.add_parser("test", parents=[common], help="permutation test of replicability")
    t.add_argument("--permutations", type=int)
    t.add_argument("--adjust", choices=["none", "bonferroni"])
    r = sub.add_parser("resample", parents=[common], help="bootstrap / study-strap uncertainty")
    r.add_argument("--scheme", choices=["within_study_bootstrap", "cluster_bootstrap", "study_strap"])
    r.add_argument("--replicates", type=int)
    r.add_argument("--gamma", type=float)
    r.add_argument("--epsilon", type=float)
    sub.add_parser("simulate", parents=[common], help="write synthetic study CSVs and a manifest")
    sub.add_parser("benchmark", parents=[common], help="compare one study with a benchmark utility")
    sub.add_parser("validate", parents=[common], help="per-study summary and data flags")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else Path("predrep-out")
    try:
        config = AssessmentConfig.load(args.config, args.seed)
        extra: dict[str, str] = {}
        code = EXIT_OK
        if args.command == "assess":
            body, code, extra = cmd_assess(config)
        elif args.command == "test":
            body = cmd_test(config, args.permutations, args.adjust)
        elif args.command == "resample":
            body = cmd_resample(config, args.scheme, args.replicates, args.gamma, args.epsilon)
        elif args.command == "simulate":
            body = cmd_simulate(config, out)
        elif args.command == "benchmark":
            body = cmd_benchmark(config)
        else:
            body = cmd_validate(config)
        emit(out, build_report(args.command, config, body), args.quiet, extra)
        return code
    except _USER_ERRORS as exc:
        err = {"error": type(exc).__name__, "message": str(exc).strip("'\"")}
        sys.stderr.write(json.dumps(err) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
