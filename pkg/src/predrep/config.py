"""Declarative assessment configuration (YAML or JSON).

Study paths are resolved relative to the config file. Example::

    studies:
      - {id: seattle, path: seattle.csv}
      - {id: atlanta, path: atlanta.csv}
    columns: {label: label, score: score, label_set: [0, 1]}
    utility: {kind: binary_error, u01: -2, u10: -1}
    rule: {kind: threshold, threshold: 0.5}
    definitions: {absolute: 0.05, distance: 0.1}
    distance_backend: tv
    seed: 7
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .decision import (
    DecisionRule,
    Prevalence,
    UtilitySpec,
    optimal_threshold_closed_form,
    optimal_threshold_empirical,
)
from .inference import ResamplePlan
from .simgen import CollectionSpec
from .studyset import (
    ColumnConfig,
    StudyCollection,
    SubsetPredicate,
    load_collection,
    parse_predicate,
)


class ConfigError(ValueError):
    pass


DEFINITIONS = ("absolute", "relative", "distance")

_TOP_KEYS = {
    "studies", "columns", "utility", "rule", "prevalence", "where", "definitions",
    "distance_backend", "resample", "test", "benchmark", "seed", "alternatives", "simulate",
    "output",
}


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config key(s): {sorted(unknown)}")
    return data


def _threshold_value(v: Any) -> float:
    if isinstance(v, str):
        if v in ("-inf", "inf", "+inf"):
            return float(v)
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid threshold {v!r}") from None


@dataclass
class AssessmentConfig:
    base_dir: Path
    raw: dict[str, Any]
    seed: int = 0
    definitions: dict[str, float] = field(default_factory=dict)
    distance_backend: str = "tv"

    @classmethod
    def load(cls, path: str | Path, seed: int | None = None) -> "AssessmentConfig":
        path = Path(path)
        raw = read_config_file(path)
        return cls.from_dict(raw, path.parent, seed)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".",
                  seed: int | None = None) -> "AssessmentConfig":
        raw = dict(raw)
        s = int(seed if seed is not None else raw.get("seed", 0))
        if not 0 <= s < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        raw["seed"] = s
        defs = dict(raw.get("definitions") or {})
        for name, eps in defs.items():
            if name not in DEFINITIONS:
                raise ConfigError(f"unknown replicability definition {name!r}")
            if not isinstance(eps, (int, float)) or not eps >= 0:
                raise ConfigError(f"epsilon for {name} must be a number >= 0")
            defs[name] = float(eps)
        backend = raw.get("distance_backend", "tv")
        if backend not in ("tv", "ks"):
            raise ConfigError(f"unknown distance backend {backend!r}")
        return cls(Path(base_dir), raw, s, defs, backend)

    # -- pieces -------------------------------------------------------------

    def collection(self) -> StudyCollection:
        entries = self.raw.get("studies")
        if not entries:
            raise ConfigError("config lists no studies")
        paths, ids, meta = [], [], []
        for e in entries:
            if "path" not in e:
                raise ConfigError("every study entry needs a path")
            p = Path(e["path"])
            paths.append(p if p.is_absolute() else self.base_dir / p)
            ids.append(str(e.get("id", p.stem)))
            meta.append(dict(e.get("metadata") or {}))
        return load_collection(paths, ColumnConfig.from_dict(self.raw.get("columns") or {}), ids, meta)

    def predicate(self) -> SubsetPredicate | None:
        where = self.raw.get("where")
        if where is None:
            return None
        if isinstance(where, str):
            return parse_predicate(where)
        return SubsetPredicate.from_records(where)

    def utility(self) -> UtilitySpec:
        u = self.raw.get("utility")
        if not u:
            raise ConfigError("config has no utility")
        return UtilitySpec.from_dict(u)

    def prevalence(self, collection: StudyCollection | None = None) -> Prevalence | None:
        p = self.raw.get("prevalence")
        if not p:
            return None
        source = p.get("source", "user_specified")
        if source == "user_specified":
            return Prevalence(float(p["value"]), source)
        if collection is None:
            return None
        if source == "empirical_pooled":
            return Prevalence.pooled(collection)
        if source == "empirical_per_study":
            return Prevalence.of_study(collection.study(p["study"]))
        raise ConfigError(f"unknown prevalence source {source!r}")

    def rule_spec(self) -> dict[str, Any]:
        return dict(self.raw.get("rule") or {"kind": "identity"})

    def rule(self, collection: StudyCollection, spec: Mapping[str, Any] | None = None) -> DecisionRule:
        """Resolve the one rule used for the whole run.

        ``threshold: closed_form`` and ``threshold: empirical`` pick the
        threshold once, the latter on the pooled collection.
        """
        spec = dict(spec if spec is not None else self.rule_spec())
        kind = spec.get("kind", "threshold")
        if kind == "identity":
            return DecisionRule.identity()
        if kind != "threshold":
            raise ConfigError(f"unknown rule kind {kind!r}")
        t = spec.get("threshold", 0.5)
        if t == "closed_form":
            return DecisionRule.at(optimal_threshold_closed_form(self.utility(), self.prevalence(collection)))
        if t == "empirical":
            return DecisionRule.at(optimal_threshold_empirical(collection, self.utility()))
        return DecisionRule.at(_threshold_value(t))

    def resample_plan(self, scheme=None, replicates=None, gamma=None) -> ResamplePlan:
        r = dict(self.raw.get("resample") or {})
        return ResamplePlan(
            scheme or r.get("scheme", "within_study_bootstrap"),
            int(replicates if replicates is not None else r.get("replicates", 1000)),
            self.seed,
            gamma if gamma is not None else r.get("gamma"),
        )

    def resample_options(self) -> dict[str, Any]:
        return dict(self.raw.get("resample") or {})

    def test_options(self) -> dict[str, Any]:
        t = dict(self.raw.get("test") or {})
        return {
            "statistic": t.get("statistic", "max_abs_diff"),
            "permutations": int(t.get("permutations", 999)),
            "adjust": t.get("adjust", "none"),
            "include_draws": bool(t.get("include_draws", False)),
        }

    def benchmark_value(self) -> float:
        b = self.raw.get("benchmark") or {}
        if "u0" not in b:
            raise ConfigError("benchmark needs a u0 value")
        u0 = float(b["u0"])
        if not math.isfinite(u0):
            raise ConfigError("u0 must be finite")
        return u0

    def simulation(self) -> CollectionSpec:
        sim = dict(self.raw.get("simulate") or {})
        if not sim.get("studies"):
            raise ConfigError("config has no simulate.studies")
        sim.setdefault("seed", self.seed)
        return CollectionSpec.from_dict(sim)

    def echo(self) -> dict[str, Any]:
        """Config as recorded in reports: everything except output location."""
        return {k: v for k, v in self.raw.items() if k != "output"}
