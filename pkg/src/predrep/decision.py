"""Utilities, decision rules, and threshold selection.

A utility maps (action, unit) to a real number. All built-in kinds depend on
the unit only through its label, except ``table`` utilities keyed on one
declared discrete feature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .studyset import Study, StudyCollection, Unit

KINDS = ("binary_error", "agreement", "table", "alert_indicator")


class DecisionError(ValueError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    """User utility ``U(a, x, y)``.

    Use the constructors :meth:`binary_error`, :meth:`agreement`,
    :meth:`alert_indicator` and :meth:`table` rather than building this
    directly. For ``table`` utilities, ``entries`` is keyed ``(action, label)``
    or, when ``feature`` is set, ``(action, feature_value, label)``.
    """

    kind: str
    u01: float | None = None
    u10: float | None = None
    entries: Mapping[tuple, float] = field(default_factory=dict)
    feature: str | None = None
    actions: tuple = (0, 1)
    labels: tuple = (0, 1)
    description: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DecisionError(f"unknown utility kind {self.kind!r}")
        if self.kind == "binary_error":
            if self.u01 is None or self.u10 is None:
                raise DecisionError("binary_error needs u01 and u10")
            if self.u01 > 0 or self.u10 > 0:
                raise DecisionError("binary_error costs must be <= 0")
            if self.u01 == 0 and self.u10 == 0:
                raise DecisionError("binary_error with u01 = u10 = 0 is degenerate")
        if self.kind == "table":
            values = None
            if self.feature is not None:
                values = sorted({k[1] for k in self.entries}, key=str)
            for a in self.actions:
                for y in self.labels:
                    keys = [(a, y)] if values is None else [(a, v, y) for v in values]
                    for key in keys:
                        if key not in self.entries:
                            raise DecisionError(f"utility table does not cover cell {key}")

    @classmethod
    def binary_error(cls, u01: float, u10: float) -> "UtilitySpec":
        return cls("binary_error", u01=float(u01), u10=float(u10),
                   description=f"binary error u01={u01} u10={u10}")

    @classmethod
    def agreement(cls, labels: Sequence = (0, 1)) -> "UtilitySpec":
        labels = tuple(labels)
        return cls("agreement", actions=labels, labels=labels, description="agreement")

    @classmethod
    def alert_indicator(cls) -> "UtilitySpec":
        return cls("alert_indicator", description="alert indicator")

    @classmethod
    def table(cls, entries: Mapping[tuple, float], feature: str | None = None,
              actions: Sequence = (0, 1), labels: Sequence = (0, 1),
              description: str = "table") -> "UtilitySpec":
        return cls("table", entries={tuple(k): float(v) for k, v in entries.items()},
                   feature=feature, actions=tuple(actions), labels=tuple(labels),
                   description=description)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "UtilitySpec":
        kind = d.get("kind")
        if kind == "binary_error":
            return cls.binary_error(d["u01"], d["u10"])
        if kind == "agreement":
            return cls.agreement(d.get("labels", (0, 1)))
        if kind == "alert_indicator":
            return cls.alert_indicator()
        if kind == "table":
            entries = {}
            for row in d["entries"]:
                key = (row["action"], row["feature_value"], row["label"]) if "feature_value" in row \
                    else (row["action"], row["label"])
                entries[key] = row["utility"]
            return cls.table(entries, feature=d.get("feature"),
                             actions=d.get("actions", (0, 1)), labels=d.get("labels", (0, 1)))
        raise DecisionError(f"unknown utility kind {kind!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind}
        if self.kind == "binary_error":
            d.update(u01=self.u01, u10=self.u10)
        elif self.kind == "table":
            rows = []
            for key, val in sorted(self.entries.items(), key=lambda kv: str(kv[0])):
                if self.feature is None:
                    rows.append({"action": key[0], "label": key[1], "utility": val})
                else:
                    rows.append({"action": key[0], "feature_value": key[1],
                                 "label": key[2], "utility": val})
            d.update(feature=self.feature, entries=rows)
        return d

    @property
    def depends_on_features(self) -> bool:
        return self.feature is not None

    def value(self, action: Any, label: Any, feature_value: Any = None) -> float:
        """``U`` at one cell of the (action[, feature], label) grid."""
        if self.kind == "binary_error":
            if action < label:
                return self.u01
            if action > label:
                return self.u10
            return 0.0
        if self.kind == "agreement":
            return 1.0 if action == label else 0.0
        if self.kind == "alert_indicator":
            return 1.0 if action == 1 else 0.0
        key = (action, label) if self.feature is None else (action, feature_value, label)
        try:
            return self.entries[key]
        except KeyError:
            raise DecisionError(f"utility table has no entry for {key}") from None

    def affine(self, a: float, b: float) -> "UtilitySpec":
        """Table utility equal to ``a * U + b`` over the binary grid."""
        if self.feature is not None:
            entries = {k: a * v + b for k, v in self.entries.items()}
        else:
            entries = {(x, y): a * self.value(x, y) + b for x in self.actions for y in self.labels}
        return UtilitySpec.table(entries, feature=self.feature, actions=self.actions,
                                 labels=self.labels)


def unit_utility(utility: UtilitySpec, action: Any, unit: Unit) -> float:
    """``U(a, x, y)`` for one unit."""
    if action not in utility.actions:
        raise DecisionError(f"action {action!r} outside action space {utility.actions}")
    fv = None
    if utility.feature is not None:
        fv = unit.features.get(utility.feature)
        if fv is None:
            raise DecisionError(f"utility needs feature {utility.feature!r}, missing on unit")
    return utility.value(action, unit.label, fv)


@dataclass(frozen=True)
class DecisionRule:
    """Maps a unit's prediction to an action.

    ``identity`` uses the unit's predicted class; ``threshold`` fires action 1
    when ``score >= threshold``.
    """

    kind: str = "threshold"
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("identity", "threshold"):
            raise DecisionError(f"unknown rule kind {self.kind!r}")
        if self.kind == "threshold" and math.isnan(self.threshold):
            raise DecisionError("threshold is NaN")

    @classmethod
    def identity(cls) -> "DecisionRule":
        return cls("identity", 0.0)

    @classmethod
    def at(cls, threshold: float) -> "DecisionRule":
        return cls("threshold", float(threshold))

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "identity":
            return {"kind": "identity"}
        return {"kind": "threshold", "threshold": _json_threshold(self.threshold)}

    def action(self, unit: Unit) -> Any:
        if self.kind == "identity":
            if unit.predicted_class is None:
                raise DecisionError("identity rule needs a predicted class on every unit")
            return unit.predicted_class
        if unit.score is None:
            raise DecisionError("threshold rule needs a score on every unit")
        return 1 if unit.score >= self.threshold else 0


def _json_threshold(t: float) -> float | str:
    if math.isinf(t):
        return "-inf" if t < 0 else "inf"
    return t


def apply_rule(rule: DecisionRule, study: Study | Iterable[Unit]) -> tuple:
    """One action per unit, in unit order."""
    units = study.units if isinstance(study, Study) else study
    return tuple(rule.action(u) for u in units)


@dataclass(frozen=True)
class Prevalence:
    value: float
    source: str = "user_specified"
    study: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise DecisionError(f"prevalence {self.value} outside [0, 1]")
        if self.source not in ("user_specified", "empirical_pooled", "empirical_per_study"):
            raise DecisionError(f"unknown prevalence source {self.source!r}")

    @classmethod
    def pooled(cls, collection: StudyCollection) -> "Prevalence":
        units = collection.pooled()
        return cls(sum(1 for u in units if u.label == 1) / len(units), "empirical_pooled")

    @classmethod
    def of_study(cls, study: Study) -> "Prevalence":
        return cls(sum(1 for u in study.units if u.label == 1) / study.n,
                   "empirical_per_study", study.id)


def optimal_threshold_closed_form(utility: UtilitySpec, prevalence: Prevalence | None = None) -> float:
    """Bayes threshold on calibrated probability scores.

    With miss cost ``c01 = -u01`` and false-alert cost ``c10 = -u10`` the
    expected utility of alerting beats not alerting iff
    ``score >= c10 / (c01 + c10)``. Prevalence enters only through the score;
    it is accepted so callers can record where their calibration came from.
    """
    if utility.feature is not None:
        raise DecisionError("closed-form threshold needs a feature-free utility")
    if utility.kind == "binary_error":
        c01, c10 = -utility.u01, -utility.u10
    else:
        # regret of the wrong action within each label
        c01 = utility.value(1, 1) - utility.value(0, 1)
        c10 = utility.value(0, 0) - utility.value(1, 0)
    if c01 < 0 or c10 < 0 or c01 + c10 <= 0:
        raise DecisionError("utility is degenerate: no unique optimal threshold")
    if prevalence is not None and prevalence.source == "empirical_per_study":
        warnings.warn(
            f"threshold derived under the prevalence of study {prevalence.study!r}; "
            "a per-study threshold is a diagnostic, not the assessed rule",
            stacklevel=2,
        )
    return c10 / (c01 + c10)


def candidate_thresholds(scores: Sequence[float]) -> list[float]:
    """``-inf``, midpoints between consecutive distinct scores, ``+inf``."""
    distinct = sorted(set(scores))
    mids = [(a + b) / 2 for a, b in zip(distinct, distinct[1:])]
    return [-math.inf, *mids, math.inf]


def _cell_key(utility: UtilitySpec, unit: Unit):
    if utility.feature is None:
        return unit.label
    fv = unit.features.get(utility.feature)
    if fv is None:
        raise DecisionError(f"utility needs feature {utility.feature!r}, missing on unit")
    return (fv, unit.label)


def optimal_threshold_empirical(
    data: Study | StudyCollection | Iterable[Unit], utility: UtilitySpec
) -> float:
    """Threshold maximizing the empirical average utility.

    Candidates are :func:`candidate_thresholds` of the observed scores; a
    collection is pooled. The objective is compared in exact rational
    arithmetic and ties go to the smallest threshold.
    """
    if isinstance(data, StudyCollection):
        units = data.pooled()
    elif isinstance(data, Study):
        units = data.units
    else:
        units = tuple(data)
    if not units:
        raise DecisionError("no units")
    if any(u.score is None for u in units):
        raise DecisionError("empirical threshold needs a score on every unit")

    # Group units by score; for each group count units per (feature, label) key.
    keys = sorted({_cell_key(utility, u) for u in units}, key=repr)
    kidx = {k: i for i, k in enumerate(keys)}
    distinct = sorted({u.score for u in units})
    sidx = {s: i for i, s in enumerate(distinct)}
    counts = np.zeros((len(distinct), len(keys)), dtype=np.int64)
    for u in units:
        counts[sidx[u.score], kidx[_cell_key(utility, u)]] += 1

    def gain(key, action):
        fv, y = (None, key) if utility.feature is None else key
        return Fraction(utility.value(action, y, fv))

    u1 = [gain(k, 1) for k in keys]
    u0 = [gain(k, 0) for k in keys]
    total = counts.sum(axis=0)
    # at candidate j, score groups [0, j) are below the threshold
    below = np.zeros(len(keys), dtype=np.int64)
    cands = candidate_thresholds(distinct)
    best, best_val = 0, None
    for j in range(len(cands)):
        if j > 0:
            below = below + counts[j - 1]
        val = sum(int(below[i]) * u0[i] + int(total[i] - below[i]) * u1[i] for i in range(len(keys)))
        if best_val is None or val > best_val:
            best, best_val = j, val
    return cands[best]
