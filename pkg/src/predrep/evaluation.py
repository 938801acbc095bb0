"""Per-study average utilities, utility-difference matrices, confusion
frequencies and empirical joint distributions of (prediction, label).

Frequencies come from exact integer counts divided once, so a study and any
b-fold collation of it produce bit-identical results.
"""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .decision import DecisionError, DecisionRule, UtilitySpec, apply_rule
from .studyset import Study, StudyCollection


class EvaluationError(ValueError):
    pass


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class UtilityVector:
    values: tuple[float, ...]
    study_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "study_ids", tuple(self.study_ids))
        if not self.values:
            raise EvaluationError("utility vector is empty")
        if len(self.values) != len(self.study_ids):
            raise EvaluationError("values and study ids differ in length")
        if not np.all(np.isfinite(self.values)):
            raise EvaluationError("utility vector has non-finite values")

    @property
    def K(self) -> int:
        return len(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    def to_dict(self) -> dict[str, Any]:
        return {"study_ids": list(self.study_ids), "values": list(self.values)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["study_id", "average_utility"])
        for sid, v in zip(self.study_ids, self.values):
            w.writerow([sid, fmt17(v)])
        return buf.getvalue()


@dataclass(frozen=True)
class UtilityMatrix:
    """Entry ``(k, k')`` is ``U_k - U_k'``."""

    entries: np.ndarray
    study_ids: tuple[str, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"study_ids": list(self.study_ids), "entries": self.entries.tolist()}

    def to_csv(self) -> str:
        return matrix_csv(self.entries, self.study_ids)


def matrix_csv(entries: np.ndarray, ids: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["study_id", *ids])
    for sid, row in zip(ids, entries):
        w.writerow([sid, *(fmt17(v) for v in row)])
    return buf.getvalue()


@dataclass(frozen=True)
class ConfusionFrequencies:
    """Joint frequencies of (action, label); ``f01`` = missed positives,
    ``f10`` = false alerts."""

    f00: float
    f01: float
    f10: float
    f11: float
    counts: tuple[int, int, int, int] | None = None

    def __post_init__(self):
        fs = (self.f00, self.f01, self.f10, self.f11)
        if any(f < 0 or f > 1 for f in fs):
            raise EvaluationError("frequencies must lie in [0, 1]")
        if abs(sum(fs) - 1.0) > 1e-12:
            raise EvaluationError(f"frequencies sum to {sum(fs)!r}, not 1")

    @classmethod
    def from_counts(cls, c00: int, c01: int, c10: int, c11: int) -> "ConfusionFrequencies":
        n = c00 + c01 + c10 + c11
        if n == 0:
            raise EvaluationError("no units")
        return cls(c00 / n, c01 / n, c10 / n, c11 / n, (c00, c01, c10, c11))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.f00, self.f01, self.f10, self.f11)


def _cell_counts(study: Study, rule: DecisionRule, utility: UtilitySpec | None = None) -> Counter:
    feature = utility.feature if utility is not None else None
    actions = apply_rule(rule, study)
    if feature is None:
        return Counter((a, u.label) for a, u in zip(actions, study.units))
    counts: Counter = Counter()
    for a, u in zip(actions, study.units):
        fv = u.features.get(feature)
        if fv is None:
            raise DecisionError(f"utility needs feature {feature!r}, missing on unit")
        counts[(a, fv, u.label)] += 1
    return counts


def _utility_of_counts(counts: Mapping[tuple, int], n: int, utility: UtilitySpec) -> float:
    total = Fraction(0)
    for key, c in counts.items():
        if utility.feature is None:
            a, y = key
            u = utility.value(a, y)
        else:
            a, fv, y = key
            u = utility.value(a, y, fv)
        if a not in utility.actions:
            raise DecisionError(f"action {a!r} outside action space {utility.actions}")
        total += c * Fraction(u)
    return float(total / n)


def average_utility(study: Study, rule: DecisionRule, utility: UtilitySpec) -> float:
    """Mean of ``U(rule(unit), x, y)`` over the study's units.

    Summed exactly over integer cell counts and rounded once.
    """
    return _utility_of_counts(_cell_counts(study, rule, utility), study.n, utility)


def unit_utilities(study: Study, rule: DecisionRule, utility: UtilitySpec) -> list[float]:
    out = []
    for a, u in zip(apply_rule(rule, study), study.units):
        fv = u.features.get(utility.feature) if utility.feature else None
        out.append(utility.value(a, u.label, fv))
    return out


def average_utility_from_frequencies(freqs: ConfusionFrequencies, u01: float, u10: float) -> float:
    return u01 * freqs.f01 + u10 * freqs.f10


def confusion_frequencies(study: Study, rule: DecisionRule) -> ConfusionFrequencies:
    actions = apply_rule(rule, study)
    c = Counter()
    for a, u in zip(actions, study.units):
        if u.label not in (0, 1) or a not in (0, 1):
            raise EvaluationError("confusion frequencies need binary labels and actions")
        c[(a, u.label)] += 1
    return ConfusionFrequencies.from_counts(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)])


def sens_spec_prev(freqs: ConfusionFrequencies) -> tuple[float, float, float]:
    """Sensitivity, specificity and prevalence of ``y = 1``.

    Raises when prevalence is 0 or 1, where one of the first two is undefined.
    """
    if freqs.counts is not None:
        c00, c01, c10, c11 = freqs.counts
        pos, neg = c01 + c11, c00 + c10
        if pos == 0 or neg == 0:
            raise EvaluationError(f"prevalence {pos / (pos + neg)}: sensitivity/specificity undefined")
        return c11 / pos, c00 / neg, pos / (pos + neg)
    prev = freqs.f01 + freqs.f11
    if prev <= 0 or freqs.f00 + freqs.f10 <= 0:
        raise EvaluationError(f"prevalence {prev}: sensitivity/specificity undefined")
    return freqs.f11 / prev, freqs.f00 / (freqs.f00 + freqs.f10), prev


def utility_vector(collection: StudyCollection, rule: DecisionRule, utility: UtilitySpec) -> UtilityVector:
    return UtilityVector(
        tuple(average_utility(s, rule, utility) for s in collection), collection.ids
    )


def utility_matrix(vector: UtilityVector) -> UtilityMatrix:
    v = np.asarray(vector.values, dtype=float)
    return UtilityMatrix(v[:, None] - v[None, :], vector.study_ids)


# ---------------------------------------------------------------------------
# Empirical joints
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalJoint:
    """Empirical joint law of (prediction, label), optionally with one feature.

    ``cells`` maps keys to exact probabilities. Discrete keys are
    ``(prediction, label)`` or ``(prediction, feature_value, label)`` and cover
    the full grid; scored keys are ``(score, label)`` support points.
    """

    kind: str
    cells: Mapping[tuple, Fraction]
    feature: str | None = None

    def __post_init__(self):
        if self.kind not in ("discrete", "scored"):
            raise EvaluationError(f"unknown joint kind {self.kind!r}")
        if not self.cells:
            raise EvaluationError("empty joint")
        if sum(self.cells.values()) != 1:
            raise EvaluationError("joint probabilities do not sum to 1")

    @classmethod
    def from_counts(cls, kind: str, counts: Mapping[tuple, int], feature: str | None = None,
                    grid: Sequence[tuple] | None = None) -> "EmpiricalJoint":
        n = sum(counts.values())
        if n == 0:
            raise EvaluationError("empty joint")
        keys = list(grid) if grid is not None else list(counts)
        extra = set(counts) - set(keys)
        if extra:
            raise EvaluationError(f"cells outside the declared grid: {sorted(extra, key=repr)}")
        cells = {k: Fraction(counts.get(k, 0), n) for k in sorted(keys, key=_sort_key)}
        return cls(kind, cells, feature)

    def frequencies(self) -> dict[tuple, float]:
        return {k: float(v) for k, v in self.cells.items()}

    def confusion(self) -> ConfusionFrequencies:
        if self.kind != "discrete" or self.feature is not None:
            raise EvaluationError("confusion frequencies need a feature-free discrete joint")
        f = {k: self.cells.get(k, Fraction(0)) for k in [(0, 0), (0, 1), (1, 0), (1, 1)]}
        if set(self.cells) - set(f):
            raise EvaluationError("joint is not binary")
        return ConfusionFrequencies(*(float(f[k]) for k in [(0, 0), (0, 1), (1, 0), (1, 1)]))


def _sort_key(key):
    return tuple((0, v) if isinstance(v, (int, float)) else (1, str(v)) for v in key)


def discrete_joint(f00: float, f01: float, f10: float, f11: float) -> EmpiricalJoint:
    """Binary discrete joint from the four cell frequencies (action, label)."""
    cells = {(0, 0): Fraction(f00).limit_denominator(10**12),
             (0, 1): Fraction(f01).limit_denominator(10**12),
             (1, 0): Fraction(f10).limit_denominator(10**12),
             (1, 1): Fraction(f11).limit_denominator(10**12)}
    return EmpiricalJoint("discrete", cells)


def empirical_joint(
    study: Study,
    rule: DecisionRule | None = None,
    *,
    scored: bool = False,
    feature: str | None = None,
    labels: Sequence = (0, 1),
    actions: Sequence | None = None,
    feature_values: Sequence | None = None,
) -> EmpiricalJoint:
    """Empirical joint ``F_k`` of a study.

    ``scored=True`` gives the (score, label) point masses. Otherwise the
    prediction is ``rule``'s action, or the unit's predicted class when no
    rule is given, and the joint covers the full (action, label) grid.
    """
    if scored:
        if any(u.score is None for u in study.units):
            raise EvaluationError(f"study {study.id!r}: missing scores")
        counts = Counter((u.score, u.label) for u in study.units)
        return EmpiricalJoint.from_counts("scored", counts)
    if rule is None:
        if any(u.predicted_class is None for u in study.units):
            raise EvaluationError(f"study {study.id!r}: missing predicted classes")
        preds = [u.predicted_class for u in study.units]
    else:
        preds = list(apply_rule(rule, study))
    actions = tuple(actions) if actions is not None else tuple(labels)
    if feature is None:
        counts = Counter(zip(preds, (u.label for u in study.units)))
        grid = [(a, y) for a in actions for y in labels]
    else:
        fvs = [u.features.get(feature) for u in study.units]
        if any(v is None for v in fvs):
            raise EvaluationError(f"study {study.id!r}: missing values of feature {feature!r}")
        counts = Counter(zip(preds, fvs, (u.label for u in study.units)))
        values = sorted(set(fvs) if feature_values is None else set(feature_values), key=str)
        grid = [(a, v, y) for a in actions for v in values for y in labels]
    return EmpiricalJoint.from_counts("discrete", counts, feature, grid)


def joints_for(collection: StudyCollection, rule: DecisionRule | None, *, scored: bool = False,
               feature: str | None = None) -> list[EmpiricalJoint]:
    """Joints of every study on a shared key grid."""
    labels = tuple(collection.schema.label_set)
    values = None
    if feature is not None:
        values = sorted({u.features.get(feature) for s in collection for u in s.units} - {None},
                        key=str)
    return [empirical_joint(s, rule, scored=scored, feature=feature, labels=labels,
                            feature_values=values) for s in collection]


def joint_utility(joint: EmpiricalJoint, utility: UtilitySpec, rule: DecisionRule | None = None) -> float:
    """Average utility as a functional of the joint.

    Scored joints need a threshold ``rule`` to map scores to actions.
    """
    total = Fraction(0)
    if joint.kind == "scored":
        if rule is None or rule.kind != "threshold":
            raise EvaluationError("a scored joint needs a threshold rule")
        if utility.feature is not None:
            raise EvaluationError("utility depends on a feature the joint does not carry")
        for (s, y), p in joint.cells.items():
            a = 1 if s >= rule.threshold else 0
            total += p * Fraction(utility.value(a, y))
        return float(total)
    if utility.feature is not None and joint.feature != utility.feature:
        raise EvaluationError("utility depends on a feature the joint does not carry")
    for key, p in joint.cells.items():
        if joint.feature is None:
            a, y = key
            u = utility.value(a, y)
        elif utility.feature is None:
            a, _, y = key
            u = utility.value(a, y)
        else:
            a, fv, y = key
            u = utility.value(a, y, fv)
        total += p * Fraction(u)
    return float(total)
