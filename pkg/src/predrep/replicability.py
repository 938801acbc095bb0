"""Replicability verdicts, dominance, distances between empirical joints, and
the single-study benchmark comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Sequence

import numpy as np

from .decision import DecisionRule, UtilitySpec
from .evaluation import (
    EmpiricalJoint,
    UtilityVector,
    average_utility,
    joint_utility,
    joints_for,
    unit_utilities,
)
from .studyset import Study, StudyCollection


class ReplicabilityError(ValueError):
    pass


@dataclass(frozen=True)
class ReplicabilityVerdict:
    definition: str
    epsilon: float
    achieved: float
    replicable: bool
    worst_pair: tuple[str, str]
    pairwise: np.ndarray
    study_ids: tuple[str, ...]
    backend: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d = {
            "definition": self.definition,
            "epsilon": self.epsilon,
            "achieved": self.achieved,
            "replicable": self.replicable,
            "worst_pair": list(self.worst_pair),
            "study_ids": list(self.study_ids),
            "pairwise": self.pairwise.tolist(),
        }
        if self.backend is not None:
            d["backend"] = self.backend
        return d


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not epsilon >= 0:
        raise ReplicabilityError(f"epsilon must be >= 0, got {epsilon}")
    return epsilon


def _verdict(definition, table, ids, epsilon, backend=None) -> ReplicabilityVerdict:
    K = len(ids)
    achieved, worst = 0.0, (ids[0], ids[0])
    for i in range(K):
        for j in range(i + 1, K):
            if table[i, j] > achieved or (i, j) == (0, 1):
                achieved, worst = float(table[i, j]), (ids[i], ids[j])
    return ReplicabilityVerdict(definition, epsilon, achieved, achieved <= epsilon, worst,
                                table, tuple(ids), backend)


def pairwise_table(items: Sequence, stat: Callable[[Any, Any], float]) -> np.ndarray:
    """Symmetric table of ``stat`` over unordered pairs, zero diagonal."""
    K = len(items)
    table = np.zeros((K, K))
    for i in range(K):
        for j in range(i + 1, K):
            table[i, j] = table[j, i] = stat(items[i], items[j])
    return table


def absolute_epsilon(vector: UtilityVector, epsilon: float) -> ReplicabilityVerdict:
    """``max |U_k - U_k'| <= epsilon``."""
    epsilon = _check_epsilon(epsilon)
    table = pairwise_table(vector.values, lambda a, b: abs(a - b))
    return _verdict("absolute", table, vector.study_ids, epsilon)


def relative_difference(a: float, b: float) -> float:
    if a + b <= 0:
        raise ReplicabilityError(
            f"relative difference undefined for utilities {a!r}, {b!r} (sum <= 0); "
            "rescale the utility or use the absolute definition"
        )
    return 2 * abs(a - b) / (a + b)


def relative_epsilon(vector: UtilityVector, epsilon: float) -> ReplicabilityVerdict:
    """``max 2|U_k - U_k'| / (U_k + U_k') <= epsilon``; needs positive pair sums."""
    epsilon = _check_epsilon(epsilon)
    table = pairwise_table(vector.values, relative_difference)
    return _verdict("relative", table, vector.study_ids, epsilon)


def spread(values: Sequence[float]) -> float:
    return float(max(values) - min(values))


@dataclass(frozen=True)
class DominanceResult:
    relation: str
    spread_a: float
    spread_b: float
    per_study_deltas: tuple[float, ...]


def dominance(a: UtilityVector, b: UtilityVector) -> DominanceResult:
    """Compare two rules on the same studies.

    ``a`` dominates ``b`` when its utility spread is no larger and it is at
    least as good in every study.
    """
    if a.study_ids != b.study_ids:
        raise ReplicabilityError("dominance needs the same studies in the same order")
    sa, sb = spread(a.values), spread(b.values)
    deltas = tuple(x - y for x, y in zip(a.values, b.values))
    if a.values == b.values:
        rel = "equal"
    elif sa <= sb and all(y <= x for x, y in zip(a.values, b.values)):
        rel = "dominates"
    elif sb <= sa and all(x <= y for x, y in zip(a.values, b.values)):
        rel = "dominated_by"
    else:
        rel = "incomparable"
    return DominanceResult(rel, sa, sb, deltas)


def classify_region(reference: Sequence[float], alternative: Sequence[float]) -> str:
    """Place an alternative rule's two-study utilities relative to a reference.

    ``B``: at least as good in both studies with no larger spread. ``C``: at
    least as good in both but larger spread. ``A``: no better in either study
    but no larger spread. Anything else is ``other``.
    """
    if len(reference) != 2 or len(alternative) != 2:
        raise ReplicabilityError("regions are defined for two studies")
    r1, r2 = reference
    a1, a2 = alternative
    ref_gap, alt_gap = abs(r1 - r2), abs(a1 - a2)
    if a1 >= r1 and a2 >= r2:
        return "B" if alt_gap <= ref_gap else "C"
    if a1 <= r1 and a2 <= r2 and alt_gap <= ref_gap:
        return "A"
    return "other"


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def tv_distance(f: EmpiricalJoint, g: EmpiricalJoint) -> float:
    """Total variation distance between discrete joints on one key grid."""
    if f.kind != "discrete" or g.kind != "discrete":
        raise ReplicabilityError("total variation needs discrete joints")
    if set(f.cells) != set(g.cells):
        raise ReplicabilityError("joints are defined on different key spaces")
    return float(sum(abs(f.cells[k] - g.cells[k]) for k in f.cells) / 2)


def ks_joint_distance(f: EmpiricalJoint, g: EmpiricalJoint) -> float:
    """Sup-norm distance between the joint CDFs of (score, label).

    ``F(s, y) = P(score <= s, label <= y)``, evaluated on the union of observed
    scores crossed with the union of labels. Both CDFs are step functions on
    that grid, so this equals the supremum over the whole plane.
    """
    if f.kind != "scored" or g.kind != "scored":
        raise ReplicabilityError("joint CDF distance needs scored joints")
    scores = sorted({s for s, _ in f.cells} | {s for s, _ in g.cells})
    labels = sorted({y for _, y in f.cells} | {y for _, y in g.cells})
    si = {s: i for i, s in enumerate(scores)}
    yi = {y: j for j, y in enumerate(labels)}

    def cdf_grid(joint):
        mass = [[Fraction(0)] * len(labels) for _ in scores]
        for (s, y), p in joint.cells.items():
            mass[si[s]][yi[y]] += p
        # running sums over both axes
        grid = [[Fraction(0)] * len(labels) for _ in scores]
        for i in range(len(scores)):
            row = Fraction(0)
            for j in range(len(labels)):
                row += mass[i][j]
                grid[i][j] = row + (grid[i - 1][j] if i else 0)
        return grid

    F, G = cdf_grid(f), cdf_grid(g)
    return float(max(abs(F[i][j] - G[i][j]) for i in range(len(scores)) for j in range(len(labels))))


BACKENDS = {"tv": tv_distance, "ks": ks_joint_distance}


def distance_table(collection: StudyCollection, backend: str = "tv",
                   rule: DecisionRule | None = None, feature: str | None = None) -> np.ndarray:
    if backend not in BACKENDS:
        raise ReplicabilityError(f"unknown distance backend {backend!r}")
    joints = joints_for(collection, rule, scored=backend == "ks", feature=feature)
    return pairwise_table(joints, BACKENDS[backend])


def distance_epsilon(collection: StudyCollection, backend: str, epsilon: float,
                     rule: DecisionRule | None = None,
                     feature: str | None = None) -> ReplicabilityVerdict:
    """``max D(F_k, F_k') <= epsilon`` with ``D`` chosen by ``backend``.

    ``tv`` compares (prediction, label) joints, with predictions from ``rule``
    or the units' predicted classes; ``ks`` compares (score, label) joints.
    """
    epsilon = _check_epsilon(epsilon)
    table = distance_table(collection, backend, rule, feature)
    return _verdict("distance", table, collection.ids, epsilon, backend)


def utility_pseudodistance(f: EmpiricalJoint, g: EmpiricalJoint, utility: UtilitySpec,
                           rule: DecisionRule | None = None) -> float:
    """``|U_k - U_k'|`` with each average utility read off its joint.

    Not a metric: distinct joints can have equal utilities.
    """
    return abs(joint_utility(f, utility, rule) - joint_utility(g, utility, rule))


# ---------------------------------------------------------------------------
# Single-study benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkSummary:
    study_id: str
    mean_utility: float
    benchmark: float
    gap: float
    unit_utilities: tuple[float, ...]

    def to_dict(self, include_units: bool = False) -> dict[str, Any]:
        d = {"study_id": self.study_id, "mean_utility": self.mean_utility,
             "benchmark": self.benchmark, "gap": self.gap, "n": len(self.unit_utilities)}
        if include_units:
            d["unit_utilities"] = list(self.unit_utilities)
        return d


def benchmark_compare(study: Study, rule: DecisionRule, utility: UtilitySpec, u0: float) -> BenchmarkSummary:
    """Compare one study's average utility with a benchmark value ``u0``."""
    if not math.isfinite(u0):
        raise ReplicabilityError("benchmark value must be finite")
    mean = average_utility(study, rule, utility)
    return BenchmarkSummary(study.id, mean, float(u0), mean - u0,
                            tuple(unit_utilities(study, rule, utility)))
