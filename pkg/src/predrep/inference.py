"""Resampling and permutation inference for replicability.

Every replicate ``r`` draws from its own generator seeded by
``SeedSequence([seed, scheme_tag, r])``, so results do not depend on the
order or concurrency in which replicates are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .decision import DecisionRule, UtilitySpec, apply_rule
from .replicability import ReplicabilityError
from .studyset import Study, StudyCollection

SCHEMES = ("within_study_bootstrap", "cluster_bootstrap", "study_strap")
STATISTICS = ("max_abs_diff", "max_relative_diff", "max_distance")

_TAGS = {"within_study_bootstrap": 1, "cluster_bootstrap": 2, "study_strap": 3, "permutation": 4}

# relative slack when comparing null draws to the observed statistic
TIE_TOLERANCE = 1e-12


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class ResamplePlan:
    scheme: str
    replicates: int = 1000
    seed: int = 0
    gamma: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InferenceError(f"unknown resampling scheme {self.scheme!r}")
        if int(self.replicates) != self.replicates or self.replicates < 1:
            raise InferenceError("replicates must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise InferenceError("seed must be a 64-bit unsigned integer")
        if self.scheme == "study_strap":
            if self.gamma is None or not 0 <= self.gamma <= 1:
                raise InferenceError("study strap needs gamma in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        d = {"scheme": self.scheme, "replicates": self.replicates, "seed": self.seed}
        if self.gamma is not None:
            d["gamma"] = self.gamma
        return d


def replicate_rng(seed: int, tag: str, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _TAGS[tag], replicate]))


# ---------------------------------------------------------------------------
# Integer coding of a collection
# ---------------------------------------------------------------------------


@dataclass
class _Coded:
    ids: tuple[str, ...]
    sizes: np.ndarray
    offsets: np.ndarray
    study: np.ndarray  # study index of each pooled unit
    ucode: np.ndarray  # utility cell of each unit
    uval: np.ndarray  # utility of each utility cell
    dcode: np.ndarray | None = None  # (action, label) cell
    n_dcells: int = 0
    scode: np.ndarray | None = None  # (score rank, label) cell
    n_scores: int = 0
    n_labels: int = 0

    @property
    def N(self) -> int:
        return int(self.sizes.sum())

    def study_indices(self, k: int) -> np.ndarray:
        return np.arange(self.offsets[k], self.offsets[k] + self.sizes[k])


def _encode(collection: StudyCollection, rule: DecisionRule | None, utility: UtilitySpec | None,
            backend: str = "tv") -> _Coded:
    units = collection.pooled()
    sizes = np.asarray(collection.sizes, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    study = np.repeat(np.arange(collection.K), sizes)
    labels = list(collection.schema.label_set)
    lidx = {y: i for i, y in enumerate(labels)}
    actions = []
    if rule is not None:
        for s in collection:
            actions.extend(apply_rule(rule, s))
    elif all(u.predicted_class is not None for u in units):
        actions = [u.predicted_class for u in units]
    coded = _Coded(collection.ids, sizes, offsets, study, np.zeros(len(units), np.int64),
                   np.zeros(1), n_labels=len(labels))
    if utility is not None:
        if not actions:
            raise InferenceError("utility statistics need a rule or predicted classes")
        keys, codes = {}, np.empty(len(units), dtype=np.int64)
        for i, (a, u) in enumerate(zip(actions, units)):
            fv = u.features.get(utility.feature) if utility.feature else None
            key = (a, fv, u.label)
            codes[i] = keys.setdefault(key, len(keys))
        coded.ucode = codes
        coded.uval = np.array([utility.value(a, y, fv) for (a, fv, y) in keys], dtype=float)
    if backend == "tv" and actions:
        aset = list(dict.fromkeys(list(labels) + list(actions)))
        aidx = {a: i for i, a in enumerate(aset)}
        coded.dcode = np.array([aidx[a] * len(labels) + lidx[u.label] for a, u in zip(actions, units)],
                               dtype=np.int64)
        coded.n_dcells = len(aset) * len(labels)
    if backend == "ks" and all(u.score is not None for u in units):
        distinct = sorted({u.score for u in units})
        sidx = {s: i for i, s in enumerate(distinct)}
        coded.scode = np.array([sidx[u.score] * len(labels) + lidx[u.label] for u in units],
                               dtype=np.int64)
        coded.n_scores = len(distinct)
    return coded


def _counts(code: np.ndarray, ncodes: int, groups: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.bincount(code[g], minlength=ncodes) for g in groups])


def _counts_by_assignment(code: np.ndarray, ncodes: int, assign: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(assign * ncodes + code, minlength=K * ncodes).reshape(K, ncodes)


def _pairwise_from_counts(coded: _Coded, counts: np.ndarray, statistic: str, backend: str) -> np.ndarray:
    n = counts.sum(axis=1).astype(float)
    if statistic in ("max_abs_diff", "max_relative_diff"):
        u = counts @ coded.uval / n
        diff = np.abs(u[:, None] - u[None, :])
        if statistic == "max_abs_diff":
            return diff
        denom = u[:, None] + u[None, :]
        off = ~np.eye(len(u), dtype=bool)
        if np.any(denom[off] <= 0):
            raise ReplicabilityError("relative difference undefined: a pair of average utilities "
                                     "sums to <= 0; rescale the utility or use max_abs_diff")
        out = np.zeros_like(diff)
        out[off] = 2 * diff[off] / denom[off]
        return out
    freqs = counts / n[:, None]
    if backend == "tv":
        return 0.5 * np.abs(freqs[:, None, :] - freqs[None, :, :]).sum(axis=2)
    cdf = freqs.reshape(len(n), coded.n_scores, coded.n_labels).cumsum(axis=1).cumsum(axis=2)
    return np.abs(cdf[:, None] - cdf[None, :]).max(axis=(2, 3))


def _code_for(coded: _Coded, statistic: str, backend: str) -> tuple[np.ndarray, int]:
    if statistic != "max_distance":
        return coded.ucode, len(coded.uval)
    if backend == "tv":
        if coded.dcode is None:
            raise InferenceError("tv distance needs a rule or predicted classes")
        return coded.dcode, coded.n_dcells
    if backend == "ks":
        if coded.scode is None:
            raise InferenceError("ks distance needs scores on every unit")
        return coded.scode, coded.n_scores * coded.n_labels
    raise InferenceError(f"unknown distance backend {backend!r}")


def _check_statistic(statistic: str) -> None:
    if statistic not in STATISTICS:
        raise InferenceError(f"unknown statistic {statistic!r}")


def _max_offdiag(table: np.ndarray) -> float:
    if len(table) < 2:
        return 0.0
    return float(table[np.triu_indices(len(table), 1)].max())


# ---------------------------------------------------------------------------
# Bootstrap within studies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyBootstrap:
    study_id: str
    observed: float
    mean: float
    variance: float
    ci: tuple[float, float]
    degenerate: bool = False


@dataclass(frozen=True)
class WithinBootstrapResult:
    plan: ResamplePlan
    studies: tuple[StudyBootstrap, ...]
    matrix_variance: np.ndarray
    level: float
    draws: np.ndarray = field(repr=False)  # replicates x K

    def to_dict(self, include_draws: bool = False) -> dict[str, Any]:
        d = {
            **self.plan.to_dict(),
            "level": self.level,
            "studies": [
                {"study_id": s.study_id, "observed": s.observed, "mean": s.mean,
                 "variance": s.variance, "ci": list(s.ci), "degenerate": s.degenerate}
                for s in self.studies
            ],
            "matrix_variance": self.matrix_variance.tolist(),
        }
        if include_draws:
            d["draws"] = self.draws.tolist()
        return d


def bootstrap_within(collection: StudyCollection, rule: DecisionRule, utility: UtilitySpec,
                     plan: ResamplePlan, level: float = 0.95) -> WithinBootstrapResult:
    """Bootstrap units within each study to get the spread of each ``U_k``.

    Studies are treated as independent, so the variance of matrix entry
    ``(k, k')`` is ``var_k + var_k'``. A study with one unit gets variance 0
    and ``degenerate=True``.
    """
    if plan.scheme != "within_study_bootstrap":
        raise InferenceError("plan scheme must be within_study_bootstrap")
    coded = _encode(collection, rule, utility, backend="none")
    K, nc = collection.K, len(coded.uval)
    draws = np.empty((plan.replicates, K))
    for r in range(plan.replicates):
        rng = replicate_rng(plan.seed, plan.scheme, r)
        groups = [coded.offsets[k] + rng.integers(0, coded.sizes[k], coded.sizes[k]) for k in range(K)]
        counts = _counts(coded.ucode, nc, groups)
        draws[r] = counts @ coded.uval / coded.sizes
    full = _counts(coded.ucode, nc, [coded.study_indices(k) for k in range(K)])
    observed = full @ coded.uval / coded.sizes
    alpha = 1 - level
    out = []
    for k in range(K):
        col = draws[:, k]
        degenerate = bool(coded.sizes[k] == 1)
        var = 0.0 if degenerate or plan.replicates < 2 else float(np.var(col, ddof=1))
        lo, hi = np.percentile(col, [100 * alpha / 2, 100 * (1 - alpha / 2)])
        out.append(StudyBootstrap(coded.ids[k], float(observed[k]), float(col.mean()), var,
                                  (float(lo), float(hi)), degenerate))
    v = np.array([s.variance for s in out])
    mv = v[:, None] + v[None, :]
    np.fill_diagonal(mv, 0.0)
    return WithinBootstrapResult(plan, tuple(out), mv, level, draws)


# ---------------------------------------------------------------------------
# Replicability-statistic distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StatisticDistribution:
    plan: ResamplePlan
    statistic: str
    observed: float
    statistics: np.ndarray = field(repr=False)
    backend: str | None = None
    draws_meta: tuple = field(default=(), repr=False)

    def percentiles(self, qs: Sequence[float] = (2.5, 50, 97.5)) -> dict[str, float]:
        return {format(q, "g"): float(np.percentile(self.statistics, q)) for q in qs}

    def to_dict(self, include_draws: bool = False, epsilon: float | None = None) -> dict[str, Any]:
        d = {
            **self.plan.to_dict(),
            "statistic": self.statistic,
            "backend": self.backend,
            "observed": self.observed,
            "mean": float(self.statistics.mean()),
            "percentiles": self.percentiles(),
        }
        if epsilon is not None:
            d["epsilon"] = epsilon
            d["epsilon_rate"] = epsilon_rate(self.statistics, epsilon)
        if include_draws:
            d["statistics"] = self.statistics.tolist()
        return d


def _observed(coded: _Coded, statistic: str, backend: str) -> float:
    code, nc = _code_for(coded, statistic, backend)
    counts = _counts_by_assignment(code, nc, coded.study, len(coded.ids))
    return _max_offdiag(_pairwise_from_counts(coded, counts, statistic, backend))


def cluster_bootstrap(collection: StudyCollection, rule: DecisionRule, utility: UtilitySpec,
                      statistic: str, plan: ResamplePlan, backend: str = "tv") -> StatisticDistribution:
    """Randomized cluster bootstrap of a replicability statistic.

    Each replicate draws K studies with replacement, then units with
    replacement within each drawn study, and recomputes the statistic.
    ``draws_meta`` holds the drawn study indices of every replicate.
    """
    if plan.scheme != "cluster_bootstrap":
        raise InferenceError("plan scheme must be cluster_bootstrap")
    _check_statistic(statistic)
    K = collection.K
    if K < 2:
        raise InferenceError("cluster bootstrap needs at least two studies")
    coded = _encode(collection, rule, utility, backend)
    code, nc = _code_for(coded, statistic, backend)
    stats = np.empty(plan.replicates)
    picks = []
    for r in range(plan.replicates):
        rng = replicate_rng(plan.seed, plan.scheme, r)
        chosen = rng.integers(0, K, K)
        groups = [coded.offsets[k] + rng.integers(0, coded.sizes[k], coded.sizes[k]) for k in chosen]
        counts = _counts(code, nc, groups)
        stats[r] = _max_offdiag(_pairwise_from_counts(coded, counts, statistic, backend))
        picks.append(tuple(int(k) for k in chosen))
    return StatisticDistribution(plan, statistic, _observed(coded, statistic, backend), stats,
                                 backend if statistic == "max_distance" else None, tuple(picks))


def _strap_groups(coded: _Coded, gamma: float, sizes: Sequence[int], rng: np.random.Generator):
    N = coded.N
    groups = []
    for k, m in enumerate(sizes):
        from_pool = rng.random(m) < gamma
        own = coded.offsets[k] + rng.integers(0, coded.sizes[k], m)
        pooled = rng.integers(0, N, m)
        groups.append(np.where(from_pool, pooled, own))
    return groups


def _strap_sizes(collection: StudyCollection, sizes: Sequence[int] | None) -> list[int]:
    if sizes is None:
        return list(collection.sizes)
    sizes = [int(m) for m in sizes]
    if len(sizes) != collection.K or any(m < 1 for m in sizes):
        raise InferenceError("target sizes must give one positive size per study")
    return sizes


def study_strap(collection: StudyCollection, plan: ResamplePlan,
                sizes: Sequence[int] | None = None) -> list[StudyCollection]:
    """Pseudo-collections blending within-study and pooled draws.

    Each draw for pseudo-study k comes from study k with probability
    ``1 - gamma`` and uniformly from all pooled units with probability
    ``gamma``. ``gamma = 0`` is the within-study bootstrap; ``gamma = 1``
    makes units fully exchangeable across studies.
    """
    if plan.scheme != "study_strap":
        raise InferenceError("plan scheme must be study_strap")
    if not collection.pooled():
        raise InferenceError("empty collection")
    coded = _encode(collection, None, None, backend="none")
    pooled = collection.pooled()
    sizes = _strap_sizes(collection, sizes)
    out = []
    for r in range(plan.replicates):
        rng = replicate_rng(plan.seed, plan.scheme, r)
        groups = _strap_groups(coded, plan.gamma, sizes, rng)
        studies = tuple(Study(s.id, tuple(pooled[i] for i in g), s.metadata)
                        for s, g in zip(collection, groups))
        out.append(StudyCollection(studies, collection.schema))
    return out


def study_strap_statistics(collection: StudyCollection, rule: DecisionRule, utility: UtilitySpec,
                           statistic: str, plan: ResamplePlan, sizes: Sequence[int] | None = None,
                           backend: str = "tv") -> StatisticDistribution:
    """Replicability statistic over study-strap pseudo-collections.

    Draws the same pseudo-collections as :func:`study_strap` for equal plans.
    """
    if plan.scheme != "study_strap":
        raise InferenceError("plan scheme must be study_strap")
    _check_statistic(statistic)
    coded = _encode(collection, rule, utility, backend)
    code, nc = _code_for(coded, statistic, backend)
    sizes = _strap_sizes(collection, sizes)
    stats = np.empty(plan.replicates)
    for r in range(plan.replicates):
        rng = replicate_rng(plan.seed, plan.scheme, r)
        counts = _counts(code, nc, _strap_groups(coded, plan.gamma, sizes, rng))
        stats[r] = _max_offdiag(_pairwise_from_counts(coded, counts, statistic, backend))
    return StatisticDistribution(plan, statistic, _observed(coded, statistic, backend), stats,
                                 backend if statistic == "max_distance" else None)


def epsilon_rate(statistics: Sequence[float], epsilon: float) -> float:
    """Fraction of resampled statistics at or below ``epsilon``."""
    stats = np.asarray(statistics, dtype=float)
    if stats.size == 0:
        raise InferenceError("no statistics")
    if not epsilon >= 0:
        raise InferenceError("epsilon must be >= 0")
    return float(np.count_nonzero(stats <= epsilon) / stats.size)


# ---------------------------------------------------------------------------
# Permutation test
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    statistic: str
    statistic_observed: float
    p_value: float
    permutations: int
    null_draws: np.ndarray = field(repr=False)
    seed: int = 0
    adjust: str = "none"
    backend: str | None = None
    study_ids: tuple[str, ...] = ()
    pairwise_observed: np.ndarray | None = field(default=None, repr=False)
    pairwise_p: np.ndarray | None = field(default=None, repr=False)

    __test__ = False  # not a pytest class

    def to_dict(self, include_draws: bool = False) -> dict[str, Any]:
        d = {
            "statistic": self.statistic,
            "backend": self.backend,
            "statistic_observed": self.statistic_observed,
            "p_value": self.p_value,
            "permutations": self.permutations,
            "seed": self.seed,
            "adjust": self.adjust,
            "study_ids": list(self.study_ids),
            "null_scheme": "unit reassignment to studies with study sizes fixed",
        }
        if self.pairwise_p is not None:
            d["pairwise_observed"] = self.pairwise_observed.tolist()
            d["pairwise_p"] = self.pairwise_p.tolist()
            d["note"] = ("pairwise statistics share units and are not independent; "
                         "Bonferroni stays valid under dependence")
        if include_draws:
            d["null_draws"] = self.null_draws.tolist()
        return d


def _at_least(null: np.ndarray, observed) -> np.ndarray:
    return null >= observed - TIE_TOLERANCE * np.maximum(1.0, np.abs(observed))


def permutation_test(collection: StudyCollection, rule: DecisionRule, utility: UtilitySpec,
                     statistic: str = "max_abs_diff", permutations: int = 999, seed: int = 0,
                     adjust: str = "none", backend: str = "tv") -> TestResult:
    """Permutation test of exact replicability.

    The null pools all units and reassigns them to studies uniformly at
    random, keeping study sizes fixed. ``p = (1 + #{null >= observed}) /
    (permutations + 1)``. With ``adjust="bonferroni"`` each pairwise
    statistic also gets a p-value multiplied by ``K(K-1)/2`` and capped at 1.
    """
    _check_statistic(statistic)
    if adjust not in ("none", "bonferroni"):
        raise InferenceError(f"unknown adjustment {adjust!r}")
    K = collection.K
    if K < 2:
        raise InferenceError("permutation test needs at least two studies")
    if int(permutations) != permutations or permutations < 1:
        raise InferenceError("permutations must be a positive integer")
    coded = _encode(collection, rule, utility, backend)
    code, nc = _code_for(coded, statistic, backend)
    obs_table = _pairwise_from_counts(coded, _counts_by_assignment(code, nc, coded.study, K),
                                      statistic, backend)
    observed = _max_offdiag(obs_table)
    iu = np.triu_indices(K, 1)
    null = np.empty(permutations)
    pair_hits = np.zeros(len(iu[0]), dtype=np.int64)
    for p in range(permutations):
        rng = replicate_rng(seed, "permutation", p)
        assign = rng.permutation(coded.study)
        table = _pairwise_from_counts(coded, _counts_by_assignment(code, nc, assign, K),
                                      statistic, backend)
        null[p] = table[iu].max()
        pair_hits += _at_least(table[iu], obs_table[iu])
    hits = int(np.count_nonzero(_at_least(null, observed)))
    pval = (1 + hits) / (permutations + 1)
    pairwise_p = None
    if adjust == "bonferroni":
        raw = (1 + pair_hits) / (permutations + 1)
        adj = np.minimum(1.0, raw * (K * (K - 1) // 2))
        pairwise_p = np.zeros((K, K))
        pairwise_p[iu] = adj
        pairwise_p = pairwise_p + pairwise_p.T
        np.fill_diagonal(pairwise_p, 1.0)
    return TestResult(statistic, observed, pval, int(permutations), null, seed, adjust,
                      backend if statistic == "max_distance" else None, coded.ids,
                      obs_table if pairwise_p is not None else None, pairwise_p)
