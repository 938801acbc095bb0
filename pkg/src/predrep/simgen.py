"""Synthetic multi-study generator with covariate, label and concept shift.

Each study draws ``(score, label)`` pairs: the label from its prevalence, the
score from a per-class score model. Shifts are controlled per study:

* label shift: a different ``prevalence``;
* covariate shift: ``covariate_tilt`` reweights the joint by ``exp(tilt * score)``,
  which moves the score marginal and keeps ``P(y | score)`` fixed;
* concept shift: with probability ``concept_flip`` a label is redrawn from
  ``Bernoulli(prevalence)`` independently of the score.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .decision import DecisionRule
from .evaluation import ConfusionFrequencies
from .studyset import Schema, Study, StudyCollection, Unit

GRID_POINTS = 10_000


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class BetaScores:
    """Class-conditional Beta score laws given by mean and concentration."""

    mean0: float = 0.35
    conc0: float = 6.0
    mean1: float = 0.65
    conc1: float = 6.0

    def __post_init__(self):
        for m in (self.mean0, self.mean1):
            if not 0 < m < 1:
                raise SimulationError(f"Beta mean {m} outside (0, 1)")
        for c in (self.conc0, self.conc1):
            if not c > 0:
                raise SimulationError(f"Beta concentration {c} must be positive")

    def params(self, y: int) -> tuple[float, float]:
        m, c = (self.mean1, self.conc1) if y == 1 else (self.mean0, self.conc0)
        # decimal arithmetic so that mean m and mean 1 - m give mirrored parameters
        m, c = Fraction(repr(m)), Fraction(repr(c))
        return float(m * c), float((1 - m) * c)

    def sample(self, rng: np.random.Generator, y: np.ndarray) -> np.ndarray:
        a0, b0 = self.params(0)
        a1, b1 = self.params(1)
        s0 = rng.beta(a0, b0, size=y.size)
        s1 = rng.beta(a1, b1, size=y.size)
        return np.where(y == 1, s1, s0)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "beta", "mean0": self.mean0, "conc0": self.conc0,
                "mean1": self.mean1, "conc1": self.conc1}


@dataclass(frozen=True)
class DiscreteScores:
    """Class-conditional score tables on shared support points."""

    values: tuple[float, ...]
    probs0: tuple[float, ...]
    probs1: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for name in ("probs0", "probs1"):
            p = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, p)
            if len(p) != len(self.values):
                raise SimulationError(f"{name} length differs from values")
            if any(v < 0 for v in p) or abs(math.fsum(p) - 1) > 1e-9:
                raise SimulationError(f"{name} is not a probability table")
        if len(set(self.values)) != len(self.values):
            raise SimulationError("score values must be distinct")

    def sample(self, rng: np.random.Generator, y: np.ndarray) -> np.ndarray:
        vals = np.asarray(self.values)
        i0 = rng.choice(len(vals), size=y.size, p=np.asarray(self.probs0))
        i1 = rng.choice(len(vals), size=y.size, p=np.asarray(self.probs1))
        return vals[np.where(y == 1, i1, i0)]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "discrete", "values": list(self.values),
                "probs0": list(self.probs0), "probs1": list(self.probs1)}


ScoreModel = BetaScores | DiscreteScores


def score_model_from_dict(d: Mapping[str, Any]) -> ScoreModel:
    d = dict(d)
    kind = d.pop("kind", "beta")
    if kind == "beta":
        return BetaScores(**d)
    if kind == "discrete":
        return DiscreteScores(tuple(d["values"]), tuple(d["probs0"]), tuple(d["probs1"]))
    raise SimulationError(f"unknown score model kind {kind!r}")


@dataclass(frozen=True)
class StudySpec:
    n: int
    prevalence: float = 0.5
    scores: ScoreModel = field(default_factory=BetaScores)
    concept_flip: float = 0.0
    covariate_tilt: float = 0.0
    id: str | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise SimulationError(f"n must be a positive integer, got {self.n}")
        if not 0 < self.prevalence < 1:
            raise SimulationError(f"prevalence {self.prevalence} outside (0, 1)")
        if not 0 <= self.concept_flip < 1:
            raise SimulationError(f"concept_flip {self.concept_flip} outside [0, 1)")
        if not math.isfinite(self.covariate_tilt):
            raise SimulationError("covariate_tilt must be finite")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StudySpec":
        d = dict(d)
        if "scores" in d:
            d["scores"] = score_model_from_dict(d["scores"])
        return cls(**d)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "n": self.n, "prevalence": self.prevalence,
                "scores": self.scores.to_dict(), "concept_flip": self.concept_flip,
                "covariate_tilt": self.covariate_tilt}


@dataclass(frozen=True)
class CollectionSpec:
    studies: tuple[StudySpec, ...]
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise SimulationError("a collection spec needs at least one study")
        if self.seed < 0:
            raise SimulationError("seed must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CollectionSpec":
        return cls(tuple(StudySpec.from_dict(s) for s in d["studies"]), int(d.get("seed", 0)))

    def ids(self) -> list[str]:
        return [s.id if s.id is not None else f"study{k + 1}" for k, s in enumerate(self.studies)]


def _draw_study(spec: StudySpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = [], []
    need = spec.n
    wmax = math.exp(max(spec.covariate_tilt, 0.0))
    while need > 0:
        y = (rng.random(need) < spec.prevalence).astype(np.int64)
        s = spec.scores.sample(rng, y)
        if spec.covariate_tilt != 0:
            keep = rng.random(need) < np.exp(spec.covariate_tilt * s) / wmax
            y, s = y[keep], s[keep]
        scores.append(s)
        labels.append(y)
        need -= y.size
    s = np.concatenate(scores)[: spec.n]
    y = np.concatenate(labels)[: spec.n]
    if spec.concept_flip > 0:
        redraw = rng.random(spec.n) < spec.concept_flip
        fresh = (rng.random(spec.n) < spec.prevalence).astype(np.int64)
        y = np.where(redraw, fresh, y)
    return s, y


def generate(spec: CollectionSpec) -> StudyCollection:
    """Draw a collection. Study ``k`` uses the substream ``(seed, k)``."""
    studies = []
    for k, (sid, sspec) in enumerate(zip(spec.ids(), spec.studies)):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, k]))
        s, y = _draw_study(sspec, rng)
        feats = {"study": sid}
        units = tuple(Unit(feats, int(yi), float(si)) for si, yi in zip(s, y))
        studies.append(Study(sid, units, {"simulated": True}))
    schema = Schema(features={"study": "categorical"}, label_set=(0, 1),
                    has_score=True, has_class=False, score_is_probability=True)
    return StudyCollection(tuple(studies), schema)


def _grid_masses(spec: StudySpec) -> tuple[np.ndarray, list[float], list[float]]:
    """Support points and joint masses ``P(score = s_i, y)`` before label flips."""
    if isinstance(spec.scores, DiscreteScores):
        pts = np.asarray(spec.scores.values)
        p0 = list(spec.scores.probs0)
        p1 = list(spec.scores.probs1)
    else:
        mid = (np.arange(GRID_POINTS) + 0.5) / GRID_POINTS
        rev = mid[::-1]  # stands in for 1 - mid so mirrored models stay exactly mirrored
        dens = []
        for y in (0, 1):
            a, b = spec.scores.params(y)
            logd = (a - 1) * np.log(mid) + (b - 1) * np.log(rev)
            d = np.exp(logd - logd.max())
            z = math.fsum(d)
            dens.append([v / z for v in d])
        pts, p0, p1 = mid, dens[0], dens[1]
    pi = spec.prevalence
    m0 = [(1 - pi) * v for v in p0]
    m1 = [pi * v for v in p1]
    if spec.covariate_tilt != 0:
        w = np.exp(spec.covariate_tilt * pts)
        m0 = [v * wi for v, wi in zip(m0, w)]
        m1 = [v * wi for v, wi in zip(m1, w)]
        z = math.fsum(m0) + math.fsum(m1)
        m0 = [v / z for v in m0]
        m1 = [v / z for v in m1]
    return pts, m0, m1


def exact_cell_probabilities(spec: StudySpec, rule: DecisionRule) -> ConfusionFrequencies:
    """Population ``(f00, f01, f10, f11)`` of a threshold rule under ``spec``.

    Beta models are integrated on a fixed midpoint grid of ``GRID_POINTS``
    points; discrete tables are summed exactly.
    """
    if rule.kind != "threshold":
        raise SimulationError("population cells need a threshold rule")
    pts, m0, m1 = _grid_masses(spec)
    fire = pts >= rule.threshold
    c = {
        (0, 0): math.fsum(v for v, f in zip(m0, fire) if not f),
        (1, 0): math.fsum(v for v, f in zip(m0, fire) if f),
        (0, 1): math.fsum(v for v, f in zip(m1, fire) if not f),
        (1, 1): math.fsum(v for v, f in zip(m1, fire) if f),
    }
    rho = spec.concept_flip
    if rho > 0:
        pa = {a: c[(a, 0)] + c[(a, 1)] for a in (0, 1)}
        py = {0: 1 - spec.prevalence, 1: spec.prevalence}
        c = {(a, y): (1 - rho) * c[(a, y)] + rho * pa[a] * py[y] for (a, y) in c}
    total = math.fsum(c.values())
    f = {k: v / total for k, v in c.items()}
    return ConfusionFrequencies(f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)])
