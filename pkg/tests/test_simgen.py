import math

import numpy as np
import pytest

from predrep.decision import DecisionRule, UtilitySpec
from predrep.evaluation import average_utility, confusion_frequencies
from predrep.simgen import (
    BetaScores,
    CollectionSpec,
    DiscreteScores,
    SimulationError,
    StudySpec,
    exact_cell_probabilities,
    generate,
)
from predrep.studyset import write_collection

RULE = DecisionRule.at(0.5)


def beta_cdf_cells(spec, t, m=200_000):
    """Cells by integrating Beta densities with a midpoint rule on a finer grid."""
    x = (np.arange(m) + 0.5) / m
    out = {}
    for y, w in ((0, 1 - spec.prevalence), (1, spec.prevalence)):
        a, b = spec.scores.params(y)
        logd = (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - (
            math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
        d = np.exp(logd) / m
        out[(1, y)] = w * d[x >= t].sum()
        out[(0, y)] = w * d[x < t].sum()
    return out


class TestSpecs:
    def test_validation(self):
        with pytest.raises(SimulationError):
            StudySpec(0)
        with pytest.raises(SimulationError):
            StudySpec(10, prevalence=1.0)
        with pytest.raises(SimulationError):
            StudySpec(10, concept_flip=1.0)
        with pytest.raises(SimulationError):
            BetaScores(mean0=1.2)
        with pytest.raises(SimulationError, match="probability table"):
            DiscreteScores((0.1, 0.9), (0.5, 0.6), (0.5, 0.5))
        with pytest.raises(SimulationError):
            CollectionSpec(())

    def test_dict_round_trip(self):
        s = StudySpec(5, 0.3, DiscreteScores((0.2, 0.8), (0.7, 0.3), (0.1, 0.9)), 0.1, 0.5, "x")
        assert StudySpec.from_dict(s.to_dict()) == s


class TestGenerate:
    def test_deterministic(self):
        spec = CollectionSpec((StudySpec(50), StudySpec(30, prevalence=0.2)), seed=5)
        assert generate(spec) == generate(spec)
        assert generate(spec) != generate(CollectionSpec(spec.studies, seed=6))

    def test_order_stable(self):
        a, b = StudySpec(40, id="a"), StudySpec(40, prevalence=0.2, id="b")
        extra = StudySpec(10, id="c")
        first = generate(CollectionSpec((a, b), 3))
        longer = generate(CollectionSpec((a, b, extra), 3))
        assert first.study("a") == longer.study("a") and first.study("b") == longer.study("b")

    def test_units_carry_study_feature(self):
        c = generate(CollectionSpec((StudySpec(5), StudySpec(5)), 0))
        assert c.ids == ("study1", "study2")
        assert all(u.features == {"study": s.id} for s in c for u in s.units)
        assert c.schema.features == {"study": "categorical"}

    def test_exportable(self, tmp_path):
        write_collection(generate(CollectionSpec((StudySpec(5),), 0)), tmp_path)
        assert (tmp_path / "manifest.json").exists()

    def test_discrete_support(self):
        spec = StudySpec(500, scores=DiscreteScores((0.1, 0.5, 0.9), (0.6, 0.3, 0.1), (0.1, 0.3, 0.6)))
        c = generate(CollectionSpec((spec,), 1))
        assert {u.score for u in c.study(0)} <= {0.1, 0.5, 0.9}


class TestExactCells:
    def test_symmetric(self):
        f = exact_cell_probabilities(StudySpec(1, 0.5, BetaScores(0.3, 7, 0.7, 7)), RULE)
        assert f.f01 == f.f10 and f.f00 == f.f11

    def test_always_alert(self):
        f = exact_cell_probabilities(StudySpec(1, 0.3), DecisionRule.at(-math.inf))
        assert f.as_tuple() == (0, 0, pytest.approx(0.7, abs=1e-15), pytest.approx(0.3, abs=1e-15))

    def test_discrete_exact(self):
        spec = StudySpec(1, 0.4, DiscreteScores((0.2, 0.8), (0.75, 0.25), (0.25, 0.75)))
        f = exact_cell_probabilities(spec, RULE)
        assert f.as_tuple() == pytest.approx((0.45, 0.1, 0.15, 0.3), abs=1e-15)

    @pytest.mark.parametrize("t", [0.3, 0.5, 0.72])
    def test_against_fine_quadrature(self, t):
        spec = StudySpec(1, 0.35, BetaScores(0.3, 5, 0.6, 9))
        f = exact_cell_probabilities(spec, DecisionRule.at(t))
        ref = beta_cdf_cells(spec, t)
        assert f.f10 == pytest.approx(ref[(1, 0)], abs=1e-4)
        assert f.f01 == pytest.approx(ref[(0, 1)], abs=1e-4)

    @pytest.mark.parametrize("spec", [
        StudySpec(100_000, 0.3, BetaScores(0.3, 5, 0.6, 9)),
        StudySpec(100_000, 0.6, concept_flip=0.3),
        StudySpec(100_000, 0.5, covariate_tilt=1.5),
    ])
    def test_simulation_within_001(self, spec):
        c = generate(CollectionSpec((spec,), 2))
        emp = confusion_frequencies(c.study(0), RULE).as_tuple()
        exact = exact_cell_probabilities(spec, RULE).as_tuple()
        assert np.max(np.abs(np.subtract(emp, exact))) <= 0.01

    def test_concept_flip_lowers_agreement(self):
        for t in (0.3, 0.5, 0.7):
            vals = []
            for rho in (0, 0.1, 0.3, 0.6, 0.9):
                f = exact_cell_probabilities(StudySpec(1, 0.4, concept_flip=rho), DecisionRule.at(t))
                vals.append(f.f00 + f.f11)
            assert all(a > b for a, b in zip(vals, vals[1:]))


class TestShifts:
    def test_label_shift_ordering(self):
        spec = CollectionSpec((StudySpec(1000, 0.9), StudySpec(1000, 0.1)), seed=0)
        c = generate(spec)
        rate = [average_utility(s, RULE, UtilitySpec.alert_indicator()) for s in c]
        assert rate[0] > rate[1]

    def test_calibration_monotone(self):
        c = generate(CollectionSpec((StudySpec(10_000, 0.5),), 4))
        s = np.array([u.score for u in c.study(0)])
        y = np.array([u.label for u in c.study(0)])
        bins = np.digitize(s, np.linspace(0.1, 0.9, 5))
        rates = [y[bins == b].mean() for b in range(6)]
        assert all(a < b for a, b in zip(rates, rates[1:]))

    def test_identical_specs_converge(self):
        gaps = []
        for n in (1000, 10_000):
            c = generate(CollectionSpec((StudySpec(n), StudySpec(n), StudySpec(n)), 7))
            u = [average_utility(s, RULE, UtilitySpec.agreement()) for s in c]
            gaps.append(max(u) - min(u))
        assert gaps[1] < gaps[0] and gaps[1] < 0.03

    def test_tilt_raises_mean_score(self):
        c = generate(CollectionSpec((StudySpec(5000), StudySpec(5000, covariate_tilt=2.0)), 1))
        means = [np.mean([u.score for u in s.units]) for s in c]
        assert means[1] > means[0] + 0.05
