from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predrep.decision import DecisionRule, UtilitySpec
from predrep.evaluation import (
    ConfusionFrequencies,
    EmpiricalJoint,
    EvaluationError,
    UtilityVector,
    average_utility,
    average_utility_from_frequencies,
    confusion_frequencies,
    discrete_joint,
    empirical_joint,
    joint_utility,
    sens_spec_prev,
    utility_matrix,
    utility_vector,
)
from predrep.studyset import Study, Unit

from conftest import class_study, collection, random_class_study, random_score_study, score_study

IDENTITY = DecisionRule.identity()
FOUR_CELLS = [(1, 1), (0, 0), (0, 1), (1, 0)]


def direct_average(study, rule, utility):
    """Plain loop over units, no counting."""
    total = Fraction(0)
    for u in study.units:
        total += Fraction(utility.value(rule.action(u), u.label))
    return float(total / study.n)


pairs = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40)
costs = st.floats(-10, -0.001)


class TestAverageUtility:
    def test_four_cells_binary_error(self):
        s = class_study("s", FOUR_CELLS)
        assert average_utility(s, IDENTITY, UtilitySpec.binary_error(-2, -1)) == -0.75

    def test_agreement_all_correct(self):
        s = class_study("s", [(1, 1), (0, 0), (0, 0)])
        assert average_utility(s, IDENTITY, UtilitySpec.agreement()) == 1.0

    def test_alert_rate(self):
        s = class_study("s", [(1, 0), (1, 1), (0, 0), (0, 1)])
        assert average_utility(s, IDENTITY, UtilitySpec.alert_indicator()) == 0.5

    @settings(max_examples=200)
    @given(pairs, costs, costs)
    def test_eq1_eq4_agree(self, ps, u01, u10):
        s = class_study("s", ps)
        u = UtilitySpec.binary_error(u01, u10)
        f = confusion_frequencies(s, IDENTITY)
        assert average_utility(s, IDENTITY, u) == pytest.approx(
            average_utility_from_frequencies(f, u01, u10), abs=1e-12)
        assert average_utility(s, IDENTITY, u) == direct_average(s, IDENTITY, u)

    @settings(max_examples=100)
    @given(pairs, st.randoms(use_true_random=False))
    def test_order_invariant(self, ps, rnd):
        shuffled = list(ps)
        rnd.shuffle(shuffled)
        u = UtilitySpec.binary_error(-0.7, -1.3)
        assert average_utility(class_study("a", ps), IDENTITY, u) == \
            average_utility(class_study("b", shuffled), IDENTITY, u)

    def test_b_copies(self, rng):
        for _ in range(50):
            s = random_score_study(rng, max_n=30)
            u = UtilitySpec.binary_error(-float(rng.uniform(0, 5)), -float(rng.uniform(0.01, 5)))
            rule = DecisionRule.at(float(rng.random()))
            for b in (1, 2, 3):
                assert average_utility(s.collate(b), rule, u) == average_utility(s, rule, u)
                assert empirical_joint(s.collate(b), rule) == empirical_joint(s, rule)
                assert empirical_joint(s.collate(b), scored=True) == empirical_joint(s, scored=True)


class TestFrequencies:
    def test_four_cells(self):
        f = confusion_frequencies(class_study("s", FOUR_CELLS), IDENTITY)
        assert f.as_tuple() == (0.25, 0.25, 0.25, 0.25)

    def test_all_true_negatives(self):
        f = confusion_frequencies(class_study("s", [(0, 0)] * 5), IDENTITY)
        assert f.as_tuple() == (1, 0, 0, 0)

    def test_all_false_alerts(self):
        f = confusion_frequencies(class_study("s", [(1, 0)] * 5), IDENTITY)
        assert f.as_tuple() == (0, 0, 1, 0)

    def test_orientation(self):
        # one missed positive, two false alerts
        f = confusion_frequencies(class_study("s", [(0, 1), (1, 0), (1, 0), (1, 1)]), IDENTITY)
        assert (f.f01, f.f10) == (0.25, 0.5)

    def test_non_binary(self):
        s = Study("s", (Unit({}, 2, None, 1),))
        with pytest.raises(EvaluationError):
            confusion_frequencies(s, IDENTITY)

    def test_from_frequencies_examples(self):
        f = ConfusionFrequencies(0.25, 0.25, 0.25, 0.25)
        assert average_utility_from_frequencies(f, -2, -1) == -0.75
        assert average_utility_from_frequencies(ConfusionFrequencies(0.5, 0, 0, 0.5), -3, -7) == 0
        f = ConfusionFrequencies(0.5, 0.1, 0.1, 0.3)
        assert average_utility_from_frequencies(f, -1, -1) == pytest.approx(-0.2, abs=1e-15)

    def test_sum_must_be_one(self):
        with pytest.raises(EvaluationError):
            ConfusionFrequencies(0.5, 0.5, 0.5, 0)


class TestSensSpecPrev:
    def test_hand_values(self):
        sens, spec, prev = sens_spec_prev(ConfusionFrequencies(0.5, 0.1, 0.1, 0.3))
        assert sens == pytest.approx(0.75, abs=1e-12)
        assert spec == pytest.approx(5 / 6, abs=1e-12)
        assert prev == pytest.approx(0.4, abs=1e-12)

    def test_perfect(self):
        assert sens_spec_prev(ConfusionFrequencies(0.5, 0, 0, 0.5)) == (1, 1, 0.5)

    def test_zero_prevalence(self):
        with pytest.raises(EvaluationError, match="prevalence"):
            sens_spec_prev(ConfusionFrequencies(1, 0, 0, 0))

    @settings(max_examples=200)
    @given(pairs, costs, costs)
    def test_reconstruction(self, ps, u01, u10):
        f = confusion_frequencies(class_study("s", ps), IDENTITY)
        try:
            sens, spec, prev = sens_spec_prev(f)
        except EvaluationError:
            return
        rebuilt = u01 * (1 - sens) * prev + u10 * (1 - spec) * (1 - prev)
        assert rebuilt == pytest.approx(average_utility_from_frequencies(f, u01, u10), abs=1e-12)


class TestVectorMatrix:
    def test_single_study(self):
        m = utility_matrix(UtilityVector((0.3,), ("a",)))
        assert m.entries.tolist() == [[0.0]]

    def test_two_studies(self):
        m = utility_matrix(UtilityVector((-0.5, -0.7), ("a", "b")))
        assert m.entries == pytest.approx(np.array([[0, 0.2], [-0.2, 0]]), abs=1e-15)

    def test_identical_studies(self):
        s = class_study("a", FOUR_CELLS)
        c = collection(s, Study("b", s.units))
        v = utility_vector(c, IDENTITY, UtilitySpec.binary_error(-1, -2))
        assert not utility_matrix(v).entries.any()

    def test_antisymmetric(self, rng):
        for _ in range(100):
            vals = rng.normal(size=int(rng.integers(1, 8)))
            m = utility_matrix(UtilityVector(tuple(vals), tuple(str(i) for i in range(len(vals))))).entries
            assert np.array_equal(m, -m.T)
            assert not np.diag(m).any()

    def test_csv_17_digits(self):
        v = UtilityVector((1 / 3, -0.75), ("a", "b"))
        assert v.to_csv() == "study_id,average_utility\na,0.33333333333333331\nb,-0.75\n"


class TestEmpiricalJoint:
    def test_discrete_matches_confusion(self):
        s = class_study("s", FOUR_CELLS + [(1, 1)])
        j = empirical_joint(s)
        f = confusion_frequencies(s, IDENTITY)
        assert j.confusion().as_tuple() == f.as_tuple()

    def test_scored_points(self):
        j = empirical_joint(score_study("s", [0.2, 0.8], [0, 1]), scored=True)
        assert j.kind == "scored"
        assert j.cells == {(0.2, 0): Fraction(1, 2), (0.8, 1): Fraction(1, 2)}

    def test_duplicated_study(self):
        s = class_study("s", FOUR_CELLS)
        assert empirical_joint(s.collate(2)) == empirical_joint(s)

    def test_missing_field(self):
        with pytest.raises(EvaluationError):
            empirical_joint(class_study("s", FOUR_CELLS), scored=True)

    def test_full_grid_has_zero_cells(self):
        j = empirical_joint(class_study("s", [(1, 1)]))
        assert set(j.cells) == {(0, 0), (0, 1), (1, 0), (1, 1)}
        assert j.cells[(0, 0)] == 0

    def test_feature_opt_in(self):
        s = Study("s", (Unit({"g": "a"}, 1, None, 1), Unit({"g": "b"}, 0, None, 1)))
        j = empirical_joint(s, feature="g")
        assert j.cells[(1, "a", 1)] == Fraction(1, 2)
        assert len(j.cells) == 8

    def test_joint_utility_matches_average(self, rng):
        u = UtilitySpec.binary_error(-2.5, -0.5)
        for _ in range(50):
            s = random_class_study(rng)
            assert joint_utility(empirical_joint(s), u) == average_utility(s, IDENTITY, u)

    def test_discrete_joint_from_floats(self):
        j = discrete_joint(0.5, 0.1, 0.1, 0.3)
        assert j.cells[(0, 1)] == Fraction(1, 10)
        with pytest.raises(EvaluationError):
            EmpiricalJoint("discrete", {(0, 0): Fraction(1, 2)})
