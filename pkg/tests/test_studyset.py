import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predrep.studyset import (
    ColumnConfig,
    Condition,
    Schema,
    Study,
    StudyCollection,
    StudySetError,
    SubsetPredicate,
    Unit,
    column_config_for,
    load_collection,
    parse_predicate,
    restrict,
    validate,
    write_collection,
)


def write_csv(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


class TestLoad:
    def test_two_csvs_row_counts(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, 0), (0.2, 1), (0.3, 0), (0.9, 1)])
        b = write_csv(tmp_path / "b.csv", ["score", "label"], [(0.5, 1)] * 6)
        c = load_collection([a, b])
        assert c.K == 2
        assert c.sizes == (4, 6)
        assert c.ids == ("a", "b")
        assert [u.score for u in c.study("a")] == [0.1, 0.2, 0.3, 0.9]

    def test_label_outside_set_names_row(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, 0), (0.2, 2)])
        with pytest.raises(StudySetError, match=r"row 2: label outside declared set"):
            load_collection([a])

    def test_empty_file_named(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, 0)])
        b = write_csv(tmp_path / "b.csv", ["score", "label"], [])
        c = write_csv(tmp_path / "c.csv", ["score", "label"], [(0.4, 1)])
        with pytest.raises(StudySetError, match=r"b\.csv: empty file"):
            load_collection([a, b, c])

    def test_missing_declared_column(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "outcome"], [(0.1, 0)])
        with pytest.raises(StudySetError, match="missing declared column 'label'"):
            load_collection([a])

    def test_duplicate_ids(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, 0)])
        with pytest.raises(StudySetError, match="duplicate study id"):
            load_collection([a, a], ids=["x", "x"])

    def test_unparseable_cell(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, 0), ("abc", 1)])
        with pytest.raises(StudySetError, match=r"row 2, column 'score'"):
            load_collection([a])

    def test_missing_label_is_error(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["score", "label"], [(0.1, "")])
        with pytest.raises(StudySetError, match="missing label"):
            load_collection([a])

    def test_missing_features_kept_as_none(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["age", "site", "score", "label"],
                      [(50, "x", 0.1, 0), ("", "y", 0.2, 1), (61, "", 0.3, 1)])
        c = load_collection([a])
        assert c.schema.features == {"age": "numeric", "site": "categorical"}
        ages = [u.features["age"] for u in c.study(0)]
        assert ages == [50.0, None, 61.0]
        assert validate(c).studies[0].missing == {"age": 1, "site": 1, "<score>": 0}

    def test_jsonl_and_predicted_class(self, tmp_path):
        p = tmp_path / "s.jsonl"
        p.write_text("\n".join(json.dumps(r) for r in [
            {"y": 1, "pred": 1, "g": "a"}, {"y": 0, "pred": 1, "g": "b"}]) + "\n")
        c = load_collection([p], ColumnConfig(label="y", score=None, predicted_class="pred"))
        assert [(u.predicted_class, u.label) for u in c.study(0)] == [(1, 1), (1, 0)]

    def test_categorical_label_set(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["pred", "label"], [("low", "low"), ("high", "mid")])
        cfg = {"label": "label", "score": None, "predicted_class": "pred",
               "label_set": ["low", "mid", "high"]}
        c = load_collection([a], cfg)
        assert not c.schema.is_binary
        assert c.study(0).units[1].label == "mid"

    def test_round_trip(self, tmp_path):
        a = write_csv(tmp_path / "a.csv", ["age", "site", "score", "label"],
                      [(50, "x", 0.125, 0), ("", "y", 0.3333333333333333, 1), (61.5, "", 1e-17, 1)])
        b = write_csv(tmp_path / "b.csv", ["age", "site", "score", "label"], [(20, "z", 0.7, 0)])
        c1 = load_collection([a, b])
        write_collection(c1, tmp_path / "out")
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        paths = [tmp_path / "out" / e["path"] for e in manifest["studies"]]
        c2 = load_collection(paths, ColumnConfig.from_dict(manifest["columns"]),
                             ids=[e["id"] for e in manifest["studies"]])
        assert c2.schema == c1.schema
        for s1, s2 in zip(c1, c2):
            assert s1.id == s2.id and s1.units == s2.units


def _age_collection(ages_per_study):
    studies = []
    for i, ages in enumerate(ages_per_study):
        units = tuple(Unit({"age": float(a), "site": "s"}, j % 2, 0.5) for j, a in enumerate(ages))
        studies.append(Study(f"k{i + 1}", units))
    return StudyCollection(tuple(studies), Schema(features={"age": "numeric", "site": "categorical"}))


class TestRestrict:
    def test_drops_empty_study(self):
        c = _age_collection([[60, 51, 50, 20, 30], [10, 20, 30, 40]])
        r = restrict(c, parse_predicate("age >= 50"))
        assert r.collection.K == 1
        assert r.collection.sizes == (3,)
        assert r.dropped == ("k2",)

    def test_tautology_is_identity(self):
        c = _age_collection([[60, 51], [10]])
        r = restrict(c, parse_predicate("site = s"))
        assert r.collection == c and r.dropped == ()

    def test_contradiction_errors(self):
        c = _age_collection([[60, 51], [10]])
        with pytest.raises(StudySetError, match="empty restriction"):
            restrict(c, parse_predicate("age > 100 and age < 0"))

    def test_unknown_feature(self):
        c = _age_collection([[60]])
        with pytest.raises(StudySetError, match="unknown feature"):
            restrict(c, parse_predicate("weight > 3"))

    def test_ordered_comparator_on_categorical(self):
        c = _age_collection([[60]])
        with pytest.raises(StudySetError, match="needs a numeric feature"):
            restrict(c, SubsetPredicate((Condition("site", "<", "t"),)))

    def test_in_set(self):
        c = _age_collection([[60, 51, 50]])
        r = restrict(c, parse_predicate("age in {50, 60}"))
        assert [u.features["age"] for u in r.collection.study(0)] == [60.0, 50.0]

    def test_missing_value_touched(self):
        units = (Unit({"age": None}, 0, 0.1), Unit({"age": 3.0}, 1, 0.2))
        c = StudyCollection((Study("a", units),), Schema(features={"age": "numeric"}))
        with pytest.raises(StudySetError, match="missing value"):
            restrict(c, parse_predicate("age > 1"))

    @settings(max_examples=60, deadline=None)
    @given(
        ages=st.lists(st.lists(st.integers(0, 100), min_size=1, max_size=12), min_size=1, max_size=4),
        op=st.sampled_from(["=", "!=", "<", "<=", ">", ">="]),
        cut=st.integers(0, 100),
    )
    def test_idempotent_and_complement(self, ages, op, cut):
        c = _age_collection(ages)
        p = SubsetPredicate((Condition("age", op, cut),))
        sizes = {s.id: s.n for s in c}
        try:
            once = restrict(c, p).collection
        except StudySetError:
            once = None
        if once is not None:
            assert restrict(once, p).collection == once
        kept = {s.id: s.n for s in once} if once else {}
        try:
            comp = {s.id: s.n for s in restrict(c, p.negate()).collection}
        except StudySetError:
            comp = {}
        for sid, n in sizes.items():
            assert kept.get(sid, 0) + comp.get(sid, 0) == n


class TestValidate:
    def test_zero_prevalence_flag(self):
        units = tuple(Unit({}, 0, 0.2) for _ in range(3))
        c = StudyCollection((Study("neg", units),))
        assert "neg: prevalence 0" in validate(c).flags

    def test_out_of_range_scores(self):
        units = (Unit({}, 0, 0.2), Unit({}, 1, 1.4), Unit({}, 1, -0.1))
        c = StudyCollection((Study("s", units),))
        flags = validate(c).flags
        assert flags == ("s: 2 score(s) outside [0, 1] at rows 2, 3",)

    def test_clean_collection(self):
        units = (Unit({}, 0, 0.2), Unit({}, 1, 0.9))
        report = validate(StudyCollection((Study("s", units),)))
        assert report.flags == () and report.ok
        assert report.studies[0].prevalence == 0.5


def test_column_config_for_round_trips_schema():
    schema = Schema(features={"a": "numeric"}, has_score=True, has_class=True)
    cc = column_config_for(schema)
    assert cc.predicted_class == "predicted_class" and cc.feature_types == {"a": "numeric"}
