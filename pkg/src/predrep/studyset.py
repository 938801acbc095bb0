"""Multi-study collections: data model, ingestion, restriction and validation.

A collection holds K independent studies, one file per study. Each unit
carries its features, a label from a declared finite label set, and the
output of the prediction rule under assessment (a score, a predicted class,
or both).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, NamedTuple, Sequence

logger = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


class StudySetError(ValueError):
    """Raised for malformed input data or invalid collection operations."""


@dataclass(frozen=True)
class Unit:
    features: Mapping[str, Any]
    label: Any
    score: float | None = None
    predicted_class: Any = None

    def __post_init__(self):
        if self.score is None and self.predicted_class is None:
            raise StudySetError("unit has neither a score nor a predicted class")
        if self.label is None:
            raise StudySetError("unit is missing its label")


@dataclass(frozen=True)
class Study:
    id: str
    units: tuple[Unit, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.units:
            raise StudySetError(f"study {self.id!r} has no units")

    @property
    def n(self) -> int:
        return len(self.units)

    def __len__(self) -> int:
        return len(self.units)

    def __iter__(self) -> Iterator[Unit]:
        return iter(self.units)

    def collate(self, b: int) -> "Study":
        """Return the study formed by stacking ``b`` copies of this one."""
        if b < 1:
            raise ValueError("b must be >= 1")
        return Study(self.id, self.units * b, self.metadata)


@dataclass(frozen=True)
class Schema:
    """Shared layout of every study in a collection.

    ``features`` maps feature names to ``"numeric"`` or ``"categorical"``.
    """

    features: Mapping[str, str] = field(default_factory=dict)
    label_set: tuple = (0, 1)
    has_score: bool = True
    has_class: bool = False
    score_is_probability: bool = True

    @property
    def is_binary(self) -> bool:
        return set(self.label_set) == {0, 1}


@dataclass(frozen=True)
class StudyCollection:
    studies: tuple[Study, ...]
    schema: Schema = field(default_factory=Schema)

    def __post_init__(self):
        object.__setattr__(self, "studies", tuple(self.studies))
        if not self.studies:
            raise StudySetError("a collection needs at least one study")
        ids = [s.id for s in self.studies]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise StudySetError(f"duplicate study id(s): {', '.join(dupes)}")

    @property
    def K(self) -> int:
        return len(self.studies)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.studies)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(s.n for s in self.studies)

    def study(self, key: int | str) -> Study:
        if isinstance(key, int):
            return self.studies[key]
        for s in self.studies:
            if s.id == key:
                return s
        raise KeyError(key)

    def __iter__(self) -> Iterator[Study]:
        return iter(self.studies)

    def __len__(self) -> int:
        return len(self.studies)

    def pooled(self) -> tuple[Unit, ...]:
        return tuple(u for s in self.studies for u in s.units)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColumnConfig:
    """Column bindings shared by every study file.

    ``features=None`` means every column not bound to label, score or class
    is read as a feature. ``feature_types`` overrides type inference.
    """

    label: str = "label"
    score: str | None = "score"
    predicted_class: str | None = None
    features: Sequence[str] | None = None
    feature_types: Mapping[str, str] = field(default_factory=dict)
    label_set: Sequence = (0, 1)
    score_is_probability: bool = True

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ColumnConfig":
        known = {"label", "score", "predicted_class", "features", "feature_types",
                 "label_set", "score_is_probability"}
        unknown = set(d) - known
        if unknown:
            raise StudySetError(f"unknown column config key(s): {sorted(unknown)}")
        kw = dict(d)
        if "label_set" in kw:
            kw["label_set"] = tuple(kw["label_set"])
        return cls(**kw)


def _is_missing(cell: Any) -> bool:
    if cell is None:
        return True
    if isinstance(cell, float) and math.isnan(cell):
        return True
    return isinstance(cell, str) and cell.strip().lower() in MISSING_TOKENS


def _read_rows(path: Path) -> tuple[list[str], list[dict[str, Any]]]:
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        rows, columns = [], []
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise StudySetError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from None
                if not isinstance(obj, dict):
                    raise StudySetError(f"{path}: line {lineno}: expected a JSON object")
                for k in obj:
                    if k not in columns:
                        columns.append(k)
                rows.append(obj)
        return columns, rows
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = list(reader.fieldnames or [])
        rows = list(reader)
    return columns, rows


def _match_label(cell: Any, label_set: Sequence) -> Any:
    for value in label_set:
        if cell == value and type(cell) is not bool:
            return value
        if str(cell).strip() == str(value):
            return value
        try:
            if isinstance(value, (int, float)) and float(cell) == value:
                return value
        except (TypeError, ValueError):
            pass
    raise KeyError(cell)


def _parse_float(cell: Any) -> float:
    if isinstance(cell, bool):
        raise ValueError("boolean is not numeric")
    return float(cell)


def _infer_feature_types(names, all_rows, declared) -> dict[str, str]:
    types = {}
    for name in names:
        if name in declared:
            kind = declared[name]
            if kind not in ("numeric", "categorical"):
                raise StudySetError(f"feature {name!r}: unknown type {kind!r}")
            types[name] = kind
            continue
        numeric = True
        for rows in all_rows:
            for row in rows:
                cell = row.get(name)
                if _is_missing(cell):
                    continue
                try:
                    _parse_float(cell)
                except (TypeError, ValueError):
                    numeric = False
                    break
            if not numeric:
                break
        types[name] = "numeric" if numeric else "categorical"
    return types


def load_collection(
    paths: Sequence[str | Path],
    config: ColumnConfig | Mapping[str, Any] | None = None,
    ids: Sequence[str] | None = None,
    metadata: Sequence[Mapping[str, Any]] | None = None,
) -> StudyCollection:
    """Read one study per file (CSV with header, or JSON lines).

    Study ids default to the file stem. Unit order follows file order.
    Missing feature cells become ``None``; missing labels are an error.
    """
    if config is None:
        config = ColumnConfig()
    elif not isinstance(config, ColumnConfig):
        config = ColumnConfig.from_dict(config)
    if config.score is None and config.predicted_class is None:
        raise StudySetError("config must name a score column or a predicted-class column")
    paths = [Path(p) for p in paths]
    if not paths:
        raise StudySetError("no study files given")
    if ids is None:
        ids = [p.stem for p in paths]
    if len(ids) != len(paths):
        raise StudySetError("number of study ids does not match number of files")
    seen = set()
    for sid in ids:
        if sid in seen:
            raise StudySetError(f"duplicate study id: {sid}")
        seen.add(sid)

    bound = {config.label, config.score, config.predicted_class} - {None}
    tables = []
    for path in paths:
        if not path.is_file():
            raise StudySetError(f"{path}: file not found")
        columns, rows = _read_rows(path)
        if not rows:
            raise StudySetError(f"{path}: empty file (no data rows)")
        for col in sorted(bound, key=str):
            if col not in columns:
                raise StudySetError(f"{path}: missing declared column {col!r}")
        if config.features is not None:
            for col in config.features:
                if col not in columns:
                    raise StudySetError(f"{path}: missing declared feature column {col!r}")
        tables.append((path, columns, rows))

    if config.features is not None:
        feature_names = list(config.features)
    else:
        feature_names = [c for c in tables[0][1] if c not in bound]
        for path, columns, _ in tables[1:]:
            other = [c for c in columns if c not in bound]
            if set(other) != set(feature_names):
                raise StudySetError(f"{path}: feature columns differ from {tables[0][0]}")
    ftypes = _infer_feature_types(feature_names, [t[2] for t in tables], config.feature_types)
    label_set = tuple(config.label_set)

    studies = []
    for i, (path, _, rows) in enumerate(tables):
        units = []
        for rowno, row in enumerate(rows, start=1):
            where = f"{path}: row {rowno}"
            raw_label = row.get(config.label)
            if _is_missing(raw_label):
                raise StudySetError(f"{where}: missing label in column {config.label!r}")
            try:
                label = _match_label(raw_label, label_set)
            except KeyError:
                raise StudySetError(
                    f"{where}: label outside declared set: {raw_label!r} not in {list(label_set)}"
                ) from None
            score = None
            if config.score is not None and not _is_missing(row.get(config.score)):
                try:
                    score = _parse_float(row[config.score])
                except (TypeError, ValueError):
                    raise StudySetError(
                        f"{where}, column {config.score!r}: unparseable score {row[config.score]!r}"
                    ) from None
                if math.isnan(score):
                    score = None
            pred = None
            if config.predicted_class is not None and not _is_missing(row.get(config.predicted_class)):
                try:
                    pred = _match_label(row[config.predicted_class], label_set)
                except KeyError:
                    raise StudySetError(
                        f"{where}, column {config.predicted_class!r}: predicted class "
                        f"{row[config.predicted_class]!r} outside declared set"
                    ) from None
            if score is None and pred is None:
                raise StudySetError(f"{where}: unit has neither a score nor a predicted class")
            feats = {}
            for name in feature_names:
                cell = row.get(name)
                if _is_missing(cell):
                    feats[name] = None
                elif ftypes[name] == "numeric":
                    try:
                        feats[name] = _parse_float(cell)
                    except (TypeError, ValueError):
                        raise StudySetError(
                            f"{where}, column {name!r}: unparseable numeric value {cell!r}"
                        ) from None
                else:
                    feats[name] = str(cell)
            units.append(Unit(feats, label, score, pred))
        meta = dict(metadata[i]) if metadata else {}
        meta.setdefault("path", str(path))
        studies.append(Study(ids[i], tuple(units), meta))

    schema = Schema(
        features=ftypes,
        label_set=label_set,
        has_score=config.score is not None,
        has_class=config.predicted_class is not None,
        score_is_probability=config.score_is_probability,
    )
    return StudyCollection(tuple(studies), schema)


def _fmt_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_study_csv(study: Study, path: str | Path, schema: Schema) -> None:
    """Write a study in the CSV layout that :func:`load_collection` reads back."""
    names = list(schema.features)
    header = names + ["label"]
    if schema.has_score:
        header.append("score")
    if schema.has_class:
        header.append("predicted_class")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for u in study.units:
            row = [_fmt_cell(u.features.get(n)) for n in names] + [_fmt_cell(u.label)]
            if schema.has_score:
                row.append(_fmt_cell(u.score))
            if schema.has_class:
                row.append(_fmt_cell(u.predicted_class))
            writer.writerow(row)


def column_config_for(schema: Schema) -> ColumnConfig:
    """Column bindings matching files produced by :func:`write_collection`."""
    return ColumnConfig(
        label="label",
        score="score" if schema.has_score else None,
        predicted_class="predicted_class" if schema.has_class else None,
        features=list(schema.features),
        feature_types=dict(schema.features),
        label_set=tuple(schema.label_set),
        score_is_probability=schema.score_is_probability,
    )


def write_collection(collection: StudyCollection, directory: str | Path) -> dict[str, Any]:
    """Write one CSV per study plus ``manifest.json``; return the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for study in collection:
        fname = f"{study.id}.csv"
        write_study_csv(study, directory / fname, collection.schema)
        entries.append({"id": study.id, "path": fname})
    cc = column_config_for(collection.schema)
    manifest = {
        "studies": entries,
        "columns": {
            "label": cc.label,
            "score": cc.score,
            "predicted_class": cc.predicted_class,
            "features": list(cc.features),
            "feature_types": dict(cc.feature_types),
            "label_set": list(cc.label_set),
            "score_is_probability": cc.score_is_probability,
        },
    }
    with (directory / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Feature-subset restriction
# ---------------------------------------------------------------------------

_COMPARATORS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
_NEGATION = {"=": "!=", "!=": "=", "<": ">=", ">=": "<", ">": "<=", "<=": ">", "in": "not in", "not in": "in"}
_ORDERED = {"<", "<=", ">", ">="}


@dataclass(frozen=True)
class Condition:
    feature: str
    op: str
    value: Any

    def __post_init__(self):
        op = {"==": "=", "≠": "!=", "≤": "<=", "≥": ">="}.get(self.op, self.op)
        if op not in _COMPARATORS and op not in ("in", "not in"):
            raise StudySetError(f"unknown comparator {self.op!r}")
        object.__setattr__(self, "op", op)
        if op in ("in", "not in"):
            object.__setattr__(self, "value", frozenset(self.value))

    def negate(self) -> "Condition":
        return Condition(self.feature, _NEGATION[self.op], self.value)

    def check(self, schema: Schema) -> None:
        if self.feature not in schema.features:
            raise StudySetError(f"predicate references unknown feature {self.feature!r}")
        kind = schema.features[self.feature]
        if self.op in _ORDERED and kind != "numeric":
            raise StudySetError(
                f"comparator {self.op!r} needs a numeric feature; {self.feature!r} is {kind}"
            )

    def coerce(self, schema: Schema) -> "Condition":
        kind = schema.features[self.feature]
        conv = float if kind == "numeric" else str
        try:
            if self.op in ("in", "not in"):
                return Condition(self.feature, self.op, {conv(v) for v in self.value})
            return Condition(self.feature, self.op, conv(self.value))
        except (TypeError, ValueError):
            raise StudySetError(
                f"value {self.value!r} is not compatible with {kind} feature {self.feature!r}"
            ) from None

    def __call__(self, unit: Unit) -> bool:
        x = unit.features.get(self.feature)
        if x is None:
            raise StudySetError(f"predicate touches missing value of feature {self.feature!r}")
        if self.op == "in":
            return x in self.value
        if self.op == "not in":
            return x not in self.value
        return _COMPARATORS[self.op](x, self.value)


@dataclass(frozen=True)
class SubsetPredicate:
    """Conjunction of atomic conditions describing a feature subset."""

    conjuncts: tuple[Condition, ...]

    def __post_init__(self):
        object.__setattr__(self, "conjuncts", tuple(self.conjuncts))

    def __call__(self, unit: Unit) -> bool:
        return all(c(unit) for c in self.conjuncts)

    def negate(self) -> "SubsetPredicate":
        """Complement of a single-condition predicate."""
        if len(self.conjuncts) != 1:
            raise StudySetError("only atomic predicates have a conjunctive complement")
        return SubsetPredicate((self.conjuncts[0].negate(),))

    def bind(self, schema: Schema) -> "SubsetPredicate":
        for c in self.conjuncts:
            c.check(schema)
        return SubsetPredicate(tuple(c.coerce(schema) for c in self.conjuncts))

    @classmethod
    def from_records(cls, records: Iterable[Mapping[str, Any]]) -> "SubsetPredicate":
        return cls(tuple(Condition(r["feature"], r["op"], r["value"]) for r in records))


_ATOM = re.compile(
    r"^\s*(?P<feat>[A-Za-z_][\w.]*)\s*(?P<op>not\s+in|in|==|!=|<=|>=|=|<|>|≤|≥|≠)\s*(?P<val>.+?)\s*$"
)


def _literal(token: str) -> Any:
    token = token.strip()
    if len(token) >= 2 and token[0] == token[-1] and token[0] in "'\"":
        return token[1:-1]
    try:
        return float(token)
    except ValueError:
        return token


def parse_predicate(text: str) -> SubsetPredicate:
    """Parse ``"age >= 50 and site in {a, b}"`` into a predicate.

    Conjuncts are separated by ``and`` or ``&``.
    """
    parts = [p for p in re.split(r"\s+and\s+|\s*&\s*", text.strip()) if p]
    if not parts:
        raise StudySetError("empty predicate")
    conds = []
    for part in parts:
        m = _ATOM.match(part)
        if not m:
            raise StudySetError(f"cannot parse condition {part!r}")
        op = re.sub(r"\s+", " ", m["op"])
        val = m["val"]
        if op in ("in", "not in"):
            inner = val.strip()
            if inner[:1] in "{[(" and inner[-1:] in "}])":
                inner = inner[1:-1]
            value = [_literal(v) for v in inner.split(",") if v.strip()]
        else:
            value = _literal(val)
        conds.append(Condition(m["feat"], op, value))
    return SubsetPredicate(tuple(conds))


class Restriction(NamedTuple):
    collection: StudyCollection
    dropped: tuple[str, ...]


def restrict(collection: StudyCollection, predicate: SubsetPredicate) -> Restriction:
    """Keep only units satisfying ``predicate``; drop studies left empty.

    Raises :class:`StudySetError` if no study keeps any unit.
    """
    predicate = predicate.bind(collection.schema)
    kept, dropped = [], []
    for study in collection:
        units = tuple(u for u in study.units if predicate(u))
        if units:
            kept.append(Study(study.id, units, study.metadata))
        else:
            dropped.append(study.id)
    if not kept:
        raise StudySetError("empty restriction: no unit in any study satisfies the predicate")
    if dropped:
        logger.info("restriction dropped empty studies: %s", ", ".join(dropped))
    return Restriction(StudyCollection(tuple(kept), collection.schema), tuple(dropped))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StudySummary:
    id: str
    n: int
    prevalence: float | None
    score_min: float | None
    score_max: float | None
    missing: Mapping[str, int]


@dataclass(frozen=True)
class ValidationReport:
    studies: tuple[StudySummary, ...]
    flags: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict[str, Any]:
        return {
            "studies": [
                {
                    "id": s.id,
                    "n": s.n,
                    "prevalence": s.prevalence,
                    "score_min": s.score_min,
                    "score_max": s.score_max,
                    "missing": dict(s.missing),
                }
                for s in self.studies
            ],
            "flags": list(self.flags),
        }


def validate(collection: StudyCollection) -> ValidationReport:
    """Summarize each study and flag conditions later steps cannot handle."""
    schema = collection.schema
    summaries, flags = [], []
    for study in collection:
        prevalence = None
        if schema.is_binary:
            positives = sum(1 for u in study.units if u.label == 1)
            prevalence = positives / study.n
            if positives == 0:
                flags.append(f"{study.id}: prevalence 0")
            elif positives == study.n:
                flags.append(f"{study.id}: prevalence 1")
        scores = [u.score for u in study.units if u.score is not None]
        smin = min(scores) if scores else None
        smax = max(scores) if scores else None
        if schema.has_score and schema.score_is_probability:
            bad = [i for i, u in enumerate(study.units, start=1)
                   if u.score is not None and not 0.0 <= u.score <= 1.0]
            if bad:
                shown = ", ".join(map(str, bad[:10])) + (" ..." if len(bad) > 10 else "")
                flags.append(f"{study.id}: {len(bad)} score(s) outside [0, 1] at rows {shown}")
        missing = {name: sum(1 for u in study.units if u.features.get(name) is None)
                   for name in schema.features}
        if schema.has_score:
            missing["<score>"] = study.n - len(scores)
        summaries.append(StudySummary(study.id, study.n, prevalence, smin, smax, missing))
    return ValidationReport(tuple(summaries), tuple(flags))
