import numpy as np
import pytest

from predrep.studyset import Schema, Study, StudyCollection, Unit

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def class_study(sid, pairs, features=None):
    """Study whose units carry predicted classes: ``pairs`` of (action, label)."""
    units = tuple(
        Unit(dict(features[i]) if features else {}, y, None, a) for i, (a, y) in enumerate(pairs)
    )
    return Study(sid, units)


def score_study(sid, scores, labels, features=None):
    units = tuple(
        Unit(dict(features[i]) if features else {}, int(y), float(s))
        for i, (s, y) in enumerate(zip(scores, labels))
    )
    return Study(sid, units)


def collection(*studies, features=None, has_score=True, has_class=False):
    return StudyCollection(
        tuple(studies),
        Schema(features=features or {}, has_score=has_score, has_class=has_class),
    )


def random_score_study(rng, sid="s", n=None, max_n=50, distinct=None):
    n = n or int(rng.integers(1, max_n + 1))
    if distinct:
        scores = rng.choice(np.linspace(0, 1, distinct), size=n)
    else:
        scores = np.round(rng.random(n), 2)
    labels = rng.integers(0, 2, n)
    return score_study(sid, scores, labels)


def random_class_study(rng, sid="s", n=None, max_n=50):
    n = n or int(rng.integers(1, max_n + 1))
    return class_study(sid, list(zip(rng.integers(0, 2, n).tolist(), rng.integers(0, 2, n).tolist())))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
