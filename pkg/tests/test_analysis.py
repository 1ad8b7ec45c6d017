import numpy as np
import pytest

from compmarks.analysis import (
    AnalysisSettings,
    association_direction,
    run_analysis,
    significant_ranges,
)
from compmarks.envelope import EnvelopeTestResult
from compmarks.errors import ConfigError
from compmarks.pattern import MarkedPattern
from compmarks.summary import KernelSpec, RGrid, StatisticSpec

from conftest import random_pattern


def result(lower, upper, p=0.01):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    return lambda obs: EnvelopeTestResult(p, 0.05, lower, upper, (obs < lower) | (obs > upper), 1.0,
                                          np.ones(lower.size, bool))


def test_direction_signs():
    make = result([0, 0, 0], [1, 1, 1])
    above = np.array([0.5, 2.0, 0.5])
    below = np.array([0.5, -1.0, 0.5])
    assert association_direction("t1", above, make(above)) == "positive"
    assert association_direction("t1", below, make(below)) == "negative"
    # a low variogram means similar marks
    assert association_direction("t2", below, make(below)) == "positive"
    inside = np.array([0.5, 0.5, 0.5])
    assert association_direction("t1", inside, make(inside)) is None
    assert association_direction("t1", above, result([0] * 3, [1] * 3, p=0.5)(above)) is None


def test_significant_ranges():
    r = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    assert significant_ranges(r, [True, True, False, True, True]) == [[0.1, 0.2], [0.4, 0.5]]
    assert significant_ranges(r, [False] * 5) == []


def test_records_and_worker_independence():
    pat = random_pattern(41, intensity=60)
    base = dict(statistics=(StatisticSpec("t1", "clr", 0), StatisticSpec("t3", "ilr", 1)),
                grid=RGrid.regular(0.2, 16), kernel=KernelSpec(bandwidth=0.05), permutations=19, seed=3)
    a = run_analysis(pat, AnalysisSettings(**base))
    b = run_analysis(pat, AnalysisSettings(**base, workers=2))
    assert [(r.spec, r.point_id) for r in a] == [(r.spec, r.point_id) for r in b]
    assert [r.result.p_value for r in a] == [r.result.p_value for r in b]
    assert sum(r.spec.point is None for r in a) == 2
    assert len(a) == 2 + 2 * pat.n


def test_isolated_points_have_no_local_test():
    xy = [[0.1, 0.1], [0.12, 0.1], [0.1, 0.12], [0.9, 0.9]]
    marks = [[0.2, 0.8], [0.5, 0.5], [0.3, 0.7], [0.6, 0.4]]
    pat = MarkedPattern(xy, marks, ids=("a", "b", "c", "d"))
    recs = run_analysis(pat, AnalysisSettings(grid=RGrid.regular(0.1, 8), kernel=KernelSpec(bandwidth=0.02),
                                              permutations=19))
    assert [r.point_id for r in recs if r.spec.point is not None] == ["a", "b", "c"]


def test_normalized_track_needs_factor():
    pat = random_pattern(42, intensity=40)
    same = pat.with_marks(np.tile([0.2, 0.3, 0.5], (pat.n, 1)))
    with pytest.raises(ConfigError):
        run_analysis(same, AnalysisSettings(statistics=(StatisticSpec("t3", "clr", 0),),
                                            grid=RGrid.regular(0.2, 8), track="normalized",
                                            permutations=19, local=False))
    with pytest.raises(ConfigError):
        AnalysisSettings(alpha=0)
