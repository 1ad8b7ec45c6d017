import numpy as np
import pytest

from compmarks.envelope import (
    CurveEnsemble,
    build_ensemble,
    envelope_test,
    erl_order,
    erl_pvalues,
    erl_rank,
    pointwise_ranks,
)
from compmarks.errors import AllMaskedError, ConfigError, TooFewPermutationsWarning
from compmarks.pattern import random_permutations, stream
from compmarks.summary import KernelSpec, RGrid, StatisticSpec, SummaryCurve, estimate_global, estimate_local

from conftest import random_pattern
from oracles import erl_reference

GRID = RGrid.regular(0.2, 16)


def ensemble_from(values):
    values = np.asarray(values, dtype=float)
    grid = RGrid(np.arange(1, values.shape[1] + 1) / 10)
    ones = np.ones(values.shape[1])
    obs = SummaryCurve(StatisticSpec(), grid, values[0], ones, values[0], 1.0)
    return CurveEnsemble(obs, values[1:])


@pytest.mark.parametrize("case", range(20))
def test_erl_matches_reference(case):
    rng = np.random.default_rng(case)
    m, T = rng.integers(20, 60), rng.integers(2, 12)
    if case % 4 == 0:
        values = rng.integers(0, 4, (m, T)).astype(float)  # heavy ties
    else:
        values = rng.normal(size=(m, T))
    if case % 5 == 1:
        values[0] += 2.0
    ens = ensemble_from(values)
    res = envelope_test(ens, 0.05)
    assert res.p_value == pytest.approx(erl_reference(values), abs=1e-15)
    assert erl_pvalues(values[None])[0] == pytest.approx(res.p_value, abs=1e-15)


def test_pointwise_ranks_two_sided():
    vals = np.array([[1.0], [2.0], [3.0], [4.0], [5.0]])
    assert pointwise_ranks(vals)[:, 0].tolist() == [1, 2, 3, 2, 1]
    tied = np.array([[1.0], [1.0], [3.0]])
    assert pointwise_ranks(tied)[:, 0].tolist() == [1.5, 1.5, 1.0]


def test_dominant_curve_is_most_extreme():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(100, 10))
    values[0] = 10.0
    ens = ensemble_from(values)
    res = envelope_test(ens, 0.05)
    assert res.p_value == pytest.approx(0.01)
    assert res.significant and res.outside.all()
    assert erl_rank(ens)[0] == 1.0
    assert erl_order(ens)[0] == 0


def test_envelope_covers_accepted_curves():
    rng = np.random.default_rng(1)
    values = rng.normal(size=(200, 8))
    ens = ensemble_from(values)
    res = envelope_test(ens, 0.1)
    ranks = erl_rank(ens)
    keys = np.array([erl_reference(np.vstack([values[k], np.delete(values, k, 0)])) for k in range(200)])
    kept = values[keys > 0.1]
    np.testing.assert_allclose(res.lower, kept.min(axis=0))
    np.testing.assert_allclose(res.upper, kept.max(axis=0))
    assert ranks.min() >= 1 and ranks.max() <= 200


def test_identical_curves_tie():
    values = np.ones((20, 4))
    res = envelope_test(ensemble_from(values), 0.05)
    assert res.p_value == 1.0 and not res.outside.any()


def test_masked_columns_ignored():
    rng = np.random.default_rng(2)
    values = rng.normal(size=(30, 6))
    masked = values.copy()
    masked[5, 2] = np.nan
    res = envelope_test(ensemble_from(masked), 0.05)
    assert res.p_value == pytest.approx(erl_reference(np.delete(values, 2, axis=1)))
    assert not res.valid[2] and np.isnan(res.lower[2])
    with pytest.raises(AllMaskedError):
        envelope_test(ensemble_from(np.full((20, 3), np.nan)))


def test_too_few_permutations_warns():
    with pytest.warns(TooFewPermutationsWarning):
        envelope_test(ensemble_from(np.random.default_rng(0).normal(size=(10, 3))), 0.05)


def test_ensemble_rows_are_permuted_patterns():
    pat = random_pattern(21, intensity=60)
    kernel = KernelSpec(bandwidth=0.04)
    for spec in (StatisticSpec("t1", "clr", 0), StatisticSpec("t3", "ilr", 0, 1, point=3)):
        ens = build_ensemble(pat, spec, GRID, kernel, s=5, rng=stream(0))
        perms = random_permutations(stream(0), 5, pat.n)
        est = estimate_global if spec.point is None else estimate_local
        for p in range(5):
            permuted = pat.with_marks(pat.marks[perms[p]])
            ref = est(permuted, spec, GRID, kernel).values
            np.testing.assert_allclose(ens.null_values[p], ref, rtol=1e-12, equal_nan=True)


def test_normalized_track_and_hold_focal():
    pat = random_pattern(22, intensity=60)
    kernel = KernelSpec(bandwidth=0.04)
    spec = StatisticSpec("t2", "clr", 1, point=4)
    ens = build_ensemble(pat, spec, GRID, kernel, s=4, rng=stream(1), hold_focal=True, track="normalized")
    perms = random_permutations(stream(1), 4, pat.n, fixed=4)
    for p in range(4):
        ref = estimate_local(pat.with_marks(pat.marks[perms[p]]), spec, GRID, kernel).normalized
        np.testing.assert_allclose(ens.null_values[p], ref, rtol=1e-12, equal_nan=True)
    with pytest.raises(ConfigError):
        build_ensemble(pat, StatisticSpec("t3", "clr", 0, point=1), GRID, kernel, s=3, track="normalized")


def test_exchangeability_quick():
    from scipy import stats

    rng = np.random.default_rng(5)
    m = 20
    p = np.array([envelope_test(ensemble_from(rng.normal(size=(m, 6))), 0.05).p_value
                  for _ in range(300)])
    assert stats.chisquare(np.bincount(np.rint(p * m).astype(int) - 1, minlength=m)).pvalue > 0.001
