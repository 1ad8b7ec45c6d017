"""Random-labelling ensembles and global envelope tests with the ERL measure.

The extreme rank length (ERL) ordering works in three steps. First, at
every grid distance, each curve gets a two-sided pointwise rank
``min(rank from below, rank from above)``, with mid-ranks for ties.
Next, each curve's pointwise ranks are sorted ascending. Finally the
sorted vectors are compared lexicographically: the curve with the
lexicographically smallest vector is the most extreme. The p-value
counts the curves at least as extreme as the observed one, the observed
curve included, divided by ``s + 1``.

Grid points that are missing in any curve (no kernel mass) are left out
of the ranking for all curves.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import AllMaskedError, ConfigError, TooFewPermutationsWarning
from .pattern import random_permutations
from .summary import (
    PairKernel,
    KernelSpec,
    RGrid,
    _ratio,
    compute_moments,
    estimate_global,
    estimate_local,
    global_batch,
    local_batch,
    local_factor_batch,
    transform_marks,
)

__all__ = [
    "CurveEnsemble",
    "EnvelopeTestResult",
    "build_ensemble",
    "ensemble_values",
    "pointwise_ranks",
    "erl_rank",
    "erl_pvalues",
    "envelope_test",
]

TRACKS = ("unnormalized", "normalized")


@dataclass(frozen=True, eq=False)
class CurveEnsemble:
    """Observed curve plus ``s`` random-labelling curves on the same grid.

    ``values`` stacks the tested track with the observed curve in row 0.
    """

    observed: object
    null_values: np.ndarray
    track: str = "unnormalized"

    def __post_init__(self):
        nulls = np.atleast_2d(np.asarray(self.null_values, dtype=float))
        if nulls.shape[0] < 1:
            raise ConfigError("an ensemble needs at least one null curve")
        if nulls.shape[1] != len(self.observed.grid):
            raise ConfigError("null curves must share the observed grid")
        if self.track not in TRACKS:
            raise ConfigError(f"unknown track {self.track!r}")
        object.__setattr__(self, "null_values", nulls)

    @property
    def s(self):
        return self.null_values.shape[0]

    @property
    def observed_values(self):
        if self.track == "normalized":
            if self.observed.normalized is None:
                raise ConfigError("observed curve has no normalised track")
            return self.observed.normalized
        return self.observed.values

    @property
    def values(self):
        return np.vstack([self.observed_values[None, :], self.null_values])

    @property
    def valid(self):
        """Grid points finite in every curve."""
        return np.all(np.isfinite(self.values), axis=0)


@dataclass(frozen=True, eq=False)
class EnvelopeTestResult:
    p_value: float
    alpha: float
    lower: np.ndarray
    upper: np.ndarray
    outside: np.ndarray
    erl_rank: float
    valid: np.ndarray

    @property
    def significant(self):
        return self.p_value <= self.alpha


def ensemble_values(pk, Y, moments, spec, perms, track="unnormalized", factor=None):
    """Tested-track values, one row per permutation row of ``perms``.

    ``factor`` is the observed global normalising constant; global factors
    do not change under random labelling, local ones are recomputed per
    permutation.
    """
    if spec.point is None:
        num = global_batch(pk, Y, perms, spec, moments.mean)
        vals = _ratio(num, pk.global_den).T
        if track == "normalized":
            vals = vals / factor
    else:
        num = local_batch(pk, Y, perms, spec, spec.point, moments.mean)
        vals = _ratio(num, pk.local_den[spec.point]).T
        if track == "normalized":
            if spec.kind == "t3":
                raise ConfigError("local Shimatani's I has no normalised track")
            with np.errstate(divide="ignore", invalid="ignore"):
                vals = vals / local_factor_batch(Y, perms, spec, spec.point)[:, None]
    return vals


def build_ensemble(pattern, spec, grid=None, kernel=None, s=99, rng=None,
                   hold_focal=False, track="unnormalized", edge_correction="none",
                   pair_kernel=None):
    """Observed curve and ``s`` random-labelling curves.

    Null curve ``p`` comes from the ``p``-th permutation drawn from ``rng``.
    For a local spec the permutation reassigns every mark, the anchor's
    included, unless ``hold_focal`` keeps the anchor's own mark in place.
    All permutations are drawn before any curve is computed, so the
    ensemble depends only on the generator state.
    """
    if s < 1:
        raise ConfigError("need at least one permutation")
    if rng is None:
        rng = np.random.default_rng()
    grid = grid or RGrid.default(pattern.window)
    kernel = kernel or KernelSpec()
    if pair_kernel is None:
        pair_kernel = PairKernel(
            pattern.locations, grid, kernel.resolve(pattern.intensity), kernel.family,
            pattern.window, edge_correction,
        )
    estimate = estimate_global if spec.point is None else estimate_local
    observed = estimate(pattern, spec, grid, pair_kernel=pair_kernel)
    if track == "normalized" and observed.normalized is None:
        raise ConfigError(f"{spec.label()} has no usable normalised track")
    fixed = spec.point if (hold_focal and spec.point is not None) else None
    perms = random_permutations(rng, s, pattern.n, fixed=fixed)
    Y = transform_marks(pattern, spec.transform)
    nulls = ensemble_values(pair_kernel, Y, compute_moments(Y), spec, perms, track, observed.factor)
    return CurveEnsemble(observed, nulls, track)


def pointwise_ranks(values, valid=None):
    """Two-sided pointwise mid-ranks along the curve axis (``-2``).

    ``values`` has shape ``(..., m, T)``. Columns outside ``valid`` get the
    rank ``m + 1`` in every curve, which sorts them behind every real rank
    and leaves lexicographic comparisons unaffected.
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[-2]
    if valid is None:
        valid = np.all(np.isfinite(values), axis=-2)
    valid = np.broadcast_to(valid, values.shape[:-2] + values.shape[-1:])
    vmask = valid[..., None, :]
    filled = np.where(vmask, values, 0.0)
    low = rankdata(filled, axis=-2, method="average")
    ranks = np.minimum(low, m + 1 - low)
    return np.where(vmask, ranks, m + 1.0)


def _sorted_ranks(values, valid):
    if not np.any(valid):
        raise AllMaskedError("every grid point is masked")
    return np.sort(pointwise_ranks(values, valid)[..., valid], axis=-1)


def _lex_groups(keys):
    """Lexicographic rank bookkeeping for the rows of ``keys``.

    Returns ``(less, ties)``: per row, the number of rows strictly smaller
    and the number of rows equal to it (itself included).
    """
    order = np.lexsort(keys.T[::-1])
    ordered = keys[order]
    new = np.ones(len(order), dtype=bool)
    new[1:] = np.any(ordered[1:] != ordered[:-1], axis=1)
    group = np.cumsum(new) - 1
    counts = np.bincount(group)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    less = np.empty(len(order), dtype=int)
    ties = np.empty(len(order), dtype=int)
    less[order] = starts[group]
    ties[order] = counts[group]
    return less, ties


def erl_rank(ensemble):
    """ERL rank of every curve, 1 for the most extreme, mid-ranks for ties.

    Row 0 is the observed curve. :func:`erl_order` gives a strict ordering
    with ties broken by curve index.
    """
    values = ensemble.values
    less, ties = _lex_groups(_sorted_ranks(values, ensemble.valid))
    return less + (ties + 1) / 2.0


def erl_order(ensemble):
    """Curve indices from most to least extreme; ties keep index order."""
    keys = _sorted_ranks(ensemble.values, ensemble.valid)
    return np.lexsort(np.vstack([np.arange(len(keys))[None, :], keys.T[::-1]]))


def erl_pvalues(values, valid=None):
    """ERL p-values of row 0 for a batch of ensembles.

    Parameters
    ----------
    values : ndarray, shape (B, m, T)
        ``B`` ensembles of ``m`` curves with the observed curve first.
    valid : ndarray of bool, shape (B, T), optional
        Usable grid points; defaults to points finite in all curves.

    Returns
    -------
    ndarray, shape (B,)
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[1]
    if valid is None:
        valid = np.all(np.isfinite(values), axis=1)
    if not np.all(np.any(valid, axis=-1)):
        raise AllMaskedError("an ensemble has every grid point masked")
    ranks = np.sort(pointwise_ranks(values, valid), axis=-1)
    obs = ranks[:, :1, :]
    differs = ranks != obs
    first = np.argmax(differs, axis=-1)[..., None]
    smaller = np.take_along_axis(ranks, first, -1) < np.take_along_axis(
        np.broadcast_to(obs, ranks.shape), first, -1
    )
    as_extreme = ~np.any(differs, axis=-1) | smaller[..., 0]
    return as_extreme.sum(axis=1) / m


def envelope_test(ensemble, alpha=0.05):
    """Global ERL envelope test of the observed curve.

    The envelope is the pointwise range of every curve whose own ERL
    p-value exceeds ``alpha``; ``outside`` flags grid points where the
    observed curve leaves it.
    """
    m = ensemble.s + 1
    if m * alpha < 1:
        warnings.warn(
            f"(s + 1) * alpha = {m * alpha:.3g} < 1: the test cannot reject",
            TooFewPermutationsWarning,
            stacklevel=2,
        )
    values = ensemble.values
    valid = ensemble.valid
    keys = _sorted_ranks(values, valid)
    less, ties = _lex_groups(keys)
    pvals = (less + ties) / m
    keep = pvals > alpha
    if not np.any(keep):
        keep = pvals == pvals.max()
    lower = np.full(values.shape[1], np.nan)
    upper = np.full(values.shape[1], np.nan)
    lower[valid] = values[keep][:, valid].min(axis=0)
    upper[valid] = values[keep][:, valid].max(axis=0)
    obs = values[0]
    outside = np.zeros(values.shape[1], dtype=bool)
    outside[valid] = (obs[valid] < lower[valid]) | (obs[valid] > upper[valid])
    return EnvelopeTestResult(
        p_value=float(pvals[0]),
        alpha=float(alpha),
        lower=lower,
        upper=upper,
        outside=outside,
        erl_rank=float(less[0] + (ties[0] + 1) / 2.0),
        valid=valid,
    )
