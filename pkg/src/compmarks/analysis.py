"""Global-then-local envelope analysis of an observed pattern, and its outputs."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .envelope import CurveEnsemble, ensemble_values, envelope_test
from .errors import ConfigError
from .pattern import GLOBAL_PERM, LOCAL_PERM, random_permutations, stream
from .summary import (
    KernelSpec,
    PairKernel,
    RGrid,
    StatisticSpec,
    compute_moments,
    estimate_global,
    estimate_local,
)

__all__ = [
    "AnalysisSettings",
    "TestRecord",
    "run_analysis",
    "association_direction",
    "significant_ranges",
    "write_outputs",
    "RESULT_COLUMNS",
]

RESULT_COLUMNS = (
    "run_id", "statistic", "transform", "j", "l", "scope", "point_id", "r",
    "value_unnormalized", "value_normalized", "p_value", "significant",
)
ENVELOPE_COLUMNS = (
    "run_id", "statistic", "transform", "j", "l", "scope", "point_id", "r", "lower", "upper",
)


@dataclass(frozen=True)
class AnalysisSettings:
    statistics: tuple = (StatisticSpec("t1", "clr", 0),)
    grid: RGrid | None = None
    kernel: KernelSpec = field(default_factory=KernelSpec)
    permutations: int = 499
    alpha: float = 0.05
    seed: int = 0
    local: bool = True
    hold_focal: bool = False
    track: str = "unnormalized"
    edge_correction: str = "none"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if not self.statistics:
            raise ConfigError("at least one statistic is required")
        if self.permutations < 1:
            raise ConfigError("permutations must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class TestRecord:
    __test__ = False

    spec: StatisticSpec
    point_id: str | None
    location: tuple | None
    curve: object
    result: object
    direction: str | None


def association_direction(kind, observed, result):
    """``"positive"``, ``"negative"`` or ``None`` for a test outcome.

    The signed exceedances beyond the envelope are summed; for the mark
    variogram, values below the envelope mean similar marks and count as
    positive association.
    """
    if not result.significant or not result.outside.any():
        return None
    out = result.outside
    above = np.where(observed[out] > result.upper[out], observed[out] - result.upper[out], 0.0)
    below = np.where(observed[out] < result.lower[out], observed[out] - result.lower[out], 0.0)
    signed = float(np.sum(above + below))
    if kind == "t2":
        signed = -signed
    return "positive" if signed >= 0 else "negative"


def significant_ranges(r, outside):
    """Contiguous runs of flagged grid points as ``[r_start, r_end]`` pairs."""
    ranges = []
    start = None
    for t, flag in enumerate(outside):
        if flag and start is None:
            start = t
        if not flag and start is not None:
            ranges.append([float(r[start]), float(r[t - 1])])
            start = None
    if start is not None:
        ranges.append([float(r[start]), float(r[len(outside) - 1])])
    return ranges


def _record(spec, curve, nulls, settings, point_id=None, location=None):
    ens = CurveEnsemble(curve, nulls, settings.track)
    res = envelope_test(ens, settings.alpha)
    return TestRecord(spec, point_id, location, curve, res,
                      association_direction(spec.kind, ens.observed_values, res))


def _prepare(pattern, settings):
    grid = settings.grid or RGrid.default(pattern.window)
    pk = PairKernel(pattern.locations, grid, settings.kernel.resolve(pattern.intensity),
                    settings.kernel.family, pattern.window, settings.edge_correction)
    prepared = []
    for st in settings.statistics:
        Y = st.transform.apply(pattern.marks)
        st.check_dimension(Y.shape[1])
        prepared.append((st, Y, compute_moments(Y)))
    return grid, pk, prepared


def _point_id(pattern, i):
    return str(pattern.ids[i]) if pattern.ids is not None else str(i + 1)


def _local_tests(pattern, settings, points):
    grid, pk, prepared = _prepare(pattern, settings)
    out = []
    for i in points:
        i = int(i)
        fixed = i if settings.hold_focal else None
        perms = random_permutations(stream(settings.seed, LOCAL_PERM, 0, i),
                                    settings.permutations, pattern.n, fixed)
        if pk.local_den[i].max() <= 0:
            continue
        for st, Y, moments in prepared:
            spec = st.at(i)
            curve = estimate_local(pattern, spec, grid, pair_kernel=pk)
            nulls = ensemble_values(pk, Y, moments, spec, perms, settings.track)
            out.append(_record(spec, curve, nulls, settings, _point_id(pattern, i),
                               tuple(pattern.locations[i].tolist())))
    return out


def run_analysis(pattern, settings):
    """Global envelope tests for every statistic, then (optionally) local ones.

    Permutations come from streams keyed by the seed, so results do not
    depend on ``settings.workers``. Points whose neighbourhood holds no
    kernel mass at any grid distance have no local test.
    """
    pattern.require_pairs()
    grid, pk, prepared = _prepare(pattern, settings)
    perms = random_permutations(stream(settings.seed, GLOBAL_PERM, 0),
                                settings.permutations, pattern.n)
    records = []
    for st, Y, moments in prepared:
        curve = estimate_global(pattern, st, grid, pair_kernel=pk)
        if settings.track == "normalized" and curve.normalized is None:
            raise ConfigError(f"{st.label(pattern.D)} has no usable normalised track")
        nulls = ensemble_values(pk, Y, moments, st, perms, settings.track, curve.factor)
        records.append(_record(st, curve, nulls, settings))
    if settings.local:
        points = np.arange(pattern.n)
        if settings.workers > 1:
            chunks = [c for c in np.array_split(points, settings.workers * 4) if c.size]
            with ProcessPoolExecutor(max_workers=settings.workers) as pool:
                for part in pool.map(_local_tests, [pattern] * len(chunks), [settings] * len(chunks), chunks):
                    records.extend(part)
        else:
            records.extend(_local_tests(pattern, settings, points))
    return records


def _fmt(x):
    if x is None:
        return ""
    x = float(x)
    return repr(x) if np.isfinite(x) else ""


def write_outputs(records, out_dir, run_id, D, alpha, track="unnormalized"):
    """Write ``results.csv``, ``envelopes.csv`` and ``tests.json``.

    Component indices are one-based in every file.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("results.csv", "envelopes.csv", "tests.json")}
    summaries = []
    with open(paths["results.csv"], "w", newline="", encoding="utf-8") as fr, \
            open(paths["envelopes.csv"], "w", newline="", encoding="utf-8") as fe:
        wr, we = csv.writer(fr, lineterminator="\n"), csv.writer(fe, lineterminator="\n")
        wr.writerow(RESULT_COLUMNS)
        we.writerow(ENVELOPE_COLUMNS)
        for rec in records:
            spec, curve, res = rec.spec, rec.curve, rec.result
            key = [run_id, spec.kind, spec.transform.label(D), spec.j + 1, spec.l + 1,
                   spec.scope, rec.point_id or ""]
            norm = curve.normalized if curve.normalized is not None else [None] * len(curve.values)
            for t, r in enumerate(curve.grid.distances):
                wr.writerow(key + [_fmt(r), _fmt(curve.values[t]), _fmt(norm[t]),
                                   _fmt(res.p_value), int(bool(res.outside[t]))])
                we.writerow(key + [_fmt(r), _fmt(res.lower[t]), _fmt(res.upper[t])])
            summaries.append({
                "run_id": run_id,
                "statistic": spec.kind,
                "transform": spec.transform.label(D),
                "j": spec.j + 1,
                "l": spec.l + 1,
                "scope": spec.scope,
                "point_id": rec.point_id,
                "location": list(rec.location) if rec.location else None,
                "p_value": res.p_value,
                "alpha": alpha,
                "track": track,
                "significant": bool(res.significant),
                "erl_rank": res.erl_rank,
                "direction": rec.direction,
                "normalizing_factor": curve.factor,
                "zero_normalizer": curve.zero_normalizer,
                "variance_convention": curve.variance_convention,
                "significant_ranges": significant_ranges(curve.grid.distances, res.outside),
            })
    with open(paths["tests.json"], "w", encoding="utf-8") as fh:
        json.dump({"run_id": run_id, "tests": summaries}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths
