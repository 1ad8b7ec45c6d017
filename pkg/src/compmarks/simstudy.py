"""Simulation harness for type-I error and power of global and local tests.

Each pattern is one task. A task draws the ground process, attaches the
scenario marks, builds the pair kernel once, then runs the global test
and one local test per point for every configured statistic. Every
random draw comes from a stream keyed by ``(seed, purpose, pattern[,
point])``. A task therefore yields the same record on any worker and in
any order, and the aggregated report is a pure function of the
configuration.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .envelope import ensemble_values, erl_pvalues
from .errors import ConfigError, EmptyInputError
from .pattern import (
    GLOBAL_PERM,
    GROUND,
    LOCAL_PERM,
    MARKS,
    ScenarioSpec,
    build_scenario,
    random_permutations,
    sample_poisson,
    scenario_preset,
    stream,
)
from .summary import (
    KernelSpec,
    PairKernel,
    RGrid,
    StatisticSpec,
    compute_moments,
    independence_factor,
)

__all__ = [
    "StudyConfig",
    "StudyReport",
    "DetectionRates",
    "detection_metrics",
    "desk_config",
    "run_study",
    "run_pattern",
    "aggregate",
    "load_checkpoint",
]

REPORT_VERSION = 1


@dataclass(frozen=True)
class StudyConfig:
    """Everything that determines a study's results.

    ``workers`` only affects scheduling and is excluded from the config
    hash and from the report.
    """

    scenario: ScenarioSpec = field(default_factory=lambda: scenario_preset("I"))
    n_patterns: int = 100
    permutations: int = 99
    alpha: float = 0.05
    statistics: tuple = (StatisticSpec("t1", "clr", 0),)
    grid: RGrid = field(default_factory=lambda: RGrid.regular(0.25, 128))
    kernel: KernelSpec = field(default_factory=KernelSpec)
    seed: int = 0
    local: bool = True
    hold_focal: bool = False
    track: str = "unnormalized"
    edge_correction: str = "none"
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if self.n_patterns < 1:
            raise ConfigError("n_patterns must be at least 1")
        if self.permutations < 1:
            raise ConfigError("permutations must be at least 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not self.statistics:
            raise ConfigError("at least one statistic is required")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.track not in ("unnormalized", "normalized"):
            raise ConfigError(f"unknown track {self.track!r}")
        dim = self.scenario.D
        for st in self.statistics:
            if self.track == "normalized" and st.kind == "t3":
                raise ConfigError("local Shimatani's I has no normalised track")
            if st.point is not None:
                raise ConfigError("study statistics are given in global form")
            st.check_dimension(st.transform.dimension(dim))

    def to_dict(self):
        sc = self.scenario
        return {
            "scenario": {
                "id": sc.scenario_id,
                "intensity": sc.intensity,
                "window": {"x": list(sc.window.x_range), "y": list(sc.window.y_range)},
                "background_alpha": list(sc.background_alpha),
                "regions": [
                    {"center": list(r.center), "radius": r.radius, "alpha": list(r.alpha),
                     "target": r.target_component(sc.background_alpha) + 1}
                    for r in sc.regions
                ],
            },
            "n_patterns": self.n_patterns,
            "permutations": self.permutations,
            "alpha": self.alpha,
            "statistics": [st.label(sc.D) for st in self.statistics],
            "grid": {"r_min": float(self.grid.distances[0]), "r_max": self.grid.r_max,
                     "size": len(self.grid),
                     "digest": hashlib.sha256(self.grid.distances.tobytes()).hexdigest()[:16]},
            "kernel": self.kernel.describe(),
            "seed": self.seed,
            "local": self.local,
            "hold_focal": self.hold_focal,
            "track": self.track,
            "edge_correction": self.edge_correction,
        }

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def desk_config(name, **overrides):
    """Desk-scale presets for Scenarios I-III.

    I: 100 patterns at intensity 200; II and III: 50 patterns at 500. All
    use 99 permutations. Scenario III tests the two manipulated components.
    """
    name = str(name).upper()
    if name == "I":
        cfg = dict(scenario=scenario_preset("I", intensity=200.0), n_patterns=100)
    elif name == "II":
        cfg = dict(scenario=scenario_preset("II"), n_patterns=50)
    elif name == "III":
        cfg = dict(
            scenario=scenario_preset("III"),
            n_patterns=50,
            statistics=(StatisticSpec("t1", "clr", 0), StatisticSpec("t1", "clr", 2)),
        )
    else:
        raise ConfigError(f"unknown scenario {name!r}")
    cfg.update(overrides)
    return StudyConfig(**cfg)


@dataclass(frozen=True)
class DetectionRates:
    true_positives: int
    false_negatives: int
    false_positives: int
    true_negatives: int

    @property
    def tpr(self):
        pos = self.true_positives + self.false_negatives
        return self.true_positives / pos if pos else None

    @property
    def fpr(self):
        neg = self.false_positives + self.true_negatives
        return self.false_positives / neg if neg else None

    @property
    def rate(self):
        total = self.true_positives + self.false_negatives + self.false_positives + self.true_negatives
        return (self.true_positives + self.false_positives) / total


def detection_metrics(p_values, truth_mask, alpha=0.05):
    """Exact confusion counts of ``p <= alpha`` against ground truth."""
    p = np.asarray(p_values, dtype=float)
    truth = np.asarray(truth_mask, dtype=bool)
    if p.shape != truth.shape:
        raise ConfigError("p-values and truth mask differ in length")
    if p.size == 0:
        raise EmptyInputError("no p-values to aggregate")
    hit = p <= alpha
    return DetectionRates(
        int(np.sum(hit & truth)),
        int(np.sum(~hit & truth)),
        int(np.sum(hit & ~truth)),
        int(np.sum(~hit & ~truth)),
    )


def _pvalue_list(p):
    return [None if not np.isfinite(x) else float(x) for x in p]


def run_pattern(config, index, point_chunk=64):
    """Simulate pattern ``index`` and return its record of p-values."""
    sc = config.scenario
    seed = config.seed
    locations = sample_poisson(sc.intensity, sc.window, stream(seed, GROUND, index))
    pattern, region = build_scenario(sc, locations, stream(seed, MARKS, index))
    labels = [st.label(sc.D) for st in config.statistics]
    record = {"pattern": index, "n": pattern.n, "region": region.tolist(),
              "global": {lab: None for lab in labels},
              "local": {lab: [] for lab in labels}}
    if pattern.n < 2:
        return record
    grid = config.grid
    pk = PairKernel(pattern.locations, grid, config.kernel.resolve(pattern.intensity),
                    config.kernel.family, pattern.window, config.edge_correction)
    n = pattern.n
    identity = np.arange(n)[None, :]
    prepared = []
    for st in config.statistics:
        Y = st.transform.apply(pattern.marks)
        moments = compute_moments(Y)
        prepared.append((st, Y, moments, independence_factor(st, Y, moments)))

    perms = np.vstack([identity, random_permutations(stream(seed, GLOBAL_PERM, index),
                                                     config.permutations, n)])
    for lab, (st, Y, moments, factor) in zip(labels, prepared):
        vals = ensemble_values(pk, Y, moments, st, perms, config.track, factor)[None]
        valid = np.all(np.isfinite(vals), axis=1)
        record["global"][lab] = float(erl_pvalues(vals, valid)[0]) if valid.any() else None

    if config.local:
        T = len(grid)
        m = config.permutations + 1
        local_p = {lab: np.full(n, np.nan) for lab in labels}
        for c0 in range(0, n, point_chunk):
            idx = np.arange(c0, min(n, c0 + point_chunk))
            block = np.empty((len(prepared), len(idx), m, T))
            for row, i in enumerate(idx):
                fixed = int(i) if config.hold_focal else None
                p_i = np.vstack([identity, random_permutations(
                    stream(seed, LOCAL_PERM, index, int(i)), config.permutations, n, fixed)])
                for s_idx, (st, Y, moments, _) in enumerate(prepared):
                    block[s_idx, row] = ensemble_values(pk, Y, moments, st.at(int(i)), p_i,
                                                        config.track)
            for s_idx, lab in enumerate(labels):
                vals = block[s_idx]
                valid = np.all(np.isfinite(vals), axis=1)
                usable = valid.any(axis=1)
                if usable.any():
                    local_p[lab][idx[usable]] = erl_pvalues(vals[usable], valid[usable])
        for lab in labels:
            record["local"][lab] = _pvalue_list(local_p[lab])
    return record


def _timed_pattern(config, index):
    t0 = time.process_time()
    record = run_pattern(config, index)
    return record, time.process_time() - t0


def aggregate(records, config):
    """Rejection and detection rates from per-pattern records.

    Local detection splits points into in-disc (any region) and background.
    For each region the attribution rate is the share of its points flagged
    by at least one auto-statistic (``j == l``, clr) that are flagged by the
    statistic on the region's manipulated component.
    """
    sc = config.scenario
    alpha = config.alpha
    records = sorted(records, key=lambda r: r["pattern"])
    stats = {}
    region_all = np.array([x for r in records for x in r["region"]], dtype=int)
    flagged = {}
    for st in config.statistics:
        lab = st.label(sc.D)
        g = np.array([r["global"][lab] for r in records if r["global"][lab] is not None], dtype=float)
        entry = {"global": {"tests": int(g.size), "rejections": int(np.sum(g <= alpha)),
                            "rate": float(np.mean(g <= alpha)) if g.size else None}}
        if config.local:
            p = np.array([np.nan if x is None else x for r in records for x in r["local"][lab]],
                         dtype=float)
            tested = np.isfinite(p)
            hit = tested & (p <= alpha)
            flagged[lab] = hit
            entry["local"] = {
                "tests": int(tested.sum()),
                "untestable_points": int((~tested).sum()),
                "in_disc": _rate(hit, tested & (region_all >= 0)),
                "background": _rate(hit, tested & (region_all < 0)),
                "regions": {str(k + 1): _rate(hit, tested & (region_all == k))
                            for k in range(len(sc.regions))},
            }
        stats[lab] = entry

    attribution = {}
    if config.local:
        auto = [st for st in config.statistics if st.j == st.l and st.transform.kind == "clr"]
        for k, reg in enumerate(sc.regions):
            target = reg.target_component(sc.background_alpha)
            match = [st for st in auto if st.j == target]
            if not match:
                continue
            inside = region_all == k
            any_hit = np.zeros_like(inside)
            for st in auto:
                any_hit |= flagged[st.label(sc.D)]
            detected = inside & any_hit
            target_hit = detected & flagged[match[0].label(sc.D)]
            attribution[str(k + 1)] = {
                "target_component": target + 1,
                "detected": int(detected.sum()),
                "attributed": int(target_hit.sum()),
                "rate": float(target_hit.sum() / detected.sum()) if detected.any() else None,
            }
    return stats, attribution


def _rate(hit, mask):
    count = int(mask.sum())
    detected = int((hit & mask).sum())
    return {"points": count, "detected": detected, "rate": detected / count if count else None}


@dataclass
class StudyReport:
    """Aggregated results; ``telemetry`` is kept out of :meth:`to_json`."""

    config: dict
    config_hash: str
    statistics: dict
    attribution: dict
    patterns: list
    telemetry: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "version": REPORT_VERSION,
            "config": self.config,
            "config_hash": self.config_hash,
            "statistics": self.statistics,
            "attribution": self.attribution,
            "patterns": self.patterns,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def global_rate(self, label):
        return self.statistics[label]["global"]["rate"]

    def local_rate(self, label, group="in_disc"):
        return self.statistics[label]["local"][group]["rate"]


def load_checkpoint(path, config_hash=None):
    """Records stored in an append-only checkpoint file.

    The first line holds the config hash; a mismatch with ``config_hash``
    raises :class:`ConfigError` rather than mixing runs. A truncated last
    line (interrupted write) is ignored.
    """
    if not os.path.exists(path):
        return {}
    records = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            return {}
        stored = json.loads(header)["config_hash"]
        if config_hash is not None and stored != config_hash:
            raise ConfigError(f"checkpoint {path} belongs to another configuration")
        for line in fh:
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                break
            records[rec["pattern"]] = rec
    return records


def run_study(config, checkpoint=None, progress=None):
    """Run every pattern of ``config`` and aggregate the results.

    Parameters
    ----------
    config : StudyConfig
    checkpoint : str, optional
        Append-only JSON-lines file; completed patterns found there are not
        recomputed.
    progress : callable, optional
        Called with ``(done, total)`` after each pattern.
    """
    chash = config.config_hash()
    wall0 = time.perf_counter()
    done = load_checkpoint(checkpoint, chash) if checkpoint else {}
    todo = [k for k in range(config.n_patterns) if k not in done]
    cpu = 0.0
    sink = None
    if checkpoint:
        fresh = not os.path.exists(checkpoint) or os.path.getsize(checkpoint) == 0
        sink = open(checkpoint, "a", encoding="utf-8")
        if fresh:
            sink.write(json.dumps({"config_hash": chash}) + "\n")
            sink.flush()

    def keep(record, seconds):
        nonlocal cpu
        done[record["pattern"]] = record
        cpu += seconds
        if sink is not None:
            sink.write(json.dumps(record, sort_keys=True) + "\n")
            sink.flush()
        if progress is not None:
            progress(len(done), config.n_patterns)

    try:
        if config.workers == 1 or len(todo) <= 1:
            for k in todo:
                keep(*_timed_pattern(config, k))
        else:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(_timed_pattern, config, k) for k in todo]
                for fut in as_completed(futures):
                    keep(*fut.result())
    finally:
        if sink is not None:
            sink.close()

    records = [done[k] for k in range(config.n_patterns)]
    stats, attribution = aggregate(records, config)
    telemetry = {
        "wall_seconds": time.perf_counter() - wall0,
        "task_cpu_seconds": cpu,
        "workers": config.workers,
        "resumed_patterns": config.n_patterns - len(todo),
    }
    return StudyReport(config.to_dict(), chash, stats, attribution, records, telemetry)
