"""YAML configuration: defaults, merging, CLI overrides and validation.

The configuration file maps one-to-one onto :class:`StudyConfig`,
:class:`AnalysisSettings` and :class:`DatasetSchema`. Part and component
numbers are one-based in the file, zero-based in the library.
"""

from __future__ import annotations

import copy

import yaml

from .analysis import AnalysisSettings
from .coda import Transform, ZeroReplacement
from .errors import CompmarksError, ConfigError
from .ingest import DatasetSchema
from .pattern import DiscRegion, ScenarioSpec, Window, scenario_preset
from .simstudy import StudyConfig
from .summary import KernelSpec, RGrid, StatisticSpec

__all__ = ["DEFAULTS", "load_config", "merge", "dump", "analysis_settings", "study_config",
           "dataset_schema"]

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": "results",
    "permutations": 499,
    "alpha": 0.05,
    "track": "unnormalized",
    "hold_focal": False,
    "edge_correction": "none",
    "local": True,
    "grid": {"rmax": None, "size": 128},
    "kernel": {"family": "epanechnikov", "bandwidth": "stoyan:0.15"},
    "transform": None,
    "statistics": [
        {"kind": "t1", "transform": "clr", "components": "auto"},
        {"kind": "t2", "transform": "clr", "components": "auto"},
        {"kind": "t3", "transform": "clr", "components": "auto"},
    ],
    "dataset": {
        "path": None,
        "x": "x",
        "y": "y",
        "parts": [],
        "id": None,
        "window": {"margin": 0.0},
        "total": 1.0,
        "zero_policy": "reject",
    },
    "simulation": {
        "scenario": "I",
        "n_patterns": 100,
        "permutations": 99,
        "intensity": None,
        "window": {"x": [0.0, 1.0], "y": [0.0, 1.0]},
        "background_alpha": None,
        "regions": None,
        "statistics": None,
        "checkpoint": None,
    },
}


def merge(base, override):
    """Recursive dict merge; ``override`` wins, ``None`` values included."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None):
    """Defaults merged with the YAML file at ``path`` (if any)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, encoding="utf-8") as fh:
            user = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config file must hold a mapping")
    unknown = set(user) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return merge(DEFAULTS, user)


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def _window(spec):
    if spec is None or "x" not in spec:
        return None
    return Window(tuple(spec["x"]), tuple(spec["y"]))


def _kernel(cfg):
    k = cfg["kernel"]
    return KernelSpec.parse(k.get("family", "epanechnikov"), k.get("bandwidth"))


def _grid(cfg, window):
    g = cfg["grid"]
    size = int(g.get("size", 128))
    if g.get("rmax") is None:
        return RGrid.default(window, size) if window is not None else None
    return RGrid.regular(float(g["rmax"]), size)


def statistics(entries, D, transform_override=None):
    """Expand statistic entries into :class:`StatisticSpec` objects.

    An entry names ``kind`` and ``transform`` plus either one-based ``j``
    (and optional ``l``) or ``components: auto`` for every ``j == l``.
    """
    out = []
    for entry in entries:
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"bad statistic entry {entry!r}")
        try:
            tr = Transform.parse(transform_override or entry.get("transform", "clr"))
        except CompmarksError as exc:
            raise ConfigError(str(exc)) from None
        dim = tr.dimension(D)
        if entry.get("components") == "auto" or ("j" not in entry and "components" in entry):
            pairs = [(j, j) for j in range(dim)]
        else:
            try:
                j = int(entry.get("j", 1)) - 1
                l = int(entry.get("l", j + 1)) - 1
            except (TypeError, ValueError):
                raise ConfigError(f"component numbers must be integers in {entry!r}") from None
            pairs = [(j, l)]
        for j, l in pairs:
            try:
                st = StatisticSpec(entry["kind"], tr, j, l)
                st.check_dimension(dim)
            except CompmarksError as exc:
                raise ConfigError(str(exc)) from None
            out.append(st)
    return tuple(out)


def dataset_schema(cfg):
    d = cfg["dataset"]
    zp = d.get("zero_policy", "reject")
    if isinstance(zp, dict) and "replace" in zp:
        zp = ZeroReplacement(float(zp["replace"]))
    elif zp != "reject":
        raise ConfigError(f"zero_policy must be 'reject' or {{replace: delta}}, got {zp!r}")
    win = d.get("window") or {}
    return DatasetSchema(
        x_column=d["x"], y_column=d["y"], part_columns=tuple(d["parts"] or ()),
        id_column=d.get("id"), window=_window(win), margin=float(win.get("margin", 0.0)),
        total=float(d.get("total", 1.0)), zero_policy=zp,
    )


def analysis_settings(cfg, pattern):
    """Analysis settings for an ingested ``pattern``."""
    try:
        return AnalysisSettings(
            statistics=statistics(cfg["statistics"], pattern.D, cfg.get("transform")),
            grid=_grid(cfg, pattern.window),
            kernel=_kernel(cfg),
            permutations=int(cfg["permutations"]),
            alpha=float(cfg["alpha"]),
            seed=int(cfg["seed"]),
            local=bool(cfg["local"]),
            hold_focal=bool(cfg["hold_focal"]),
            track=cfg["track"],
            edge_correction=cfg["edge_correction"],
            workers=int(cfg["threads"]),
        )
    except CompmarksError as exc:
        raise ConfigError(str(exc)) from None


def _scenario(sim):
    name = str(sim.get("scenario", "custom"))
    base = scenario_preset(name) if name.upper() in ("I", "II", "III") else ScenarioSpec()
    intensity = float(sim["intensity"]) if sim.get("intensity") is not None else base.intensity
    window = _window(sim.get("window")) or base.window
    bg = tuple(sim["background_alpha"]) if sim.get("background_alpha") is not None else base.background_alpha
    if sim.get("regions") is not None:
        regions = []
        for r in sim["regions"]:
            target = r.get("target")
            regions.append(DiscRegion(tuple(r["center"]), float(r["radius"]), tuple(r["alpha"]),
                                      None if target is None else int(target) - 1))
    else:
        regions = base.regions
    scenario_id = name.upper() if name.upper() in ("I", "II", "III") else name
    return ScenarioSpec(intensity, window, bg, tuple(regions), scenario_id)


def study_config(cfg):
    """:class:`StudyConfig` from the ``simulation`` section plus shared keys.

    Fails before any computation on inconsistent scenario settings.
    """
    sim = cfg["simulation"]
    try:
        scenario = _scenario(sim)
        entries = sim.get("statistics")
        if entries is None:
            comps = [1, 3] if scenario.scenario_id == "III" else [1]
            entries = [{"kind": "t1", "transform": "clr", "j": c} for c in comps]
        grid = _grid(cfg, scenario.window)
        return StudyConfig(
            scenario=scenario,
            n_patterns=int(sim["n_patterns"]),
            permutations=int(sim["permutations"]),
            alpha=float(cfg["alpha"]),
            statistics=statistics(entries, scenario.D, cfg.get("transform")),
            grid=grid,
            kernel=_kernel(cfg),
            seed=int(cfg["seed"]),
            local=bool(cfg["local"]),
            hold_focal=bool(cfg["hold_focal"]),
            track=cfg["track"],
            edge_correction=cfg["edge_correction"],
            workers=int(cfg["threads"]),
        )
    except CompmarksError as exc:
        raise ConfigError(str(exc)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid simulation config: {exc}") from None
