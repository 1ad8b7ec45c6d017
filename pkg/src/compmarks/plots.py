"""Static SVG plots of analysis outputs.

Envelope plots show one observed curve over its global envelope band;
point maps colour each point by its local test outcome. Files are
deterministic: the SVG id salt and the metadata carry the run id instead
of a timestamp.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["COLORS", "point_color", "envelope_plot", "point_map", "load_results", "emit_plots"]

COLORS = {"positive": "#1a9641", "negative": "#d7191c", None: "#bdbdbd"}


def point_color(significant, direction):
    """Green for significant positive association, red for negative, grey otherwise."""
    return COLORS[direction] if significant else COLORS[None]


def _save(fig, path, run_id):
    with plt.rc_context({"svg.hashsalt": run_id, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": f"run_id {run_id}"})
    plt.close(fig)


def envelope_plot(r, observed, lower, upper, path, run_id, title="", ylabel=""):
    """One band (the envelope) and one line (the observed curve)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    band = ax.fill_between(r, lower, upper, color="#cccccc", linewidth=0, label="envelope")
    band.set_gid("envelope")
    (line,) = ax.plot(r, observed, color="black", linewidth=1.2, label="observed")
    line.set_gid("observed")
    ax.set_xlabel("r")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path, run_id)
    return path


def point_map(locations, colors, path, run_id, title=""):
    """Scatter of points with one colour per point, in record order."""
    xy = np.asarray(locations, dtype=float)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    sc = ax.scatter(xy[:, 0], xy[:, 1], c=list(colors), s=18, edgecolors="none")
    sc.set_gid("points")
    ax.set_aspect("equal")
    ax.set_title(title, fontsize=9)
    fig.tight_layout()
    _save(fig, path, run_id)
    return path


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _float(text):
    return float(text) if text != "" else np.nan


def _key(rec):
    return (rec["statistic"], rec["transform"], str(rec["j"]), str(rec["l"]), rec["scope"],
            rec["point_id"] or "")


def load_results(results_dir):
    """Test summaries plus curve and envelope series keyed by test.

    Returns ``(run_id, tests, series)``; ``series`` maps a test key to a
    dict of arrays ``r``, ``unnormalized``, ``normalized``, ``lower`` and
    ``upper``. Missing files give empty results.
    """
    tests_path = os.path.join(results_dir, "tests.json")
    if not os.path.exists(tests_path):
        return None, [], {}
    with open(tests_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    series = defaultdict(lambda: defaultdict(list))
    res_path = os.path.join(results_dir, "results.csv")
    env_path = os.path.join(results_dir, "envelopes.csv")
    if os.path.exists(res_path):
        for row in _read_csv(res_path):
            s = series[_key(row)]
            s["r"].append(_float(row["r"]))
            s["unnormalized"].append(_float(row["value_unnormalized"]))
            s["normalized"].append(_float(row["value_normalized"]))
    if os.path.exists(env_path):
        for row in _read_csv(env_path):
            s = series[_key(row)]
            s["lower"].append(_float(row["lower"]))
            s["upper"].append(_float(row["upper"]))
    out = {k: {name: np.array(v) for name, v in s.items()} for k, s in series.items()}
    return payload.get("run_id"), payload.get("tests", []), out


def _slug(rec):
    return f"{rec['statistic']}_{rec['transform'].replace(':', '')}_{rec['j']}_{rec['l']}"


def emit_plots(results_dir, out_dir=None, local_curves=False):
    """Render envelope plots for global tests and one point map per local statistic.

    Local envelope plots are drawn only when ``local_curves`` is set.
    Returns the written paths; an empty result set warns and writes nothing.
    """
    run_id, tests, series = load_results(results_dir)
    if not tests:
        warnings.warn(f"no test results in {results_dir}; nothing to plot", stacklevel=2)
        return []
    out_dir = out_dir or os.path.join(results_dir, "plots")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    maps = defaultdict(list)
    for rec in tests:
        if rec["scope"] == "local":
            maps[_slug(rec)].append(rec)
            if not local_curves:
                continue
        s = series.get(_key(rec))
        track = rec.get("track", "unnormalized")
        if s is None or any(k not in s for k in ("r", track, "lower", "upper")):
            warnings.warn(f"missing series for {_slug(rec)} ({rec['scope']}); skipped", stacklevel=2)
            continue
        name = f"envelope_{_slug(rec)}_{rec['scope']}"
        if rec["scope"] == "local":
            name += f"_{rec['point_id']}"
        title = f"{_slug(rec)} {rec['scope']}  p = {rec['p_value']:.3f}"
        written.append(envelope_plot(s["r"], s[track], s["lower"], s["upper"],
                                     os.path.join(out_dir, name + ".svg"), run_id, title, rec["statistic"]))
    for slug, recs in sorted(maps.items()):
        located = [r for r in recs if r.get("location")]
        if not located:
            warnings.warn(f"no point locations for {slug}; map skipped", stacklevel=2)
            continue
        colors = [point_color(r["significant"], r["direction"]) for r in located]
        written.append(point_map([r["location"] for r in located], colors,
                                 os.path.join(out_dir, f"map_{slug}.svg"), run_id, f"{slug} local"))
    return written
