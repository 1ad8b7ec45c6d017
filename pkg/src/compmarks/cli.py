"""Command-line driver: ``ingest``, ``analyze``, ``simulate``, ``plot`` and ``config``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. Every output carries the run id, a hash of the effective
configuration, the software version and the input digests; timestamps
appear only in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import sys
import warnings

from . import __version__
from .analysis import run_analysis, write_outputs
from .config import (
    analysis_settings,
    dataset_schema,
    dump,
    load_config,
    merge,
    study_config,
)
from .errors import CompmarksError, ConfigError, DataError, NumericError
from .ingest import file_digest, format_summary, ingest_csv, part_summary
from .plots import emit_plots
from .simstudy import run_study

__all__ = ["main", "build_parser", "run_id_for", "write_manifest", "verify_manifest"]

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
# keys that only steer scheduling or output placement
_VOLATILE = ("threads", "out")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--permutations", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--kernel", choices=("epanechnikov", "box", "gaussian"))
    common.add_argument("--bandwidth", help="X or stoyan:C")
    common.add_argument("--rmax", type=float)
    common.add_argument("--grid", type=int, help="number of r grid points")
    common.add_argument("--transform", help="clr, alr:REF or ilr")

    parser = argparse.ArgumentParser(prog="compmarks", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"compmarks {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="validate a CSV and summarise its parts")
    p.add_argument("data", nargs="?", help="input CSV (overrides dataset.path)")
    p = sub.add_parser("analyze", parents=[common], help="global then local envelope tests")
    p.add_argument("data", nargs="?", help="input CSV (overrides dataset.path)")
    p.add_argument("--global-only", action="store_true")
    sub.add_parser("simulate", parents=[common], help="run a simulation study")
    p = sub.add_parser("plot", parents=[common], help="SVG plots from an analysis output directory")
    p.add_argument("results", help="directory holding tests.json, results.csv, envelopes.csv")
    p.add_argument("--local-curves", action="store_true", help="also plot every local envelope")
    p = sub.add_parser("config", help="configuration utilities")
    p.add_argument("action", choices=("show-defaults", "show"))
    p.add_argument("--config")
    return parser


def effective_config(args):
    """Defaults, then the config file, then command-line flags."""
    cfg = load_config(getattr(args, "config", None))
    flags = {}
    for key in ("seed", "threads", "out", "permutations", "alpha", "transform"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    if getattr(args, "kernel", None) is not None:
        flags.setdefault("kernel", {})["family"] = args.kernel
    if getattr(args, "bandwidth", None) is not None:
        flags.setdefault("kernel", {})["bandwidth"] = args.bandwidth
    if getattr(args, "rmax", None) is not None:
        flags.setdefault("grid", {})["rmax"] = args.rmax
    if getattr(args, "grid", None) is not None:
        flags.setdefault("grid", {})["size"] = args.grid
    if getattr(args, "data", None):
        flags["dataset"] = {"path": args.data}
    if getattr(args, "global_only", False):
        flags["local"] = False
    cfg = merge(cfg, flags)
    if args.command == "simulate" and getattr(args, "permutations", None) is not None:
        cfg["simulation"]["permutations"] = args.permutations
    return cfg


def run_id_for(command, cfg, digests):
    """Hash of command, effective config, version and input digests."""
    stable = {k: v for k, v in cfg.items() if k not in _VOLATILE}
    if command != "simulate":
        stable = {k: v for k, v in stable.items() if k != "simulation"}
        stable["dataset"] = {k: v for k, v in stable["dataset"].items() if k != "path"}
    blob = json.dumps({"command": command, "config": stable, "version": __version__,
                       "inputs": sorted(digests.values())}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_manifest(out_dir, run_id, command, cfg, inputs, outputs, started):
    """``manifest.json`` with config, seed, version, timestamps and digests."""
    manifest = {
        "run_id": run_id,
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "config_hash": hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest(),
        "config": cfg,
        "inputs": inputs,
        "outputs": {os.path.basename(p): file_digest(p) for p in outputs},
        "started": started,
        "finished": _now(),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
    return path


def verify_manifest(path):
    """Names of inputs and outputs whose current digest differs from the record."""
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(path)
    bad = [p for p, d in manifest["inputs"].items() if not os.path.exists(p) or file_digest(p) != d]
    for name, d in manifest["outputs"].items():
        p = os.path.join(base, name)
        if not os.path.exists(p) or file_digest(p) != d:
            bad.append(name)
    return bad


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _ingest(cfg):
    path = cfg["dataset"].get("path")
    if not path:
        raise ConfigError("no input CSV: pass a path or set dataset.path")
    if not os.path.exists(path):
        raise DataError(f"input file {path} does not exist")
    return path, ingest_csv(path, dataset_schema(cfg))


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def cmd_ingest(args, cfg):
    started = _now()
    path, res = _ingest(cfg)
    names = list(cfg["dataset"]["parts"])
    summary = part_summary(res.pattern, names)
    sys.stdout.write(f"{res.pattern.n} points, {res.pattern.D} parts"
                     f"{' (percent scale)' if res.percent_scale else ''}\n")
    sys.stdout.write(format_summary(summary))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        run_id = run_id_for("ingest", cfg, {path: res.digest})
        out = _write_json(os.path.join(args.out, "summary.json"), {
            "run_id": run_id, "n": res.pattern.n, "percent_scale": res.percent_scale,
            "parts": summary,
        })
        write_manifest(args.out, run_id, "ingest", cfg, {path: res.digest}, [out], started)
    return EXIT_OK


def cmd_analyze(args, cfg):
    started = _now()
    path, res = _ingest(cfg)
    settings = analysis_settings(cfg, res.pattern)
    run_id = run_id_for("analyze", cfg, {path: res.digest})
    records = run_analysis(res.pattern, settings)
    out_dir = cfg["out"]
    paths = write_outputs(records, out_dir, run_id, res.pattern.D, settings.alpha, settings.track)
    write_manifest(out_dir, run_id, "analyze", cfg, {path: res.digest}, list(paths.values()), started)
    n_global = sum(r.spec.point is None for r in records)
    n_sig = sum(r.result.significant for r in records if r.spec.point is None)
    sys.stdout.write(f"run {run_id}: {n_global} global tests ({n_sig} significant), "
                     f"{len(records) - n_global} local tests -> {out_dir}\n")
    return EXIT_OK


def cmd_simulate(args, cfg):
    started = _now()
    config = study_config(cfg)
    run_id = run_id_for("simulate", cfg, {})
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    checkpoint = cfg["simulation"].get("checkpoint") or os.path.join(out_dir, "checkpoint.jsonl")

    def progress(done, total):
        sys.stderr.write(f"\rpattern {done}/{total}")
        if done == total:
            sys.stderr.write("\n")

    report = run_study(config, checkpoint=checkpoint, progress=progress)
    body = report.to_dict()
    body["run_id"] = run_id
    rep = os.path.join(out_dir, "report.json")
    with open(rep, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(body, sort_keys=True, indent=1) + "\n")
    tel = _write_json(os.path.join(out_dir, "telemetry.json"), {"run_id": run_id, **report.telemetry})
    write_manifest(out_dir, run_id, "simulate", cfg, {}, [rep, tel], started)
    for label, st in report.statistics.items():
        loc = st.get("local", {})
        sys.stdout.write(f"{label}: global rate {st['global']['rate']:.3f}")
        if loc:
            sys.stdout.write(f", local in-disc {loc['in_disc']['rate']}, background {loc['background']['rate']:.4f}")
        sys.stdout.write("\n")
    return EXIT_OK


def cmd_plot(args, cfg):
    out_dir = args.out or os.path.join(args.results, "plots")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        written = emit_plots(args.results, out_dir, args.local_curves)
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    sys.stdout.write(f"{len(written)} plot(s) written\n")
    return EXIT_OK


def cmd_config(args):
    cfg = load_config(args.config if args.action == "show" else None)
    sys.stdout.write(dump(cfg))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "config":
            return cmd_config(args)
        cfg = effective_config(args)
        handler = {"ingest": cmd_ingest, "analyze": cmd_analyze,
                   "simulate": cmd_simulate, "plot": cmd_plot}[args.command]
        return handler(args, cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"numeric error: {exc}\n")
        return EXIT_NUMERIC
    except CompmarksError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
