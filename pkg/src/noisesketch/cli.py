"""Command-line runner: ``noisesketch {run,bench,sweep,render}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

import argparse
import copy
import shutil
import statistics
import sys
import tempfile
from itertools import combinations
from pathlib import Path

import numpy as np
import yaml

from .arrayio import load_array, read_sidecar, save_array, write_sidecar
from .errors import (
    ConfigError,
    DegenerateReference,
    InfeasibleSpec,
    NotPSD,
    SizeLimit,
    TooFewSamples,
)
from .estimators import (
    brute_force_diag,
    mc_variance,
    naive_variance,
    sketch_variance,
)
from .experiment import build_pipeline, parse_config
from .metrics import compare_maps, convergence_table, format_table, to_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# Preferred reference when comparing two estimators: the first one listed wins.
REFERENCE_ORDER = ("brute", "naive", "mc", "sketch")


def _flatten(tree, prefix=""):
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _set_path(tree, dotted, value):
    keys = dotted.split(".")
    node = tree
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "path runs through a scalar")
    node[keys[-1]] = value


def load_config(path, args=None):
    """Read a YAML config and apply ``--seed``/``--threads``/``--out`` overrides."""
    if path is None:
        raw = {}
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("--config", "top level must be a mapping")
    raw = copy.deepcopy(raw)
    sweep = raw.pop("sweep", None)
    for flag in ("seed", "threads", "out"):
        value = getattr(args, flag, None) if args is not None else None
        if value is not None:
            raw[flag] = value
    return parse_config(raw), sweep


def _estimate(name, pipe, cfg):
    plan = pipe.plan()
    if name == "sketch":
        return sketch_variance(plan)
    if name == "naive":
        return naive_variance(plan)
    if name == "brute":
        return brute_force_diag(plan)
    return mc_variance(plan, cfg["N"], mode=cfg["mc_mode"])


def _reference_key(name):
    return REFERENCE_ORDER.index(name)


def compute_maps(cfg):
    """Build the pipeline and run every configured estimator, in order."""
    pipe = build_pipeline(cfg)
    return {name: _estimate(name, pipe, cfg) for name in cfg["estimators"]}


def _pairs(names):
    for a, b in combinations(names, 2):
        est, ref = sorted((a, b), key=_reference_key, reverse=True)
        yield est, ref


def write_results(out, cfg, maps):
    """Maps, difference maps, comparison reports, timing and the manifest."""
    out = Path(out)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "diff").mkdir(exist_ok=True)
    flat = {f"config.{k}": v for k, v in _flatten(cfg).items()}
    for name, vmap in maps.items():
        vmap.meta = {**vmap.meta, **flat}
        vmap.save(out / "maps" / name)
    reports, timing = [], []
    for est, ref in _pairs(list(maps)):
        a, b = maps[est].values, maps[ref].values
        save_array(out / "diff" / f"{est}-{ref}", a - b)
        write_sidecar(out / "diff" / f"{est}-{ref}.txt",
                      {"estimate": est, "reference": ref, "render_gain": 10})
        try:
            rep = compare_maps(a, b)
            row = {"estimate": est, "reference": ref, "pcc": rep.pcc,
                   "nrmse": rep.nrmse, "r_squared": rep.r_squared,
                   "slope": rep.slope, "intercept": rep.intercept}
        except DegenerateReference:
            nan = float("nan")
            (conv,) = convergence_table(b, [(est, a)])
            row = {"estimate": est, "reference": ref, "pcc": nan, "nrmse": conv.nrmse,
                   "r_squared": nan, "slope": nan, "intercept": nan}
        reports.append(row)
    for name, vmap in maps.items():
        timing.append({"estimator": name, "wall_time_s": vmap.meta["wall_time_s"]})
    (out / "reports.txt").write_text(format_table(reports))
    (out / "reports.csv").write_text(to_csv(reports))
    (out / "timing.txt").write_text(format_table(timing))
    (out / "timing.csv").write_text(to_csv(timing))
    (out / "manifest.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    return reports


class _Staging:
    """Write into a sibling temp directory and move it into place on success."""

    def __init__(self, target):
        self.target = Path(target)

    def __enter__(self):
        parent = self.target.resolve().parent
        parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            shutil.rmtree(self.target)
        self.tmp.rename(self.target)
        return False


def cmd_run(args):
    cfg, _ = load_config(args.config, args)
    maps = compute_maps(cfg)
    with _Staging(cfg["out"]) as tmp:
        reports = write_results(tmp, cfg, maps)
    print(format_table(reports) or "single estimator; no comparisons", end="")
    print(f"wrote {cfg['out']}")


def cmd_sweep(args):
    cfg, sweep = load_config(args.config, args)
    if not isinstance(sweep, dict) or "param" not in sweep or "values" not in sweep:
        raise ConfigError("sweep", "expected a mapping with 'param' and 'values'")
    param, values = sweep["param"], sweep["values"]
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values", "expected a non-empty list")
    if "reference" in sweep:
        reference = sweep["reference"]
    else:
        reference = min(cfg["estimators"], key=_reference_key)
    if reference not in cfg["estimators"]:
        raise ConfigError("sweep.reference", f"{reference!r} is not a configured estimator")
    # Validate every point before computing anything.
    points = []
    for i, value in enumerate(values):
        raw = copy.deepcopy(cfg)
        try:
            _set_path(raw, param, value)
            points.append(parse_config(raw))
        except ConfigError as exc:
            raise ConfigError(f"sweep.values[{i}] ({exc.path})", exc.message) from exc
    rows = []
    with _Staging(cfg["out"]) as tmp:
        for value, point in zip(values, points):
            maps = compute_maps(point)
            write_results(tmp / f"{param}={value}", point, maps)
            for name in point["estimators"]:
                if name == reference:
                    continue
                (row,) = convergence_table(maps[reference], [(value, maps[name])])
                rows.append({"param": param, "value": value, "estimate": name,
                             "reference": reference, "nrmse": row.nrmse, "pcc": row.pcc})
        summary = _summary(rows, param)
        (tmp / "convergence.txt").write_text(format_table(rows))
        (tmp / "convergence.csv").write_text(to_csv(rows))
        (tmp / "summary.txt").write_text(format_table(summary))
        (tmp / "summary.csv").write_text(to_csv(summary))
    print(format_table(rows), end="")
    print(format_table(summary), end="")
    print(f"wrote {cfg['out']}")


def _summary(rows, param):
    """Mean and sample std of each metric per estimator pair over the sweep."""
    over = "seeded phantom instances" if param == "phantom.seed" else f"{param} values"
    out = []
    for pair in dict.fromkeys((r["estimate"], r["reference"]) for r in rows):
        sel = [r for r in rows if (r["estimate"], r["reference"]) == pair]
        nrmse = np.array([r["nrmse"] for r in sel])
        pcc = np.array([r["pcc"] for r in sel])
        ddof = 1 if len(sel) > 1 else 0
        out.append({"estimate": pair[0], "reference": pair[1], "over": over,
                    "count": len(sel),
                    "nrmse_mean": float(nrmse.mean()), "nrmse_std": float(nrmse.std(ddof=ddof)),
                    "pcc_mean": float(pcc.mean()), "pcc_std": float(pcc.std(ddof=ddof))})
    return out


def _parse_ints(text, flag):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(flag, f"expected comma-separated integers, got {text!r}") from exc


def cmd_bench(args):
    cfg, _ = load_config(args.config, args)
    if args.repeat < 1:
        raise ConfigError("--repeat", "must be >= 1")
    pipe = build_pipeline(cfg)
    image_bytes = pipe.operator.n * 16
    rows = []
    for name in cfg["estimators"]:
        times = [_estimate(name, pipe, cfg).meta["wall_time_s"] for _ in range(args.repeat)]
        if name == "mc":
            mem = cfg["N"] * image_bytes
        elif name == "sketch":
            mem = min(cfg["chunk"], cfg["S"]) * image_bytes
        else:
            mem = min(cfg["chunk"], pipe.operator.n) * 2 * image_bytes
        rows.append({"estimator": name, "median_s": statistics.median(times),
                     "repeats": args.repeat, "memory_bytes": mem})
    depth_rows = []
    for steps in _parse_ints(args.steps, "--steps") if args.steps else []:
        point = parse_config({**cfg, "model": {**cfg["model"], "steps": steps}})
        p = build_pipeline(point)
        times = [sketch_variance(p.plan()).meta["wall_time_s"] for _ in range(args.repeat)]
        depth_rows.append({"steps": steps, "sketch_median_s": statistics.median(times)})
    text = format_table(rows) + (("\n" + format_table(depth_rows)) if depth_rows else "")
    with _Staging(cfg["out"]) as tmp:
        (tmp / "bench.txt").write_text(text)
        (tmp / "bench.csv").write_text(to_csv(rows))
        if depth_rows:
            (tmp / "bench_steps.csv").write_text(to_csv(depth_rows))
        (tmp / "manifest.yaml").write_text(yaml.safe_dump(cfg, sort_keys=False))
    print(text, end="")
    print(f"wrote {cfg['out']}")


def render_dir(root, gain=10.0):
    """PNG renderings of every map (and amplified difference map) under ``root``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    root = Path(root)
    written = []
    for hdr in sorted(root.rglob("*.hdr")):
        stem = hdr.with_suffix("")
        arr = np.asarray(load_array(stem), dtype=float)
        if arr.ndim != 2:
            continue
        if stem.parent.name == "diff":
            meta = read_sidecar(stem.with_suffix(".txt")) if stem.with_suffix(".txt").exists() else {}
            g = float(meta.get("render_gain", gain))
            scaled = g * arr
            # Shared symmetric scale: the reference map's peak, as the maps are shown.
            ref = stem.parent.parent / "maps" / stem.name.split("-")[-1]
            peak = float(np.max(load_array(ref))) if ref.with_suffix(".hdr").exists() else 0.0
            lim = peak or float(np.max(np.abs(scaled))) or 1.0
            plt.imsave(stem.with_suffix(".png"), scaled, cmap="RdBu_r", vmin=-lim, vmax=lim)
        else:
            plt.imsave(stem.with_suffix(".png"), arr, cmap="gray", vmin=0.0,
                       vmax=float(arr.max()) or 1.0)
        written.append(stem.with_suffix(".png"))
    return written


def cmd_render(args):
    root = Path(args.dir)
    if not root.is_dir():
        raise OSError(f"{root} is not a directory")
    for path in render_dir(root, args.gain):
        print(path)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="noisesketch", description="Variance maps for reconstructions under k-space noise."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="YAML experiment config")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, metavar="INT", help="master seed")
        p.add_argument("--threads", type=int, metavar="INT", help="worker threads")

    p = sub.add_parser("run", help="compute variance maps and reports")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="repeat a run over values of one config field")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("bench", help="median wall time per estimator")
    common(p)
    p.add_argument("--repeat", type=int, default=3, help="timed repeats (default 3)")
    p.add_argument("--steps", metavar="K,K,...", help="also time sketch over unrolled depths")
    p.set_defaults(func=cmd_bench)
    p = sub.add_parser("render", help="write PNGs for the maps of a run directory")
    p.add_argument("dir", help="run or sweep output directory")
    p.add_argument("--gain", type=float, default=10.0, help="difference-map amplification")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc.path}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleSpec as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotPSD, SizeLimit, TooFewSamples) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
