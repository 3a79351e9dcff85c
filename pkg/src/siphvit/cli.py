"""Command-line front end: simulate, analyze-mr, mask, sweep."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensorio
from .config import SCHEMA, ConfigError, RunConfig
from .costs import long_format_rows, rows_to_csv
from .device import CalibrationError, WavelengthGrid, calibrate_grid, resolution
from .roi import (MGNET_PROFILES, MGNetConfig, MGNetWeights, RegionScores, ground_truth_mask, make_mask,
                  mgnet_forward, miou, read_boxes, toy_weights, write_masks)
from .run import simulate, write_outputs
from .vit import patchify

ENV_OUTPUT = "SIPHVIT_OUTPUT_DIR"
ENV_WORKERS = "SIPHVIT_WORKERS"


def _load_config(path: Optional[str], overrides: dict) -> RunConfig:
    if path is None:
        return RunConfig.from_dict(overrides)
    base = RunConfig.load(path)
    return base.with_overrides(**overrides) if overrides else base


def _set(d: dict, dotted: str, value) -> None:
    *head, last = dotted.split(".")
    for k in head:
        d = d.setdefault(k, {})
    d[last] = value


def _simulate_overrides(a) -> dict:
    o: dict = {}
    pairs = [("model.preset", a.model), ("image_size", a.image_size), ("input.frames", a.frames),
             ("noise.mode", a.noise), ("seed", a.seed), ("core.adc_bits", a.adc_bits),
             ("core.q_factor", a.q_factor), ("mask.source", a.mask), ("mask.path", a.mask_file),
             ("mask.t_reg", a.t_reg), ("mask.skip_ratio", a.skip_ratio), ("cost_table", a.cost_table),
             ("weights", a.weights)]
    for k, v in pairs:
        if v is not None:
            _set(o, k, v)
    if a.mask_file is not None and a.mask is None:
        _set(o, "mask.source", "file")
    if a.ideal_adc:
        _set(o, "core.adc_bits", None)
    if a.analytic:
        o["functional"] = False
    if a.savings:
        o["report_savings"] = True
    return o


def cmd_simulate(a) -> int:
    if a.print_schema:
        print(json.dumps(SCHEMA, indent=2))
        return 0
    cfg = _load_config(a.config, _simulate_overrides(a))
    out = a.out or os.environ.get(ENV_OUTPUT) or cfg.data["output_dir"]
    result = simulate(cfg)
    write_outputs(result, cfg, out)
    s = result.summary()
    print(f"{cfg.vit.name} {cfg.vit.image_size[0]}x{cfg.vit.image_size[1]}: "
          f"{s['energy_per_frame_j']:.4e} J/frame, {s['latency_s']:.4e} s, "
          f"{s['kfps_per_watt']:.1f} KFPS/W -> {out}")
    if "energy_savings" in s:
        print(f"energy savings vs unmasked: {s['energy_savings']:.4f}")
    return 0


def _axis(spec: Sequence[float] | None, lo: float, hi: float, steps: int) -> np.ndarray:
    if spec:
        return np.asarray(spec, dtype=float)
    return np.linspace(lo, hi, steps)


def analyze_mr_rows(q_values, spacings, n_channels: int, bits: int = 8, center: float = 1550.0) -> list[dict]:
    """Resolution over a (Q, spacing) grid, flagging the first spacing per Q reaching 2^bits."""
    target = 2.0 ** bits
    rows = []
    for q in q_values:
        crossed = False
        for s in sorted(spacings):
            r = resolution(WavelengthGrid(n_channels, center, float(s)), float(q))
            meets = r >= target
            rows.append({"q_factor": float(q), "spacing_nm": float(s), "n_channels": n_channels,
                         "resolution": r, "levels_target": target, "meets_target": meets,
                         "contour": meets and not crossed})
            crossed = crossed or meets
    return rows


def cmd_analyze_mr(a) -> int:
    qs = _axis(a.q, a.q_min, a.q_max, a.q_steps)
    sp = _axis(a.spacing, a.spacing_min, a.spacing_max, a.spacing_steps)
    if (qs <= 0).any() or (sp <= 0).any() or a.n_channels < 1:
        raise ValueError("Q values, spacings and channel count must be positive")
    text = rows_to_csv(analyze_mr_rows(qs, sp, a.n_channels, a.bits))
    _emit(text, a.out)
    for q in qs:
        try:
            g = calibrate_grid(a.n_channels, float(q), a.bits)
            print(f"# Q={q:g}: smallest spacing reaching {2 ** a.bits} levels = {g.spacing:.4f} nm",
                  file=sys.stderr)
        except CalibrationError as e:
            print(f"# Q={q:g}: {e}", file=sys.stderr)
    return 0


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_scores(path: Path) -> list[np.ndarray]:
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if isinstance(data, dict):
            data = data.get("s_region", data)
        if not isinstance(data, list):
            raise ValueError(f"{path}: expected a list of per-frame score lists")
        return [np.asarray(f, dtype=np.float64) for f in data]
    t = tensorio.load(path)
    arr = np.atleast_2d(np.asarray(t["s_region"], dtype=np.float64))
    return list(arr)


def _mask_scores(a) -> tuple[list[np.ndarray], tuple]:
    if a.scores:
        return _load_scores(Path(a.scores)), (a.image_size, a.image_size)
    size = (a.image_size, a.image_size)
    if a.images.endswith(".img8"):
        imgs = tensorio.read_images(a.images)
        size, ch = imgs.shape[1:3], imgs.shape[3]
        frames = [patchify(tensorio.normalize_images(im), a.patch_size) for im in imgs]
    else:
        pats = np.asarray(tensorio.load(a.images)["patches"], dtype=np.float64)
        frames = list(pats if pats.ndim == 3 else pats[None])
        ch = frames[0].shape[1] // (a.patch_size ** 2)
    dim, heads = MGNET_PROFILES[a.mgnet_profile]
    cfg = MGNetConfig(patch_size=a.patch_size, embed_dim=dim, n_heads=heads, image_size=size, channels=ch)
    w = MGNetWeights.load(cfg, a.mgnet_weights) if a.mgnet_weights else toy_weights(cfg, a.mgnet_seed)
    return [mgnet_forward(f, w).s_region for f in frames], tuple(size)


def mask_rows(scores: list[np.ndarray], thresholds: Sequence[float], boxes: Optional[dict],
              image_size, patch_size: int) -> tuple[list[dict], dict]:
    """Per-(threshold, frame) skip ratio and optional mIoU; masks at the first threshold."""
    rows, first = [], {}
    for t in thresholds:
        for f, s in enumerate(scores):
            m = make_mask(RegionScores(s, np.zeros_like(s)), t)
            row = {"t_reg": t, "frame": f, "skip_ratio": m.skip_ratio, "kept": int(m.bits.sum())}
            if boxes is not None:
                gt = ground_truth_mask(boxes.get(f, []), image_size, patch_size)
                row["miou"] = miou(m, gt)
            rows.append(row)
            if t == thresholds[0]:
                first[f] = m
    return rows, first


def cmd_mask(a) -> int:
    scores, size = _mask_scores(a)
    boxes = read_boxes(a.boxes) if a.boxes else None
    thresholds = a.t_reg or [0.5]
    rows, masks = mask_rows(scores, thresholds, boxes, size, a.patch_size)
    if a.out:
        write_masks(a.out, [masks[f] for f in sorted(masks)])
    _emit(rows_to_csv(rows), a.stats)
    for t in thresholds:
        sel = [r for r in rows if r["t_reg"] == t]
        agg = float(np.mean([r["skip_ratio"] for r in sel]))
        line = f"# t_reg={t:g}: mean skip ratio {agg:.4f}"
        if boxes is not None:
            line += f", mean mIoU {np.mean([r['miou'] for r in sel]):.4f}"
        print(line, file=sys.stderr)
    return 0


def _sweep_point(args) -> tuple[dict, list[dict], Optional[str]]:
    base, base_dir, label = args
    try:
        data = json.loads(json.dumps(base))
        data.setdefault("model", {})
        data["model"] = {k: v for k, v in data["model"].items() if k not in ("d_m", "heads", "depth")}
        data["model"]["preset"] = label["model"]
        data["image_size"] = label["image_size"]
        if label["mask"] == "none":
            data["mask"] = {**data.get("mask", {}), "source": "none"}
        else:
            data["mask"] = {**data.get("mask", {}), "source": "synthetic", "skip_ratio": float(label["mask"])}
        data["report_savings"] = False
        res = simulate(RunConfig.from_dict(data, base_dir))
        return label, long_format_rows(label, res.energy, res.latency), None
    except Exception as e:  # reported per point; the sweep goes on
        return label, [], f"{type(e).__name__}: {e}"


def sweep_rows(template: dict, models, sizes, masks, workers: int = 1, base_dir=None) -> tuple[list, list]:
    """Long-format rows for every (model, size, mask) point, in axis order."""
    labels = [{"model": m, "image_size": s, "mask": str(k)} for m in models for s in sizes for k in masks]
    jobs = [(template, base_dir, lab) for lab in labels]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    rows, failures = [], []
    totals = {}
    for label, r, err in results:
        if err:
            failures.append((label, err))
            continue
        rows.extend({**x, "status": "ok"} for x in r)
        totals[(label["model"], label["image_size"], label["mask"])] = {
            x["metric"]: x["value"] for x in r if x["component"] == "total"}
    for label, r, err in results:
        full = totals.get((label["model"], label["image_size"], "none"))
        mine = totals.get((label["model"], label["image_size"], label["mask"]))
        if err or label["mask"] == "none" or full is None:
            continue
        for metric in ("energy", "latency"):
            rows.append({**label, "metric": "savings", "component": metric,
                         "value": 1.0 - mine[metric] / full[metric], "unit": "fraction", "status": "ok"})
    for label, err in failures:
        rows.append({**label, "metric": "error", "component": "", "value": "", "unit": "", "status": err})
    return rows, failures


def cmd_sweep(a) -> int:
    template = json.loads(Path(a.config).read_text()) if a.config else {}
    base_dir = str(Path(a.config).parent) if a.config else None
    if a.config:
        RunConfig.load(a.config)  # surface template errors with line numbers
    if a.functional is not None:
        template["functional"] = a.functional
    elif "functional" not in template:
        template["functional"] = False
    workers = a.workers or int(os.environ.get(ENV_WORKERS, "1"))
    rows, failures = sweep_rows(template, a.models, a.image_sizes, a.masks, workers, base_dir)
    out = a.out
    if out is None and os.environ.get(ENV_OUTPUT):
        Path(os.environ[ENV_OUTPUT]).mkdir(parents=True, exist_ok=True)
        out = str(Path(os.environ[ENV_OUTPUT]) / "sweep.csv")
    _emit(rows_to_csv(rows), out)
    for label, err in failures:
        print(f"point {label} failed: {err}", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siphvit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one configuration and write reports")
    s.add_argument("config", nargs="?", help="JSON run config (defaults apply when omitted)")
    s.add_argument("--out", help=f"output directory (overrides config and ${ENV_OUTPUT})")
    s.add_argument("--model", help="model preset")
    s.add_argument("--image-size", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--noise", choices=["off", "worst_case", "stochastic"])
    s.add_argument("--seed", type=int)
    s.add_argument("--adc-bits", type=int)
    s.add_argument("--ideal-adc", action="store_true")
    s.add_argument("--q-factor", type=float)
    s.add_argument("--mask", choices=["none", "generate", "file", "synthetic"])
    s.add_argument("--mask-file")
    s.add_argument("--t-reg", type=float)
    s.add_argument("--skip-ratio", type=float)
    s.add_argument("--cost-table")
    s.add_argument("--weights")
    s.add_argument("--analytic", action="store_true", help="counts only, no numerics")
    s.add_argument("--savings", action="store_true", help="also run unmasked and report savings")
    s.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("analyze-mr", help="MR resolution over Q-factor and channel spacing")
    m.add_argument("--q", type=float, nargs="+")
    m.add_argument("--q-min", type=float, default=2500.0)
    m.add_argument("--q-max", type=float, default=10000.0)
    m.add_argument("--q-steps", type=int, default=4)
    m.add_argument("--spacing", type=float, nargs="+")
    m.add_argument("--spacing-min", type=float, default=1.0)
    m.add_argument("--spacing-max", type=float, default=10.0)
    m.add_argument("--spacing-steps", type=int, default=10)
    m.add_argument("--n-channels", type=int, default=32)
    m.add_argument("--bits", type=int, default=8)
    m.add_argument("--out", help="CSV path (stdout when omitted)")
    m.set_defaults(func=cmd_analyze_mr)

    k = sub.add_parser("mask", help="threshold region scores into patch masks")
    src = k.add_mutually_exclusive_group(required=True)
    src.add_argument("--scores", help="per-frame s_region scores (JSON list or tensor file)")
    src.add_argument("--images", help="images (.img8) or tensor file with 'patches'; scored by MGNet")
    k.add_argument("--t-reg", type=float, action="append", help="threshold; repeat for a sweep")
    k.add_argument("--boxes", help="ground-truth boxes JSON [{frame, x, y, w, h}]")
    k.add_argument("--image-size", type=int, default=224)
    k.add_argument("--patch-size", type=int, default=16)
    k.add_argument("--mgnet-profile", choices=sorted(MGNET_PROFILES), default="default")
    k.add_argument("--mgnet-weights")
    k.add_argument("--mgnet-seed", type=int, default=0)
    k.add_argument("--out", help="mask file (masks at the first threshold)")
    k.add_argument("--stats", help="per-frame CSV path (stdout when omitted)")
    k.set_defaults(func=cmd_mask)

    w = sub.add_parser("sweep", help="long-format energy/latency CSV over model x size x mask")
    w.add_argument("config", nargs="?", help="JSON config template")
    w.add_argument("--models", nargs="+", default=["tiny", "small", "base", "large"])
    w.add_argument("--image-sizes", type=int, nargs="+", default=[96, 224])
    w.add_argument("--masks", nargs="+", default=["none"], help="'none' or skip ratios")
    fn = w.add_mutually_exclusive_group()
    fn.add_argument("--functional", dest="functional", action="store_true", default=None)
    fn.add_argument("--analytic", dest="functional", action="store_false")
    w.add_argument("--workers", type=int, help=f"parallel workers (default ${ENV_WORKERS} or 1)")
    w.add_argument("--out", help="CSV path")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        for d in e.diagnostics:
            print(d, file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
