"""End-to-end simulation of a run configuration and report emission."""

from __future__ import annotations

import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, tensorio
from .config import RunConfig
from .costs import EnergyReport, LatencyReport, estimate_energy, estimate_latency, kfps_per_watt, savings
from .pipeline import Accelerator, vit_forward
from .roi import (MGNetWeights, PatchMask, make_mask, mgnet_forward, mgnet_macs, read_masks, synthetic_mask,
                  toy_weights)
from .trace import ScheduleTrace
from .vit import ViTModel, patchify, placeholder_model, random_model, random_patches


@dataclass
class SimulationResult:
    logits: list
    trace: ScheduleTrace
    energy: EnergyReport
    latency: LatencyReport
    masks: list = field(default_factory=list)
    baseline: Optional["SimulationResult"] = None

    @property
    def frames(self) -> int:
        return len(self.logits)

    def energy_savings(self) -> Optional[float]:
        return None if self.baseline is None else savings(self.energy, self.baseline.energy)

    def summary(self) -> dict:
        per_frame = self.energy.total / max(self.frames, 1)
        out = {
            "frames": self.frames,
            "energy_per_frame_j": per_frame,
            "latency_s": self.latency.total,
            "kfps_per_watt": kfps_per_watt(per_frame) if per_frame > 0 else math.inf,
            "largest_energy_component": self.energy.largest(),
            "skip_ratios": [m.skip_ratio for m in self.masks],
        }
        if self.baseline is not None:
            out["energy_savings"] = self.energy_savings()
            out["latency_savings"] = 1.0 - self.latency.total / self.baseline.latency.total
        return out


def load_frames(cfg: RunConfig) -> np.ndarray:
    """Input frames as ``frames x n_patches x patch_dim`` reals."""
    vc = cfg.vit
    inp = cfg.data["input"]
    frames = inp["frames"]
    if inp["source"] == "random":
        return np.stack([random_patches(vc, inp["seed"] + f) for f in range(frames)])
    path = cfg.path(inp["path"])
    if path.suffix == ".img8":
        imgs = tensorio.read_images(path)
        if imgs.shape[1:3] != vc.image_size or imgs.shape[3] != vc.channels:
            raise ValueError(f"{path}: images are {imgs.shape[1:]}, model expects "
                             f"{vc.image_size + (vc.channels,)}")
        pats = np.stack([patchify(tensorio.normalize_images(im), vc.patch_size) for im in imgs])
    else:
        t = tensorio.load(path)
        if "patches" not in t:
            raise ValueError(f"{path}: expected a tensor named 'patches'")
        pats = np.asarray(t["patches"], dtype=np.float64)
        if pats.ndim == 2:
            pats = pats[None]
    if pats.shape[1:] != (vc.n_patches, vc.patch_dim):
        raise ValueError(f"{path}: patches are {pats.shape[1:]}, expected {(vc.n_patches, vc.patch_dim)}")
    if pats.shape[0] < frames:
        raise ValueError(f"{path}: holds {pats.shape[0]} frames, config asks for {frames}")
    return pats[:frames]


def load_model(cfg: RunConfig) -> ViTModel:
    if not cfg.data["functional"]:
        return placeholder_model(cfg.vit)
    if cfg.data["weights"] is None:
        return random_model(cfg.vit, cfg.data["weights_seed"])
    return ViTModel.load(cfg.vit, cfg.path(cfg.data["weights"]))


def mgnet_weights(cfg: RunConfig) -> MGNetWeights:
    g = cfg.data["mask"]["mgnet"]
    if g["weights"] is None:
        return toy_weights(cfg.mgnet, g["seed"])
    return MGNetWeights.load(cfg.mgnet, cfg.path(g["weights"]))


def charge_mgnet(acc: Accelerator, cfg: RunConfig, optical: bool) -> int:
    """Trace the MGNet overhead; optical runs already traced their products."""
    c = cfg.mgnet
    P, L = c.n_patches, c.embed_dim
    macs = mgnet_macs(c)
    if optical:
        # products outside acc.matmul: token attention, class attention, region projection
        macs = 2 * (P + 1) ** 2 * L + L * L + P * L + P * P
    n_params = MGNetWeights(c).n_params()
    rd = acc.scheduler.add("MEM", "read", (), "mgnet:w", nbytes=n_params * math.ceil(cfg.vit.bits / 8))
    return acc.elec("matmul", macs, (rd,), "mgnet")


def frame_masks(cfg: RunConfig, frames: np.ndarray, acc: Accelerator) -> list[Optional[PatchMask]]:
    m = cfg.data["mask"]
    n_frames = frames.shape[0]
    P = cfg.vit.n_patches
    src = m["source"]
    if src == "none":
        return [None] * n_frames
    if src == "synthetic":
        return [synthetic_mask(P, m["skip_ratio"], m["seed"] + f) for f in range(n_frames)]
    if src == "file":
        masks = read_masks(cfg.path(m["path"]))
        if len(masks) < n_frames:
            raise ValueError(f"mask file has {len(masks)} frames, config asks for {n_frames}")
        for i, mk in enumerate(masks[:n_frames]):
            if len(mk) != P:
                raise ValueError(f"mask {i} covers {len(mk)} patches, model has {P}")
        return masks[:n_frames]
    w = mgnet_weights(cfg)
    optical = m["mgnet"]["optical"]
    out = []
    for f in range(n_frames):
        scores = mgnet_forward(frames[f], w, acc if optical else None)
        charge_mgnet(acc, cfg, optical)
        out.append(make_mask(scores, m["t_reg"]))
    return out


def simulate(cfg: RunConfig, baseline: Optional[bool] = None) -> SimulationResult:
    """Run every configured frame through the accelerator and cost the trace."""
    table = cfg.cost_table()
    functional = cfg.data["functional"]
    acc = Accelerator(cfg.core, table, cfg.options, functional=functional)
    model = load_model(cfg)
    vc = cfg.vit
    if functional:
        frames = load_frames(cfg)
    else:
        n = cfg.data["input"]["frames"]
        frames = np.broadcast_to(0.0, (n, vc.n_patches, vc.patch_dim))
    masks = frame_masks(cfg, frames, acc)
    logits = []
    for f in range(frames.shape[0]):
        mask = masks[f]
        keep = np.arange(vc.n_patches) if mask is None else mask.kept
        lg, _ = vit_forward(acc, model, frames[f][keep], positions=keep)
        logits.append([float(v) for v in np.asarray(lg)])
    trace = acc.trace
    result = SimulationResult(logits, trace, estimate_energy(trace, table), estimate_latency(trace, table),
                              [m for m in masks if m is not None])
    want_baseline = cfg.data["report_savings"] if baseline is None else baseline
    if want_baseline and cfg.data["mask"]["source"] != "none":
        result.baseline = simulate(cfg.with_overrides(mask={"source": "none"}, report_savings=False),
                                   baseline=False)
    return result


def _file_digest(path: Optional[Path]) -> Optional[str]:
    return None if path is None else hashlib.sha256(path.read_bytes()).hexdigest()


def manifest(cfg: RunConfig) -> dict:
    d = cfg.data
    files = {"weights": d["weights"], "cost_table": d["cost_table"], "input": d["input"]["path"],
             "mask": d["mask"]["path"], "mgnet_weights": d["mask"]["mgnet"]["weights"]}
    return {
        "config_hash": cfg.hash,
        "config": d,
        "seed": cfg.seed,
        "noise_seed": d["noise"]["seed"],
        "cost_table_version": cfg.cost_table().version,
        "code_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "file_digests": {k: _file_digest(cfg.path(v)) for k, v in sorted(files.items()) if v},
    }


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_outputs(result: SimulationResult, cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "energy.json", result.energy.to_dict())
    _dump(out / "latency.json", result.latency.to_dict())
    result.trace.write_jsonl(out / "trace.jsonl")
    _dump(out / "logits.json", {"logits": result.logits,
                                "argmax": [int(np.argmax(lg)) for lg in result.logits]})
    _dump(out / "summary.json", result.summary())
    if result.masks:
        (out / "masks.txt").write_text("".join(m.to_line() + "\n" for m in result.masks), encoding="utf-8")
    _dump(out / "manifest.json", manifest(cfg))
    return out

