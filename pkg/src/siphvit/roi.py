"""Region-of-interest patch masks: MGNet scoring, thresholding, box ground truth and mIoU."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from . import tensorio
from .quant import gelu, layernorm, quantize_symmetric, softmax_rows

MGNET_PROFILES = {"default": (192, 3), "detection": (384, 6)}


@dataclass(frozen=True)
class MGNetConfig:
    patch_size: int = 16
    embed_dim: int = 192
    n_heads: int = 3
    region_threshold: float = 0.5
    image_size: tuple = (224, 224)
    channels: int = 3
    ffn_ratio: int = 4

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if not 0.0 < self.region_threshold < 1.0:
            raise ValueError(f"region_threshold must lie in (0, 1), got {self.region_threshold}")
        if self.embed_dim % self.n_heads:
            raise ValueError(f"embed_dim={self.embed_dim} is not divisible by n_heads={self.n_heads}")
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(f"image {h}x{w} is not divisible by patch size {self.patch_size}")

    @classmethod
    def profile(cls, name: str, **kw) -> "MGNetConfig":
        try:
            dim, heads = MGNET_PROFILES[name]
        except KeyError:
            raise ValueError(f"unknown MGNet profile {name!r}; choose from {sorted(MGNET_PROFILES)}") from None
        return cls(embed_dim=dim, n_heads=heads, **kw)

    @property
    def n_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.n_heads


@dataclass(eq=False)
class PatchMask:
    """Keep bits over image patches; the class token is not part of the mask."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool).reshape(-1)

    @property
    def skip_ratio(self) -> float:
        n = self.bits.size
        return float(n - int(self.bits.sum())) / n if n else 0.0

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        return isinstance(other, PatchMask) and np.array_equal(self.bits, other.bits)

    __hash__ = None

    def to_line(self) -> str:
        return "".join("1" if b else "0" for b in self.bits) + f" {self.skip_ratio:.6f}"

    @classmethod
    def from_line(cls, line: str) -> "PatchMask":
        parts = line.split()
        if not parts or set(parts[0]) - {"0", "1"}:
            raise ValueError(f"mask line must start with a bit string: {line!r}")
        mask = cls(np.array([c == "1" for c in parts[0]]))
        if len(parts) > 1 and abs(float(parts[1]) - mask.skip_ratio) > 5e-6:
            raise ValueError(f"recorded skip ratio {parts[1]} disagrees with bits ({mask.skip_ratio:.6f})")
        return mask


@dataclass
class RegionScores:
    s_region: np.ndarray  # pre-sigmoid, one per patch
    s_cls_attn: np.ndarray

    def __post_init__(self):
        if np.shape(self.s_region) != np.shape(self.s_cls_attn):
            raise ValueError("s_region and s_cls_attn must have one entry per patch")


@dataclass
class MGNetWeights:
    config: MGNetConfig
    tensors: dict = field(default_factory=dict)

    def shapes(self) -> dict:
        c = self.config
        P, L, D = c.n_patches, c.embed_dim, c.patch_dim
        H = c.ffn_ratio * L
        vec = (L,)
        return {"patch_embed": (D, L), "cls_token": vec, "pos_embed": (P + 1, L),
                "ln1_g": vec, "ln1_b": vec, "w_q": (L, L), "w_k": (L, L), "w_v": (L, L), "w_o": (L, L),
                "ln2_g": vec, "ln2_b": vec, "w_1": (L, H), "w_2": (H, L),
                "lna_g": vec, "lna_b": vec, "a_q": (L, L), "a_k": (L, L),
                "w_region": (P, P), "b_region": (P,)}

    def validate(self) -> None:
        for name, shape in self.shapes().items():
            if name not in self.tensors:
                raise ValueError(f"MGNet weights lack {name!r}")
            got = np.shape(self.tensors[name])
            if tuple(got) != shape:
                raise ValueError(f"MGNet {name} has shape {tuple(got)}, expected {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes().values())

    def save(self, path) -> None:
        tensorio.save(path, {k: np.asarray(v, dtype=np.float64) for k, v in self.tensors.items()})

    @classmethod
    def load(cls, config: MGNetConfig, path) -> "MGNetWeights":
        w = cls(config, {k: np.asarray(v, dtype=np.float64) for k, v in tensorio.load(path).items()})
        w.validate()
        return w


def toy_weights(config: MGNetConfig, seed: int = 0) -> MGNetWeights:
    """Deterministic random MGNet weights for tests and demos."""
    rng = np.random.default_rng(seed)
    t = {}
    for name, shape in MGNetWeights(config).shapes().items():
        if name.endswith("_g"):
            t[name] = np.ones(shape)
        elif name.endswith("_b") or name == "b_region":
            t[name] = np.zeros(shape)
        elif len(shape) == 2 and name != "pos_embed":
            t[name] = rng.standard_normal(shape) / math.sqrt(shape[0])
        else:
            t[name] = 0.5 * rng.standard_normal(shape)
    return MGNetWeights(config, t)


def zero_weights(config: MGNetConfig) -> MGNetWeights:
    return MGNetWeights(config, {k: np.zeros(s) for k, s in MGNetWeights(config).shapes().items()})


def _matmul(a, b, acc=None, tag=""):
    if acc is None:
        return a @ b
    # route through the optical cores at the accelerator's activation width
    out, _ = acc.matmul(acc.all_cores, acc.quantize(a), quantize_symmetric(b, acc.options.act_bits),
                        tag=tag)
    return out


def _split(x, heads):
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def mgnet_forward(patches, weights: MGNetWeights, acc=None) -> RegionScores:
    """Region scores for one frame (``n_patches x patch_dim``).

    Runs in real arithmetic unless an accelerator is given, in which case its
    matrix products go through the optical cores.
    """
    weights.validate()
    c, w = weights.config, weights
    x = np.asarray(patches, dtype=np.float64)
    if x.shape != (c.n_patches, c.patch_dim):
        raise ValueError(f"patches have shape {x.shape}, expected {(c.n_patches, c.patch_dim)}")
    heads, dh = c.n_heads, c.head_dim
    t = np.vstack([w["cls_token"][None, :], _matmul(x, w["patch_embed"], acc, "mg.embed")]) + w["pos_embed"]

    h = layernorm(t, w["ln1_g"], w["ln1_b"])
    q, k, v = (_split(_matmul(h, w[n], acc, f"mg.{n}"), heads) for n in ("w_q", "w_k", "w_v"))
    attn = softmax_rows(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
    cat = (attn @ v).transpose(1, 0, 2).reshape(t.shape)
    t = t + _matmul(cat, w["w_o"], acc, "mg.proj")
    h = layernorm(t, w["ln2_g"], w["ln2_b"])
    t = t + _matmul(gelu(_matmul(h, w["w_1"], acc, "mg.ffn1")), w["w_2"], acc, "mg.ffn2")

    h = layernorm(t, w["lna_g"], w["lna_b"])
    q_cls = _split(h[:1] @ w["a_q"], heads)  # heads x 1 x dh
    keys = _split(_matmul(h[1:], w["a_k"], acc, "mg.keys"), heads)
    s_cls = (q_cls @ keys.transpose(0, 2, 1))[:, 0, :].mean(axis=0) / math.sqrt(dh)
    s_region = s_cls @ w["w_region"] + w["b_region"]
    return RegionScores(s_region=s_region, s_cls_attn=s_cls)


def mgnet_macs(config: MGNetConfig) -> int:
    """Multiply-accumulates of one mgnet_forward call."""
    P, L, D = config.n_patches, config.embed_dim, config.patch_dim
    T = P + 1
    H = config.ffn_ratio * L
    embed = P * D * L
    block = 4 * T * L * L + 2 * T * T * L + 2 * T * L * H
    cls_attn = L * L + P * L * L + P * L
    return int(embed + block + cls_attn + P * P)


def make_mask(scores: RegionScores | np.ndarray, t_reg: float) -> PatchMask:
    """Keep patch i iff ``sigmoid(s_region_i) >= t_reg``."""
    if not 0.0 < t_reg < 1.0:
        raise ValueError(f"t_reg must lie in (0, 1), got {t_reg}")
    s = scores.s_region if isinstance(scores, RegionScores) else np.asarray(scores)
    return PatchMask(expit(np.asarray(s, dtype=np.float64)) >= t_reg)


def _box(b):
    if isinstance(b, dict):
        return float(b["x"]), float(b["y"]), float(b["w"]), float(b["h"])
    x, y, w, h = b
    return float(x), float(y), float(w), float(h)


def ground_truth_mask(bboxes: Sequence, image_size, patch_size: int) -> PatchMask:
    """Patch bit is 1 iff its footprint overlaps any box with positive area.

    Boxes are ``(x, y, w, h)`` in pixels (or dicts with those keys), x along width.
    """
    H, W = (image_size, image_size) if isinstance(image_size, int) else image_size
    p = patch_size
    if H % p or W % p:
        raise ValueError(f"image {H}x{W} is not divisible by patch size {p}")
    rows, cols = H // p, W // p
    grid = np.zeros((rows, cols), dtype=bool)
    for b in bboxes:
        x, y, w, h = _box(b)
        if w < 0 or h < 0 or x < 0 or y < 0 or x + w > W or y + h > H:
            raise ValueError(f"box {(x, y, w, h)} lies outside the {W}x{H} image")
        if w == 0 or h == 0:
            continue
        c0, c1 = int(x // p), int(math.ceil((x + w) / p))
        r0, r1 = int(y // p), int(math.ceil((y + h) / p))
        grid[r0:r1, c0:c1] = True
    return PatchMask(grid.reshape(-1))


def miou(pred: PatchMask, gt: PatchMask) -> float:
    a, b = np.asarray(getattr(pred, "bits", pred), bool), np.asarray(getattr(gt, "bits", gt), bool)
    if a.shape != b.shape:
        raise ValueError(f"mask lengths differ: {a.size} vs {b.size}")
    union = int(np.sum(a | b))
    return 1.0 if union == 0 else int(np.sum(a & b)) / union


def apply_mask(sequence, mask: PatchMask, cls_token: Optional[np.ndarray] = None):
    """Drop masked patch rows and prepend the class token.

    Returns ``(pruned, index_map)``; ``index_map[r]`` is the original patch index
    of row ``r`` and -1 for the class token.
    """
    seq = np.asarray(sequence)
    bits = np.asarray(getattr(mask, "bits", mask), dtype=bool)
    if seq.shape[0] != bits.size:
        raise ValueError(f"sequence has {seq.shape[0]} patches, mask has {bits.size}")
    keep = np.flatnonzero(bits)
    cls = np.zeros(seq.shape[1:], seq.dtype) if cls_token is None else np.asarray(cls_token)
    pruned = np.concatenate([cls[None], seq[keep]], axis=0)
    return pruned, np.concatenate([[-1], keep]).astype(np.int64)


def expand(rows, index_map, n_patches: int, fill=0.0):
    """Scatter pruned per-patch rows back to the dense grid (class token row dropped)."""
    rows = np.asarray(rows)
    index_map = np.asarray(index_map)
    out = np.full((n_patches,) + rows.shape[1:], fill, dtype=np.result_type(rows, type(fill)))
    sel = index_map >= 0
    out[index_map[sel]] = rows[sel]
    return out


def synthetic_mask(n_patches: int, skip_ratio: float, seed: int = 0) -> PatchMask:
    """Random mask keeping ``round((1 - skip_ratio) * n_patches)`` patches."""
    if not 0.0 <= skip_ratio <= 1.0:
        raise ValueError(f"skip_ratio must lie in [0, 1], got {skip_ratio}")
    kept = int(round((1.0 - skip_ratio) * n_patches))
    bits = np.zeros(n_patches, dtype=bool)
    bits[np.random.default_rng(seed).choice(n_patches, kept, replace=False)] = True
    return PatchMask(bits)


def write_masks(path, masks: Sequence[PatchMask]) -> None:
    Path(path).write_text("".join(m.to_line() + "\n" for m in masks))


def read_masks(path) -> list[PatchMask]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(PatchMask.from_line(line))
        except ValueError as e:
            raise ValueError(f"{path}:{i}: {e}") from None
    return out


def read_boxes(path) -> dict[int, list[tuple]]:
    """Bounding boxes from a JSON list of ``{frame, x, y, w, h}``, grouped by frame."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON list of boxes")
    frames: dict[int, list[tuple]] = {}
    for i, b in enumerate(data):
        missing = {"frame", "x", "y", "w", "h"} - set(b)
        if missing:
            raise ValueError(f"{path}: box {i} lacks {sorted(missing)}")
        frames.setdefault(int(b["frame"]), []).append(_box(b))
    return frames
