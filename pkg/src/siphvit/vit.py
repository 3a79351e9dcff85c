"""ViT model description: configuration, presets, weights and patchification."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensorio
from .quant import QuantTensor, quantize_symmetric

# Standard ViT family dimensions (embed dim, heads, depth).
PRESETS = {
    "tiny": (192, 3, 12),
    "small": (384, 6, 12),
    "base": (768, 12, 12),
    "large": (1024, 16, 24),
}


@dataclass(frozen=True)
class ViTConfig:
    d_m: int = 192
    heads: int = 3
    depth: int = 12
    patch_size: int = 16
    image_size: tuple = (224, 224)
    ffn_ratio: int = 4
    channels: int = 3
    n_classes: int = 10
    bits: int = 8
    gelu_form: str = "tanh"
    ln_eps: float = 1e-6
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "image_size", tuple(self.image_size))
        if self.d_m % self.heads:
            raise ValueError(f"d_m={self.d_m} is not divisible by heads={self.heads}")
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(f"image {h}x{w} is not divisible by patch size {self.patch_size}")

    @property
    def d_k(self) -> int:
        return self.d_m // self.heads

    @property
    def hidden(self) -> int:
        return self.ffn_ratio * self.d_m

    @property
    def n_patches(self) -> int:
        h, w = self.image_size
        return (h // self.patch_size) * (w // self.patch_size)

    @property
    def n_tokens(self) -> int:
        return self.n_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def preset(name: str, image_size: int | tuple = 224, **overrides) -> ViTConfig:
    try:
        d_m, heads, depth = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    return ViTConfig(d_m=d_m, heads=heads, depth=depth, image_size=image_size, name=name, **overrides)


@dataclass
class BlockWeights:
    w_q: list  # per head, d_m x d_k
    w_k: list
    w_v: list
    w_o: QuantTensor  # d_m x d_m
    w_1: QuantTensor  # d_m x hidden
    w_2: QuantTensor  # hidden x d_m
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class ViTModel:
    config: ViTConfig
    patch_embed: QuantTensor  # patch_dim x d_m
    cls_token: np.ndarray  # d_m
    pos_embed: np.ndarray  # n_tokens x d_m
    blocks: list = field(default_factory=list)
    norm_g: Optional[np.ndarray] = None
    norm_b: Optional[np.ndarray] = None
    head: Optional[QuantTensor] = None  # d_m x n_classes

    def validate(self) -> None:
        c = self.config
        _expect("patch_embed", self.patch_embed.shape, (c.patch_dim, c.d_m))
        _expect("cls_token", self.cls_token.shape, (c.d_m,))
        _expect("pos_embed", self.pos_embed.shape, (c.n_tokens, c.d_m))
        _expect("head", self.head.shape, (c.d_m, c.n_classes))
        if len(self.blocks) != c.depth:
            raise ValueError(f"model has {len(self.blocks)} blocks, config says {c.depth}")
        for i, b in enumerate(self.blocks):
            for nm in ("w_q", "w_k", "w_v"):
                ws = getattr(b, nm)
                if len(ws) != c.heads:
                    raise ValueError(f"block {i} {nm}: {len(ws)} heads, expected {c.heads}")
                for w in ws:
                    _expect(f"block {i} {nm}", w.shape, (c.d_m, c.d_k))
            _expect(f"block {i} w_o", b.w_o.shape, (c.d_m, c.d_m))
            _expect(f"block {i} w_1", b.w_1.shape, (c.d_m, c.hidden))
            _expect(f"block {i} w_2", b.w_2.shape, (c.hidden, c.d_m))
        for t in self.quant_tensors():
            if t.bits != c.bits:
                raise ValueError(f"weight quantized at {t.bits} bits, config says {c.bits}")

    def quant_tensors(self):
        yield self.patch_embed
        for b in self.blocks:
            yield from b.w_q
            yield from b.w_k
            yield from b.w_v
            yield b.w_o
            yield b.w_1
            yield b.w_2
        yield self.head

    def to_tensors(self) -> dict:
        t = {"patch_embed": self.patch_embed, "cls_token": self.cls_token,
             "pos_embed": self.pos_embed, "norm_g": self.norm_g, "norm_b": self.norm_b,
             "head": self.head}
        for i, b in enumerate(self.blocks):
            for nm in ("w_q", "w_k", "w_v"):
                for h, w in enumerate(getattr(b, nm)):
                    t[f"blocks.{i}.{nm}.{h}"] = w
            for nm in ("w_o", "w_1", "w_2", "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                t[f"blocks.{i}.{nm}"] = getattr(b, nm)
        return t

    @classmethod
    def from_tensors(cls, config: ViTConfig, t: dict) -> "ViTModel":
        blocks = []
        for i in range(config.depth):
            per_head = {nm: [t[f"blocks.{i}.{nm}.{h}"] for h in range(config.heads)]
                        for nm in ("w_q", "w_k", "w_v")}
            rest = {nm: t[f"blocks.{i}.{nm}"] for nm in
                    ("w_o", "w_1", "w_2", "ln1_g", "ln1_b", "ln2_g", "ln2_b")}
            blocks.append(BlockWeights(**per_head, **rest))
        model = cls(config, t["patch_embed"], t["cls_token"], t["pos_embed"], blocks,
                    t["norm_g"], t["norm_b"], t["head"])
        model.validate()
        return model

    def save(self, path) -> None:
        tensorio.save(path, self.to_tensors())

    @classmethod
    def load(cls, config: ViTConfig, path) -> "ViTModel":
        return cls.from_tensors(config, tensorio.load(path))


def _expect(name, got, want):
    if tuple(got) != tuple(want):
        raise ValueError(f"{name} has shape {tuple(got)}, expected {tuple(want)}")


def random_model(config: ViTConfig, seed: int = 0) -> ViTModel:
    """Seeded random weights with 1/sqrt(fan_in) scaling, quantized per tensor."""
    rng = np.random.default_rng(seed)
    c = config

    def lin(fan_in, fan_out):
        return quantize_symmetric(rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in), c.bits)

    blocks = []
    for _ in range(c.depth):
        blocks.append(BlockWeights(
            w_q=[lin(c.d_m, c.d_k) for _ in range(c.heads)],
            w_k=[lin(c.d_m, c.d_k) for _ in range(c.heads)],
            w_v=[lin(c.d_m, c.d_k) for _ in range(c.heads)],
            w_o=lin(c.d_m, c.d_m),
            w_1=lin(c.d_m, c.hidden),
            w_2=lin(c.hidden, c.d_m),
            ln1_g=1.0 + 0.1 * rng.standard_normal(c.d_m),
            ln1_b=0.1 * rng.standard_normal(c.d_m),
            ln2_g=1.0 + 0.1 * rng.standard_normal(c.d_m),
            ln2_b=0.1 * rng.standard_normal(c.d_m),
        ))
    return ViTModel(
        c,
        patch_embed=lin(c.patch_dim, c.d_m),
        cls_token=rng.standard_normal(c.d_m),
        pos_embed=0.5 * rng.standard_normal((c.n_tokens, c.d_m)),
        blocks=blocks,
        norm_g=1.0 + 0.1 * rng.standard_normal(c.d_m),
        norm_b=0.1 * rng.standard_normal(c.d_m),
        head=lin(c.d_m, c.n_classes),
    )


def placeholder_model(config: ViTConfig) -> ViTModel:
    """Shape-only model (zero-stride zero arrays) for counts-only simulation."""
    c = config

    def q(*shape):
        return QuantTensor(np.broadcast_to(np.int8(0), shape), 1.0, c.bits)

    def r(*shape):
        return np.broadcast_to(0.0, shape)

    blocks = [BlockWeights(
        w_q=[q(c.d_m, c.d_k)] * c.heads, w_k=[q(c.d_m, c.d_k)] * c.heads,
        w_v=[q(c.d_m, c.d_k)] * c.heads, w_o=q(c.d_m, c.d_m),
        w_1=q(c.d_m, c.hidden), w_2=q(c.hidden, c.d_m),
        ln1_g=r(c.d_m), ln1_b=r(c.d_m), ln2_g=r(c.d_m), ln2_b=r(c.d_m),
    ) for _ in range(c.depth)]
    return ViTModel(c, q(c.patch_dim, c.d_m), r(c.d_m), r(c.n_tokens, c.d_m), blocks,
                    r(c.d_m), r(c.d_m), q(c.d_m, c.n_classes))


def zero_model(config: ViTConfig) -> ViTModel:
    """All weights zero and zero layernorm gains: every block is the identity."""
    m = placeholder_model(config)
    m.cls_token = np.zeros(config.d_m)
    m.pos_embed = np.zeros((config.n_tokens, config.d_m))
    return m


def patchify(image: np.ndarray, patch_size: int) -> np.ndarray:
    """``H x W x C`` (or ``H x W``) image to ``n_patches x (p*p*C)`` rows, raster order."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, ch = img.shape
    p = patch_size
    if h % p or w % p:
        raise ValueError(f"image {h}x{w} is not divisible by patch size {p}")
    return (img.reshape(h // p, p, w // p, p, ch).transpose(0, 2, 1, 3, 4).reshape(-1, p * p * ch))


def random_patches(config: ViTConfig, seed: int = 0, n: int | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((config.n_patches if n is None else n, config.patch_dim))
