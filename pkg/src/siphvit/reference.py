"""Real-arithmetic ViT reference with worst-case error bounds for the optical path.

The reference uses the model's dequantized weights and never rounds an
activation. When tracked, every matrix carries per-row bounds ``r_i >=
||optical_i - reference_i||_2``. These bound activation re-quantization,
scale folding, ADC rounding and worst-case microring crosstalk. They pass
through products via operator norms, through layernorm as ``2 r / (sigma -
r / sqrt(d))``, through softmax as 1-Lipschitz in the 2-norm, and through GELU
with its Lipschitz constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import OpticalCoreConfig
from .device import resolution
from .quant import (GELU_LIPSCHITZ, QuantTensor, dequantize, fold_scale, gelu, layernorm, qmax,
                    quantize_symmetric, softmax_rows)
from .vit import ViTModel


@dataclass(frozen=True)
class ErrorModel:
    act_bits: int = 8
    adc_bits: Optional[int] = None
    dac_bits: Optional[int] = None
    crosstalk: bool = False
    levels: float = math.inf  # MR resolution of the grid
    softmax_as_weights: bool = True

    @classmethod
    def for_core(cls, cfg: OpticalCoreConfig, act_bits: int = 8, softmax_as_weights: bool = True) -> "ErrorModel":
        if cfg.adc_bits is not None and cfg.adc_fullscale != "conservative":
            raise ValueError("error bounds assume the conservative ADC full scale")
        return cls(act_bits, cfg.adc_bits, cfg.dac_bits, cfg.noise_mode != "off",
                   resolution(cfg.grid, cfg.q_factor), softmax_as_weights)


EXACT = ErrorModel()


class Bounded:
    """Reference matrix ``v`` with per-row error norms ``r``."""

    __slots__ = ("v", "r")

    def __init__(self, v, r=None):
        self.v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        self.r = np.zeros(self.v.shape[0]) if r is None else np.asarray(r, dtype=np.float64)

    @property
    def frobenius(self) -> float:
        return float(np.sqrt(np.sum(self.r**2)))

    def __add__(self, other: "Bounded") -> "Bounded":
        return Bounded(self.v + other.v, self.r + other.r)

    def rows(self, idx) -> "Bounded":
        return Bounded(self.v[idx], self.r[idx])


@dataclass
class Operand:
    """One side of an optical product: bounded value, scale upper bound, code width."""

    x: Bounded
    scale: float
    bits: int


def quantized(x: Bounded, bits: int) -> Operand:
    """Bound after the optical path re-quantizes its own copy of ``x`` per tensor."""
    peak = float(np.max(np.abs(x.v).max(axis=1) + x.r)) if x.v.size else 0.0
    s_hi = peak / qmax(bits) if peak > 0 else 1.0
    if not x.r.any():
        q = quantize_symmetric(x.v, bits)
        if np.array_equal(dequantize(q), x.v):
            # already on the grid: re-quantization reproduces it exactly
            return Operand(x, q.scale, bits)
    return Operand(Bounded(x.v, x.r + s_hi / 2 * math.sqrt(x.v.shape[1])), s_hi, bits)


def weight(w: QuantTensor, em: ErrorModel) -> Operand:
    r = np.zeros(w.shape[0])
    if em.dac_bits is not None and em.dac_bits != w.bits:
        r += w.scale * (qmax(w.bits) / qmax(em.dac_bits)) / 2 * math.sqrt(w.shape[1])
    return Operand(Bounded(dequantize(w), r), w.scale, w.bits)


def optical_product(a: Operand, b: Operand, em: ErrorModel, streamed: str = "a") -> Bounded:
    """Bound on ``a @ b`` computed by a tiled core.

    ``streamed="a"`` streams rows of ``a`` through a bank holding ``b``;
    ``streamed="b"`` computes ``(b^T a^T)^T``, streaming ``b^T`` through ``a^T``.
    """
    av, bv = a.x.v, b.x.v
    d = av.shape[1]
    f_b = b.x.frobenius
    op_b = float(np.linalg.norm(bv, 2)) if bv.size else 0.0
    row_a = np.linalg.norm(av, axis=1)
    with np.errstate(invalid="ignore"):
        r = a.x.r * op_b + row_a * f_b + a.x.r * f_b
    r = np.where(np.isnan(r), np.inf, r)  # inf * 0 from an already vacuous bound
    extra = np.zeros((av.shape[0], bv.shape[1]))
    qa, qb = qmax(a.bits), qmax(b.bits)
    if em.adc_bits is not None:
        # lsb/2 per wavelength chunk with lsb = len * qa * qb / qmax(adc)
        extra += d * qa * qb / (2 * qmax(em.adc_bits)) * a.scale * b.scale
    if em.crosstalk and math.isfinite(em.levels):
        if streamed == "a":
            col = np.abs(bv).sum(axis=0) + math.sqrt(d) * f_b
            extra += (qa * a.scale / em.levels) * col[None, :]
        else:
            row = np.abs(av).sum(axis=1) + math.sqrt(d) * a.x.r
            extra += (qb * b.scale / em.levels) * row[:, None]
    r = r + np.linalg.norm(extra, axis=1)
    return Bounded(av @ bv, r)


def product_bound(x: QuantTensor, w: QuantTensor, em: ErrorModel) -> np.ndarray:
    """Elementwise bound on ``|optical(x @ w) - dequantize(x) @ dequantize(w)|`` for on-grid operands."""
    d = x.shape[1]
    qa, qb = qmax(x.bits), qmax(w.bits)
    bound = np.zeros((x.shape[0], w.shape[1]))
    if em.dac_bits is not None and em.dac_bits != w.bits:
        step = w.scale * qb / qmax(em.dac_bits)
        bound += np.abs(dequantize(x)).sum(axis=1)[:, None] * step / 2
    if em.adc_bits is not None:
        bound += d * qa * qb / (2 * qmax(em.adc_bits)) * x.scale * w.scale
    if em.crosstalk and math.isfinite(em.levels):
        bound += (qa * x.scale / em.levels) * np.abs(dequantize(w)).sum(axis=0)[None, :]
    return bound


def layernorm_bounded(x: Bounded, gamma, beta, eps: float) -> Bounded:
    d = x.v.shape[1]
    sigma = np.sqrt(x.v.var(axis=1) + eps)
    denom = sigma - x.r / math.sqrt(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        ry = np.where(denom > 0, 2 * x.r / denom, np.inf)
    g = np.ones(d) if gamma is None else np.asarray(gamma)
    y = layernorm(x.v, g, beta, eps)
    return Bounded(y, ry * float(np.max(np.abs(g))))


def softmax_bounded(x: Bounded) -> Bounded:
    # two probability vectors are at most sqrt(2) apart
    return Bounded(softmax_rows(x.v), np.minimum(x.r, math.sqrt(2)))


def gelu_bounded(x: Bounded, form: str) -> Bounded:
    return Bounded(gelu(x.v, form), GELU_LIPSCHITZ * x.r)


def fold_operand(w_k: QuantTensor, em: ErrorModel) -> Operand:
    """``W_K^T / sqrt(d_k)`` with the fold's re-quantization error against the exact division."""
    d_k = w_k.shape[1]
    folded = fold_scale(w_k.T, d_k)
    exact = dequantize(w_k).T / math.sqrt(d_k)
    r = np.linalg.norm(dequantize(folded) - exact, axis=1) + weight(folded, em).x.r
    return Operand(Bounded(exact, r), folded.scale, folded.bits)


def attention_scores(h: Bounded, w_q: QuantTensor, w_k: QuantTensor, em: ErrorModel = EXACT):
    """Scaled scores ``(h W_Q)(h W_K)^T / sqrt(d_k)`` along the decomposed C1-C3 route.

    Returns ``(scores, quantized h operand)``.
    """
    bits = em.act_bits
    hq = quantized(h, bits)
    q = optical_product(hq, weight(w_q, em), em)
    t = optical_product(quantized(q, bits), fold_operand(w_k, em), em)
    h_t = Operand(Bounded(hq.x.v.T, _transpose_rows(hq.x)), hq.scale, hq.bits)
    return optical_product(quantized(t, bits), h_t, em), hq


def _transpose_rows(x: Bounded) -> np.ndarray:
    # rows of the transpose are columns of x; each is bounded by the total
    return np.full(x.v.shape[1], x.frobenius)


def head(h: Bounded, w_q, w_k, w_v, em: ErrorModel = EXACT) -> Bounded:
    bits = em.act_bits
    a, hq = attention_scores(h, w_q, w_k, em)
    s = softmax_bounded(a)
    v = optical_product(hq, weight(w_v, em), em)
    return optical_product(quantized(s, bits), quantized(v, bits), em,
                           streamed="b" if em.softmax_as_weights else "a")


def linear(x: Bounded, w: QuantTensor, em: ErrorModel) -> Bounded:
    return optical_product(quantized(x, em.act_bits), weight(w, em), em)


def block(x: Bounded, bw, config, em: ErrorModel = EXACT) -> Bounded:
    h = layernorm_bounded(x, bw.ln1_g, bw.ln1_b, config.ln_eps)
    outs = [head(h, bw.w_q[i], bw.w_k[i], bw.w_v[i], em) for i in range(config.heads)]
    cat = Bounded(np.concatenate([o.v for o in outs], axis=1),
                  np.sqrt(np.sum([o.r**2 for o in outs], axis=0)))
    x1 = x + linear(cat, bw.w_o, em)
    h2 = layernorm_bounded(x1, bw.ln2_g, bw.ln2_b, config.ln_eps)
    g = gelu_bounded(linear(h2, bw.w_1, em), config.gelu_form)
    return x1 + linear(g, bw.w_2, em)


def embed(model: ViTModel, patches, positions, em: ErrorModel = EXACT) -> Bounded:
    c = model.config
    rows = np.concatenate([[0], np.asarray(positions, dtype=np.int64) + 1])
    if len(rows) == 1:
        return Bounded((model.cls_token + model.pos_embed[0])[None, :])
    emb = linear(Bounded(patches), model.patch_embed, em)
    return Bounded(np.vstack([model.cls_token[None, :], emb.v]) + model.pos_embed[rows],
                   np.concatenate([[0.0], emb.r]))


def forward(model: ViTModel, patches, positions=None, em: ErrorModel = EXACT):
    """Reference logits and a per-logit bound on the optical simulation's deviation."""
    c = model.config
    patches = np.asarray(patches, dtype=np.float64).reshape(-1, c.patch_dim)
    if positions is None:
        positions = np.arange(patches.shape[0])
    x = embed(model, patches, positions, em)
    for bw in model.blocks:
        x = block(x, bw, c, em)
    cls = layernorm_bounded(x.rows(slice(0, 1)), model.norm_g, model.norm_b, c.ln_eps)
    w = dequantize(model.head)
    logits = (cls.v @ w)[0]
    bound = cls.r[0] * np.linalg.norm(w, axis=0)
    return logits, bound


def reference_logits(model: ViTModel, patches, positions=None) -> np.ndarray:
    return forward(model, patches, positions)[0]
