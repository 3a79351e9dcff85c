"""Symmetric integer quantization and the electronic-domain reference math.

Everything in this module is a pure function of its inputs. ``QuantTensor``
is the numeric currency passed between the optical cores, and
``matmul_exact`` is the golden integer oracle the optical path is checked
against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GELU_FORMS = ("tanh", "erf")


def qmax(bits: int) -> int:
    """Largest code magnitude of a symmetric ``bits``-wide quantizer."""
    return (1 << (bits - 1)) - 1


def _code_dtype(bits: int):
    if bits <= 8:
        return np.int8
    if bits <= 16:
        return np.int16
    if bits <= 32:
        return np.int32
    return np.int64


@dataclass(frozen=True)
class QuantTensor:
    """Integer codes with a single symmetric scale: ``value = code * scale``."""

    codes: np.ndarray
    scale: float
    bits: int

    def __post_init__(self):
        if self.bits < 2:
            raise ValueError(f"bits must be >= 2, got {self.bits}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        codes = np.asarray(self.codes)
        if codes.dtype.kind not in "iu":
            raise TypeError(f"codes must be integers, got dtype {codes.dtype}")
        if codes.size:
            lim = qmax(self.bits)
            lo, hi = int(codes.min()), int(codes.max())
            if lo < -lim or hi > lim:
                raise ValueError(
                    f"codes [{lo}, {hi}] outside symmetric {self.bits}-bit range +/-{lim}"
                )
        if codes.flags.writeable:
            codes = codes.view()
            codes.flags.writeable = False
        object.__setattr__(self, "codes", codes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    @property
    def T(self) -> "QuantTensor":
        return QuantTensor(self.codes.T, self.scale, self.bits)

    def __getitem__(self, idx) -> "QuantTensor":
        return QuantTensor(self.codes[idx], self.scale, self.bits)


@dataclass(frozen=True)
class AccumTensor:
    """Wide accumulator output of a MAC array; ``value = values * scale``.

    ``values`` is int64 for exact integer results and float64 once ADC
    quantization or crosstalk noise has been applied.
    """

    values: np.ndarray
    scale: float

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def real(self) -> np.ndarray:
        return self.values * self.scale


def accumulator_bits(bits: int, k: int) -> int:
    """Accumulator width needed for a ``k``-term dot product of ``bits``-wide codes.

    Never narrower than 32 bits; widened when ``2*bits + ceil(log2 k)`` would not
    fit in the 31 magnitude bits of an int32.
    """
    need = 2 * bits + max(0, math.ceil(math.log2(max(k, 1)))) if k > 0 else 2 * bits
    return 32 if need <= 31 else 64


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_symmetric(x, bits: int = 8) -> QuantTensor:
    """Per-tensor symmetric quantization with round-half-away-from-zero."""
    if bits < 2:
        raise ValueError(f"bits must be >= 2, got {bits}")
    x = np.asarray(x, dtype=np.float64)
    if x.size:
        finite = np.isfinite(x)
        if not finite.all():
            bad = tuple(int(i) for i in np.argwhere(~finite)[0])
            raise ValueError(f"non-finite value {x[bad]} at index {bad}")
    lim = qmax(bits)
    peak = float(np.max(np.abs(x))) if x.size else 0.0
    scale = peak / lim
    if not scale > 0:
        scale = 1.0  # zero or subnormal peak
    codes = np.clip(_round_half_away(x / scale), -lim, lim).astype(_code_dtype(bits))
    return QuantTensor(codes, scale, bits)


def dequantize(t: QuantTensor) -> np.ndarray:
    return t.codes.astype(np.float64) * t.scale


def matmul_exact(a: QuantTensor, b: QuantTensor) -> AccumTensor:
    """Exact integer matrix product of two code matrices."""
    if a.codes.ndim != 2 or b.codes.ndim != 2:
        raise ValueError("matmul_exact expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    acc = a.codes.astype(np.int64) @ b.codes.astype(np.int64)
    return AccumTensor(acc, a.scale * b.scale)


def softmax_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gelu(x, form: str = "tanh") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if form == "tanh":
        return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))
    if form == "erf":
        from scipy.special import erf

        return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))
    raise ValueError(f"unknown GELU form {form!r}; expected one of {GELU_FORMS}")


# Upper bound on |d gelu/dx| for both forms (max is ~1.129 near x = 1.5).
GELU_LIPSCHITZ = 1.13


def layernorm(x, gamma=None, beta=None, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    y = (x - mu) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def fold_scale(w: QuantTensor, d_k: int) -> QuantTensor:
    """Re-quantize ``w / sqrt(d_k)`` at the same width.

    The division lands in the weights so the optical core never runs a
    separate scaling pass before softmax.
    """
    if d_k < 1:
        raise ValueError(f"d_k must be >= 1, got {d_k}")
    if d_k == 1:
        return w
    return quantize_symmetric(dequantize(w) / math.sqrt(d_k), w.bits)
