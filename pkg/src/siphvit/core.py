"""Functional and counting model of one optical processing core.

A core has ``n_wavelengths`` VCSEL channels broadcast into ``n_arms`` waveguide
arms. Each arm holds one column of weight MRs and ends in a balanced
photodetector, so one optical cycle yields one dot product per active arm.
Signed weights use two rails (positive and negative weights on separate
rails, subtracted at the BPD).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .device import WavelengthGrid, adc_quantize, crosstalk_matrix, dac_quantize, default_grid
from .quant import AccumTensor, QuantTensor, qmax

NOISE_MODES = ("off", "worst_case", "stochastic")
ADC_FULLSCALE_MODES = ("conservative", "calibrated")


@dataclass(frozen=True)
class OpticalCoreConfig:
    n_wavelengths: int = 32
    n_arms: int = 64
    grid: Optional[WavelengthGrid] = None
    q_factor: float = 5000.0
    adc_bits: Optional[int] = 8  # None = ideal converter
    dac_bits: Optional[int] = 8
    noise_mode: str = "worst_case"
    seed: int = 0
    signed_encoding: str = "two_rail"
    adc_fullscale: str = "conservative"
    adc_percentile: float = 99.9

    def __post_init__(self):
        if self.grid is None:
            object.__setattr__(self, "grid", default_grid(self.n_wavelengths, self.q_factor))
        if self.grid.n_channels != self.n_wavelengths:
            raise ValueError(
                f"grid has {self.grid.n_channels} channels, core has {self.n_wavelengths} wavelengths"
            )
        if self.n_arms < 1:
            raise ValueError("n_arms must be >= 1")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.adc_fullscale not in ADC_FULLSCALE_MODES:
            raise ValueError(f"adc_fullscale must be one of {ADC_FULLSCALE_MODES}")
        if self.signed_encoding != "two_rail":
            raise ValueError("only two_rail signed encoding is modeled")

    @property
    def out_bytes(self) -> int:
        return 4 if self.adc_bits is None else math.ceil(self.adc_bits / 8)


@dataclass
class TileStats:
    optical_cycles: int = 0
    tuning_events: int = 0
    mr_writes: int = 0
    adc_conversions: int = 0
    dac_conversions: int = 0
    vcsel_symbols: int = 0
    bpd_samples: int = 0
    electronic_adds: int = 0
    memory_reads: int = 0  # bytes
    memory_writes: int = 0  # bytes
    adc_saturations: int = 0

    def __add__(self, other: "TileStats") -> "TileStats":
        return TileStats(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class WeightBank:
    codes: np.ndarray  # n_wavelengths x n_arms, DAC-quantized weight codes
    scale: float = 1.0
    weight_qmax: int = 127
    rows: int = 0
    arms: int = 0
    generation: int = 0


@dataclass
class TileResult:
    out: AccumTensor
    stats: TileStats
    chunk_writes: np.ndarray  # (arm groups, wavelength chunks) MR writes per tune


def n_chunks(size: int, width: int) -> int:
    return -(-size // width)


def tile_counts(n: int, d: int, m: int, cfg: OpticalCoreConfig, in_bytes: int = 1, w_bytes: int = 1) -> TileStats:
    """Counters of a tiled ``n x d @ d x m`` product, assuming every MR is rewritten."""
    c = n_chunks(d, cfg.n_wavelengths)
    g = n_chunks(m, cfg.n_arms)
    vcsel = n * d * g
    return TileStats(
        optical_cycles=n * c * g,
        tuning_events=c * g,
        mr_writes=d * m,
        adc_conversions=n * c * m,
        dac_conversions=vcsel + d * m,
        vcsel_symbols=vcsel,
        bpd_samples=n * c * m,
        electronic_adds=n * m * (c - 1),
        memory_reads=d * m * w_bytes + vcsel * in_bytes,
        memory_writes=n * c * m * cfg.out_bytes,
    )


class OpticalCore:
    """Stateful core: a weight bank mutated by :meth:`tune_bank`.

    One writer per core; counters accumulate in :attr:`stats`.
    """

    def __init__(self, config: OpticalCoreConfig | None = None, core_id: str = "C1"):
        self.config = config or OpticalCoreConfig()
        self.core_id = core_id
        cfg = self.config
        self.bank = WeightBank(np.zeros((cfg.n_wavelengths, cfg.n_arms)))
        self.stats = TileStats()
        self._phi = crosstalk_matrix(cfg.grid, cfg.q_factor)
        np.fill_diagonal(self._phi, 0.0)
        self._rng = np.random.default_rng(cfg.seed)

    # -- single-bank operations -------------------------------------------------

    def _dac(self, codes: np.ndarray, weight_qmax: int) -> np.ndarray:
        q, _ = dac_quantize(codes, self.config.dac_bits, float(weight_qmax))
        return q

    def tune_bank(self, w_chunk: QuantTensor) -> int:
        """Write a ``rows x arms`` weight chunk (one column per arm); returns MR writes."""
        cfg = self.config
        rows, arms = w_chunk.shape
        if rows > cfg.n_wavelengths or arms > cfg.n_arms:
            raise ValueError(
                f"chunk {rows}x{arms} exceeds bank {cfg.n_wavelengths}x{cfg.n_arms}"
            )
        wq = qmax(w_chunk.bits)
        new = self._dac(w_chunk.codes.astype(np.float64), wq)
        region = self.bank.codes[:rows, :arms]
        writes = int(np.count_nonzero(region != new))
        region[...] = new
        b = self.bank
        b.scale, b.weight_qmax, b.rows, b.arms = w_chunk.scale, wq, rows, arms
        b.generation += 1
        s = self.stats
        s.tuning_events += 1
        s.mr_writes += writes
        s.dac_conversions += writes
        s.memory_reads += rows * arms * _code_bytes(w_chunk.bits)
        return writes

    def optical_vvm(self, x_chunk: QuantTensor, full_scale: float | None = None) -> AccumTensor:
        """One optical cycle: every active arm emits one dot product."""
        cfg, b = self.config, self.bank
        if b.generation == 0:
            raise RuntimeError(f"core {self.core_id}: weight bank was never tuned")
        x = x_chunk.codes.astype(np.float64).ravel()
        if x.size > cfg.n_wavelengths:
            raise ValueError(f"chunk length {x.size} exceeds {cfg.n_wavelengths} wavelengths")
        if x.size > b.rows:
            raise ValueError(f"chunk length {x.size} exceeds tuned rows {b.rows}")
        w = b.codes[: x.size, : b.arms]
        pos = x @ np.where(w > 0, w, 0.0)
        neg = x @ np.where(w < 0, -w, 0.0)
        acc = pos - neg
        if cfg.noise_mode != "off" and x.size:
            leak = self._phi[: x.size, : x.size] @ np.abs(x)  # per victim channel
            terms = leak[:, None] * np.abs(w)
            if cfg.noise_mode == "stochastic":
                terms = terms * np.where(self._rng.random(terms.shape) < 0.5, -1.0, 1.0)
            acc = acc + terms.sum(axis=0)
        sat = 0
        if cfg.adc_bits is not None and x.size:
            if full_scale is None:
                full_scale = x.size * qmax(x_chunk.bits) * b.weight_qmax
            acc, sat = adc_quantize(acc, cfg.adc_bits, full_scale)
        out = np.zeros(cfg.n_arms)
        out[: b.arms] = acc
        s = self.stats
        s.optical_cycles += 1
        s.vcsel_symbols += x.size
        s.dac_conversions += x.size
        s.bpd_samples += b.arms
        s.adc_conversions += b.arms
        s.adc_saturations += sat
        s.memory_reads += x.size * _code_bytes(x_chunk.bits)
        s.memory_writes += b.arms * cfg.out_bytes
        exact = cfg.noise_mode == "off" and cfg.adc_bits is None
        return AccumTensor(np.rint(out).astype(np.int64) if exact else out, x_chunk.scale * b.scale)

    def broadcast_check(self, chunk_len: int | None = None) -> dict:
        """Symbols and samples per cycle for the current bank: each VCSEL symbol is
        shared by every active arm, so symbols do not scale with arm count."""
        b = self.bank
        if b.generation == 0:
            raise RuntimeError(f"core {self.core_id}: weight bank was never tuned")
        length = b.rows if chunk_len is None else chunk_len
        return {
            "vcsel_symbols": length,
            "bpd_samples": b.arms if length else 0,
            "arms_per_symbol": b.arms,
            "ok": length <= self.config.n_wavelengths,
        }

    # -- chunked matrix product ------------------------------------------------

    def tiled_matmul(self, x: QuantTensor, w: QuantTensor, functional: bool = True) -> TileResult:
        """``x @ w`` with ``w`` split into wavelength chunks x arm groups.

        For each arm group the bank is tuned once per wavelength chunk, every
        row of ``x`` is streamed through it, and the ADC-converted partials are
        summed electronically.
        """
        cfg = self.config
        n, d = x.shape
        d2, m = w.shape
        if d != d2:
            raise ValueError(f"inner dimensions disagree: {x.shape} x {w.shape}")
        if n == 0 or d == 0 or m == 0:
            raise ValueError(f"empty operand: {x.shape} x {w.shape}")
        L, A = cfg.n_wavelengths, cfg.n_arms
        C, G = n_chunks(d, L), n_chunks(m, A)
        stats = tile_counts(n, d, m, cfg, _code_bytes(x.bits), _code_bytes(w.bits))
        wq = qmax(w.bits)
        scale = x.scale * w.scale
        if not functional:
            writes = np.array(
                [[min(L, d - c * L) * min(A, m - g * A) for c in range(C)] for g in range(G)],
                dtype=np.int64,
            )
            stats.mr_writes = int(writes.sum())
            stats.dac_conversions = stats.vcsel_symbols + stats.mr_writes
            self._commit(stats, C * G)
            return TileResult(AccumTensor(np.broadcast_to(np.int64(0), (n, m)), scale), stats, writes)

        xp = np.zeros((n, C * L))
        xp[:, :d] = x.codes
        xc = xp.reshape(n, C, L).transpose(1, 0, 2)  # C, n, L
        wp = np.zeros((C * L, G * A))
        wp[:d, :m] = self._dac(w.codes.astype(np.float64), wq)
        noisy = cfg.noise_mode != "off"
        if noisy:
            leak = xc.__abs__() @ self._phi[:L, :L].T  # C, n, L ; zero rows beyond d leak nothing
        lens = np.array([min(L, d - c * L) for c in range(C)])
        out = np.zeros((n, G * A))
        writes = np.zeros((G, C), dtype=np.int64)
        saturations = 0
        bank = self.bank.codes
        for g in range(G):
            arms = min(A, m - g * A)
            wg = wp[:, g * A:g * A + A].reshape(C, L, A)[:, :, :arms]
            for c in range(C):
                rows = lens[c]
                region = bank[:rows, :arms]
                new = wg[c, :rows]
                writes[g, c] = np.count_nonzero(region != new)
                region[...] = new
            part = xc @ wg  # C, n, arms
            if cfg.noise_mode == "worst_case":
                part = part + leak @ np.abs(wg)
            elif cfg.noise_mode == "stochastic":
                for c in range(C):
                    rows = lens[c]
                    aw = np.abs(wg[c, :rows])
                    for r in range(n):
                        signs = np.where(self._rng.random((rows, arms)) < 0.5, -1.0, 1.0)
                        part[c, r] += (leak[c, r, :rows, None] * aw * signs).sum(axis=0)
            if cfg.adc_bits is not None:
                if cfg.adc_fullscale == "calibrated":
                    fs = np.full(C, max(float(np.percentile(np.abs(part), cfg.adc_percentile)), 1.0))
                else:
                    fs = lens * qmax(x.bits) * wq
                for c in range(C):
                    part[c], sat = adc_quantize(part[c], cfg.adc_bits, float(fs[c]))
                    saturations += sat
            out[:, g * A:g * A + arms] = part.sum(axis=0)
        self.bank.scale, self.bank.weight_qmax = w.scale, wq
        self.bank.rows, self.bank.arms = int(lens[-1]), min(A, m - (G - 1) * A)
        stats.mr_writes = int(writes.sum())
        stats.dac_conversions = stats.vcsel_symbols + stats.mr_writes
        stats.adc_saturations = saturations
        self._commit(stats, C * G)
        out = out[:, :m]
        if not noisy and cfg.adc_bits is None:
            out = np.rint(out).astype(np.int64)
        return TileResult(AccumTensor(out, scale), stats, writes)

    def _commit(self, stats: TileStats, tunes: int) -> None:
        self.bank.generation += tunes
        self.stats = self.stats + stats


def _code_bytes(bits: int) -> int:
    return math.ceil(bits / 8)
