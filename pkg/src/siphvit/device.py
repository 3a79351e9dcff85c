"""Analytic microring-resonator model: resonance, linewidth, crosstalk, resolution.

Crosstalk follows the Lorentzian overlap ``phi(i, j) = delta^2 / ((l_i - l_j)^2 +
delta^2)`` with ``delta = l / (2 Q)`` evaluated at the victim channel ``i``.
The noise power seen by channel ``i`` sums that overlap over every aggressor
channel ``j != i``; resolution is the reciprocal of the worst channel's noise
at unit input power.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .quant import qmax


@dataclass(frozen=True)
class WavelengthGrid:
    n_channels: int = 32
    center_wavelength: float = 1550.0  # nm
    spacing: float = 4.8  # nm

    def __post_init__(self):
        if self.n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        if not self.spacing > 0:
            raise ValueError("spacing must be > 0")
        if self.wavelengths[0] <= 0:
            raise ValueError(
                f"lowest channel wavelength {self.wavelengths[0]:.3f} nm is not positive"
            )

    @property
    def wavelengths(self) -> np.ndarray:
        idx = np.arange(self.n_channels, dtype=np.float64)
        return self.center_wavelength + (idx - (self.n_channels - 1) / 2.0) * self.spacing

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "center_nm": self.center_wavelength,
            "spacing_nm": self.spacing,
        }


@dataclass(frozen=True)
class MRDesign:
    """Fabricated ring geometry. ``n_eff`` and ``mode_order`` are chosen so the
    5 um ring resonates at ~1550 nm."""

    q_factor: float = 5000.0
    center_wavelength: float = 1550.0  # nm
    radius: float = 5.0  # um
    input_waveguide_width: float = 400.0  # nm
    ring_waveguide_width: float = 760.0  # nm
    n_eff: float = 2.4669
    mode_order: int = 50

    def __post_init__(self):
        if not self.q_factor > 0:
            raise ValueError("q_factor must be > 0")
        if not self.radius > 0:
            raise ValueError("radius must be > 0")


def resonant_wavelength(d: MRDesign) -> float:
    """``n_eff * L / m`` in nm, with ``L`` the ring circumference."""
    if d.mode_order < 1:
        raise ValueError(f"resonant mode order must be >= 1, got {d.mode_order}")
    circumference_nm = 2.0 * math.pi * d.radius * 1e3
    return d.n_eff * circumference_nm / d.mode_order


def linewidth_delta(wavelength, q_factor):
    if np.any(np.asarray(q_factor) <= 0):
        raise ValueError("q_factor must be > 0")
    return wavelength / (2.0 * q_factor)


def crosstalk_matrix(grid: WavelengthGrid, q_factor: float) -> np.ndarray:
    """Full ``phi[i, j]`` matrix; the diagonal is exactly 1."""
    lam = grid.wavelengths
    delta2 = linewidth_delta(lam, q_factor)[:, None] ** 2
    diff2 = (lam[:, None] - lam[None, :]) ** 2
    phi = delta2 / (diff2 + delta2)
    np.fill_diagonal(phi, 1.0)
    return phi


def crosstalk_phi(i: int, j: int, grid: WavelengthGrid, q_factor: float) -> float:
    lam = grid.wavelengths
    delta = linewidth_delta(lam[i], q_factor)
    if i == j:
        return 1.0
    return float(delta**2 / ((lam[i] - lam[j]) ** 2 + delta**2))


def noise_power(i: int, grid: WavelengthGrid, q_factor: float, p_in) -> float:
    """Crosstalk power leaking into channel ``i`` from all other channels."""
    p_in = np.asarray(p_in, dtype=np.float64)
    if p_in.shape != (grid.n_channels,):
        raise ValueError(f"p_in has shape {p_in.shape}, grid has {grid.n_channels} channels")
    row = crosstalk_matrix(grid, q_factor)[i].copy()
    row[i] = 0.0
    return float(row @ p_in)


def noise_powers(grid: WavelengthGrid, q_factor: float, p_in=None) -> np.ndarray:
    """``noise_power`` for every channel at once (unit inputs by default)."""
    phi = crosstalk_matrix(grid, q_factor)
    np.fill_diagonal(phi, 0.0)
    if p_in is None:
        return phi.sum(axis=1)
    return phi @ np.asarray(p_in, dtype=np.float64)


def resolution(grid: WavelengthGrid, q_factor: float) -> float:
    """Distinguishable levels, ``1 / max |P_noise|``; ``inf`` for one channel."""
    if grid.n_channels == 1:
        return math.inf
    return float(1.0 / np.max(np.abs(noise_powers(grid, q_factor))))


class CalibrationError(ValueError):
    pass


def calibrate_grid(
    n_channels: int,
    q_factor: float,
    target_bits: float,
    center_wavelength: float = 1550.0,
    max_spacing: float = 20.0,
    tol: float = 1e-4,
) -> WavelengthGrid:
    """Smallest uniform spacing (to ``tol`` nm) reaching ``2**target_bits`` levels."""
    if target_bits < 1:
        raise ValueError("target_bits must be >= 1")
    target = 2.0**target_bits
    if n_channels == 1:
        return WavelengthGrid(1, center_wavelength, 1.0)
    # every channel wavelength must stay positive
    hi = min(max_spacing, 2.0 * center_wavelength / (n_channels - 1) * (1 - 1e-9))
    top = WavelengthGrid(n_channels, center_wavelength, hi)
    if resolution(top, q_factor) < target:
        worst = int(np.argmax(noise_powers(top, q_factor)))
        raise CalibrationError(
            f"{2**target_bits:.0f} levels unreachable at Q={q_factor:g} within "
            f"{hi:.3f} nm spacing; limiting channel {worst} "
            f"({top.wavelengths[worst]:.3f} nm) reaches {resolution(top, q_factor):.1f}"
        )
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if resolution(WavelengthGrid(n_channels, center_wavelength, mid), q_factor) >= target:
            hi = mid
        else:
            lo = mid
    return WavelengthGrid(n_channels, center_wavelength, hi)


@lru_cache(maxsize=None)
def default_grid(n_channels: int = 32, q_factor: float = 5000.0, bits: int = 8) -> WavelengthGrid:
    return calibrate_grid(n_channels, q_factor, bits)


def _uniform_codec(v, bits, full_scale):
    if not full_scale > 0:
        raise ValueError("full_scale must be > 0")
    v = np.asarray(v, dtype=np.float64)
    if bits is None:
        return v, 0
    lim = qmax(bits)
    lsb = full_scale / lim
    saturated = int(np.count_nonzero(np.abs(v) > full_scale))
    codes = np.clip(np.rint(v / lsb), -lim, lim)
    return codes * lsb, saturated


def adc_quantize(v, bits, full_scale):
    """Uniform symmetric quantizer with a level at zero, clamped to +/-full_scale.

    Returns ``(quantized, n_saturated)``; ``bits=None`` is an ideal converter.
    """
    return _uniform_codec(v, bits, full_scale)


def dac_quantize(v, bits, full_scale):
    """Same codec as :func:`adc_quantize`; only the configured width differs."""
    return _uniform_codec(v, bits, full_scale)
