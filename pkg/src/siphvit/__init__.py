"""Simulator for a silicon-photonic Vision Transformer accelerator.

Quantized ViT inference runs through modeled microring-resonator optical
cores; the resulting event trace is costed for energy and latency.
"""

__version__ = "0.1.0"

from .core import OpticalCore, OpticalCoreConfig, TileStats  # noqa: E402
from .costs import DEFAULT_COST_TABLE, CostTable, estimate_energy, estimate_latency  # noqa: E402
from .device import WavelengthGrid, calibrate_grid, crosstalk_phi, noise_power, resolution  # noqa: E402
from .pipeline import Accelerator, PipelineOptions, initiation_interval, schedule_pipeline, vit_forward  # noqa: E402
from .quant import QuantTensor, quantize_symmetric  # noqa: E402
from .vit import ViTConfig, preset, random_model  # noqa: E402

__all__ = [
    "Accelerator", "CostTable", "DEFAULT_COST_TABLE", "OpticalCore", "OpticalCoreConfig", "PipelineOptions",
    "QuantTensor", "TileStats", "ViTConfig", "WavelengthGrid", "calibrate_grid", "crosstalk_phi",
    "estimate_energy", "estimate_latency", "noise_power", "preset", "quantize_symmetric", "random_model",
    "initiation_interval", "resolution", "schedule_pipeline", "vit_forward",
]
