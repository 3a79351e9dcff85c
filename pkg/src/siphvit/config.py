"""Run configuration: JSON schema, validation with line-precise diagnostics, resolution to objects."""

from __future__ import annotations

import copy
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Optional

import jsonschema

from .core import ADC_FULLSCALE_MODES, NOISE_MODES, OpticalCoreConfig
from .costs import DEFAULT_COST_TABLE, CostTable
from .device import WavelengthGrid, default_grid
from .pipeline import PipelineOptions
from .roi import MGNET_PROFILES, MGNetConfig
from .vit import PRESETS, ViTConfig, preset

_BITS = {"type": ["integer", "null"], "minimum": 1, "maximum": 32}
_POS_INT = {"type": "integer", "minimum": 1}


def _obj(props: dict, **extra) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, **extra}


SCHEMA: dict = _obj({
    "model": _obj({
        "preset": {"enum": sorted(PRESETS) + [None]},
        "d_m": _POS_INT, "heads": _POS_INT, "depth": _POS_INT,
        "patch_size": _POS_INT, "ffn_ratio": _POS_INT, "channels": _POS_INT,
        "n_classes": _POS_INT, "bits": {"type": "integer", "minimum": 2, "maximum": 16},
        "gelu_form": {"enum": ["tanh", "erf"]},
    }),
    "image_size": {"oneOf": [_POS_INT, {"type": "array", "items": _POS_INT, "minItems": 2, "maxItems": 2}]},
    "weights": {"type": ["string", "null"], "description": "model file, or null for seeded random weights"},
    "weights_seed": {"type": "integer", "minimum": 0},
    "functional": {"type": "boolean"},
    "input": _obj({
        "source": {"enum": ["random", "file"]},
        "path": {"type": ["string", "null"]},
        "frames": _POS_INT,
        "seed": {"type": "integer", "minimum": 0},
    }),
    "core": _obj({
        "n_wavelengths": _POS_INT, "n_arms": _POS_INT,
        "q_factor": {"type": "number", "exclusiveMinimum": 0},
        "adc_bits": _BITS, "dac_bits": _BITS,
        "adc_fullscale": {"enum": list(ADC_FULLSCALE_MODES)},
        "adc_percentile": {"type": "number", "exclusiveMinimum": 0, "maximum": 100},
        "signed_encoding": {"enum": ["two_rail"]},
        "grid": {"oneOf": [
            {"const": "calibrated"},
            _obj({"center_nm": {"type": "number", "exclusiveMinimum": 0},
                  "spacing_nm": {"type": "number", "exclusiveMinimum": 0},
                  "n_channels": _POS_INT}, required=["spacing_nm"]),
        ]},
    }),
    "noise": _obj({"mode": {"enum": list(NOISE_MODES)}, "seed": {"type": "integer", "minimum": 0}}),
    "pipeline": _obj({
        "softmax_as_weights": {"type": "boolean"},
        "defer_value_stage": {"type": "boolean"},
        "core_groups": _POS_INT,
        "act_bits": {"type": "integer", "minimum": 2, "maximum": 16},
    }),
    "mask": _obj({
        "source": {"enum": ["none", "generate", "file", "synthetic"]},
        "path": {"type": ["string", "null"]},
        "t_reg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "skip_ratio": {"type": "number", "minimum": 0, "maximum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "mgnet": _obj({
            "profile": {"enum": sorted(MGNET_PROFILES)},
            "embed_dim": _POS_INT, "n_heads": _POS_INT,
            "weights": {"type": ["string", "null"]},
            "seed": {"type": "integer", "minimum": 0},
            "optical": {"type": "boolean"},
        }),
    }),
    "cost_table": {"type": ["string", "null"]},
    "report_savings": {"type": "boolean"},
    "output_dir": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
})

DEFAULTS: dict = {
    "model": {"preset": "tiny", "patch_size": 16, "ffn_ratio": 4, "channels": 3, "n_classes": 10,
              "bits": 8, "gelu_form": "tanh"},
    "image_size": 224,
    "weights": None,
    "weights_seed": 0,
    "functional": True,
    "input": {"source": "random", "path": None, "frames": 1, "seed": 0},
    "core": {"n_wavelengths": 32, "n_arms": 64, "q_factor": 5000.0, "adc_bits": 8, "dac_bits": 8,
             "adc_fullscale": "conservative", "adc_percentile": 99.9, "signed_encoding": "two_rail",
             "grid": "calibrated"},
    "noise": {"mode": "worst_case", "seed": 0},
    "pipeline": {"softmax_as_weights": True, "defer_value_stage": True, "core_groups": 1, "act_bits": 8},
    "mask": {"source": "none", "path": None, "t_reg": 0.5, "skip_ratio": 0.0, "seed": 0,
             "mgnet": {"profile": "default", "weights": None, "seed": 0, "optical": False}},
    "cost_table": None,
    "report_savings": False,
    "output_dir": "out",
    "seed": 0,
}


class ConfigError(ValueError):
    """Invalid run configuration; ``diagnostics`` holds one message per problem."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


def _value_positions(text: str) -> tuple[dict, dict]:
    """Offsets of every value and every object key, keyed by JSON path (tuple of keys/indices)."""
    ws = re.compile(r"\s*")
    dec = json.JSONDecoder()
    out: dict = {}
    keys: dict = {}

    def value(i: int, path: tuple) -> int:
        i = ws.match(text, i).end()
        out.setdefault(path, i)
        c = text[i]
        if c == "{":
            i = ws.match(text, i + 1).end()
            if text[i] == "}":
                return i + 1
            while True:
                i = ws.match(text, i).end()
                key_at = i
                key, i = json.decoder.scanstring(text, i + 1)
                keys[path + (key,)] = key_at
                i = ws.match(text, i).end() + 1  # past ':'
                i = ws.match(text, value(i, path + (key,))).end()
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if c == "[":
            i = ws.match(text, i + 1).end()
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = ws.match(text, value(i, path + (k,))).end()
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        return dec.raw_decode(text, i)[1]

    value(0, ())
    return out, keys


def _line_col(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def _dotted(path) -> str:
    return "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in path).lstrip(".") or "<root>"


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate_text(text: str, source: str = "<config>", base_dir: Optional[Path] = None) -> dict:
    """Parse and validate JSON config text; return the merged-with-defaults dict."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{source}:{e.lineno}:{e.colno}: invalid JSON: {e.msg}"]) from None
    positions, key_positions = _value_positions(text)
    diags = []

    def at(path, key: bool = False) -> str:
        path = tuple(path)
        if key and path in key_positions:
            return f"{source}:{':'.join(map(str, _line_col(text, key_positions[path])))}"
        while path not in positions and path:
            path = path[:-1]
        line, col = _line_col(text, positions.get(path, 0))
        return f"{source}:{line}:{col}"

    validator = jsonschema.Draft202012Validator(SCHEMA)
    for err in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        path = tuple(err.absolute_path)
        if err.validator == "additionalProperties":
            allowed = set(err.schema.get("properties", {}))
            for key in sorted(set(err.instance) - allowed):
                diags.append(f"{at(path + (key,), key=True)}: unknown key {_dotted(path + (key,))!r}"
                             f" (allowed: {', '.join(sorted(allowed))})")
        else:
            diags.append(f"{at(path)}: {_dotted(path)}: {err.message}")
    if diags:
        raise ConfigError(diags)

    cfg = _merge(DEFAULTS, raw)
    # the top-level seed is the default for every other seed
    for path in (("weights_seed",), ("input", "seed"), ("noise", "seed"), ("mask", "seed"),
                 ("mask", "mgnet", "seed")):
        node, given = cfg, raw
        for k in path[:-1]:
            node, given = node[k], given.get(k, {}) if isinstance(given, dict) else {}
        if path[-1] not in given:
            node[path[-1]] = cfg["seed"]
    if "preset" not in raw.get("model", {}) and {"d_m", "heads", "depth"} & set(raw.get("model", {})):
        cfg["model"]["preset"] = None
    base_dir = Path(".") if base_dir is None else base_dir
    files = [(("weights",), cfg["weights"]), (("cost_table",), cfg["cost_table"]),
             (("mask", "mgnet", "weights"), cfg["mask"]["mgnet"]["weights"])]
    if cfg["input"]["source"] == "file":
        files.append((("input", "path"), cfg["input"]["path"]))
        if not cfg["input"]["path"]:
            diags.append(f"{at(('input', 'source'))}: input.source 'file' needs input.path")
    if cfg["mask"]["source"] == "file":
        files.append((("mask", "path"), cfg["mask"]["path"]))
        if not cfg["mask"]["path"]:
            diags.append(f"{at(('mask', 'source'))}: mask.source 'file' needs mask.path")
    for path, f in files:
        if f and not (base_dir / f).exists():
            diags.append(f"{at(path)}: {_dotted(path)}: file {f!r} does not exist")
    m = cfg["model"]
    if m.get("preset") is None and not all(k in m for k in ("d_m", "heads", "depth")):
        diags.append(f"{at(('model',))}: model needs a preset or all of d_m, heads, depth")
    if not cfg["functional"] and cfg["mask"]["source"] == "generate":
        diags.append(f"{at(('mask', 'source'))}: generated masks need functional simulation")
    if not diags:
        try:
            RunConfig(cfg, base_dir)
        except ValueError as e:
            diags.append(f"{source}: {e}")
    if diags:
        raise ConfigError(diags)
    return cfg


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RunConfig:
    """Validated run configuration with resolved objects."""

    def __init__(self, data: dict, base_dir: Path | str = "."):
        self.data = data
        self.base_dir = Path(base_dir)
        self.vit = self._vit()
        self.core = self._core()
        self.options = PipelineOptions(**data["pipeline"])
        self.mgnet = self._mgnet() if data["mask"]["source"] == "generate" else None

    @classmethod
    def from_text(cls, text: str, source: str = "<config>", base_dir=None) -> "RunConfig":
        base = Path(".") if base_dir is None else Path(base_dir)
        return cls(validate_text(text, source, base), base)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path), path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "RunConfig":
        return cls.from_text(json.dumps(data, indent=1), "<dict>", base_dir)

    def path(self, p: Optional[str]) -> Optional[Path]:
        return None if p is None else self.base_dir / p

    @property
    def image_size(self) -> tuple:
        s = self.data["image_size"]
        return (s, s) if isinstance(s, int) else tuple(s)

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def _vit(self) -> ViTConfig:
        m = dict(self.data["model"])
        name = m.pop("preset", None)
        if name is not None:
            for k in ("d_m", "heads", "depth"):
                m.pop(k, None)
            return preset(name, self.image_size, **m)
        return ViTConfig(image_size=self.image_size, **m)

    def _core(self) -> OpticalCoreConfig:
        c = dict(self.data["core"])
        g = c.pop("grid")
        if g == "calibrated":
            grid = default_grid(c["n_wavelengths"], c["q_factor"])
        else:
            grid = WavelengthGrid(g.get("n_channels", c["n_wavelengths"]), g.get("center_nm", 1550.0),
                                  g["spacing_nm"])
        n = self.data["noise"]
        return OpticalCoreConfig(grid=grid, noise_mode=n["mode"], seed=n["seed"], **c)

    def _mgnet(self) -> MGNetConfig:
        g = self.data["mask"]["mgnet"]
        dim, heads = MGNET_PROFILES[g["profile"]]
        return MGNetConfig(patch_size=self.vit.patch_size, embed_dim=g.get("embed_dim", dim),
                           n_heads=g.get("n_heads", heads), region_threshold=self.data["mask"]["t_reg"],
                           image_size=self.vit.image_size, channels=self.vit.channels)

    def cost_table(self) -> CostTable:
        p = self.path(self.data["cost_table"])
        return DEFAULT_COST_TABLE if p is None else CostTable.load(p)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @property
    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.data).encode()).hexdigest()

    def with_overrides(self, **updates) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.data, updates), self.base_dir)
