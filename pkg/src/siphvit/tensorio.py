"""Tensor exchange containers.

Two interchangeable encodings of a named bundle of tensors:

* JSON: ``{"name": {"kind": "quant", "shape": [...], "bits": 8, "scale": s,
  "codes": [...]}, "name2": {"kind": "real", "shape": [...], "values": [...]}}``
* binary (little-endian): magic ``QTNS``, u16 version, u32 count, then per
  entry: u16 name length, utf-8 name, u8 kind (0 quant, 1 real), u8 ndim,
  u32 shape[ndim]; quant entries add u8 bits, f64 scale and codes as
  int8/int16/int32 (smallest width holding ``bits``); real entries add f64
  values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np

from .quant import QuantTensor

MAGIC = b"QTNS"
VERSION = 1

Entry = Union[QuantTensor, np.ndarray]


def _code_le_dtype(bits: int) -> np.dtype:
    if bits <= 8:
        return np.dtype("<i1")
    if bits <= 16:
        return np.dtype("<i2")
    return np.dtype("<i4")


def to_json_obj(tensors: Mapping[str, Entry]) -> dict:
    out = {}
    for name, t in tensors.items():
        if isinstance(t, QuantTensor):
            out[name] = {
                "kind": "quant",
                "shape": list(t.shape),
                "bits": t.bits,
                "scale": t.scale,
                "codes": np.asarray(t.codes).ravel().tolist(),
            }
        else:
            a = np.asarray(t, dtype=np.float64)
            out[name] = {"kind": "real", "shape": list(a.shape), "values": a.ravel().tolist()}
    return out


def from_json_obj(obj: Mapping) -> dict[str, Entry]:
    out: dict[str, Entry] = {}
    for name, rec in obj.items():
        shape = tuple(rec["shape"])
        kind = rec.get("kind", "quant")
        if kind == "quant":
            codes = np.asarray(rec["codes"], dtype=np.int64).reshape(shape)
            bits = int(rec["bits"])
            out[name] = QuantTensor(codes.astype(_code_le_dtype(bits).newbyteorder("=")), float(rec["scale"]), bits)
        elif kind == "real":
            out[name] = np.asarray(rec["values"], dtype=np.float64).reshape(shape)
        else:
            raise ValueError(f"tensor {name!r}: unknown kind {kind!r}")
    return out


def to_bytes(tensors: Mapping[str, Entry]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        if isinstance(t, QuantTensor):
            shape = t.shape
            parts.append(struct.pack("<BB", 0, len(shape)))
            parts.append(struct.pack(f"<{len(shape)}I", *shape))
            parts.append(struct.pack("<Bd", t.bits, t.scale))
            parts.append(np.ascontiguousarray(t.codes, dtype=_code_le_dtype(t.bits)).tobytes())
        else:
            a = np.asarray(t, dtype=np.float64)
            parts.append(struct.pack("<BB", 1, a.ndim))
            parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
            parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> dict[str, Entry]:
    if buf[:4] != MAGIC:
        raise ValueError("not a tensor container (bad magic)")
    version, count = struct.unpack_from("<HI", buf, 4)
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    pos = 10
    out: dict[str, Entry] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        kind, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        if kind == 0:
            bits, scale = struct.unpack_from("<Bd", buf, pos)
            pos += 9
            dt = _code_le_dtype(bits)
            codes = np.frombuffer(buf, dtype=dt, count=size, offset=pos).reshape(shape)
            pos += size * dt.itemsize
            out[name] = QuantTensor(codes.astype(dt.newbyteorder("=")), scale, bits)
        elif kind == 1:
            vals = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += size * 8
            out[name] = vals.astype(np.float64)
        else:
            raise ValueError(f"tensor {name!r}: unknown kind byte {kind}")
    return out


def save(path, tensors: Mapping[str, Entry]) -> None:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(to_json_obj(tensors)))
    else:
        path.write_bytes(to_bytes(tensors))


def load(path) -> dict[str, Entry]:
    path = Path(path)
    if path.suffix == ".json":
        return from_json_obj(json.loads(path.read_text()))
    return from_bytes(path.read_bytes())


# Raw 8-bit images: magic ``IMG8``, u32 frames, height, width, channels, then
# frames*height*width*channels bytes in frame, row, column, channel order.
IMAGE_MAGIC = b"IMG8"
_IMAGE_HEADER = struct.Struct("<4s4I")


def write_images(path, images) -> None:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4 or arr.dtype != np.uint8:
        raise ValueError("images must be a uint8 array of shape frames x H x W [x C]")
    Path(path).write_bytes(_IMAGE_HEADER.pack(IMAGE_MAGIC, *arr.shape) + arr.tobytes())


def read_images(path) -> np.ndarray:
    """Frames as ``uint8`` array ``frames x H x W x C``."""
    buf = Path(path).read_bytes()
    if len(buf) < _IMAGE_HEADER.size:
        raise ValueError(f"{path}: truncated image header")
    magic, *shape = _IMAGE_HEADER.unpack_from(buf)
    if magic != IMAGE_MAGIC:
        raise ValueError(f"{path}: not an 8-bit image file (magic {magic!r})")
    n = int(np.prod(shape))
    payload = buf[_IMAGE_HEADER.size:]
    if len(payload) != n:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, header promises {n}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(shape)


def normalize_images(images: np.ndarray) -> np.ndarray:
    """uint8 pixels to reals in [-1, 1]."""
    return np.asarray(images, dtype=np.float64) / 127.5 - 1.0
