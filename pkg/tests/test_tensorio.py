import numpy as np
import pytest

from siphvit import tensorio
from siphvit.quant import QuantTensor, quantize_symmetric


def _bundle(rng):
    return {"w8": quantize_symmetric(rng.normal(size=(3, 4)), 8),
            "w12": quantize_symmetric(rng.normal(size=(5,)), 12),
            "real": rng.normal(size=(2, 2, 2))}


def _same(a, b):
    assert a.keys() == b.keys()
    for k in a:
        if isinstance(a[k], QuantTensor):
            assert b[k].bits == a[k].bits and b[k].scale == a[k].scale
            np.testing.assert_array_equal(a[k].codes, b[k].codes)
        else:
            np.testing.assert_array_equal(a[k], b[k])


def test_binary_round_trip(rng, tmp_path):
    t = _bundle(rng)
    _same(t, tensorio.from_bytes(tensorio.to_bytes(t)))
    tensorio.save(tmp_path / "t.bin", t)
    _same(t, tensorio.load(tmp_path / "t.bin"))


def test_binary_layout_is_little_endian():
    buf = tensorio.to_bytes({"a": QuantTensor(np.array([1, -2]), 0.5, 8)})
    assert buf[:4] == b"QTNS"
    assert int.from_bytes(buf[4:6], "little") == 1


def test_json_round_trip(rng, tmp_path):
    t = _bundle(rng)
    tensorio.save(tmp_path / "t.json", t)
    _same(t, tensorio.load(tmp_path / "t.json"))


def test_corrupt_inputs_rejected():
    with pytest.raises(ValueError):
        tensorio.from_bytes(b"NOPE" + bytes(10))
    good = tensorio.to_bytes({"a": np.zeros(3)})
    with pytest.raises(ValueError):
        tensorio.from_bytes(good[:-3])


def test_images_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(2, 4, 6, 3), dtype=np.uint8)
    tensorio.write_images(tmp_path / "x.img8", imgs)
    np.testing.assert_array_equal(tensorio.read_images(tmp_path / "x.img8"), imgs)
    norm = tensorio.normalize_images(np.array([0, 255], dtype=np.uint8))
    np.testing.assert_allclose(norm, [-1.0, 1.0])
    (tmp_path / "bad.img8").write_bytes(b"IMG8" + bytes(16) + b"x")
    with pytest.raises(ValueError):
        tensorio.read_images(tmp_path / "bad.img8")
