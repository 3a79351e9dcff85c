import json

import numpy as np
import pytest

from oracles import mgnet_scores
from siphvit.core import OpticalCoreConfig
from siphvit.pipeline import Accelerator
from siphvit.roi import (MGNetConfig, MGNetWeights, PatchMask, RegionScores, apply_mask, expand, ground_truth_mask,
                         make_mask, mgnet_forward, mgnet_macs, miou, read_boxes, read_masks, synthetic_mask,
                         toy_weights, write_masks, zero_weights)

SMALL = MGNetConfig(embed_dim=6, n_heads=2, image_size=(32, 32), channels=1)


def test_profiles():
    d = MGNetConfig()
    assert (d.patch_size, d.embed_dim, d.n_heads) == (16, 192, 3)
    det = MGNetConfig.profile("detection")
    assert (det.embed_dim, det.n_heads) == (384, 6)
    with pytest.raises(ValueError):
        MGNetConfig.profile("huge")
    with pytest.raises(ValueError):
        MGNetConfig(region_threshold=1.0)
    with pytest.raises(ValueError):
        MGNetConfig(embed_dim=10, n_heads=3)


def test_zero_weights_give_uniform_scores(rng):
    cfg = MGNetConfig(embed_dim=12, n_heads=3, image_size=(64, 64), channels=1)
    s = mgnet_forward(rng.standard_normal((16, 256)), zero_weights(cfg))
    assert np.all(s.s_region == s.s_region[0])
    assert s.s_region.shape == (16,)


def test_four_patch_instance_matches_loop_oracle(rng):
    w = toy_weights(SMALL, 4)
    for k in ("ln1_b", "ln2_b", "lna_b", "b_region"):
        w.tensors[k] = 0.1 * rng.standard_normal(w.tensors[k].shape)
    x = rng.standard_normal((4, 256))
    got = mgnet_forward(x, w)
    region, cls = mgnet_scores(x.tolist(), {k: v.tolist() for k, v in w.tensors.items()}, 2)
    np.testing.assert_allclose(got.s_region, region, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(got.s_cls_attn, cls, rtol=1e-9, atol=1e-12)


def test_permutation_equivariance_without_positions(rng):
    cfg = MGNetConfig(embed_dim=12, n_heads=3, image_size=(64, 64), channels=1)
    w = toy_weights(cfg, 1)
    w.tensors["pos_embed"] = np.zeros_like(w.tensors["pos_embed"])
    x = rng.standard_normal((16, 256))
    perm = rng.permutation(16)
    a = mgnet_forward(x, w).s_cls_attn
    b = mgnet_forward(x[perm], w).s_cls_attn
    np.testing.assert_allclose(b, a[perm], rtol=1e-10, atol=1e-12)


def test_shape_mismatch_raises(rng):
    w = toy_weights(SMALL)
    with pytest.raises(ValueError):
        mgnet_forward(rng.standard_normal((5, 256)), w)
    del w.tensors["a_q"]
    with pytest.raises(ValueError):
        mgnet_forward(rng.standard_normal((4, 256)), w)


def test_optical_route_close_to_real(rng):
    cfg = MGNetConfig(embed_dim=12, n_heads=3, image_size=(64, 64), channels=1)
    w = toy_weights(cfg, 2)
    x = rng.standard_normal((16, 256))
    acc = Accelerator(OpticalCoreConfig(adc_bits=None, noise_mode="off"))
    a = mgnet_forward(x, w).s_region
    b = mgnet_forward(x, w, acc).s_region
    assert np.abs(a - b).max() < 0.1 * np.abs(a).max()
    assert len(acc.trace) > 0
    assert mgnet_macs(cfg) > 0


def test_weights_round_trip(tmp_path):
    w = toy_weights(SMALL, 3)
    w.save(tmp_path / "m.npz")
    back = MGNetWeights.load(SMALL, tmp_path / "m.npz")
    for k in w.tensors:
        np.testing.assert_array_equal(back[k], w[k])
    with pytest.raises(ValueError):
        MGNetWeights.load(MGNetConfig(embed_dim=4, n_heads=2, image_size=(32, 32), channels=1), tmp_path / "m.npz")


def test_make_mask_boundary_and_limits(rng):
    assert make_mask(np.zeros(5), 0.5).bits.all()
    s = rng.standard_normal(50) * 3
    assert make_mask(s, 1e-9).bits.all()
    assert not make_mask(s, 1 - 1e-9).bits.any()
    with pytest.raises(ValueError):
        make_mask(s, 0.0)


def test_make_mask_matches_brute_force(rng):
    s = rng.standard_normal(200) * 4
    for t in (0.1, 0.37, 0.5, 0.9):
        want = [1.0 / (1.0 + np.exp(-v)) >= t for v in s]
        assert make_mask(RegionScores(s, s), t).bits.tolist() == want


def test_make_mask_monotone(rng):
    s = rng.standard_normal(100)
    prev = None
    for t in np.linspace(0.01, 0.99, 30):
        m = make_mask(s, t)
        if prev is not None:
            assert not (m.bits & ~prev.bits).any()
        prev = m


def test_ground_truth_cases():
    assert ground_truth_mask([(0, 0, 224, 224)], 224, 16).bits.all()
    assert not ground_truth_mask([], 224, 16).bits.any()
    one = ground_truth_mask([(32, 16, 16, 16)], 224, 16)
    assert one.kept.tolist() == [1 * 14 + 2]
    part = ground_truth_mask([(15, 15, 2, 2)], 224, 16)
    assert part.kept.tolist() == [0, 1, 14, 15]
    assert not ground_truth_mask([(5, 5, 0, 10)], 224, 16).bits.any()
    assert ground_truth_mask([{"x": 0, "y": 0, "w": 1, "h": 1}], 224, 16).kept.tolist() == [0]
    with pytest.raises(ValueError):
        ground_truth_mask([(220, 0, 10, 10)], 224, 16)


def test_ground_truth_monotone_in_boxes(rng):
    boxes = [tuple(rng.uniform(0, 100, 2)) + tuple(rng.uniform(0, 100, 2)) for _ in range(6)]
    for k in range(1, 6):
        a = ground_truth_mask(boxes[:k], 224, 16).bits
        b = ground_truth_mask(boxes[:k + 1], 224, 16).bits
        assert not (a & ~b).any()


def test_miou_axioms(rng):
    a = PatchMask(rng.random(50) < 0.4)
    b = PatchMask(rng.random(50) < 0.4)
    assert miou(a, a) == 1.0
    assert miou(a, b) == miou(b, a)
    assert 0.0 <= miou(a, b) < 1.0
    assert miou(PatchMask(np.zeros(4)), PatchMask(np.zeros(4))) == 1.0
    assert miou(PatchMask([1, 1, 0, 0]), PatchMask([0, 0, 1, 1])) == 0.0
    assert miou(PatchMask([1, 1, 1, 1, 1, 0]), PatchMask([1, 1, 1, 1, 0, 0])) == 0.8
    with pytest.raises(ValueError):
        miou(PatchMask([1]), PatchMask([1, 0]))


def test_apply_mask_cases(rng):
    seq = rng.standard_normal((196, 8))
    cls = np.ones(8)
    full, idx = apply_mask(seq, PatchMask(np.ones(196)), cls)
    np.testing.assert_array_equal(full[1:], seq)
    assert idx[0] == -1
    only, _ = apply_mask(seq, PatchMask(np.zeros(196)), cls)
    assert only.shape == (1, 8)
    m = synthetic_mask(196, 0.67, seed=1)
    pruned, idx = apply_mask(seq, m, cls)
    assert pruned.shape[0] == 1 + 65
    assert np.all(np.diff(idx[1:]) > 0)
    dense = expand(pruned, idx, 196)
    np.testing.assert_array_equal(dense[m.bits], seq[m.bits])
    assert not dense[~m.bits].any()
    with pytest.raises(ValueError):
        apply_mask(seq[:10], m)


def test_patch_mask_line_format(tmp_path):
    m = PatchMask([1, 0, 0, 1])
    assert m.to_line() == "1001 0.500000"
    assert PatchMask.from_line(m.to_line()) == m
    assert m != PatchMask([1, 0, 0, 0])
    with pytest.raises(ValueError):
        PatchMask.from_line("1001 0.25")
    with pytest.raises(ValueError):
        PatchMask.from_line("10x1")
    write_masks(tmp_path / "m.txt", [m, PatchMask([1, 1, 1, 1])])
    back = read_masks(tmp_path / "m.txt")
    assert [b.skip_ratio for b in back] == [0.5, 0.0]
    (tmp_path / "bad.txt").write_text("11 0.5\n1x\n")
    with pytest.raises(ValueError, match="bad.txt:1"):
        read_masks(tmp_path / "bad.txt")


def test_read_boxes(tmp_path):
    p = tmp_path / "b.json"
    p.write_text(json.dumps([{"frame": 0, "x": 0, "y": 0, "w": 16, "h": 16},
                             {"frame": 1, "x": 16, "y": 0, "w": 16, "h": 16},
                             {"frame": 0, "x": 32, "y": 0, "w": 1, "h": 1}]))
    assert read_boxes(p) == {0: [(0, 0, 16, 16), (32, 0, 1, 1)], 1: [(16, 0, 16, 16)]}
    p.write_text(json.dumps([{"frame": 0, "x": 0}]))
    with pytest.raises(ValueError, match="lacks"):
        read_boxes(p)


def test_synthetic_mask_counts():
    for s in (0.0, 0.25, 0.5, 0.66, 0.68, 1.0):
        m = synthetic_mask(196, s, 3)
        assert len(m.kept) == round((1 - s) * 196)
    with pytest.raises(ValueError):
        synthetic_mask(10, 1.5)
