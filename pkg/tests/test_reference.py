import math

import numpy as np
import pytest

from siphvit.core import OpticalCore, OpticalCoreConfig
from siphvit.quant import GELU_LIPSCHITZ, QuantTensor, dequantize, gelu, layernorm, quantize_symmetric
from siphvit.reference import (EXACT, Bounded, ErrorModel, Operand, forward, gelu_bounded, layernorm_bounded,
                               optical_product, product_bound, quantized, reference_logits, softmax_bounded)
from siphvit.vit import ViTConfig, random_model, random_patches

TOY = ViTConfig(d_m=64, heads=2, depth=2, image_size=(48, 48), patch_size=16, channels=1)


def perturb(rng, v, r):
    """Random perturbation of each row with norm exactly r_i."""
    d = rng.standard_normal(v.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return v + d * r[:, None]


def test_error_model_from_core():
    em = ErrorModel.for_core(OpticalCoreConfig(noise_mode="worst_case"))
    assert em.crosstalk and em.adc_bits == 8 and 256 <= em.levels < 1000
    assert not ErrorModel.for_core(OpticalCoreConfig(adc_bits=None, noise_mode="off")).crosstalk
    with pytest.raises(ValueError):
        ErrorModel.for_core(OpticalCoreConfig(adc_fullscale="calibrated"))


def test_on_grid_quantization_adds_no_error(rng):
    q = quantize_symmetric(rng.standard_normal((4, 8)))
    op = quantized(Bounded(dequantize(q)), 8)
    assert not op.x.r.any() and op.scale == q.scale
    off = quantized(Bounded(rng.standard_normal((4, 8))), 8)
    assert off.x.r.all()


def test_requantization_bound_holds(rng):
    x = rng.standard_normal((6, 20))
    op = quantized(Bounded(x), 8)
    err = np.linalg.norm(dequantize(quantize_symmetric(x)) - x, axis=1)
    assert np.all(err <= op.x.r)


@pytest.mark.parametrize("mode,adc", [("off", 8), ("worst_case", None), ("worst_case", 8)])
def test_product_bound_is_sound(rng, mode, adc):
    cfg = OpticalCoreConfig(adc_bits=adc, noise_mode=mode)
    em = ErrorModel.for_core(cfg)
    for n, d, m in [(5, 40, 70), (3, 100, 20)]:
        x = quantize_symmetric(rng.standard_normal((n, d)))
        w = quantize_symmetric(rng.standard_normal((d, m)))
        got = OpticalCore(cfg).tiled_matmul(x, w).out.real()
        err = np.abs(got - dequantize(x) @ dequantize(w))
        assert np.all(err <= product_bound(x, w, em) + 1e-12)
        rows = optical_product(Operand(Bounded(dequantize(x)), x.scale, 8),
                               Operand(Bounded(dequantize(w)), w.scale, 8), em)
        assert np.all(np.linalg.norm(err, axis=1) <= rows.r + 1e-12)


def test_exact_model_has_zero_bound(rng):
    b = product_bound(quantize_symmetric(rng.standard_normal((3, 5))),
                      quantize_symmetric(rng.standard_normal((5, 2))), EXACT)
    assert not b.any()


def test_layernorm_bound_is_sound(rng):
    x = rng.standard_normal((8, 32)) * 3
    r = np.full(8, 0.5)
    g = 1 + 0.2 * rng.standard_normal(32)
    out = layernorm_bounded(Bounded(x, r), g, None, 1e-6)
    for _ in range(50):
        y = layernorm(perturb(rng, x, r), g, None, 1e-6)
        assert np.all(np.linalg.norm(y - out.v, axis=1) <= out.r + 1e-12)


def test_layernorm_bound_goes_vacuous_when_noise_swamps_signal():
    x = np.array([[1e-3, -1e-3, 0.0, 0.0]])
    out = layernorm_bounded(Bounded(x, [1.0]), None, None, 1e-6)
    assert math.isinf(out.r[0])


def test_softmax_and_gelu_bounds_are_sound(rng):
    x = rng.standard_normal((6, 12)) * 4
    r = np.full(6, 0.3)
    s = softmax_bounded(Bounded(x, r))
    g = gelu_bounded(Bounded(x, r), "tanh")
    for _ in range(50):
        xp = perturb(rng, x, r)
        sp = np.exp(xp - xp.max(1, keepdims=True))
        sp /= sp.sum(1, keepdims=True)
        assert np.all(np.linalg.norm(sp - s.v, axis=1) <= s.r + 1e-12)
        assert np.all(np.linalg.norm(gelu(xp) - g.v, axis=1) <= g.r + 1e-12)
    assert np.all(softmax_bounded(Bounded(x, np.full(6, 99.0))).r == math.sqrt(2))


def test_gelu_lipschitz_constant_covers_derivative():
    t = np.linspace(-8, 8, 200001)
    for form in ("tanh", "erf"):
        der = np.gradient(gelu(t, form), t)
        assert np.abs(der).max() <= GELU_LIPSCHITZ


def test_forward_logits_match_reference():
    m = random_model(TOY, 1)
    p = random_patches(TOY, 2)
    logits, bound = forward(m, p)
    np.testing.assert_array_equal(logits, reference_logits(m, p))
    # activations are still re-quantized, so the bound is positive
    assert np.all(bound > 0)
    assert logits.shape == (TOY.n_classes,)


def test_reference_drops_tokens_by_position():
    m = random_model(TOY, 1)
    p = random_patches(TOY, 2)
    keep = np.array([0, 3, 5])
    a = reference_logits(m, p[keep], keep)
    b = reference_logits(m, p[[0, 3, 6]], [0, 3, 6])
    assert not np.allclose(a, b)


def test_dac_width_below_weight_width_enlarges_bound(rng):
    x = quantize_symmetric(rng.standard_normal((2, 8)))
    w = quantize_symmetric(rng.standard_normal((8, 3)))
    assert product_bound(x, w, ErrorModel(dac_bits=6)).min() > 0
    assert not product_bound(x, w, ErrorModel(dac_bits=8)).any()
    assert QuantTensor(w.codes, w.scale, 8).bits == 8
