import math

import numpy as np
import pytest

from oracles import brute_noise, brute_resolution, phi_pair
from siphvit.device import (CalibrationError, MRDesign, WavelengthGrid, adc_quantize, calibrate_grid,
                            crosstalk_matrix, crosstalk_phi, dac_quantize, default_grid, linewidth_delta,
                            noise_power, noise_powers, resolution, resonant_wavelength)


def test_grid_wavelengths():
    g = WavelengthGrid(4, 1550.0, 2.0)
    np.testing.assert_allclose(g.wavelengths, [1547.0, 1549.0, 1551.0, 1553.0])
    for bad in ((0, 1550, 1), (4, 1550, 0), (4, -1, 1), (3, 10, 12)):
        with pytest.raises(ValueError):
            WavelengthGrid(*bad)


def test_resonant_wavelength():
    d = MRDesign(radius=5.0, n_eff=2.4, mode_order=1)
    circ_nm = 2 * math.pi * 5.0 * 1000
    assert resonant_wavelength(d) == pytest.approx(2.4 * circ_nm)
    d2 = MRDesign(radius=5.0, n_eff=2.4, mode_order=2)
    assert resonant_wavelength(d2) == pytest.approx(resonant_wavelength(d) / 2)
    assert MRDesign().radius == 5.0
    assert MRDesign().ring_waveguide_width == 760.0
    with pytest.raises(ValueError):
        resonant_wavelength(MRDesign(mode_order=0))


def test_linewidth():
    assert linewidth_delta(1550.0, 5000.0) == pytest.approx(0.155)
    assert linewidth_delta(3100.0, 5000.0) == pytest.approx(0.31)
    assert linewidth_delta(1550.0, 1e12) < 1e-9
    with pytest.raises(ValueError):
        linewidth_delta(1550.0, 0.0)


def test_phi_hand_value():
    g = WavelengthGrid(2, 1550.0, 4.8)
    lam = g.wavelengths
    expected = 0.155 ** 2 / (4.8 ** 2 + 0.155 ** 2)
    # delta at the victim wavelength, not at the centre
    assert crosstalk_phi(0, 1, g, 5000.0) == pytest.approx(phi_pair(lam[0], lam[1], 5000.0), rel=1e-15)
    assert crosstalk_phi(0, 1, g, 5000.0) == pytest.approx(expected, rel=5e-3)
    assert expected == pytest.approx(1.0417e-3, rel=1e-3)
    assert crosstalk_phi(1, 1, g, 5000.0) == 1.0


def test_crosstalk_matrix_bounds(rng):
    g = WavelengthGrid(16, 1550.0, 1.3)
    phi = crosstalk_matrix(g, 4000.0)
    assert np.all(np.diag(phi) == 1.0)
    assert np.all((phi > 0) & (phi <= 1))


def test_noise_power_cases():
    assert noise_power(0, WavelengthGrid(1, 1550, 1.0), 5000, [3.0]) == 0.0
    g = WavelengthGrid(8, 1550, 2.0)
    assert noise_power(3, g, 5000, np.zeros(8)) == 0.0
    with pytest.raises(ValueError):
        noise_power(0, g, 5000, np.ones(7))


@pytest.mark.parametrize("n", [2, 7, 32, 64])
def test_noise_matches_brute_force(n, rng):
    spacing = float(rng.uniform(0.5, 6.0))
    q = float(rng.uniform(1000, 9000))
    p = rng.uniform(0, 2, size=n)
    g = WavelengthGrid(n, 1550.0, spacing)
    np.testing.assert_allclose(noise_powers(g, q, p), brute_noise(n, 1550.0, spacing, q, p), rtol=1e-12)
    assert noise_power(n // 2, g, q, p) == pytest.approx(brute_noise(n, 1550.0, spacing, q, p)[n // 2], rel=1e-12)
    assert resolution(g, q) == pytest.approx(brute_resolution(n, 1550.0, spacing, q), rel=1e-12)


def test_resolution_single_channel_unbounded():
    assert resolution(WavelengthGrid(1, 1550, 1.0), 5000) == math.inf


def test_resolution_monotone():
    r_sp = [resolution(WavelengthGrid(32, 1550, s), 5000) for s in (1, 2, 4, 8)]
    r_q = [resolution(WavelengthGrid(32, 1550, 4), q) for q in (1000, 2500, 5000, 10000)]
    assert r_sp == sorted(r_sp) and r_q == sorted(r_q)


def test_default_grid_meets_eight_bits():
    g = default_grid()
    assert g.n_channels == 32 and g.center_wavelength == 1550.0
    assert resolution(g, 5000) >= 256
    assert resolution(WavelengthGrid(32, 1550, 0.99 * g.spacing), 5000) < 256
    # frozen value of the calibrated spacing (bisection oracle, 1e-4 nm)
    assert g.spacing == pytest.approx(4.4834, abs=2e-4)


def test_calibrate_grid_properties():
    g2 = calibrate_grid(32, 5000, 1)
    assert g2.spacing < 0.5
    s5000 = calibrate_grid(32, 5000, 8).spacing
    s2500 = calibrate_grid(32, 2500, 8).spacing
    assert 1.8 < s2500 / s5000 < 2.2
    g = calibrate_grid(16, 3000, 6)
    assert resolution(g, 3000) >= 64
    assert resolution(WavelengthGrid(16, 1550, g.spacing - 1e-3), 3000) < 64
    with pytest.raises(CalibrationError, match="limiting channel"):
        calibrate_grid(32, 50, 8)
    with pytest.raises(ValueError):
        calibrate_grid(32, 5000, 0)


def test_codec_examples():
    assert adc_quantize(0.0, 8, 1.0)[0] == 0.0
    lsb = 0.01
    v = np.linspace(-1.27, 1.27, 1001)
    q, sat = adc_quantize(v, 8, 127 * lsb)
    assert sat == 0
    assert np.abs(q - v).max() <= lsb / 2 + 1e-12
    q, sat = adc_quantize(np.array([2.0, -3.0, 0.5]), 8, 1.0)
    assert sat == 2
    assert q[0] == 1.0 and q[1] == -1.0
    ideal, sat = adc_quantize(np.array([0.123]), None, 1.0)
    assert ideal[0] == 0.123 and sat == 0
    with pytest.raises(ValueError):
        adc_quantize(1.0, 8, 0.0)


def test_codec_idempotent_and_shared(rng):
    v = rng.uniform(-1, 1, 100)
    once, _ = dac_quantize(v, 6, 1.0)
    twice, _ = dac_quantize(once, 6, 1.0)
    np.testing.assert_array_equal(once, twice)
    np.testing.assert_array_equal(once, adc_quantize(v, 6, 1.0)[0])
