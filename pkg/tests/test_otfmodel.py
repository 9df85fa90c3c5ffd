import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import optimize, special

from simrecon.imagecore import frequency_radius, radial_profile
from simrecon.otfmodel import (circular_otf_profile, estimate_otf_from_beads, otf_from_psf,
                               psf_from_otf, radial_average, shifted_otf_power, synthesize_otf)
from simrecon.psfmetrics import fwhm
from simrecon.simulate import make_bead_image


def test_dc_and_edge_values():
    assert circular_otf_profile(0.0) == pytest.approx(1.0)
    assert circular_otf_profile(1.0) == pytest.approx(0.0)
    # rho sqrt(1 - rho^2) = sqrt(3)/4 at rho = 1/2
    expected = 2 / np.pi * (np.pi / 3 - np.sqrt(3) / 4)
    assert circular_otf_profile(0.5) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.3910, abs=1e-4)


def test_synthetic_otf_invariants():
    otf = synthesize_otf(512, 0.25)
    c = 256
    assert otf.spectrum[c, c] == 1.0
    assert np.all(otf.spectrum[~otf.support_mask] == 0)
    assert otf.support_mask.sum() == pytest.approx(np.pi * (0.25 * 512) ** 2, rel=0.02)
    kr = frequency_radius(512)
    # circumsymmetric: equal radius -> equal value
    assert abs(otf.spectrum[c, c + 30] - otf.spectrum[c + 30, c]) < 1e-10
    assert abs(otf.spectrum[c + 18, c + 24] - otf.spectrum[c, c + 30]) < 1e-10
    r, p, _ = radial_profile(otf.spectrum, 128)
    assert np.all(np.diff(np.sqrt(p)) <= 1e-12)
    assert kr[otf.support_mask].max() <= 0.25


@pytest.mark.parametrize("kc", [0.0, -0.1, 0.6])
def test_bad_cutoff(kc):
    with pytest.raises(ValueError):
        synthesize_otf(64, kc)


def test_psf_round_trip():
    otf = synthesize_otf(128, 0.2)
    back = otf_from_psf(psf_from_otf(otf))
    assert np.abs(back.spectrum - otf.spectrum).max() < 1e-8


def test_psf_fwhm_matches_airy():
    # incoherent PSF of a circular pupil: [2 J1(x)/x]^2 with x = pi k_cutoff r
    x_half = optimize.brentq(lambda x: (2 * special.j1(x) / x) ** 2 - 0.5, 0.5, 3.0)
    airy_fwhm = 2 * x_half / (np.pi * 0.25)
    psf = psf_from_otf(synthesize_otf(512, 0.25))
    c = 256
    assert fwhm(psf[c - 20:c + 21, c - 20:c + 21]) == pytest.approx(airy_fwhm, rel=0.05)


def test_delta_psf_gives_flat_otf():
    psf = np.zeros((32, 32))
    psf[16, 16] = 1
    assert np.allclose(otf_from_psf(psf).spectrum, 1)


def _kernel(n=256, kc=0.25, half=8):
    psf = psf_from_otf(synthesize_otf(n, kc))
    c = n // 2
    return psf[c - half:c + half + 1, c - half:c + half + 1]


def _generator_otf(kernel, n):
    psf = np.zeros((n, n))
    h = kernel.shape[0] // 2
    psf[n // 2 - h:n // 2 + h + 1, n // 2 - h:n // 2 + h + 1] = kernel - np.median(kernel)
    return otf_from_psf(psf)


def test_beads_noise_free():
    k = _kernel()
    img, placed = make_bead_image(k, 512, 150, np.random.default_rng(0), min_separation=18)
    assert len(placed) == 150
    est = estimate_otf_from_beads([img], 0.3, window=17)
    ref = _generator_otf(k, 512)
    assert np.abs(est.spectrum - radial_average(ref.spectrum.real)).max() < 1e-3


def test_beads_noisy_monte_carlo():
    k = _kernel()
    ref = radial_average(_generator_otf(k, 512).spectrum.real)
    worst = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        img, _ = make_bead_image(k, 512, 150, rng, min_separation=18)
        img = img + rng.normal(0, 0.05 * img.std(), img.shape)
        est = estimate_otf_from_beads([img], 0.3, window=17)
        worst = max(worst, np.abs(est.spectrum - ref).max())
    assert worst < 0.02


def test_single_centered_bead():
    k = _kernel(64)
    img = np.zeros((64, 64))
    img[32 - 8:32 + 9, 32 - 8:32 + 9] = k
    with pytest.warns(UserWarning, match="100"):
        est = estimate_otf_from_beads([img], 0.3, window=17)
    ref = _generator_otf(k, 64)
    assert np.abs(est.spectrum - radial_average(ref.spectrum.real)).max() < 1e-12


def test_no_beads_hint():
    with pytest.raises(ValueError, match="threshold"):
        estimate_otf_from_beads([np.zeros((64, 64))], 0.3, window=17)


def test_bead_list_permutation_invariant():
    k = _kernel(128)
    imgs = [make_bead_image(k, 128, 20, np.random.default_rng(s), min_separation=18)[0]
            for s in range(3)]
    with pytest.warns(UserWarning):
        a = estimate_otf_from_beads(imgs, 0.3, window=17)
        b = estimate_otf_from_beads(imgs[::-1], 0.3, window=17)
    assert np.abs(a.spectrum - b.spectrum).max() < 1e-12


def test_shifted_power_examples():
    otf = synthesize_otf(64, 0.25)
    power = otf.power()
    assert np.array_equal(shifted_otf_power(otf, (0, 0)), power)
    assert np.array_equal(shifted_otf_power(otf, (5 / 64, -3 / 64)),
                          np.roll(power, (3, -5), axis=(0, 1)))
    # rounding: 10.4 bins -> 10 bins; H(k + p) is the grid rolled by -p
    assert np.array_equal(shifted_otf_power(otf, (10.4 / 64, 0)), np.roll(power, -10, axis=1))
    assert np.array_equal(shifted_otf_power(otf, (10.4 / 64, 0), sign=-1),
                          np.roll(power, 10, axis=1))


@given(st.floats(-0.45, 0.45), st.floats(-0.45, 0.45), st.sampled_from([1, -1]))
def test_shifted_power_properties(px, py, sign):
    otf = synthesize_otf(32, 0.3)
    s = shifted_otf_power(otf, (px, py), sign)
    assert np.all(s >= 0)
    assert s.sum() == pytest.approx(otf.power().sum())
