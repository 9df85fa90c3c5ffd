"""
End-to-end acceptance checks at desk scale (N = 512).

Each test prints one ``criterion n: PASS/FAIL`` line; the lines are repeated in the pytest
terminal summary. Run standalone with ``python3 tests/test_acceptance.py``.
"""
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy import ndimage

from conftest import record
from simrecon import estimate as est
from simrecon.imagecore import (embed_spectrum, fft2_centered, frequency_radius, ifft2_centered)
from simrecon.otfmodel import psf_from_otf, synthesize_otf
from simrecon.params import IlluminationParams, OrientationParams
from simrecon.preprocess import opening
from simrecon.psfmetrics import resolution_report, solve_effective_psf
from simrecon.reconstruct import (MergeConfig, effective_transfer, estimate_parameters,
                                  phase_match, reconstruct_sim, reconstruct_tirf_sim, shift_band)
from simrecon.separation import separate_components, separation_matrix
from simrecon.simulate import SimulationConfig, make_test_object, simulate_stack

N = 512
KC = 0.25


def nrms(out, ref):
    return float(np.sqrt(np.mean((out - ref) ** 2)) / np.std(ref))


@pytest.fixture(scope="module")
def otf():
    return synthesize_otf(N, KC)


@pytest.fixture(scope="module")
def obj():
    return make_test_object(N, alpha=0.5, seed=1)


@pytest.fixture(scope="module")
def desk(obj, otf):
    stack, truth = simulate_stack(obj, otf, SimulationConfig(rng_seed=0))
    return stack, truth, reconstruct_sim(stack, otf)


# -- 1 ----------------------------------------------------------------------

def test_criterion_1_resolution(obj, otf, desk):
    _, _, res = desk
    t0 = time.perf_counter()
    rep, _, _ = resolution_report(obj, res.widefield, res.image, psf_from_otf(otf), p=40,
                                  n_repeats=100)
    seconds = time.perf_counter() - t0
    r_sim, r_wf = rep["ratio"]["sim"], rep["ratio"]["deconv_widefield"]
    ok = 0.45 <= r_sim <= 0.58 and 0.63 <= r_wf <= 0.77 and seconds < 300
    assert record(1, ok, f"FWHM ratio SIM {r_sim:.3f} in [0.45, 0.58], deconvolved widefield "
                         f"{r_wf:.3f} in [0.63, 0.77], PSF solve {seconds:.0f} s")


# -- 2 ----------------------------------------------------------------------

def fitted_alpha(img, k_cutoff, band=(0.05, 0.9)):
    """Amplitude exponent from a straight line through log radial power vs log |k|."""
    n = img.shape[0]
    power = np.abs(np.fft.fftshift(np.fft.fft2(img))) ** 2
    f = np.fft.fftshift(np.fft.fftfreq(n))
    kr = np.hypot(*np.meshgrid(f, f))
    idx = np.rint(kr * n).astype(int)
    prof = np.bincount(idx.ravel(), power.ravel()) / np.bincount(idx.ravel())
    k = np.arange(prof.size) / n
    sel = (k >= band[0] * k_cutoff) & (k <= band[1] * k_cutoff)
    slope = np.polyfit(np.log(k[sel]), np.log(prof[sel]), 1)[0]
    return -slope / 2


def test_criterion_2_parameter_recovery(obj, otf):
    alpha_ref = fitted_alpha(obj, KC)
    dp = dphi = dm = da = 0.0
    for seed in range(10):
        stack, truth = simulate_stack(obj, otf, SimulationConfig(rng_seed=100 + seed))
        params = estimate_parameters(stack, otf)
        for i in range(3):
            p_true, ph_true = est.canonicalize(truth.p[i], truth.phases[i])
            o = min(params.orientations, key=lambda o: np.hypot(*np.subtract(o.p, p_true)))
            dp = max(dp, float(np.hypot(*np.subtract(o.p, p_true))))
            dphi = max(dphi, float(np.abs(est.wrap_angle(np.subtract(o.phases, ph_true))).max()))
            dm = max(dm, abs(o.m - truth.modulation) / truth.modulation)
        da = max(da, abs(params.alpha - alpha_ref) / alpha_ref)
    ok = dp < 0.05 / N and np.rad2deg(dphi) < 1 and dm < 0.07 and da < 0.15
    assert record(2, ok, f"10 seeds, worst |dp| {dp * N:.4f}/N, |dphi| {np.rad2deg(dphi):.2f} deg, "
                         f"|dm|/m {100 * dm:.1f}%, alpha {100 * da:.1f}% off the direct fit "
                         f"{alpha_ref:.3f}")


# -- 3 ----------------------------------------------------------------------

def test_criterion_3_noise_free_exactness(otf):
    obj = make_test_object(N, alpha=0.5, seed=1, edge_taper=0.25)
    stack, truth = simulate_stack(obj, otf, SimulationConfig(rng_seed=0, noise_percent=0))
    # exact p, phases, m and object prior; zero noise powers
    exact = IlluminationParams([OrientationParams(truth.p[i], tuple(truth.phases[i]), truth.modulation)
                                for i in range(3)], 1.0, 0.5)
    res = reconstruct_sim(stack, otf, params=exact)
    ref = ifft2_centered(embed_spectrum(fft2_centered(obj), 2 * N)
                         * effective_transfer(res.params, otf, MergeConfig()))
    err = nrms(res.image, ref)

    rng = np.random.default_rng(3)
    spectra = stack.spectra()[0]
    sep = separation_matrix(truth.phases[0], truth.modulation)
    bands = separate_components(spectra, sep)
    back = np.tensordot(sep.entries, np.stack([bands.center, bands.minus, bands.plus]), axes=1)
    trip = float(np.abs(back - spectra).max() / np.abs(spectra).max())
    v = rng.standard_normal((3, 1000)) + 1j * rng.standard_normal((3, 1000))
    trip = max(trip, float(np.abs(sep.inverse @ (sep.entries @ v) - v).max()))

    ok = err < 0.01 and trip < 1e-10
    assert record(3, ok, f"noise-free nRMS vs passband-limited object {100 * err:.2f}% (< 1%), "
                         f"separation round trip {trip:.1e} (< 1e-10)")


# -- 4 ----------------------------------------------------------------------

def dip(img, peaks, mid):
    return float(img[mid] / min(img[p] for p in peaks))


def test_criterion_4_tirf(otf, desk):
    stack, _, res = desk
    tirf = reconstruct_tirf_sim(stack, otf)
    diff = nrms(tirf.image, res.image)

    kc = 1 / 8.8
    otf_t = synthesize_otf(N, kc)
    target = make_test_object(N, alpha=0.5, seed=1)
    c = N // 2
    target[c, c - 2] += 20
    target[c, c + 2] += 20
    dips = {}
    for noise in (0.0, 10.0):
        cfg = SimulationConfig(pattern_freq_magnitude=1.2 * kc, noise_percent=noise, rng_seed=0)
        s, _ = simulate_stack(target, otf_t, cfg)
        r = reconstruct_tirf_sim(s, otf_t)
        dips[noise] = (dip(r.image, [(2 * c, 2 * c - 4), (2 * c, 2 * c + 4)], (2 * c, 2 * c)),
                       dip(r.widefield, [(c, c - 2), (c, c + 2)], (c, c)))
    sim_dip, wf_dip = dips[0.0]
    ok = diff < 0.05 and sim_dip < 0.75 and wf_dip >= 0.75
    assert record(4, ok, f"TIRF vs standard nRMS {100 * diff:.2f}% (< 5%); two points 4 px apart "
                         f"at |p| = 1.2 k_cutoff, noise-free: SIM dip {sim_dip:.2f} (< 0.75), "
                         f"widefield {wf_dip:.2f} (not resolved); with 10% noise SIM dip "
                         f"{dips[10.0][0]:.2f} (not gated)")


# -- 5 ----------------------------------------------------------------------

def test_criterion_5_properties(otf, desk):
    rng = np.random.default_rng(5)
    checks = {}

    img = rng.standard_normal((N, N))
    spec = fft2_centered(img)
    checks["Parseval"] = abs(np.sum(np.abs(spec) ** 2) / N ** 2 / np.sum(img ** 2) - 1) < 1e-10

    band = rng.standard_normal((128, 128)) + 1j * rng.standard_normal((128, 128))
    p = (0.1234, -0.0567)
    checks["shift inverse"] = np.abs(shift_band(shift_band(band, p, 1), p, -1) - band).max() < 1e-12

    worst = 0.0
    for _ in range(1000):
        ph = rng.uniform(0, 2 * np.pi, 3)
        if min(abs(np.sin((ph[i] - ph[j]) / 2)) for i, j in ((0, 1), (0, 2), (1, 2))) < 0.05:
            continue
        sep = separation_matrix(ph, rng.uniform(0.1, 1.0))
        worst = max(worst, np.abs(sep.entries @ sep.inverse - np.eye(3)).max())
    checks["M M^-1"] = worst < 1e-12

    c = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    g = 1.1
    _, m2, p2 = phase_match(c, c * np.exp(1j * g), np.conj(c) * np.exp(-1j * g),
                            np.ones(c.shape, bool))
    again, _, _ = phase_match(c, m2, p2, np.ones(c.shape, bool))
    checks["phase match"] = abs(again) < 1e-9

    bg = rng.random((96, 96))
    op = opening(bg, 4)
    checks["opening"] = bool(np.all(op <= bg) and np.array_equal(opening(op, 4), op))

    stack, _, res = desk
    checks["merge bound"] = all(effective_transfer(res.params, otf, MergeConfig(w=w)).max() <= 1
                                for w in (1e-3, 0.1, 0.4, 1.0))

    kr = frequency_radius(2 * N, 0.5)
    energy = [np.sum(np.abs(reconstruct_sim(stack, otf, MergeConfig(w=w),
                                            params=res.params).spectrum[kr > KC]) ** 2)
              for w in (0.1, 0.5, 1.0)]
    checks["monotone in w"] = energy[0] > energy[1] > energy[2]

    failed = [k for k, v in checks.items() if not v]
    assert record(5, not failed, f"{len(checks) - len(failed)}/{len(checks)} property checks "
                                 f"hold ({', '.join(checks)})"
                                 + (f"; failed: {', '.join(failed)}" if failed else ""))


# -- 6 ----------------------------------------------------------------------

def test_criterion_6_psf_solver():
    rng = np.random.default_rng(6)
    texture = rng.random((128, 128))
    kernel = rng.random((5, 5))
    image = ndimage.convolve(texture, kernel, mode="wrap")
    planted = np.abs(solve_effective_psf(texture, image, p=5, n_repeats=5).psf - kernel).max()

    delta = solve_effective_psf(texture, texture, p=7, n_repeats=3).psf
    expect = np.zeros((7, 7))
    expect[3, 3] = 1.0
    off = np.abs(delta - expect).max()

    ok = planted < 1e-6 and off < 1e-6
    assert record(6, ok, f"planted 5x5 kernel max error {planted:.1e} (< 1e-6), delta system "
                         f"max deviation from a delta {off:.1e}")


if __name__ == "__main__":
    # a fresh interpreter, so pytest sees conftest and hypothesis before anything imports them
    sys.exit(subprocess.call([sys.executable, "-m", "pytest", __file__, "-s", "-q", *sys.argv[1:]]))
