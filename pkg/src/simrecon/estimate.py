"""
Blind estimation of illumination and object-prior parameters from raw frames and separated bands.

Frequencies are in cycles/pixel and phases in radians. A pattern frequency is reported in the
canonical half-plane ``fx > 0`` (or ``fx == 0, fy > 0``); the pair ``(-p, -phi)`` describes the
same pattern, see :func:`canonicalize`.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.signal import windows

from .imagecore import (FrequencyVector, fft2_centered, frequency_grid, ifft2_centered,
                        ifft2_centered_complex, mirror_valid_mask)
from .params import IlluminationParams, OrientationParams, object_power  # noqa: F401 (re-export)
from .separation import SINGULAR_TOL, separation_matrix

logger = logging.getLogger(__name__)


class EstimationError(ValueError):
    """An estimator could not produce a trustworthy value."""


@dataclass
class EstimationConfig:
    """
    Tuning knobs of the estimators.

    :ivar freq_annulus: search range of ``|p|`` in units of the OTF cutoff
    :ivar freq_tol_bins: refinement tolerance in bins (1/N)
    :ivar peak_ratio: the coarse peak must exceed this multiple of the median over the annulus
    :ivar noise_guard: noise power is averaged over ``|k| > noise_guard * k_cutoff``
    :ivar fit_band: radial range used by the power-spectrum and modulation fits, in units of the
      cutoff
    :ivar tirf_coarse_deg: grid step of the relative-phase coarse search
    :ivar tirf_tol_deg: relative-phase refinement tolerance
    :ivar tirf_freq_max: upper end of the TIRF frequency search in units of the cutoff
    :ivar subtract_mean: remove the frame/intensity mean before the frequency and phase
      correlations (suppresses DC leakage at fractional frequencies)
    :ivar freq_taper: Tukey taper fraction applied to the correlation images before the lag
      sums (0 disables); suppresses edge leakage that biases the fractional peak
    :ivar phase_taper: Tukey taper fraction applied to the frames before the phase correlation
    :ivar phase_iterations: passes of phase re-estimation on the frames minus the separated
      widefield term (0 keeps the single-pass estimate)
    :ivar tirf_whiten: normalize the band spectra per bin before the TIRF frequency search
    """
    freq_annulus: tuple = (0.2, 1.0)
    freq_tol_bins: float = 1e-4
    peak_ratio: float = 3.0
    noise_guard: float = 1.1
    fit_band: tuple = (0.05, 0.9)
    tirf_coarse_deg: float = 10.0
    tirf_tol_deg: float = 0.05
    tirf_freq_max: float = 2.0
    subtract_mean: bool = True
    freq_taper: float = 0.2
    phase_taper: float = 0.2
    phase_iterations: int = 2
    tirf_whiten: bool = True

    def __post_init__(self):
        self.freq_annulus = tuple(float(v) for v in self.freq_annulus)
        self.fit_band = tuple(float(v) for v in self.fit_band)
        lo, hi = self.freq_annulus
        if not 0 <= lo < hi:
            raise ValueError("freq_annulus must satisfy 0 <= lo < hi")
        if not 0 <= self.fit_band[0] < self.fit_band[1] <= 1:
            raise ValueError("fit_band must satisfy 0 <= lo < hi <= 1")
        if self.noise_guard < 1:
            raise ValueError("noise_guard must be >= 1")
        if self.freq_tol_bins <= 0 or self.tirf_tol_deg <= 0 or self.tirf_coarse_deg <= 0:
            raise ValueError("tolerances and steps must be > 0")
        if not (0 <= self.freq_taper <= 1 and 0 <= self.phase_taper <= 1):
            raise ValueError("freq_taper and phase_taper must lie in [0, 1]")
        if self.phase_iterations < 0:
            raise ValueError("phase_iterations must be >= 0")


def is_canonical(p):
    return p[0] > 0 or (p[0] == 0 and p[1] > 0)


def canonicalize(p, phases=None):
    """
    Map ``(p, phases)`` to the canonical half-plane, negating the phases when p is flipped.

    :return: ``FrequencyVector`` or ``(FrequencyVector, phases)`` when phases are given
    """
    p = FrequencyVector(*p)
    flip = not is_canonical(p)
    if flip:
        p = -p
    if phases is None:
        return p
    ph = np.asarray(phases, dtype=float)
    ph = np.mod(-ph if flip else ph, 2 * np.pi)
    return p, ph


def mean_frequency(ps):
    """Average of per-frame estimates after mapping each to the canonical half-plane."""
    arr = np.array([canonicalize(p) for p in ps])
    return FrequencyVector(*arr.mean(axis=0))


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    return -np.angle(np.exp(-1j * np.asarray(a)))


# ---------------------------------------------------------------------------
# helpers: lag sums evaluated with separable exponentials
# ---------------------------------------------------------------------------

def _lag_sum(v, q, spacing=1.0):
    """``sum_r v(r) exp(+i 2 pi q.r)`` for an arbitrary (fractional) q, in O(N^2)."""
    n = v.shape[0]
    idx = np.arange(n) * spacing
    ex = np.exp(2j * np.pi * q[0] * idx)
    ey = np.exp(2j * np.pi * q[1] * idx)
    return ey @ v @ ex


def _lag_grid(v):
    """``sum_r v(r) exp(+i 2 pi q.r)`` at every integer-bin q, DC-centered."""
    n = v.shape[0]
    return np.fft.fftshift(np.fft.ifft2(v)) * (n * n)


def _refine_peak(v, q0, tol_bins, n):
    """Nelder-Mead maximization of ``|lag_sum(v, q)|`` started at q0 (cycles/pixel)."""
    scale = abs(_lag_sum(v, q0)) or 1.0

    def neg(u):
        return -abs(_lag_sum(v, (u[0] / n, u[1] / n))) / scale

    u0 = np.array(q0) * n
    simplex = np.array([u0, u0 + [0.5, 0.0], u0 + [0.0, 0.5]])
    res = optimize.minimize(neg, u0, method="Nelder-Mead",
                            options={"xatol": tol_bins, "fatol": 1e-14,
                                     "initial_simplex": simplex, "maxiter": 2000})
    return FrequencyVector(res.x[0] / n, res.x[1] / n)


def taper(n, fraction):
    """Separable 2-D Tukey window; all ones for ``fraction == 0``."""
    if fraction <= 0:
        return np.ones((n, n))
    w = windows.tukey(n, fraction)
    return np.outer(w, w)


def _coarse_peak(power, mask, ratio, what):
    vals = np.where(mask, power, -np.inf)
    iy, ix = np.unravel_index(np.argmax(vals), vals.shape)
    med = np.median(power[mask])
    if not power[iy, ix] > ratio * med:
        raise EstimationError(f"no {what} peak above {ratio}x the annulus median "
                              f"(peak {power[iy, ix]:.3g}, median {med:.3g}); "
                              f"check the OTF cutoff and that the pattern is visible")
    return iy, ix


# ---------------------------------------------------------------------------
# pattern frequency and phase (standard pipeline)
# ---------------------------------------------------------------------------

def correlation_image(d_spec, otf, subtract_mean=True, taper_fraction=0.0):
    """
    ``|F^-1(D H*)|^2``, whose lag sums give the autocorrelation objective C1.

    :param bool subtract_mean: remove the image mean
    :param float taper_fraction: Tukey taper applied after the mean removal
    """
    c = ifft2_centered_complex(d_spec * np.conj(otf.spectrum))
    w = np.abs(c) ** 2
    if subtract_mean:
        w = w - w.mean()
    return w * taper(w.shape[0], taper_fraction)


def c1_objective(d_spec, otf, p, subtract_mean=True, taper_fraction=0.0):
    """``|C1(p)| = |sum_k C(k) C*(k + p)|`` with ``C = D H*`` (evaluated through Parseval)."""
    n = d_spec.shape[0]
    w = correlation_image(d_spec, otf, subtract_mean, taper_fraction)
    return abs(_lag_sum(w, p)) * n * n


def estimate_pattern_frequency(d_spec, otf, config=None):
    """
    Pattern frequency of one raw frame from the autocorrelation of ``D H*``.

    Coarse stage: the strongest integer-bin lag inside the annulus
    ``freq_annulus * k_cutoff`` of the canonical half-plane. Fine stage: Nelder-Mead on the
    fractional lag down to ``freq_tol_bins``.

    :param d_spec: DC-centered spectrum of one frame
    :param otf: :class:`~simrecon.otfmodel.Otf`
    :param config: :class:`EstimationConfig`
    :raises EstimationError: when no peak stands out
    """
    cfg = config or EstimationConfig()
    n = d_spec.shape[0]
    w = correlation_image(d_spec, otf, cfg.subtract_mean, cfg.freq_taper)
    power = np.abs(_lag_grid(w))
    kx, ky = frequency_grid(n)
    kr = np.hypot(kx, ky)
    lo, hi = cfg.freq_annulus
    annulus = (kr > lo * otf.k_cutoff) & (kr < hi * otf.k_cutoff)
    half = (kx > 0) | ((kx == 0) & (ky > 0))
    iy, ix = _coarse_peak(power, annulus & half, cfg.peak_ratio, "pattern")
    p = _refine_peak(w, (kx[iy, ix], ky[iy, ix]), cfg.freq_tol_bins, n)
    return canonicalize(p)


def phase_sums(frame, p, subtract_mean=True, taper_fraction=0.0):
    """``(a, b)`` with ``C2(phi) = a cos(phi) + b sin(phi)`` for the trial pattern
    ``-cos(2 pi p.r + phi)``, optionally on a tapered frame."""
    d = np.asarray(frame, dtype=float)
    if subtract_mean:
        d = d - d.mean()
    z = _lag_sum(d * taper(d.shape[0], taper_fraction), p)
    return -z.real, z.imag


def estimate_phase_spatial(frame, p, subtract_mean=True, taper_fraction=0.0):
    """
    Pattern phase of one frame by maximizing ``C2 = sum_r D(r) [-cos(2 pi p.r + phi)]``.

    C2 is exactly ``a cos(phi) + b sin(phi)``, so the maximum is ``atan2(b, a)``. The frame mean is
    removed first, which leaves the maximizer unchanged for full pattern periods and removes the
    leakage of the mean at fractional frequencies otherwise. A real taper leaves the phase of a
    pure sinusoid unchanged and suppresses the image edges, where a fractional pattern does not
    wrap continuously.

    :param frame: N x N raw frame
    :param p: pattern frequency (cycles/pixel)
    :param float taper_fraction: Tukey taper fraction (0 disables)
    :return: phase in [0, 2 pi)
    :raises EstimationError: if the frame has no content at p
    """
    a, b = phase_sums(frame, p, subtract_mean, taper_fraction)
    if a == 0 and b == 0:
        raise EstimationError("no pattern content at the given frequency")
    return float(np.mod(np.arctan2(b, a), 2 * np.pi))


def refine_pattern(frames, p, iterations=2, subtract_mean=True, taper_fraction=0.0,
                   tol_bins=1e-4, otf=None, deconv_reg=1e-4):
    """
    Phases of the three frames of one orientation, with a joint polish of p.

    The single-pass phase estimate also sees the object's own content at p, which is common to
    all three frames. Each further pass separates the bands with the current phases, subtracts
    the widefield image (the central band) from every frame and works on the remaining
    pattern-only parts: p is moved to the maximum of ``sum_j |C2_j|^2`` and the phases are
    re-estimated there. With ``iterations == 0`` p is returned unchanged.

    :param frames: (3, N, N) raw frames
    :param p: starting pattern frequency
    :param int iterations: number of refinement passes
    :param float taper_fraction: Tukey taper fraction passed to :func:`estimate_phase_spatial`
    :param float tol_bins: frequency tolerance in bins
    :param otf: when given, the pattern-only parts are Wiener-deconvolved before the polish so the
      slope of the OTF does not pull p toward lower frequencies
    :param float deconv_reg: regularization of that deconvolution relative to ``max |H|^2``
    :return: ``(p, phases)`` with phases in [0, 2 pi)
    """
    frames = np.asarray(frames, dtype=float)
    n = frames.shape[1]
    p = FrequencyVector(*p)
    phases = np.array([estimate_phase_spatial(f, p, subtract_mean, taper_fraction)
                       for f in frames])
    if iterations == 0:
        return p, phases
    spectra = np.stack([fft2_centered(f) for f in frames])
    win = taper(n, taper_fraction)
    for _ in range(iterations):
        try:
            inv = separation_matrix(phases, 1.0).inverse
        except ValueError:
            break
        rspec = spectra - np.tensordot(inv[0], spectra, axes=1)[None]
        if otf is not None:
            h = otf.spectrum
            h2 = np.abs(h) ** 2
            rspec = rspec * np.conj(h) / (h2 + deconv_reg * h2.max())
        resid = np.stack([ifft2_centered(r) for r in rspec])
        if subtract_mean:
            resid = resid - resid.mean(axis=(1, 2), keepdims=True)
        resid = resid * win
        scale = sum(abs(_lag_sum(r, p)) ** 2 for r in resid) or 1.0

        def neg(u):
            q = (u[0] / n, u[1] / n)
            return -sum(abs(_lag_sum(r, q)) ** 2 for r in resid) / scale

        u0 = np.array([p.fx, p.fy]) * n
        simplex = np.array([u0, u0 + [0.05, 0.0], u0 + [0.0, 0.05]])
        res = optimize.minimize(neg, u0, method="Nelder-Mead",
                                options={"xatol": tol_bins, "fatol": 1e-14,
                                         "initial_simplex": simplex, "maxiter": 2000})
        if np.max(np.abs(res.x - u0)) < 0.5:
            p = FrequencyVector(res.x[0] / n, res.x[1] / n)
        phases = np.array([estimate_phase_spatial(f, p, False, 0.0) for f in resid])
    return p, phases


def brute_force_phase(frame, p, step_deg=0.01, subtract_mean=True):
    """Grid search of C2 for cross-checking :func:`estimate_phase_spatial`."""
    a, b = phase_sums(frame, p, subtract_mean)
    phi = np.deg2rad(np.arange(0, 360, step_deg))
    return float(phi[np.argmax(a * np.cos(phi) + b * np.sin(phi))])


# ---------------------------------------------------------------------------
# noise, object prior, modulation
# ---------------------------------------------------------------------------

def estimate_noise_power(component, otf, guard=1.1):
    """
    Mean ``|value|^2`` over ``|k| > guard * k_cutoff``.

    Only bins whose mirror is also on the grid are used, so a band and its conjugate mirror get
    identical estimates.

    :param component: band spectrum on the OTF grid
    :param otf: :class:`~simrecon.otfmodel.Otf`
    :param float guard: guard factor on the cutoff
    """
    n = component.shape[0]
    kx, ky = frequency_grid(n, otf.spacing)
    mask = (np.hypot(kx, ky) > guard * otf.k_cutoff) & mirror_valid_mask(n)
    if not np.any(mask):
        raise EstimationError(f"no bins beyond {guard} x cutoff; the cutoff is too large for "
                              f"noise estimation")
    return float(np.mean(np.abs(component[mask]) ** 2))


def _fit_bins(n, spacing, k_cutoff, band, bin_width):
    kx, ky = frequency_grid(n, spacing)
    kr = np.hypot(kx, ky)
    nb = n // 2
    idx = np.floor(kr / (0.5 / nb)).astype(int)
    keep = (kr > band[0] * k_cutoff) & (kr < band[1] * k_cutoff)
    return kr, idx, keep


def fit_object_power_spectrum(central, otf, psi_o, config=None):
    """
    Fit ``<|central|^2> = |H|^2 A^2 |k|^(-2 alpha) + psi_o`` on radial bins.

    A log-log linear regression gives the start; a bounded trust-region least-squares refinement
    on relative (un-logged) residuals of the exact bin-averaged model gives the result.

    :param central: averaged central band ``S H``
    :param otf: :class:`~simrecon.otfmodel.Otf`
    :param float psi_o: noise power of ``central``
    :return: ``(A, alpha)`` with alpha in (0, 4]
    :raises EstimationError: with fewer than 8 usable bins
    """
    cfg = config or EstimationConfig()
    n = central.shape[0]
    kr, idx, keep = _fit_bins(n, otf.spacing, otf.k_cutoff, cfg.fit_band, otf.bin_width)
    h2 = otf.power()
    power = np.abs(central) ** 2
    bins = np.unique(idx[keep])
    sel = [keep & (idx == b) for b in bins]
    sel = [s for s in sel if h2[s].mean() > 0]
    if len(sel) < 8:
        raise EstimationError(f"only {len(sel)} usable radial bins for the power fit")
    floor = 1e-3 * psi_o if psi_o > 0 else 1e-12 * power[keep].mean()
    y = np.array([max(power[s].mean() - psi_o, floor) for s in sel])
    kmean = np.array([kr[s].mean() for s in sel])
    hmean = np.array([h2[s].mean() for s in sel])

    slope, icpt = np.polyfit(np.log(kmean), np.log(y / hmean), 1)
    alpha0 = float(np.clip(-slope / 2, 0.0, 4.0))
    logA0 = icpt / 2

    k_members = [kr[s] for s in sel]
    h_members = [h2[s] for s in sel]

    def resid(x):
        la, al = x
        model = np.array([np.mean(hm * km ** (-2 * al)) for hm, km in zip(h_members, k_members)])
        return (np.exp(2 * la) * model - y) / y

    res = optimize.least_squares(resid, [logA0, alpha0], bounds=([-np.inf, 0.0], [np.inf, 4.0]),
                                 method="trf", x_scale=[1.0, 0.1])
    A = float(np.exp(res.x[0]))
    alpha = float(np.clip(res.x[1], 1e-9, 4.0))
    return A, alpha


def mean_leakage(p, n, dc_value, otf):
    """
    Side-band contribution of the object mean: ``mean * DFT[exp(+i 2 pi p.r)](k) H(k)``.

    For fractional p the mean spreads over the whole band instead of sitting in the bin at p.

    :param p: pattern frequency
    :param int n: grid size
    :param complex dc_value: DC bin of the central band, ``sum(S) H(0)``
    :param otf: :class:`~simrecon.otfmodel.Otf`
    """
    h0 = otf.spectrum[n // 2, n // 2]
    if h0 == 0:
        return np.zeros((n, n), dtype=complex)
    idx = np.arange(n) * otf.spacing
    carrier = np.outer(np.exp(2j * np.pi * p[1] * idx), np.exp(2j * np.pi * p[0] * idx))
    return dc_value / h0 / (n * n) * fft2_centered(carrier) * otf.spectrum


def estimate_modulation(side, p, A, alpha, otf, psi_p, config=None, m_floor=1e-3, dc_value=0.0):
    """
    Modulation from the power of the ``S(k - p)H`` band separated with m = 1.

    Fits ``|side|^2 - psi_p ~ m^2 x`` with ``x = |H(k)|^2 A^2 |k - p|^(-2 alpha) + |L(k)|^2`` by
    iteratively reweighted least squares with weights ``1 / (m^2 x + psi_p)^2`` (the variance of a
    power measurement) over ``fit_band`` around both the grid origin and the displaced center.
    ``L`` is the spread of the object mean (:func:`mean_leakage`), which dominates the band
    power near p when p falls between bins.

    :param dc_value: DC bin of the central band; 0 leaves the mean term out
    :return: m, floored at ``m_floor`` (with a warning); values above 1 are flagged
    :raises EstimationError: if the predicted signal vanishes on the fit region
    """
    cfg = config or EstimationConfig()
    n = side.shape[0]
    kx, ky = frequency_grid(n, otf.spacing)
    kr = np.hypot(kx, ky)
    kp = np.hypot(kx - p[0], ky - p[1])
    lo, hi = cfg.fit_band
    kc = otf.k_cutoff
    mask = (kr > lo * kc) & (kr < hi * kc) & (kp > lo * kc)
    x = otf.power() * object_power(kp, A, alpha, 0.5 * otf.bin_width)
    if dc_value:
        x = x + np.abs(mean_leakage(p, n, dc_value, otf)) ** 2
    x = x[mask]
    y = np.abs(side[mask]) ** 2 - psi_p
    if not np.any(x > 0) or np.sum(x * x) == 0:
        raise EstimationError("predicted side-band power vanishes; cannot estimate m")
    m2 = np.sum(x * y) / np.sum(x * x)
    for _ in range(50):
        wgt = 1.0 / (max(m2, 0.0) * x + psi_p) ** 2 if psi_p > 0 or m2 > 0 else np.ones_like(x)
        new = np.sum(wgt * x * y) / np.sum(wgt * x * x)
        if abs(new - m2) <= 1e-10 * abs(m2):
            m2 = new
            break
        m2 = new
    m = float(np.sqrt(max(m2, 0.0)))
    if m < m_floor:
        warnings.warn(f"modulation estimate {m:.3g} below {m_floor}; using the floor "
                      f"(pattern not visible?)", stacklevel=2)
        m = m_floor
    elif m > 1:
        warnings.warn(f"modulation estimate {m:.3f} exceeds 1", stacklevel=2)
    return m


# ---------------------------------------------------------------------------
# TIRF: relative phases and frequency
# ---------------------------------------------------------------------------

def tirf_gram(spectra, otf, taper_fraction=0.0):
    """
    ``G_jl = sum_k w(k) D_j(k) D_l*(k)`` with ``w = |H|^2`` (mirror-symmetric bins only).

    With ``taper_fraction > 0`` the frames are tapered in space first, which confines the spread
    of the object mean at fractional p to a few bins around +-p.
    """
    spectra = np.asarray(spectra)
    if taper_fraction > 0:
        win = taper(otf.n, taper_fraction)
        spectra = np.stack([fft2_centered(ifft2_centered(s) * win) for s in spectra])
    w = otf.power() * mirror_valid_mask(otf.n)
    flat = spectra.reshape(3, -1)
    return (flat * w.ravel()) @ np.conj(flat).T


def c4_objective(gram, psi):
    """``|C4|`` at trial relative phases ``psi = (psi2, psi3)`` from the precomputed Gram matrix."""
    inv = separation_matrix((0.0, psi[0], psi[1]), 1.0, "tirf").inverse
    return abs(inv[1] @ gram @ np.conj(inv[2]))


def estimate_relative_phases_tirf(spectra, otf, config=None):
    """
    Relative phases ``(phi2 - phi1, phi3 - phi1)`` of one orientation by minimizing the weighted
    cross-correlation |C4| between the two side bands separated with trial phases.

    The weighted band products reduce to a 3 x 3 Gram matrix of the frames, so every evaluation is
    O(1). A coarse grid is followed by Nelder-Mead refinement. ``psi`` and ``-psi`` give the same
    |C4| (they swap the roles of the side bands); the branch with ``psi2`` in (0, pi) is returned.

    :param spectra: (3, N, N) frame spectra
    :return: ``(psi2, psi3)`` in [0, 2 pi)
    :raises EstimationError: if the objective is flat (no modulation or wrong OTF)
    """
    cfg = config or EstimationConfig()
    gram = tirf_gram(spectra, otf, cfg.phase_taper)
    scale = np.real(np.trace(gram)) or 1.0
    gram = gram / scale
    grid = np.deg2rad(np.arange(0.0, 360.0, cfg.tirf_coarse_deg))
    best, best_val, vals = None, np.inf, []
    for a in grid:
        for b in grid:
            d = _tirf_delta(a, b)
            if abs(d) < 1e-6:
                continue
            v = c4_objective(gram, (a, b))
            vals.append(v)
            if v < best_val:
                best, best_val = (a, b), v
    vals = np.asarray(vals)
    # the Gram matrix is trace-normalized, so |C4| is O(1) whenever the side bands carry signal
    if best is None or vals.max() < 1e-12 or np.ptp(vals) <= 1e-9 * vals.max():
        raise EstimationError("relative-phase objective is flat; no modulation or wrong OTF")

    def obj(x):
        if abs(_tirf_delta(*x)) < SINGULAR_TOL:
            return np.inf
        return c4_objective(gram, x)

    step = np.deg2rad(cfg.tirf_coarse_deg) / 2
    x0 = np.array(best)
    simplex = np.array([x0, x0 + [step, 0.0], x0 + [0.0, step]])
    res = optimize.minimize(obj, x0, method="Nelder-Mead",
                            options={"xatol": np.deg2rad(cfg.tirf_tol_deg) / 4, "fatol": 0.0,
                                     "initial_simplex": simplex, "maxiter": 4000})
    psi2, psi3 = np.mod(res.x, 2 * np.pi)
    if psi2 > np.pi:
        psi2, psi3 = np.mod(-psi2, 2 * np.pi), np.mod(-psi3, 2 * np.pi)
    return float(psi2), float(psi3)


def _tirf_delta(a, b):
    e = lambda x: np.exp(1j * x)
    return e(-a) - e(a) - e(-b) + e(b) + e(a - b) - e(b - a)


def whiten(spec, otf, rel_floor=1e-3):
    """``spec H* / |spec H*|`` inside the OTF support and 0 elsewhere (phase-only spectrum)."""
    y = spec * np.conj(otf.spectrum)
    a = np.abs(y)
    h = np.abs(otf.spectrum)
    keep = (h > rel_floor * h.max()) & (a > 0)
    return np.where(keep, y / np.where(a > 0, a, 1.0), 0.0)


def cross_power_image(central, side, otf, taper_fraction=0.0, whitened=False):
    """
    ``F^-1(central H*) conj(F^-1(side H*))``; its lag sums give C5's numerator.

    :param bool whitened: normalize both spectra to unit magnitude per bin first, so every bin of
      the band overlap counts equally (phase correlation)
    """
    if whitened:
        a, b = whiten(central, otf), whiten(side, otf)
    else:
        hc = np.conj(otf.spectrum)
        a, b = central * hc, side * hc
    v = ifft2_centered_complex(a) * np.conj(ifft2_centered_complex(b))
    return v * taper(v.shape[0], taper_fraction)


def c5_objective(central, side, otf, p):
    """
    ``|sum_k Sc(k) Ss*(k + p)| / sum_k |Ss(k + p)|^2`` with ``Sc = central H*``, ``Ss = side H*``;
    the denominator is shift invariant on the periodic grid.
    """
    n = central.shape[0]
    v = cross_power_image(central, side, otf)
    den = np.sum(np.abs(side * np.conj(otf.spectrum)) ** 2)
    return abs(_lag_sum(v, p)) * n * n / den if den > 0 else 0.0


def estimate_frequency_tirf(central, side, otf, config=None):
    """
    Pattern frequency from the normalized cross-power of the central band and the
    ``S(k - p)H`` side band, maximized over lags up to ``tirf_freq_max * k_cutoff``.

    With ``tirf_whiten`` the spectra are normalized per bin before correlating. When ``|p|`` is
    near or beyond the cutoff the band overlap is a thin lens where ``|H|^2`` weights are tiny,
    and the unnormalized cross-power is dominated by the strong low frequencies of the central
    band instead.

    :param central: central band ``S H``
    :param side: side band ``S(k - p) H`` (phase-absorbed)
    :return: p such that shifting ``side`` by p aligns it with ``central``
    :raises EstimationError: when no cross-power peak stands out
    """
    cfg = config or EstimationConfig()
    n = central.shape[0]
    v = cross_power_image(central, side, otf, cfg.freq_taper, cfg.tirf_whiten)
    power = np.abs(_lag_grid(v))
    kx, ky = frequency_grid(n)
    kr = np.hypot(kx, ky)
    annulus = (kr > cfg.freq_annulus[0] * otf.k_cutoff) & (kr < cfg.tirf_freq_max * otf.k_cutoff)
    if not np.any(annulus):
        raise EstimationError("empty frequency search region")
    iy, ix = _coarse_peak(power, annulus, cfg.peak_ratio, "cross-power")
    return _refine_peak(v, (kx[iy, ix], ky[iy, ix]), cfg.freq_tol_bins, n)
