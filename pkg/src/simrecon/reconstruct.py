"""
Band filtering, relocation, phase matching and generalized Wiener merging, plus the two
end-to-end pipelines (standard SIM and TIRF-SIM).
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import estimate as est
from .imagecore import (FrequencyVector, embed_spectrum, fft2_centered, fft2_centered_complex,
                        frequency_grid, frequency_radius, ifft2_centered, ifft2_centered_complex)
from .params import IlluminationParams, OrientationParams, object_power
from .separation import (BandSet, SeparationMatrix, SingularPhasesError, mixing_matrix,
                         separate_components, separation_matrix, tirf_leakage,
                         tirf_leakage_closed_form)

logger = logging.getLogger(__name__)

__all__ = [
    "BandSet", "SeparationMatrix", "SingularPhasesError", "MergeConfig", "ReconstructionError",
    "SimResult", "mixing_matrix", "separation_matrix", "separate_components", "tirf_leakage",
    "tirf_leakage_closed_form", "wiener_filter_bands", "notch_filter", "shift_band",
    "relocate_bands", "phase_match", "overlap_mask", "merge_weights", "merge_generalized_wiener",
    "apodize", "wiener_widefield", "effective_transfer", "estimate_parameters", "reconstruct_sim",
    "reconstruct_tirf_sim",
]

# floor on noise powers relative to A^2 so noise-free inputs do not divide by zero
PSI_FLOOR = 1e-30


class ReconstructionError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class MergeConfig:
    """
    Settings of the final merge.

    :ivar w: Wiener constant in (0, 1]; larger values smooth more
    :ivar notch_enabled: apply the notch filter to the noisy side bands
    :ivar notch_a0: notch strength
    :ivar notch_beta: notch exponent
    :ivar apodize_enabled: taper the merged spectrum
    :ivar apodize_gamma: taper exponent
    :ivar side_prior: ``"printed"`` evaluates the side-band object prior at ``|k -+ p|`` in the
      merge weights, ``"object"`` at ``|k|`` (the relocated object frequency)
    :ivar output_upsample: fixed at 2
    """
    w: float = 0.4
    notch_enabled: bool = False
    notch_a0: float = 0.05
    notch_beta: float = 1.2
    apodize_enabled: bool = False
    apodize_gamma: float = 1.0
    side_prior: str = "printed"
    output_upsample: int = 2

    def __post_init__(self):
        if not 0 < self.w <= 1:
            raise ValueError(f"w must lie in (0, 1], got {self.w}")
        if self.notch_a0 <= 0 or self.notch_beta <= 0:
            raise ValueError("notch a0 and beta must be > 0")
        if self.apodize_gamma < 0:
            raise ValueError("apodization gamma must be >= 0")
        if self.side_prior not in ("printed", "object"):
            raise ValueError("side_prior must be 'printed' or 'object'")
        if self.output_upsample != 2:
            raise ValueError("output_upsample is fixed at 2")


# ---------------------------------------------------------------------------
# per-band operations
# ---------------------------------------------------------------------------

def _grid(n, spacing):
    kx, ky = frequency_grid(n, spacing)
    return kx, ky, np.hypot(kx, ky)


def _wiener_gain(h, signal_power, psi):
    """``H* P / (|H|^2 P + psi)``, zero where H vanishes."""
    h2 = np.abs(h) ** 2
    den = h2 * signal_power + psi
    gain = np.zeros_like(h, dtype=complex)
    ok = (np.abs(h) > 0) & (den > 0)
    gain[ok] = np.conj(h[ok]) * signal_power[ok] / den[ok]
    return gain


def wiener_filter_bands(bands, orient, A, alpha, otf):
    """
    Wiener-deconvolve the three noisy bands of one orientation.

    The side bands were separated with m = 1 and so carry an extra factor m; it is divided out
    here and enters the regularizer as m^2. The object prior of a side band is evaluated at the
    displaced frequency ``|k -+ p|`` using the fractional p.

    :param bands: :class:`BandSet` in the noisy stage, on the OTF grid
    :param orient: :class:`~simrecon.params.OrientationParams` (p, m, noise powers)
    :param float A: object power amplitude
    :param float alpha: object power exponent
    :param otf: :class:`~simrecon.otfmodel.Otf`
    """
    m = orient.m
    if m <= 0:
        raise ValueError("m must be > 0")
    h = otf.spectrum
    n = h.shape[0]
    kx, ky, kr = _grid(n, otf.spacing)
    kmin = 0.5 * otf.bin_width
    floor = PSI_FLOOR * A * A
    px, py = orient.p
    p0 = object_power(kr, A, alpha, kmin)
    pm = m * m * object_power(np.hypot(kx - px, ky - py), A, alpha, kmin)
    pp = m * m * object_power(np.hypot(kx + px, ky + py), A, alpha, kmin)
    center = _wiener_gain(h, p0, max(orient.psi_o, floor)) * bands.center
    minus = _wiener_gain(h, pm, max(orient.psi_p, floor)) * bands.minus / m
    plus = _wiener_gain(h, pp, max(orient.psi_q, floor)) * bands.plus / m
    return BandSet(center, minus, plus, bands.p, "wiener", bands.spacing)


def notch_filter(band, a0, beta, center, spacing=1.0):
    """
    Multiply by ``F(k) = 1 - exp(-a0 |k - center|^beta)`` with the distance in bins.

    :param band: DC-centered spectrum
    :param float a0: strength, > 0
    :param float beta: exponent, > 0
    :param center: frequency (fx, fy) of the band's own origin in cycles/pixel
    :param float spacing: sample spacing of the band's grid
    """
    if a0 <= 0 or beta <= 0:
        raise ValueError("a0 and beta must be > 0")
    n = band.shape[0]
    kx, ky = frequency_grid(n, spacing)
    d = np.hypot(kx - center[0], ky - center[1]) * n * spacing
    return band * (1 - np.exp(-a0 * d ** beta))


def shift_band(band, p, sign=1, spacing=1.0):
    """
    Fourier-shift a band: ``F[F^-1(band) exp(-sign i 2 pi p.r)]``.

    With ``sign=+1`` the result at bin k is the input at ``k + p``; fractional p is exact on the
    periodic grid. Content pushed past the grid edge wraps around.

    :param band: DC-centered spectrum
    :param p: (fx, fy) in cycles per original pixel
    :param int sign: +1 or -1
    :param float spacing: sample spacing in original pixels (0.5 on the doubled grid)
    """
    n = band.shape[0]
    idx = np.arange(n) * spacing
    ex = np.exp(-sign * 2j * np.pi * p[0] * idx)
    ey = np.exp(-sign * 2j * np.pi * p[1] * idx)
    field = ifft2_centered_complex(band) * ey[:, None] * ex[None, :]
    return fft2_centered_complex(field)


def embed_bands(bands, m):
    """Zero-pad all bands of a :class:`BandSet` onto an m x m grid with the same bin width."""
    scale = bands.n / m
    return BandSet(embed_spectrum(bands.center, m), embed_spectrum(bands.minus, m),
                   embed_spectrum(bands.plus, m), bands.p, bands.stage, bands.spacing * scale)


def relocate_bands(bands, p):
    """Move the side bands so that object frequency k sits at bin k."""
    minus = shift_band(bands.minus, p, +1, bands.spacing)
    plus = shift_band(bands.plus, p, -1, bands.spacing)
    return BandSet(bands.center, minus, plus, bands.p, "shifted", bands.spacing)


def overlap_mask(n, spacing, p, k_cutoff):
    """Bins inside both the central support and the relocated ``S(k - p)`` support."""
    kx, ky, kr = _grid(n, spacing)
    return (kr <= k_cutoff) & (np.hypot(kx + p[0], ky + p[1]) <= k_cutoff)


def phase_match(center, shifted_minus, shifted_plus, overlap):
    """
    Align the relocated side bands with the central band.

    ``phi_c = Arg sum_overlap minus * conj(center)``; then ``minus *= exp(-i phi_c)`` and
    ``plus *= exp(+i phi_c)`` (the plus band is the conjugate mirror of the minus band).

    :return: ``(phi_c, minus, plus)``
    """
    if not np.any(overlap):
        raise ValueError("central and side bands do not overlap")
    corr = np.sum(shifted_minus[overlap] * np.conj(center[overlap]))
    if corr == 0:
        raise ValueError("zero correlation in the overlap region")
    phi_c = float(np.angle(corr))
    return phi_c, shifted_minus * np.exp(-1j * phi_c), shifted_plus * np.exp(1j * phi_c)


# ---------------------------------------------------------------------------
# merge
# ---------------------------------------------------------------------------

def merge_weights(params, otf_big, side_prior="printed"):
    """
    Per-orientation weights ``(c0, c_minus, c_plus)`` and their sum Omega on the merge grid.

    ``c0 = A^2|k|^-2a |H(k)|^2 / psi_o``, ``c_minus = m^2 A^2|k - p|^-2a |H(k + p)|^2 / psi_p``,
    ``c_plus = m^2 A^2|k + p|^-2a |H(k - p)|^2 / psi_q``, with the shifted OTF powers taken at the
    rounded p. With ``side_prior="object"`` both side priors use ``|k|`` instead.
    """
    from .otfmodel import shifted_otf_power
    n = otf_big.n
    kx, ky, kr = _grid(n, otf_big.spacing)
    A, alpha = params.A, params.alpha
    kmin = 0.5 * otf_big.bin_width
    floor = PSI_FLOOR * A * A
    h2 = otf_big.power()
    p0 = object_power(kr, A, alpha, kmin)
    weights = []
    omega = np.zeros_like(kr)
    for o in params.orientations:
        px, py = o.p
        if side_prior == "printed":
            pm = object_power(np.hypot(kx - px, ky - py), A, alpha, kmin)
            pp = object_power(np.hypot(kx + px, ky + py), A, alpha, kmin)
        else:
            pm = pp = p0
        c0 = p0 * h2 / max(o.psi_o, floor)
        cm = o.m ** 2 * pm * shifted_otf_power(otf_big, o.p, +1) / max(o.psi_p, floor)
        cp = o.m ** 2 * pp * shifted_otf_power(otf_big, o.p, -1) / max(o.psi_q, floor)
        weights.append((c0, cm, cp))
        omega += c0 + cm + cp
    return weights, omega


def effective_transfer(params, otf, config=None):
    """
    Transfer function ``Omega / (w + Omega)`` of the merge on the doubled grid, i.e. the
    passband a noise-free reconstruction applies to the object spectrum.
    """
    config = config or MergeConfig()
    _, omega = merge_weights(params, otf.embedded(2 * otf.n), config.side_prior)
    return omega / (config.w + omega)


def merge_generalized_wiener(bandsets, params, otf, config=None):
    """
    Merge relocated, phase-matched bands of all orientations into one spectrum on the 2N grid.

    :param bandsets: list of :class:`BandSet` on the 2N grid (stage ``phase-matched``)
    :param params: :class:`~simrecon.params.IlluminationParams`
    :param otf: :class:`~simrecon.otfmodel.Otf` on the native N grid
    :param config: :class:`MergeConfig`
    :return: DC-centered 2N x 2N spectrum
    """
    config = config or MergeConfig()
    big = 2 * otf.n
    otf_big = otf.embedded(big)
    weights, omega = merge_weights(params, otf_big, config.side_prior)
    if not np.any(omega > 0):
        raise ValueError("merge weights vanish everywhere (no OTF overlap)")
    den = config.w + omega
    out = np.zeros((big, big), dtype=complex)
    for (c0, cm, cp), b in zip(weights, bandsets):
        if b.center.shape != (big, big):
            raise ValueError("bands must live on the 2N merge grid")
        out += c0 * b.center + cm * b.minus + cp * b.plus
    out /= den
    if config.apodize_enabled:
        k_max = otf.k_cutoff + max(o.p.magnitude() for o in params.orientations)
        out = apodize(out, config.apodize_gamma, k_max, otf_big.spacing)
    return out


def apodize(spec, gamma, k_max, spacing=1.0):
    """Multiply by ``max(0, 1 - |k|/k_max)^gamma``."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    kr = frequency_radius(spec.shape[0], spacing)
    base = np.clip(1 - kr / k_max, 0, None)
    taper = np.where(kr < k_max, base ** gamma, 0.0)
    return spec * taper


def wiener_widefield(central_bands, A, alpha, psi_o, otf):
    """
    Deconvolved widefield image: the average of the central bands through the central Wiener
    filter.

    :param central_bands: three central band spectra
    :param float psi_o: noise power of the averaged band
    """
    avg = np.mean(np.asarray(central_bands), axis=0)
    kr = frequency_radius(otf.n, otf.spacing)
    p0 = object_power(kr, A, alpha, 0.5 * otf.bin_width)
    gain = _wiener_gain(otf.spectrum, p0, max(psi_o, PSI_FLOOR * A * A))
    return ifft2_centered(gain * avg)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

@dataclass
class SimResult:
    """
    Output of a reconstruction pipeline.

    :ivar image: 2N x 2N reconstruction
    :ivar spectrum: its DC-centered spectrum
    :ivar widefield: N x N deconvolved widefield image
    :ivar params: parameters used (estimated or supplied)
    :ivar report: JSON-serializable diagnostics
    """
    image: np.ndarray
    spectrum: np.ndarray
    widefield: np.ndarray
    params: IlluminationParams
    report: dict = field(default_factory=dict)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ReconstructionError:
        raise
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise ReconstructionError(name, str(exc)) from exc


def _finish(separated, params, otf, merge, est_cfg, algorithm, stack_n):
    """Shared tail of both pipelines: Wiener filter, relocate, phase match, merge."""
    big = 2 * otf.n
    matched = []
    for i, bands in enumerate(separated):
        o = params[i]
        if merge.notch_enabled:
            bands = BandSet(bands.center,
                            notch_filter(bands.minus, merge.notch_a0, merge.notch_beta, o.p),
                            notch_filter(bands.plus, merge.notch_a0, merge.notch_beta, -o.p),
                            bands.p, bands.stage, bands.spacing)
        filt = wiener_filter_bands(bands, o, params.A, params.alpha, otf)
        moved = relocate_bands(embed_bands(filt, big), o.p)
        ov = overlap_mask(big, moved.spacing, o.p, otf.k_cutoff)
        phi_c, mm, pp = _stage("phase-match", phase_match, moved.center, moved.minus,
                               moved.plus, ov)
        params.orientations[i] = OrientationParams(o.p, o.phases, o.m, o.psi_o, o.psi_p, o.psi_q,
                                                   o.phase_kind, phi_c)
        matched.append(BandSet(moved.center, mm, pp, o.p, "phase-matched", moved.spacing))

    spec = _stage("merge", merge_generalized_wiener, matched, params, otf, merge)
    image, imag_ratio = ifft2_centered(spec, return_imag=True)
    if imag_ratio > 1e-6:
        logger.warning("reconstruction has relative imaginary residue %.2e", imag_ratio)

    centers = [b.center for b in separated]
    avg = np.mean(centers, axis=0)
    psi_avg = est.estimate_noise_power(avg, otf, est_cfg.noise_guard)
    widefield = wiener_widefield(centers, params.A, params.alpha, psi_avg, otf)
    report = {
        "algorithm": algorithm,
        "n": int(stack_n),
        "output_n": int(big),
        "params": params.to_json(),
        "diagnostics": {
            "phi_c_deg": [float(np.rad2deg(o.phi_c)) for o in params.orientations],
            "psi_central_avg": float(psi_avg),
            "imag_ratio": float(imag_ratio),
        },
        "merge": asdict(merge),
    }
    return SimResult(image, spec, widefield, params, report)


def _check_stack(stack, otf):
    if stack.frames.shape[:2] != (3, 3):
        raise ReconstructionError("input", f"expected 9 frames, got {stack.frames.shape[:2]}")
    if stack.n != otf.n:
        raise ReconstructionError("input", f"frames are {stack.n} px but the OTF is {otf.n} px")


def _separate_supplied(spectra, params, kind):
    params = IlluminationParams([OrientationParams(**{**o.__dict__})
                                 for o in params.orientations], params.A, params.alpha)
    separated = []
    for i in range(3):
        o = params[i]
        phases = np.asarray(o.phases)
        if kind == "tirf":
            phases = phases - phases[0]
        sep = _stage("separate", separation_matrix, phases, 1.0, kind)
        separated.append(separate_components(spectra[i], sep, o.p))
    return params, separated


def _estimate_standard(stack, spectra, otf, cfg):
    orients, separated = [], []
    for i in range(3):
        ps = [_stage(f"frequency[{i}]", est.estimate_pattern_frequency, spectra[i, j], otf, cfg)
              for j in range(3)]
        p = est.mean_frequency(ps)
        p, phases = _stage(f"phase[{i}]", est.refine_pattern, stack.frames[i], p,
                           cfg.phase_iterations, cfg.subtract_mean, cfg.phase_taper,
                           cfg.freq_tol_bins, otf)
        sep = _stage(f"separate[{i}]", separation_matrix, phases, 1.0)
        bands = separate_components(spectra[i], sep, p)
        psi = [est.estimate_noise_power(b, otf, cfg.noise_guard)
               for b in (bands.center, bands.minus, bands.plus)]
        orients.append(OrientationParams(p, tuple(phases), 1.0, *psi))
        separated.append(bands)
    return _estimate_prior_and_m(separated, orients, otf, cfg), separated


def _estimate_tirf(spectra, otf, cfg):
    orients, separated = [], []
    for i in range(3):
        psi2, psi3 = _stage(f"relative-phase[{i}]", est.estimate_relative_phases_tirf,
                            spectra[i], otf, cfg)
        sep = _stage(f"separate[{i}]", separation_matrix, (0.0, psi2, psi3), 1.0, "tirf")
        bands = separate_components(spectra[i], sep)
        p = _stage(f"frequency[{i}]", est.estimate_frequency_tirf, bands.center, bands.minus,
                   otf, cfg)
        rel = (0.0, psi2, psi3)
        if not est.is_canonical(p):
            # the mirrored solution (-p, -psi) describes the same pattern
            p = -p
            rel = (0.0, -psi2, -psi3)
            bands = BandSet(bands.center, bands.plus, bands.minus)
        bands.p = p
        psi = [est.estimate_noise_power(b, otf, cfg.noise_guard)
               for b in (bands.center, bands.minus, bands.plus)]
        orients.append(OrientationParams(p, rel, 1.0, *psi, phase_kind="relative"))
        separated.append(bands)
    return _estimate_prior_and_m(separated, orients, otf, cfg), separated


def _estimate_prior_and_m(separated, orients, otf, cfg):
    avg = np.mean([b.center for b in separated], axis=0)
    psi_avg = est.estimate_noise_power(avg, otf, cfg.noise_guard)
    A, alpha = _stage("power-fit", est.fit_object_power_spectrum, avg, otf, psi_avg, cfg)
    n = otf.n
    for i, o in enumerate(orients):
        m = _stage(f"modulation[{i}]", est.estimate_modulation, separated[i].minus, o.p, A, alpha,
                   otf, o.psi_p, cfg, dc_value=separated[i].center[n // 2, n // 2])
        orients[i] = OrientationParams(o.p, o.phases, m, o.psi_o, o.psi_p, o.psi_q, o.phase_kind)
    return IlluminationParams(orients, A, alpha)


def estimate_parameters(stack, otf, estimation=None, algorithm="standard"):
    """
    Blind estimation of all illumination and prior parameters without reconstructing.

    :param str algorithm: ``"standard"`` (absolute phases) or ``"tirf"`` (relative phases)
    :return: :class:`~simrecon.params.IlluminationParams`
    :raises ReconstructionError: naming the failed stage
    """
    cfg = estimation or est.EstimationConfig()
    _check_stack(stack, otf)
    spectra = stack.spectra()
    if algorithm == "standard":
        return _estimate_standard(stack, spectra, otf, cfg)[0]
    if algorithm == "tirf":
        return _estimate_tirf(spectra, otf, cfg)[0]
    raise ValueError(f"unknown algorithm '{algorithm}'")


def reconstruct_sim(stack, otf, merge=None, estimation=None, params=None):
    """
    Standard 9-frame SIM reconstruction.

    Per orientation: pattern frequency from each frame (averaged), phase of each frame, band
    separation with m = 1, then the object power fit on the averaged central band, modulation,
    Wiener filtering, relocation, phase matching and the generalized Wiener merge.

    :param stack: :class:`~simrecon.simulate.RawSimStack`
    :param otf: :class:`~simrecon.otfmodel.Otf` on the frame grid
    :param merge: :class:`MergeConfig`
    :param estimation: :class:`~simrecon.estimate.EstimationConfig`
    :param params: optional :class:`~simrecon.params.IlluminationParams`; when given, no
      parameter is estimated
    :return: :class:`SimResult`
    """
    merge = merge or MergeConfig()
    cfg = estimation or est.EstimationConfig()
    _check_stack(stack, otf)
    spectra = stack.spectra()
    supplied = params is not None
    if supplied:
        params, separated = _separate_supplied(spectra, params, "standard")
    else:
        params, separated = _estimate_standard(stack, spectra, otf, cfg)
    result = _finish(separated, params, otf, merge, cfg, "standard", stack.n)
    result.report["params_supplied"] = supplied
    return result


def reconstruct_tirf_sim(stack, otf, merge=None, estimation=None, params=None):
    """
    TIRF-SIM reconstruction: relative phases from band decorrelation, separation into
    phase-absorbed bands, pattern frequency from the central/side cross-power, then the same
    filtering and merge as :func:`reconstruct_sim`. Phase matching removes the unknown absolute
    phase. Works for pattern frequencies inside or beyond the OTF support.

    :param params: optional supplied parameters (phases interpreted as relative)
    """
    merge = merge or MergeConfig()
    cfg = estimation or est.EstimationConfig()
    _check_stack(stack, otf)
    spectra = stack.spectra()
    supplied = params is not None
    if supplied:
        params, separated = _separate_supplied(spectra, params, "tirf")
    else:
        params, separated = _estimate_tirf(spectra, otf, cfg)
    result = _finish(separated, params, otf, merge, cfg, "tirf", stack.n)
    result.report["params_supplied"] = supplied
    return result
