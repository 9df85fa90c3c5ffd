"""
Forward model for synthetic SIM data: sinusoidal illumination, OTF blur and additive white Gaussian
noise, plus generators for test objects and bead images.
"""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import windows

from .imagecore import check_square, fft2_centered, frequency_radius, ifft2_centered

N_ORIENT = 3
N_PHASE = 3


@dataclass
class SimulationConfig:
    """
    Parameters of a synthetic 9-frame acquisition.

    :ivar orientations: pattern angles in degrees
    :ivar nominal_phases: pattern phases in degrees, before random errors
    :ivar phase_error_range: half-width in degrees of the uniform phase error
    :ivar pattern_freq_magnitude: ``|p|`` in cycles/pixel, need not be a multiple of 1/N
    :ivar modulation: m in (0, 1]
    :ivar peak_intensity: I_o
    :ivar noise_percent: noise std as a percentage of the noise-free frame std
    :ivar rng_seed: seed for phase errors and noise
    """
    orientations: tuple = (0.0, 60.0, 120.0)
    nominal_phases: tuple = (0.0, 120.0, 240.0)
    phase_error_range: float = 15.0
    pattern_freq_magnitude: float = 96.4 / 512
    modulation: float = 0.8
    peak_intensity: float = 1.0
    noise_percent: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        self.orientations = tuple(float(v) for v in self.orientations)
        self.nominal_phases = tuple(float(v) for v in self.nominal_phases)
        if len(self.orientations) != N_ORIENT or len(self.nominal_phases) != N_PHASE:
            raise ValueError("need exactly 3 orientations and 3 phases")
        if not 0 < self.modulation <= 1:
            raise ValueError(f"modulation must lie in (0, 1], got {self.modulation}")
        if not 0 <= self.pattern_freq_magnitude < 0.5:
            raise ValueError("pattern_freq_magnitude must lie in [0, 0.5)")
        if self.noise_percent < 0:
            raise ValueError("noise_percent must be >= 0")
        if self.phase_error_range < 0:
            raise ValueError("phase_error_range must be >= 0")

    def pattern_vector(self, i):
        th = np.deg2rad(self.orientations[i])
        return (self.pattern_freq_magnitude * np.cos(th), self.pattern_freq_magnitude * np.sin(th))


@dataclass
class GroundTruth:
    """Realized acquisition parameters of a simulated stack (phases in radians)."""
    p: list
    phases: np.ndarray
    modulation: float
    noise_sigma: list = field(default_factory=list)

    def to_json(self):
        return {"p": [list(map(float, v)) for v in self.p],
                "phases_deg": np.rad2deg(self.phases).tolist(),
                "m": float(self.modulation),
                "noise_sigma": [float(s) for s in self.noise_sigma]}

    @classmethod
    def from_json(cls, d):
        return cls([tuple(v) for v in d["p"]], np.deg2rad(np.asarray(d["phases_deg"])), d["m"],
                   d.get("noise_sigma", []))


@dataclass
class RawSimStack:
    """
    Nine raw frames indexed ``[orientation, phase]``.

    :ivar frames: array of shape (3, 3, N, N)
    :ivar config_echo: generating configuration or acquisition metadata
    """
    frames: np.ndarray
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 4 or self.frames.shape[:2] != (N_ORIENT, N_PHASE):
            raise ValueError(f"expected 9 frames as (3, 3, N, N), got shape {self.frames.shape}")
        if self.frames.shape[2] != self.frames.shape[3]:
            raise ValueError("frames must be square")

    @property
    def n(self):
        return self.frames.shape[-1]

    def spectra(self):
        """Centered spectra of all frames, shape (3, 3, N, N)."""
        return np.stack([[fft2_centered(f) for f in row] for row in self.frames])

    def scaled(self, factor):
        return RawSimStack(self.frames * factor, dict(self.config_echo))


def illumination_pattern(n, theta, phi, p_mag, m, i0=1.0):
    """
    ``I(r) = I_o [1 - (m/2) cos(2 pi p.r + phi)]`` with ``p = p_mag (cos theta, sin theta)``.

    :param int n: grid size
    :param float theta: orientation in radians
    :param float phi: phase in radians, referenced to pixel [0, 0]
    :param float p_mag: pattern frequency in cycles/pixel
    :param float m: modulation
    :param float i0: peak intensity
    """
    px, py = p_mag * np.cos(theta), p_mag * np.sin(theta)
    idx = np.arange(n)
    arg = 2 * np.pi * (px * idx[None, :] + py * idx[:, None]) + phi
    return i0 * (1 - 0.5 * m * np.cos(arg))


def blur(img, otf):
    """Noise-free image of ``img`` through the system OTF."""
    return ifft2_centered(fft2_centered(img) * otf.spectrum)


def simulate_raw_frame(obj, illum, otf, noise_percent, rng):
    """
    One raw frame ``D = F^-1[F(S I) H] + noise``.

    The noise is white Gaussian with std equal to ``noise_percent`` % of the std of the noise-free
    frame, so 10 % corresponds to a 20 dB amplitude SNR.

    :return: (frame, noise_sigma)
    """
    obj = check_square(obj, "object")
    if obj.shape != illum.shape or obj.shape != otf.spectrum.shape:
        raise ValueError("object, illumination and OTF must share one grid")
    clean = blur(obj * illum, otf)
    sigma = noise_percent / 100.0 * clean.std()
    if sigma == 0:
        return clean, 0.0
    return clean + rng.normal(0.0, sigma, clean.shape), float(sigma)


def draw_phases(config, rng):
    """Realized phases in radians, shape (3, 3): nominal plus uniform errors."""
    nominal = np.deg2rad(np.asarray(config.nominal_phases))
    err = rng.uniform(-config.phase_error_range, config.phase_error_range, (N_ORIENT, N_PHASE))
    return nominal[None, :] + np.deg2rad(err)


def simulate_stack(obj, otf, config=None, phases=None):
    """
    Simulate the 9-frame acquisition of ``obj``.

    The seed is split into independent streams: one for the phase errors and one per frame for
    the noise, so frames can be generated in any order with identical results.

    :param obj: N x N ground-truth object
    :param otf: :class:`~simrecon.otfmodel.Otf` on the same grid
    :param config: :class:`SimulationConfig`; defaults to the desk setup
    :param phases: optional (3, 3) realized phases in radians overriding the random draw
    :return: (:class:`RawSimStack`, :class:`GroundTruth`)
    """
    config = config or SimulationConfig()
    obj = check_square(np.asarray(obj, dtype=float), "object")
    n = obj.shape[0]
    streams = np.random.SeedSequence(config.rng_seed).spawn(1 + N_ORIENT * N_PHASE)
    if phases is None:
        phases = draw_phases(config, np.random.default_rng(streams[0]))
    phases = np.asarray(phases, dtype=float)

    frames = np.empty((N_ORIENT, N_PHASE, n, n))
    sigmas = []
    for i in range(N_ORIENT):
        theta = np.deg2rad(config.orientations[i])
        for j in range(N_PHASE):
            illum = illumination_pattern(n, theta, phases[i, j], config.pattern_freq_magnitude,
                                         config.modulation, config.peak_intensity)
            rng = np.random.default_rng(streams[1 + 3 * i + j])
            frames[i, j], s = simulate_raw_frame(obj, illum, otf, config.noise_percent, rng)
            sigmas.append(s)
    truth = GroundTruth([config.pattern_vector(i) for i in range(N_ORIENT)], phases,
                        config.modulation, sigmas)
    return RawSimStack(frames, {"simulation": asdict(config)}), truth


def widefield_image(obj, otf, noise_percent=0.0, rng=None):
    """Uniformly illuminated image of ``obj`` with optional noise (same noise rule as raw frames)."""
    rng = rng or np.random.default_rng(0)
    return simulate_raw_frame(obj, np.ones_like(obj), otf, noise_percent, rng)[0]


def make_test_object(n, alpha=1.0, seed=0, contrast=1.0, n_points=0, point_amplitude=4.0,
                     edge_taper=0.0):
    """
    Random power-law texture normalized to [0, 1], optionally sprinkled with bright points.

    The amplitude spectrum falls as ``|k|^-alpha`` which matches the object prior used by the
    estimators, and the random phases give detail at every scale up to Nyquist.

    :param int n: grid size
    :param float alpha: amplitude spectrum exponent
    :param int seed: RNG seed
    :param float contrast: texture std relative to its range before normalization
    :param int n_points: number of single-pixel point sources added
    :param float point_amplitude: height of each point above the texture maximum
    :param float edge_taper: Tukey fraction fading the object to zero at the image edges, like a
      specimen in a dark surround (0 keeps the periodic texture)
    """
    rng = np.random.default_rng(seed)
    kr = frequency_radius(n)
    amp = np.zeros_like(kr)
    nz = kr > 0
    amp[nz] = kr[nz] ** (-alpha)
    white = fft2_centered(rng.standard_normal((n, n)))
    tex = ifft2_centered(white * amp)
    tex = (tex - tex.min()) / np.ptp(tex)
    tex = 1 - contrast + contrast * tex
    if n_points:
        ys = rng.integers(0, n, n_points)
        xs = rng.integers(0, n, n_points)
        tex[ys, xs] += point_amplitude
    if edge_taper > 0:
        w = windows.tukey(n, edge_taper)
        tex = tex * np.outer(w, w)
    return tex


def make_bead_image(psf_kernel, n, n_beads, rng, min_separation=None, amplitude_range=(1.0, 1.0)):
    """
    Image of isolated point beads, each an exact copy of ``psf_kernel`` at an integer position.

    :param psf_kernel: odd-sized PSF patch with its peak at the center
    :param int n: image size
    :param int n_beads: number of beads to place
    :param rng: numpy Generator
    :param int min_separation: minimum Chebyshev distance between beads; default the kernel size
    :param amplitude_range: uniform range of bead brightness
    """
    k = psf_kernel.shape[0]
    h = k // 2
    sep = min_separation or k
    img = np.zeros((n, n))
    placed = []
    tries = 0
    while len(placed) < n_beads:
        tries += 1
        if tries > 1000 * n_beads:
            raise ValueError(f"could not place {n_beads} beads at separation {sep}")
        y, x = rng.integers(h, n - h, 2)
        if any(abs(y - py) < sep and abs(x - px) < sep for py, px in placed):
            continue
        placed.append((int(y), int(x)))
        a = rng.uniform(*amplitude_range)
        img[y - h:y + h + 1, x - h:x + h + 1] += a * psf_kernel
    return img, placed
