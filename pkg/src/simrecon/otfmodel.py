"""
System OTF models: the diffraction-limited circular-aperture OTF, PSF <-> OTF conversion, OTF
estimation from bead images, and |H(k +- p)|^2 shifted to the nearest grid frequency.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import (check_square, embed_spectrum, fft2_centered, frequency_radius,
                        ifft2_centered)

logger = logging.getLogger(__name__)

MIN_RECOMMENDED_BEADS = 100


@dataclass(frozen=True)
class Otf:
    """
    DC-centered optical transfer function with its cutoff frequency.

    :ivar spectrum: N x N array, normalized to 1 at DC
    :ivar k_cutoff: cutoff frequency in cycles/pixel
    :ivar support_mask: bins with ``|k| <= k_cutoff``
    :ivar spacing: sample spacing of the matching image grid in original pixels (0.5 on a 2x grid)
    """
    spectrum: np.ndarray
    k_cutoff: float
    support_mask: np.ndarray
    spacing: float = 1.0

    @property
    def n(self):
        return self.spectrum.shape[0]

    @property
    def bin_width(self):
        """Frequency step between adjacent bins in cycles per original pixel."""
        return 1.0 / (self.n * self.spacing)

    def power(self):
        return np.abs(self.spectrum) ** 2

    def embedded(self, m):
        """The same OTF on an M x M grid with identical bin spacing (zero outside the N grid)."""
        if m == self.n:
            return self
        spacing = self.spacing * self.n / m
        spec = embed_spectrum(self.spectrum, m) / (m / self.n) ** 2
        kr = frequency_radius(m, spacing)
        return Otf(spec, self.k_cutoff, kr <= self.k_cutoff, spacing)


def circular_otf_profile(rho):
    """Incoherent circular-aperture OTF as a function of ``rho = |k| / k_cutoff``."""
    rho = np.clip(np.abs(np.asarray(rho, dtype=float)), 0, 1)
    return 2 / np.pi * (np.arccos(rho) - rho * np.sqrt(1 - rho ** 2))


def synthesize_otf(n, k_cutoff, spacing=1.0):
    """
    Diffraction-limited OTF of a circular pupil on an n x n grid.

    :param int n: grid size
    :param float k_cutoff: cutoff in cycles/pixel, 0 < k_cutoff <= 0.5
    :param float spacing: sample spacing in original pixels (0.5 for a 2x upsampled grid)
    """
    if not 0 < k_cutoff <= 0.5:
        raise ValueError(f"k_cutoff must lie in (0, 0.5], got {k_cutoff}")
    kr = frequency_radius(n, spacing)
    rho = kr / k_cutoff
    spec = np.where(rho < 1, circular_otf_profile(rho), 0.0)
    return Otf(spec, float(k_cutoff), kr <= k_cutoff, float(spacing))


def support_radius(spec, rel_threshold=1e-6):
    """Largest ``|k|`` where ``|spec|`` exceeds ``rel_threshold`` of its maximum."""
    kr = frequency_radius(spec.shape[0])
    mag = np.abs(spec)
    above = mag > rel_threshold * mag.max()
    return float(kr[above].max())


def otf_from_psf(psf, k_cutoff=None):
    """
    Transform a PSF (peak at the grid center) into an OTF normalized to unit DC.

    :param psf: N x N PSF with its peak at pixel [N//2, N//2]
    :param float k_cutoff: cutoff to record; estimated from the spectrum support when omitted
    """
    psf = check_square(psf, "psf")
    n = psf.shape[0]
    spec = fft2_centered(np.fft.ifftshift(psf))
    dc = spec[n // 2, n // 2]
    if dc == 0:
        raise ValueError("PSF integrates to zero")
    spec = spec / dc
    if k_cutoff is None:
        k_cutoff = min(support_radius(spec), 0.5)
    return Otf(spec, float(k_cutoff), frequency_radius(n) <= k_cutoff)


def psf_from_otf(otf):
    """PSF centered at pixel [N//2, N//2], normalized to unit peak."""
    psf = np.fft.fftshift(ifft2_centered(otf.spectrum))
    return psf / psf.max()


def radial_average(values):
    """
    Replace every bin of a DC-centered grid by the mean over all bins at exactly the same radius.

    Bins at identical integer radius ``i^2 + j^2`` are grouped, so an isotropic function sampled
    on the grid is returned unchanged.
    """
    values = check_square(values)
    n = values.shape[0]
    idx = np.arange(n) - n // 2
    r2 = idx[None, :] ** 2 + idx[:, None] ** 2
    uniq, inv = np.unique(r2.ravel(), return_inverse=True)
    counts = np.bincount(inv)
    re = np.bincount(inv, weights=values.real.ravel()) / counts
    out = re[inv].reshape(n, n)
    if np.iscomplexobj(values):
        im = np.bincount(inv, weights=values.imag.ravel()) / counts
        out = out + 1j * im[inv].reshape(n, n)
    return out


def default_bead_window(k_cutoff):
    w = int(round(4 / k_cutoff))
    return w if w % 2 else w + 1


def find_beads(img, threshold, window, smooth_sigma=1.0):
    """
    Integer positions of isolated local maxima above ``threshold * max``.

    Maxima are located on a lightly smoothed copy so that noise does not move the brightest pixel,
    and candidates closer than one window to a brighter candidate or to the border are dropped.
    """
    smooth = ndimage.gaussian_filter(img, smooth_sigma) if smooth_sigma else img
    peaks = (smooth == ndimage.maximum_filter(smooth, size=3)) & (smooth > threshold * smooth.max())
    ys, xs = np.nonzero(peaks)
    order = np.argsort(smooth[ys, xs])[::-1]
    ys, xs = ys[order], xs[order]
    h = window // 2
    n0, n1 = img.shape
    inside = (ys >= h) & (ys < n0 - h) & (xs >= h) & (xs < n1 - h)
    kept = []
    for y, x, ok in zip(ys, xs, inside):
        if not ok:
            continue
        if any(abs(y - ky) < window and abs(x - kx) < window for ky, kx in kept):
            continue
        kept.append((int(y), int(x)))
    return kept


def estimate_otf_from_beads(bead_images, detection_threshold=0.3, window=None, k_cutoff=None,
                            smooth_sigma=1.0):
    """
    Estimate the system OTF by averaging isolated bead images.

    Beads are detected as local maxima above ``detection_threshold`` (fraction of the image
    maximum), cut out in ``window x window`` boxes centered on their brightest pixel, background
    corrected by the box median, averaged, transformed and radially averaged.

    :param bead_images: list of N x N images with sparse sub-resolution beads
    :param float detection_threshold: relative detection threshold in (0, 1)
    :param int window: box size (odd); default ``4 / k_cutoff`` rounded to odd, or 17
    :param float k_cutoff: cutoff to record on the result; estimated from the data when omitted
    :return: :class:`Otf` on the grid of the input images
    """
    if len(bead_images) == 0:
        raise ValueError("no bead images given")
    n = check_square(bead_images[0]).shape[0]
    if window is None:
        window = default_bead_window(k_cutoff) if k_cutoff else 17
    if window % 2 == 0:
        window += 1
    if window > n:
        raise ValueError("bead window larger than image")
    h = window // 2

    acc = np.zeros((window, window))
    count = 0
    for img in bead_images:
        img = check_square(np.asarray(img, dtype=float))
        if img.shape[0] != n:
            raise ValueError("all bead images must share one size")
        for y, x in find_beads(img, detection_threshold, window, smooth_sigma):
            box = img[y - h:y + h + 1, x - h:x + h + 1]
            acc += box - np.median(box)
            count += 1
    if count == 0:
        raise ValueError(f"no beads found above threshold {detection_threshold}; "
                         f"lower --threshold")
    if count < MIN_RECOMMENDED_BEADS:
        warnings.warn(f"only {count} beads averaged; more than {MIN_RECOMMENDED_BEADS} are "
                      f"recommended for a stable OTF estimate", stacklevel=2)
    logger.info("averaged %d bead windows", count)

    psf = np.zeros((n, n))
    c = n // 2
    psf[c - h:c + h + 1, c - h:c + h + 1] = acc / count
    otf = otf_from_psf(psf, k_cutoff)
    spec = radial_average(otf.spectrum.real)
    spec /= spec[c, c]
    return Otf(spec, otf.k_cutoff, otf.support_mask)


def shifted_otf_power(otf, p, sign=1):
    """
    ``|H(k + sign * p)|^2`` with ``p`` rounded to the nearest grid frequency.

    The shift is an exact circular roll of the power grid by an integer number of bins; fractional
    Fourier-shifting of the OTF itself is avoided on purpose.

    :param otf: :class:`Otf` on a native or embedded grid
    :param p: frequency (fx, fy) in cycles/pixel
    :param int sign: +1 for ``H(k + p)``, -1 for ``H(k - p)``
    """
    power = otf.power()
    bins = otf.bin_width
    sx = int(np.round(p[0] / bins))
    sy = int(np.round(p[1] / bins))
    # H(k + s) at index i is H at index i + s -> roll by -s
    return np.roll(power, (-sign * sy, -sign * sx), axis=(0, 1))

