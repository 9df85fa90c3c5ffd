"""
Resolution metrics: the effective PSF that maps a known object onto a produced image, solved by
linear least squares on randomly chosen pixels, and FWHM ratios against the system PSF.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, ndimage

from .imagecore import _workers, check_square, downsample2

logger = logging.getLogger(__name__)


class DegenerateObjectError(ValueError):
    """The object has no structure to solve a PSF against."""


@dataclass
class PsfEstimate:
    """
    :ivar psf: p x p effective PSF (p odd), centered at ``[p//2, p//2]``
    :ivar fwhm: full width at half maximum in pixels
    :ivar n_solves: number of least-squares solutions averaged
    """
    psf: np.ndarray
    fwhm: float
    n_solves: int

    @property
    def size(self):
        return self.psf.shape[0]


def odd_size(p):
    """PSF sizes are made odd so the kernel has a center pixel; even sizes grow by one."""
    p = int(p)
    if p < 1:
        raise ValueError("psf size must be >= 1")
    return p if p % 2 else p + 1


def _valid_centers(n, p):
    h = p // 2
    return np.arange(h, n - h)


def build_convolution_system(obj, image, p, n_rows, rng):
    """
    Design matrix ``O`` and observations ``I`` with ``O @ vec(P) = I`` for ``image = obj * P``.

    Row j holds the object window around a randomly chosen pixel, flipped so that ``vec(P)`` is
    the row-major convolution kernel; the pixel is at least ``p // 2`` from every edge.

    :param obj: N x N object
    :param image: N x N image on the same grid
    :param int p: kernel size (odd)
    :param int n_rows: number of rows, more than ``p^2``
    :param rng: numpy Generator or seed
    :return: ``(O, I)``
    """
    obj = check_square(np.asarray(obj, dtype=float), "object")
    image = check_square(np.asarray(image, dtype=float), "image")
    if obj.shape != image.shape:
        raise ValueError(f"object {obj.shape} and image {image.shape} must share a grid")
    if p % 2 == 0:
        raise ValueError("kernel size must be odd")
    if n_rows <= p * p:
        raise ValueError(f"need more rows than unknowns ({n_rows} <= {p * p})")
    n = obj.shape[0]
    centers = _valid_centers(n, p)
    n_valid = centers.size ** 2
    if n_rows > n_valid:
        raise ValueError(f"{n_rows} rows requested but only {n_valid} pixels lie {p // 2} px "
                         f"inside the edges")
    rng = np.random.default_rng(rng)
    pick = rng.choice(n_valid, size=n_rows, replace=False)
    ys = centers[pick // centers.size]
    xs = centers[pick % centers.size]
    windows = np.lib.stride_tricks.sliding_window_view(obj, (p, p))
    h = p // 2
    rows = np.ascontiguousarray(windows[ys - h, xs - h][:, ::-1, ::-1]).reshape(n_rows, p * p)
    return rows, image[ys, xs]


def _solve_once(obj, image, p, n_rows, seed):
    o, i = build_convolution_system(obj, image, p, n_rows, seed)
    ata = o.T @ o
    lam = 1e-8 * np.trace(ata) / (p * p)
    ata[np.diag_indices_from(ata)] += lam
    return linalg.solve(ata, o.T @ i, assume_a="pos")


def solve_effective_psf(obj, image, p=40, n_rows=None, n_repeats=100, rng=0):
    """
    Effective PSF linking ``obj`` to ``image``, averaged over independent random row sets.

    Each repeat solves the normal equations with a tiny ridge ``1e-8 trace(O^T O) / p^2``, which
    is invisible on well-posed systems and keeps near-flat objects solvable.

    :param int p: kernel size; even sizes are grown to the next odd size
    :param int n_rows: rows per solve, default ``7 p^2`` with the requested p
    :param int n_repeats: number of solves averaged
    :param rng: seed or Generator; every repeat gets its own child stream
    :raises DegenerateObjectError: for a constant object
    """
    p_req = int(p)
    p = odd_size(p_req)
    if n_rows is None:
        n_rows = 7 * p_req * p_req
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    obj = np.asarray(obj, dtype=float)
    if np.ptp(obj) == 0:
        raise DegenerateObjectError("object is constant; the PSF is not identifiable")
    logger.info("effective PSF: %d x %d kernel, %d rows, %d repeats", p, p, n_rows, n_repeats)
    root = np.random.default_rng(rng)
    seeds = np.random.SeedSequence(int(root.integers(2 ** 63))).spawn(n_repeats)
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        sols = list(pool.map(lambda s: _solve_once(obj, image, p, n_rows, s), seeds))
    psf = np.mean(sols, axis=0).reshape(p, p)
    if not np.all(np.isfinite(psf)):
        raise DegenerateObjectError("least-squares solution is not finite")
    return PsfEstimate(psf, fwhm(psf), n_repeats)


def _peak(psf):
    smooth = ndimage.uniform_filter(psf, size=3, mode="nearest")
    top = smooth.max()
    ties = np.argwhere(smooth >= top - 1e-6 * abs(top))
    return ties.mean(axis=0)


def fwhm(psf):
    """
    Full width at half maximum of a 2-D PSF.

    The peak is located on a 3 x 3 mean-smoothed copy; values within 1e-6 of the top count as
    ties and resolve to their centroid. The unsmoothed PSF is then averaged over rings of
    identical distance from the peak and the first half-maximum crossing is interpolated
    linearly.

    :raises ValueError: if the profile never falls to half maximum
    """
    psf = np.asarray(psf, dtype=float)
    if psf.ndim != 2:
        raise ValueError("psf must be 2-D")
    cy, cx = _peak(psf)
    y, x = np.indices(psf.shape)
    d = np.round(np.hypot(y - cy, x - cx), 9).ravel()
    radii, inv = np.unique(d, return_inverse=True)
    prof = np.bincount(inv, weights=psf.ravel()) / np.bincount(inv)
    half = 0.5 * prof[0]
    below = np.nonzero(prof <= half)[0]
    if below.size == 0 or prof[0] <= 0:
        raise ValueError("profile never crosses half maximum; enlarge the PSF window")
    j = below[0]
    if j == 0:
        return 0.0
    r0, r1, v0, v1 = radii[j - 1], radii[j], prof[j - 1], prof[j]
    return float(2 * (r0 + (v0 - half) / (v0 - v1) * (r1 - r0)))


def resolution_report(obj, widefield_deconv, sim_image, system_psf, p=40, n_rows=None,
                      n_repeats=100, rng=0, downsample="mean"):
    """
    FWHM of the effective PSFs of the deconvolved widefield and the SIM image relative to the
    system PSF.

    A 2N x 2N SIM image is first brought onto the object grid with :func:`downsample2`.

    :param obj: N x N ground-truth object
    :param widefield_deconv: N x N deconvolved widefield image
    :param sim_image: N x N or 2N x 2N reconstruction
    :param system_psf: system PSF (any odd or even window around its peak)
    :param str downsample: ``"mean"`` (2 x 2 blocks) or ``"fourier"``
    :return: report dict
    """
    obj = np.asarray(obj, dtype=float)
    sim = np.asarray(sim_image, dtype=float)
    down = None
    if sim.shape[0] == 2 * obj.shape[0]:
        sim = downsample2(sim, downsample)
        down = downsample
    f_sys = fwhm(system_psf)
    wf = solve_effective_psf(obj, widefield_deconv, p, n_rows, n_repeats, rng)
    si = solve_effective_psf(obj, sim, p, n_rows, n_repeats, rng)
    r_wf = wf.fwhm / f_sys
    r_si = si.fwhm / f_sys
    return {
        "fwhm_px": {"system": f_sys, "deconv_widefield": wf.fwhm, "sim": si.fwhm},
        "ratio": {"deconv_widefield": r_wf, "sim": r_si},
        "resolution_in_lambda_over_2NA": {"system": 1.0, "deconv_widefield": r_wf, "sim": r_si},
        "solver": {"psf_size": wf.size, "n_rows": n_rows or 7 * int(p) ** 2,
                   "n_repeats": n_repeats, "sim_downsample": down},
    }, wf, si
