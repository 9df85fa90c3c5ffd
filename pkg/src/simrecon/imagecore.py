"""
Square image grids, DC-centered 2-D Fourier transforms, frequency geometry and image file I/O.

Conventions used throughout the package:

* images are square ``N x N`` float arrays indexed ``[row, column]``;
* the spatial position of pixel ``[y, x]`` is ``r = (x, y)`` with the origin at pixel ``[0, 0]``;
* spectra are stored DC-centered: bin ``[N//2, N//2]`` holds ``k = 0`` and the frequency of index
  ``i`` along either axis is ``(i - N//2) / N`` cycles/pixel;
* the forward transform is unscaled, the inverse carries ``1/N^2``.
"""
import json
import logging
import os
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft

logger = logging.getLogger(__name__)

FFT_CONVENTION = "dc-centered, inverse 1/N^2"


def _workers():
    """Thread cap for scipy.fft, from SIM_RECON_THREADS."""
    val = os.environ.get("SIM_RECON_THREADS")
    if val is None:
        return None
    try:
        return max(1, int(val))
    except ValueError:
        return None


class FrequencyVector(NamedTuple):
    """Spatial frequency in cycles/pixel. Components may be fractional multiples of 1/N."""
    fx: float
    fy: float

    def magnitude(self):
        return float(np.hypot(self.fx, self.fy))

    def __neg__(self):
        return FrequencyVector(-self.fx, -self.fy)

    def rounded(self, n):
        """Nearest frequency whose components are integer multiples of 1/n."""
        return FrequencyVector(np.round(self.fx * n) / n, np.round(self.fy * n) / n)


def check_square(img, name="image"):
    img = np.asarray(img)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {img.shape}")
    return img


def fft2_centered(img):
    """
    Unscaled 2-D DFT of a square real image, returned with DC at index ``[N//2, N//2]``.

    :param img: N x N real array (spatial origin at pixel [0, 0])
    :return: N x N complex spectrum
    """
    img = check_square(img)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite samples")
    return sfft.fftshift(sfft.fft2(img, workers=_workers()))


def ifft2_centered(spec, return_imag=False):
    """
    Inverse of :func:`fft2_centered` (scaled by ``1/N^2``).

    :param spec: DC-centered N x N spectrum
    :param bool return_imag: also return ``max|imag| / max|real|`` as a diagnostic of how far the
      spectrum is from Hermitian symmetry
    :return: real image, or ``(image, imag_ratio)``
    """
    spec = check_square(spec, "spectrum")
    field = sfft.ifft2(sfft.ifftshift(spec), workers=_workers())
    if not return_imag:
        return field.real
    scale = np.abs(field.real).max()
    ratio = float(np.abs(field.imag).max() / scale) if scale > 0 else float(np.abs(field.imag).max())
    return field.real, ratio


def ifft2_centered_complex(spec):
    """Complex-valued inverse transform (no real projection)."""
    return sfft.ifft2(sfft.ifftshift(spec), workers=_workers())


def fft2_centered_complex(field):
    return sfft.fftshift(sfft.fft2(field, workers=_workers()))


def frequency_axis(n, spacing=1.0):
    """
    Centered frequency axis in cycles per unit of ``spacing``.

    For a grid of ``n`` samples spaced ``spacing`` original pixels apart the bin width is
    ``1 / (n * spacing)``.
    """
    return sfft.fftshift(sfft.fftfreq(n, d=spacing))


def frequency_grid(n, spacing=1.0):
    """
    Return ``(kx, ky)`` arrays of shape (n, n), cycles per original pixel.
    """
    f = frequency_axis(n, spacing)
    kx, ky = np.meshgrid(f, f)
    return kx, ky


def frequency_radius(n, spacing=1.0):
    kx, ky = frequency_grid(n, spacing)
    return np.hypot(kx, ky)


def mirror_valid_mask(n):
    """
    Bins whose mirror ``-k`` is also on the grid (drops the lone Nyquist row/column for even n).

    Averages over this mask are exactly symmetric under ``k -> -k``.
    """
    mask = np.ones((n, n), dtype=bool)
    if n % 2 == 0:
        mask[0, :] = False
        mask[:, 0] = False
    return mask


def radial_profile(spec, n_bins=None, spacing=1.0):
    """
    Mean power ``|value|^2`` in annular bins of ``|k|``.

    Bin ``b`` collects frequencies with ``b*0.5/n_bins <= |k| < (b+1)*0.5/n_bins``; bins beyond
    0.5 cycles/pixel (the grid corners) are not reported.

    :param spec: DC-centered spectrum
    :param int n_bins: number of bins over [0, 0.5); defaults to N//2
    :return: ``(radius, power, counts)``; radius is the mean ``|k|`` of the bin members, and empty
      bins are absent from all three arrays
    """
    spec = check_square(spec, "spectrum")
    n = spec.shape[0]
    if n_bins is None:
        n_bins = n // 2
    if n_bins < 8:
        raise ValueError("n_bins must be >= 8")
    kr = frequency_radius(n, spacing)
    power = np.abs(spec) ** 2
    idx = np.floor(kr / (0.5 / n_bins)).astype(int)
    keep = idx < n_bins
    counts = np.bincount(idx[keep], minlength=n_bins)
    psum = np.bincount(idx[keep], weights=power[keep], minlength=n_bins)
    rsum = np.bincount(idx[keep], weights=kr[keep], minlength=n_bins)
    ok = counts > 0
    return rsum[ok] / counts[ok], psum[ok] / counts[ok], counts[ok]


def embed_spectrum(spec, m):
    """
    Zero-pad a DC-centered N x N spectrum into an M x M grid (M >= N).

    Bin spacing is unchanged, so the frequency range grows by M/N and the matching spatial grid
    is M/N times finer. Values are scaled by (M/N)^2 so that image intensities are preserved.
    The Nyquist row/column of an even N is split between +-N/2 to keep real images real.
    """
    spec = check_square(spec, "spectrum")
    n = spec.shape[0]
    if m < n:
        raise ValueError("target size must not be smaller than the spectrum")
    if m == n:
        return spec.copy()
    work = spec.astype(complex)
    if n % 2 == 0:
        # split the Nyquist row/column so the padded spectrum stays Hermitian
        work = np.pad(work, ((0, 1), (0, 1)))
        work[-1, :] = work[0, :]
        work[:, -1] = work[:, 0]
        work[0, :] *= 0.5
        work[-1, :] *= 0.5
        work[:, 0] *= 0.5
        work[:, -1] *= 0.5
    out = np.zeros((m, m), dtype=complex)
    c = m // 2
    h = n // 2
    sz = work.shape[0]
    out[c - h:c - h + sz, c - h:c - h + sz] = work
    return out * (m / n) ** 2


def crop_spectrum(spec, n):
    """
    Inverse of :func:`embed_spectrum`: keep the central n x n bins (Fourier downsampling).
    """
    spec = check_square(spec, "spectrum")
    m = spec.shape[0]
    c = m // 2
    h = n // 2
    out = spec[c - h:c - h + n, c - h:c - h + n].copy()
    if n % 2 == 0:
        # fold the dropped +N/2 edge back onto the kept -N/2 Nyquist bins
        out[0, :] += spec[c + h, c - h:c - h + n]
        out[:, 0] += spec[c - h:c - h + n, c + h]
        out[0, 0] += spec[c + h, c + h]
    return out * (n / m) ** 2


def downsample2(img, method="fourier"):
    """
    Bring a 2N x 2N image onto the N x N grid.

    ``"fourier"`` keeps the central spectrum (no blur, no offset); ``"mean"`` averages 2 x 2 blocks,
    which blurs by one coarse pixel and displaces the image by a quarter coarse pixel.
    """
    img = check_square(img)
    m = img.shape[0]
    if m % 2:
        raise ValueError("image size must be even")
    if method == "mean":
        return img.reshape(m // 2, 2, m // 2, 2).mean(axis=(1, 3))
    if method == "fourier":
        return ifft2_centered(crop_spectrum(fft2_centered(img), m // 2))
    raise ValueError(f"unknown downsampling method '{method}'")


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------
def _to_gray(arr):
    arr = np.asarray(arr)
    if arr.ndim == 3:
        if arr.shape[-1] in (3, 4):
            arr = arr[..., :3].astype(float).mean(axis=-1)
        elif arr.shape[0] in (3, 4):
            arr = arr[:3].astype(float).mean(axis=0)
        else:
            raise ValueError(f"unsupported multi-page or multi-channel image of shape {arr.shape}")
    if arr.ndim != 2:
        raise ValueError(f"unsupported image dimensionality {arr.shape}")
    return arr


def center_crop(img, size):
    ny, nx = img.shape
    if size > ny or size > nx:
        raise ValueError(f"cannot crop {img.shape} image to {size} x {size}")
    y0 = (ny - size) // 2
    x0 = (nx - size) // 2
    return img[y0:y0 + size, x0:x0 + size]


def load_image(path, center_crop_size=None, raw_range=False):
    """
    Load a PNG or TIFF as a square float image.

    Multi-channel images are converted to gray by averaging the color channels. Integer data are
    mapped to [0, 1] by the dtype range and float data by min/max, unless ``raw_range`` is set.

    :param path: file path
    :param int center_crop_size: crop to a centered square of this size before checking shape
    :param bool raw_range: keep sample values as stored
    :return: N x N float64 array
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        import tifffile
        arr = tifffile.imread(path)
    elif suffix == ".png":
        from PIL import Image
        with Image.open(path) as im:
            arr = np.array(im)
    else:
        raise ValueError(f"unsupported image format '{suffix}' (use .png, .tif or .tiff)")

    dtype = arr.dtype
    arr = _to_gray(arr)
    if not raw_range:
        if np.issubdtype(dtype, np.integer):
            arr = arr.astype(float) / np.iinfo(dtype).max
        else:
            arr = arr.astype(float)
            lo, hi = np.nanmin(arr), np.nanmax(arr)
            if hi > lo:
                arr = (arr - lo) / (hi - lo)
    arr = arr.astype(np.float64)

    if center_crop_size is not None:
        arr = center_crop(arr, int(center_crop_size))
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"image {path} is {arr.shape[1]}x{arr.shape[0]}, not square; "
                         f"pass --center-crop SIZE to crop it")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"image {path} contains non-finite samples")
    return arr


def write_sidecar(path, img, extra=None):
    meta = {"n": int(img.shape[0]),
            "value_range": [float(np.min(img)), float(np.max(img))],
            "fft_convention": FFT_CONVENTION}
    if extra:
        meta.update(extra)
    side = Path(path).with_suffix(".json")
    side.write_text(json.dumps(meta, indent=2))
    return side


def read_sidecar(path):
    side = Path(path).with_suffix(".json")
    if side.exists():
        return json.loads(side.read_text())
    return {}


def save_image(img, path, extra_meta=None):
    """
    Save as 32-bit float TIFF (``.tif``/``.tiff``) or rescaled 16-bit PNG (``.png``).

    A JSON sidecar next to the file records the grid size, the original value range and the FFT
    convention. For PNG the value range is what must be used to undo the rescaling.
    """
    img = check_square(img)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix in (".tif", ".tiff"):
        import tifffile
        tifffile.imwrite(path, img.astype(np.float32))
        extra = {"encoding": "float32"}
    elif suffix == ".png":
        from PIL import Image
        lo, hi = float(img.min()), float(img.max())
        scaled = (img - lo) / (hi - lo) if hi > lo else np.zeros_like(img)
        Image.fromarray(np.round(scaled * 65535).astype(np.uint16)).save(path)
        extra = {"encoding": "uint16, rescaled from value_range"}
    else:
        raise ValueError(f"unsupported output format '{suffix}'")
    if extra_meta:
        extra.update(extra_meta)
    write_sidecar(path, img, extra)


def save_spectrum_preview(spec, path):
    """8-bit PNG of log1p|spectrum|, max-normalized."""
    from PIL import Image
    mag = np.log1p(np.abs(spec))
    mag = mag / mag.max() if mag.max() > 0 else mag
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(mag * 255).astype(np.uint8)).save(path)
