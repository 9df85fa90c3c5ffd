"""
Conditioning of experimental raw stacks: equalize frame statistics and remove slowly varying
background fluorescence with a grayscale morphological opening.
"""
import numpy as np
from scipy import ndimage

from .imagecore import check_square
from .simulate import RawSimStack


def normalize_stack(stack):
    """
    Rescale every frame affinely to the stack-wide mean and std.

    The targets are the averages of the per-frame means and stds, so a stack whose frames already
    share their statistics is returned unchanged.

    :param stack: :class:`~simrecon.simulate.RawSimStack`
    :raises ValueError: if a frame is constant
    """
    frames = stack.frames
    means = frames.mean(axis=(2, 3))
    stds = frames.std(axis=(2, 3))
    if np.any(stds == 0):
        bad = [tuple(int(v) for v in idx) for idx in np.argwhere(stds == 0)]
        raise ValueError(f"degenerate frame(s) with zero std at {bad}")
    mu, sd = means.mean(), stds.mean()
    out = (frames - means[..., None, None]) / stds[..., None, None] * sd + mu
    return RawSimStack(out, dict(stack.config_echo))


def disk(radius):
    """Boolean disk footprint of the given integer radius."""
    r = int(radius)
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return x * x + y * y <= radius * radius


def opening(img, radius):
    """Grayscale opening with a disk; edges are handled by replication."""
    fp = disk(radius)
    return ndimage.grey_opening(img, footprint=fp, mode="nearest")


def remove_background(img, radius=10):
    """
    ``img - opening(img, disk(radius))``.

    Structures narrower than the disk survive, smooth background is removed. The result is
    non-negative because an opening never exceeds its input.

    :param img: N x N image
    :param float radius: disk radius in pixels, at least 1 and below N/2
    """
    img = check_square(np.asarray(img, dtype=float))
    if radius < 1 or radius >= img.shape[0] / 2:
        raise ValueError(f"radius must lie in [1, N/2), got {radius}")
    return img - opening(img, radius)


def preprocess_stack(stack, bg_radius=10, normalize=True):
    """Background removal on every frame followed by optional normalization."""
    frames = np.stack([[remove_background(f, bg_radius) for f in row] for row in stack.frames])
    out = RawSimStack(frames, dict(stack.config_echo))
    return normalize_stack(out) if normalize else out
