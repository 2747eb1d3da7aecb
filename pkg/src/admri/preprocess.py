"""Volume preprocessing: Gaussian smoothing, slice extraction, resize, quantize.

Mirrors the VBM-style preparation stage: volumes are smoothed with a
millimetre-specified Gaussian, cut into axial (Z) slices with the last
slices and empty slices dropped, resampled to 28x28, and quantized to
8-bit for storage.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .volume import Volume3D, with_voxels

ZERO_MEAN_EPS = 1e-12
SMOOTHING_VARIANTS = (0, 2, 3, 4)  # sigma in mm; 0 = unsmoothed


@dataclass
class Slice2D:
    """One axial slice with its provenance."""

    pixels: np.ndarray  # float64 [H, W]
    subject_id: int
    axial_index: int
    variant: int = 0

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"slice pixels must be 2-D, got shape {p.shape}")
        if self.variant not in SMOOTHING_VARIANTS:
            raise ValueError(f"variant must be one of {SMOOTHING_VARIANTS}, got {self.variant}")
        self.pixels = np.ascontiguousarray(p)


def gaussian_kernel1d(sigma_vox: float) -> np.ndarray:
    """Normalized sampled Gaussian, truncated at radius ceil(4 * sigma)."""
    if sigma_vox <= 0:
        raise ValueError(f"sigma must be positive, got {sigma_vox}")
    radius = math.ceil(4.0 * sigma_vox)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma_vox * sigma_vox))
    return k / k.sum()


def _correlate_axis_renormalized(vol: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along one axis, renormalizing over in-bounds taps at edges."""
    radius = (len(kernel) - 1) // 2
    n = vol.shape[axis]
    pad = [(0, 0)] * vol.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(vol, pad)
    out = np.zeros_like(vol)
    for t in range(len(kernel)):
        sl = [slice(None)] * vol.ndim
        sl[axis] = slice(t, t + n)
        out += kernel[t] * padded[tuple(sl)]
    # in-bounds kernel mass per output position along this axis
    csum = np.concatenate(([0.0], np.cumsum(kernel)))
    idx = np.arange(n)
    lo = np.maximum(radius - idx, 0)
    hi = len(kernel) - np.maximum(idx + radius - (n - 1), 0)
    norm = csum[hi] - csum[lo]
    shape = [1] * vol.ndim
    shape[axis] = n
    return out / norm.reshape(shape)


def gaussian_smooth3d(volume: Volume3D, sigma_mm: float) -> Volume3D:
    """Separable 3-axis Gaussian smoothing with sigma given in millimetres.

    Per-axis sigma in voxels is sigma_mm / voxel_dim_mm; kernels are
    truncated at ceil(4 sigma) and edges are handled by renormalizing over
    the in-bounds taps, so constants pass through unchanged.
    """
    if sigma_mm <= 0:
        raise ValueError(f"sigma_mm must be positive, got {sigma_mm}")
    out = volume.voxels
    for axis in range(3):
        sigma_vox = sigma_mm / volume.voxel_dims_mm[axis]
        out = _correlate_axis_renormalized(out, gaussian_kernel1d(sigma_vox), axis)
    return with_voxels(volume, out)


def extract_slices(volume: Volume3D, drop_last: int = 10) -> list:
    """Axial slices in increasing Z order, minus the last ``drop_last`` and
    minus slices whose mean intensity is (numerically) zero."""
    nz = volume.shape[2]
    if nz <= drop_last:
        raise DataError(f"volume has {nz} axial slices, cannot drop the last {drop_last}")
    out = []
    for z in range(nz - drop_last):
        pixels = volume.voxels[:, :, z]
        if pixels.mean() <= ZERO_MEAN_EPS:
            continue
        out.append(
            Slice2D(
                pixels=pixels.copy(),
                subject_id=volume.subject_id,
                axial_index=z,
            )
        )
    return out


def _axis_coords(n_in: int, n_out: int):
    coords = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    coords = np.clip(coords, 0.0, n_in - 1.0)
    lo = np.minimum(coords.astype(np.intp), n_in - 2)
    frac = coords - lo
    return lo, frac


def resize_bilinear(slc: Slice2D, out_h: int = 28, out_w: int = 28) -> Slice2D:
    """Bilinear resample with half-pixel-centre sampling.

    Equal input and output size reproduces the input bit-for-bit; output
    values are clamped to the input range (guards last-ulp rounding in the
    interpolation weights).
    """
    pixels = slc.pixels
    h, w = pixels.shape
    if h < 2 or w < 2 or out_h < 1 or out_w < 1:
        raise ValueError(f"cannot resize {h}x{w} to {out_h}x{out_w}")
    ylo, yfrac = _axis_coords(h, out_h)
    xlo, xfrac = _axis_coords(w, out_w)
    rows = pixels[ylo, :] * (1.0 - yfrac)[:, None] + pixels[ylo + 1, :] * yfrac[:, None]
    out = rows[:, xlo] * (1.0 - xfrac)[None, :] + rows[:, xlo + 1] * xfrac[None, :]
    np.clip(out, pixels.min(), pixels.max(), out=out)
    return replace(slc, pixels=out)


def quantize_slice(slc: Slice2D) -> np.ndarray:
    """Per-slice min-max map to uint8 [0, 255], rounding half up.

    Constant slices (zero range) quantize to all zeros.
    """
    pixels = slc.pixels
    if not np.isfinite(pixels).all():
        raise ValueError("slice contains non-finite pixels")
    vmin = pixels.min()
    span = pixels.max() - vmin
    if span == 0.0:
        return np.zeros(pixels.shape, dtype=np.uint8)
    scaled = (pixels - vmin) * (255.0 / span)
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
