"""Synthetic head phantoms: a desk-scale stand-in for gated clinical volumes.

Each phantom is an ellipsoidal head (soft tissue fill plus a bright shell)
containing an inner ellipsoid whose radius is reduced for class 1 (AD-like
atrophy) by the configured effect size. Gaussian noise is added inside the
head support only, so the background stays exactly zero and empty-slice
filtering behaves as it would on real masked data. Volumes are fully
determined by (config, subject index).
"""

from dataclasses import dataclass

import numpy as np

from .hashing import mix64
from .volume import LABEL_AD, LABEL_NC, Volume3D

# Geometry as fractions of the volume extent. The head is elongated along Z
# on purpose: every axial slice then intersects both structures, so every
# kept slice carries class signal.
HEAD_AXES_FRACTION = (0.40, 0.40, 0.65)
INNER_AXES_FRACTION = (0.20, 0.20, 0.60)
SHELL_CENTER = 0.86
SHELL_WIDTH = 0.045
EDGE_WIDTH = 0.06
TISSUE_LEVEL = 0.35
SHELL_LEVEL = 0.65
INNER_LEVEL = 0.55


@dataclass(frozen=True)
class PhantomConfig:
    nc_subjects: int = 7
    ad_subjects: int = 33
    dims: tuple = (32, 32, 32)
    voxel_mm: float = 2.0
    effect_size: float = 0.25
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if min(self.nc_subjects, self.ad_subjects) < 1:
            raise ValueError("need at least one subject per class")
        if len(self.dims) != 3 or min(self.dims) < 8:
            raise ValueError(f"dims must be 3 extents of at least 8 voxels, got {self.dims}")
        if self.voxel_mm <= 0:
            raise ValueError(f"voxel_mm must be positive, got {self.voxel_mm}")
        if not 0 < self.effect_size < 1:
            raise ValueError(f"effect_size must be in (0, 1), got {self.effect_size}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")


def _smoothstep_down(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """1 below lo, 0 above hi, cubic smoothstep in between."""
    t = np.clip((u - lo) / (hi - lo), 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def _radius_fields(dims: tuple):
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in dims), indexing="ij")
    rho_h_sq = np.zeros(dims, dtype=np.float64)
    rho_i_sq = np.zeros(dims, dtype=np.float64)
    for axis in range(3):
        delta = grids[axis] - (dims[axis] - 1) / 2.0
        rho_h_sq += (delta / (HEAD_AXES_FRACTION[axis] * dims[axis])) ** 2
        rho_i_sq += (delta / (INNER_AXES_FRACTION[axis] * dims[axis])) ** 2
    return np.sqrt(rho_h_sq), np.sqrt(rho_i_sq)


def phantom_volume(config: PhantomConfig, subject_id: int, label: int) -> Volume3D:
    """One phantom; label 1 shrinks the inner ellipsoid by the effect size."""
    rho_h, rho_i = _radius_fields(tuple(config.dims))
    head_mask = rho_h < 1.0
    tissue = TISSUE_LEVEL * _smoothstep_down(rho_h, 0.92, 1.0)
    shell = SHELL_LEVEL * np.exp(-((rho_h - SHELL_CENTER) ** 2) / (2.0 * SHELL_WIDTH**2))
    inner_radius = 1.0 - config.effect_size if label == LABEL_AD else 1.0
    inner = INNER_LEVEL * _smoothstep_down(
        rho_i, inner_radius * (1.0 - EDGE_WIDTH), inner_radius
    )
    voxels = tissue + shell + inner
    if config.noise_sigma > 0:
        rng = np.random.default_rng(mix64(config.seed, subject_id))
        voxels = voxels + rng.normal(0.0, config.noise_sigma, size=config.dims)
    voxels *= head_mask
    vox_mm = (config.voxel_mm,) * 3
    return Volume3D(
        voxels=voxels, voxel_dims_mm=vox_mm, subject_id=subject_id, class_label=label
    )


def generate_phantoms(config: PhantomConfig) -> list:
    """All phantom volumes for the config: NC subjects first, then AD."""
    volumes = []
    subject_id = 0
    for _ in range(config.nc_subjects):
        volumes.append(phantom_volume(config, subject_id, LABEL_NC))
        subject_id += 1
    for _ in range(config.ad_subjects):
        volumes.append(phantom_volume(config, subject_id, LABEL_AD))
        subject_id += 1
    return volumes
