"""NIfTI-1 volume parsing and writing.

Supports single-file ``.nii`` volumes (magic ``n+1\\0``), optionally
gzip-compressed, in either byte order (detected via the dim[0] in [1, 7]
heuristic). Only 3-D volumes are accepted, plus 4-D files with a single
time point. Voxels are held as float64 [X, Y, Z] with physical voxel sizes
in millimetres.
"""

import gzip
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import FormatError, TruncationError, UnsupportedDataTypeError

HEADER_SIZE = 348
MAGIC = b"n+1\x00"

# NIfTI datatype code -> numpy dtype character (endianness prefixed on read)
_DTYPES = {2: "u1", 4: "i2", 16: "f4", 64: "f8"}
_BITPIX = {2: 8, 4: 16, 16: 32, 64: 64}

LABEL_NC = 0
LABEL_AD = 1
LABEL_NAMES = {LABEL_NC: "NC", LABEL_AD: "AD"}


@dataclass
class Volume3D:
    """A voxel grid with physical spacing and (optional) subject metadata."""

    voxels: np.ndarray  # float64 [X, Y, Z]
    voxel_dims_mm: tuple
    subject_id: int = 0
    class_label: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=np.float64)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"voxels must be a non-empty 3-D array, got {v.shape}")
        dims = tuple(float(d) for d in self.voxel_dims_mm)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"voxel_dims_mm must be 3 positive values, got {dims}")
        self.voxels = np.ascontiguousarray(v)
        self.voxel_dims_mm = dims

    @property
    def shape(self) -> tuple:
        return self.voxels.shape


def _is_gzip(data: bytes) -> bool:
    return len(data) >= 2 and data[0] == 0x1F and data[1] == 0x8B


def parse_nifti(data: bytes, subject_id: int = 0, class_label: Optional[int] = None) -> Volume3D:
    """Parse NIfTI-1 bytes (optionally gzipped) into a Volume3D.

    Applies scl_slope/scl_inter scaling when scl_slope is non-zero. Raises
    FormatError for malformed headers, UnsupportedDataTypeError for voxel
    types outside {uint8, int16, float32, float64}, and TruncationError when
    the payload is shorter than the header promises.
    """
    if _is_gzip(data):
        try:
            data = gzip.decompress(data)
        except OSError as exc:
            raise FormatError(f"bad gzip stream: {exc}") from exc
    if len(data) < HEADER_SIZE:
        raise TruncationError(f"file has {len(data)} bytes, header needs {HEADER_SIZE}")

    # Byte order: dim[0] (ndim) must land in [1, 7] when read with the right one.
    (ndim_le,) = struct.unpack_from("<h", data, 40)
    if 1 <= ndim_le <= 7:
        bo = "<"
    else:
        (ndim_be,) = struct.unpack_from(">h", data, 40)
        if not 1 <= ndim_be <= 7:
            raise FormatError(f"dim[0] is {ndim_le} (LE) / {ndim_be} (BE); not a NIfTI-1 header")
        bo = ">"

    if data[344:348] != MAGIC:
        raise FormatError(f"bad magic {data[344:348]!r}; only single-file n+1 is supported")

    dim = struct.unpack_from(f"{bo}8h", data, 40)
    (datatype,) = struct.unpack_from(f"{bo}h", data, 70)
    (bitpix,) = struct.unpack_from(f"{bo}h", data, 72)
    pixdim = struct.unpack_from(f"{bo}8f", data, 76)
    (vox_offset,) = struct.unpack_from(f"{bo}f", data, 108)
    (scl_slope,) = struct.unpack_from(f"{bo}f", data, 112)
    (scl_inter,) = struct.unpack_from(f"{bo}f", data, 116)

    if dim[0] == 4 and dim[4] != 1:
        raise FormatError(f"4-D file with {dim[4]} time points; only single-volume input")
    if dim[0] not in (3, 4):
        raise FormatError(f"need a 3-D volume, got dim[0] = {dim[0]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if min(nx, ny, nz) < 1:
        raise FormatError(f"non-positive extent in dim {dim[1:4]}")

    if datatype not in _DTYPES:
        raise UnsupportedDataTypeError(f"datatype code {datatype} not supported")
    if bitpix != _BITPIX[datatype]:
        raise FormatError(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    dx, dy, dz = pixdim[1], pixdim[2], pixdim[3]
    if min(dx, dy, dz) <= 0:
        raise FormatError(f"non-positive voxel dimensions {(dx, dy, dz)}")

    offset = int(vox_offset)
    if offset < HEADER_SIZE:
        raise FormatError(f"vox_offset {vox_offset} points inside the header")
    dtype = np.dtype(bo + _DTYPES[datatype])
    count = nx * ny * nz
    nbytes = count * dtype.itemsize
    if offset + nbytes > len(data):
        raise TruncationError(
            f"header promises {nbytes} data bytes at offset {offset}, file has {len(data)}"
        )

    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    # On-disk order is x fastest: C-reshape to [Z, Y, X], then expose [X, Y, Z].
    voxels = raw.reshape(nz, ny, nx).transpose(2, 1, 0).astype(np.float64)
    if scl_slope != 0.0 and np.isfinite(scl_slope):
        voxels = voxels * float(scl_slope) + float(scl_inter)
    return Volume3D(
        voxels=voxels,
        voxel_dims_mm=(float(dx), float(dy), float(dz)),
        subject_id=subject_id,
        class_label=class_label,
    )


def write_nifti(volume: Volume3D, path) -> None:
    """Write a little-endian float32 single-file NIfTI-1 volume.

    Gzip-compresses when the path ends in ``.gz``. Compression is fixed
    (mtime 0) so identical volumes produce identical files.
    """
    nx, ny, nz = volume.shape
    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    struct.pack_into("<8h", header, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", header, 70, 16)  # float32
    struct.pack_into("<h", header, 72, 32)
    dx, dy, dz = volume.voxel_dims_mm
    struct.pack_into("<8f", header, 76, 0.0, dx, dy, dz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<f", header, 116, 0.0)  # scl_inter
    header[344:348] = MAGIC

    payload = bytes(header) + b"\x00" * 4  # pad to vox_offset 352
    payload += np.ascontiguousarray(
        volume.voxels.transpose(2, 1, 0), dtype="<f4"
    ).tobytes()

    path = str(path)
    if path.endswith(".gz"):
        blob = gzip.compress(payload, mtime=0)
    else:
        blob = payload
    with open(path, "wb") as fh:
        fh.write(blob)


def read_volume(path, subject_id: int = 0, class_label: Optional[int] = None) -> Volume3D:
    """Read a ``.nii`` or ``.nii.gz`` file from disk."""
    with open(path, "rb") as fh:
        return parse_nifti(fh.read(), subject_id=subject_id, class_label=class_label)


def with_voxels(volume: Volume3D, voxels: np.ndarray) -> Volume3D:
    """Same metadata, new voxel grid."""
    return replace(volume, voxels=voxels)
