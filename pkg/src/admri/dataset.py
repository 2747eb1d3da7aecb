"""On-disk labeled slice dataset: fixed-width records plus a manifest.

File layout (little-endian): magic ``SMRD``, version u16, record count u64,
manifest length u32, manifest bytes (sorted ``key=value`` lines), packed
792-byte records, and a trailing 64-bit FNV-1a checksum of everything
before it. Records are label u8, subject u32, axial index u16, variant u8,
then 784 bytes of 28x28 row-major 8-bit pixels.

The manifest always carries the record counts (total, per class, per
variant) and they are validated against the actual records on every
construction, so a Dataset object can't drift out of sync with itself.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumError, FormatError, TruncationError, VersionError
from .hashing import FNV64_OFFSET, fnv1a64
from .preprocess import SMOOTHING_VARIANTS
from .volume import LABEL_AD, LABEL_NC

MAGIC = b"SMRD"
VERSION = 1
SLICE_SIDE = 28
PIXEL_COUNT = SLICE_SIDE * SLICE_SIDE
RECORD_STRUCT = struct.Struct("<BIHB784s")
RECORD_SIZE = RECORD_STRUCT.size  # 792
PIXEL_SCALE = 0.00390625  # 1/256, the loader's uint8 -> float factor

_HEADER_STRUCT = struct.Struct("<4sHQI")


@dataclass(frozen=True)
class SliceRecord:
    """One labeled 28x28 8-bit slice."""

    label: int
    subject_id: int
    axial_index: int
    variant: int
    pixels: np.ndarray  # uint8 [28, 28]

    def __post_init__(self):
        if self.label not in (LABEL_NC, LABEL_AD):
            raise ValueError(f"label must be 0 (NC) or 1 (AD), got {self.label}")
        if not 0 <= self.subject_id < 2**32:
            raise ValueError(f"subject_id out of u32 range: {self.subject_id}")
        if not 0 <= self.axial_index < 2**16:
            raise ValueError(f"axial_index out of u16 range: {self.axial_index}")
        if self.variant not in SMOOTHING_VARIANTS:
            raise ValueError(f"variant must be one of {SMOOTHING_VARIANTS}")
        p = np.asarray(self.pixels)
        if p.dtype != np.uint8 or p.shape != (SLICE_SIDE, SLICE_SIDE):
            raise ValueError(f"pixels must be uint8 [{SLICE_SIDE}, {SLICE_SIDE}]")
        object.__setattr__(self, "pixels", np.ascontiguousarray(p))

    def pack(self) -> bytes:
        return RECORD_STRUCT.pack(
            self.label, self.subject_id, self.axial_index, self.variant,
            self.pixels.tobytes(),
        )

    @classmethod
    def unpack(cls, blob: bytes) -> "SliceRecord":
        label, subject, axial, variant, pixels = RECORD_STRUCT.unpack(blob)
        return cls(
            label=label,
            subject_id=subject,
            axial_index=axial,
            variant=variant,
            pixels=np.frombuffer(pixels, dtype=np.uint8).reshape(SLICE_SIDE, SLICE_SIDE),
        )


def count_manifest_keys(records) -> dict:
    counts = {
        "count_total": len(records),
        "count_nc": sum(1 for r in records if r.label == LABEL_NC),
        "count_ad": sum(1 for r in records if r.label == LABEL_AD),
    }
    for v in SMOOTHING_VARIANTS:
        counts[f"count_variant_{v}"] = sum(1 for r in records if r.variant == v)
    return {k: str(n) for k, n in counts.items()}


@dataclass
class Dataset:
    """Ordered records plus a manifest whose counts always match them."""

    records: list
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = count_manifest_keys(self.records)
        missing = [k for k in expected if k not in self.manifest]
        if missing:
            # Fill counts on first construction; never silently correct them.
            if len(missing) != len(expected):
                raise ValueError(f"manifest is missing count keys {missing}")
            self.manifest = {**expected, **self.manifest}
        bad = {k: (self.manifest[k], expected[k])
               for k in expected if self.manifest[k] != expected[k]}
        if bad:
            raise ValueError(f"manifest counts disagree with records: {bad}")

    def __len__(self) -> int:
        return len(self.records)

    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def class_counts(self) -> tuple:
        return (int(self.manifest["count_nc"]), int(self.manifest["count_ad"]))


def manifest_total(manifest: dict) -> int:
    """Total image count implied by the per-class manifest entries."""
    return int(manifest["count_nc"]) + int(manifest["count_ad"])


def manifest_class_ratio(manifest: dict) -> float:
    """Majority-to-minority class count ratio from manifest arithmetic."""
    nc, ad = int(manifest["count_nc"]), int(manifest["count_ad"])
    lo, hi = sorted((nc, ad))
    if lo == 0:
        raise ValueError("one class is empty; ratio undefined")
    return hi / lo


def _encode_manifest(manifest: dict) -> bytes:
    lines = []
    for key in sorted(manifest):
        value = str(manifest[key])
        if "=" in key or "\n" in key or "\n" in value:
            raise ValueError(f"manifest entry {key!r} contains reserved characters")
        lines.append(f"{key}={value}\n")
    return "".join(lines).encode("utf-8")


def _decode_manifest(blob: bytes) -> dict:
    manifest = {}
    for line in blob.decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"manifest line without '=': {line!r}")
        manifest[key] = value
    return manifest


def write_dataset(records, manifest: dict, path) -> Dataset:
    """Write records + manifest to ``path``; returns the validated Dataset."""
    if not records:
        raise ValueError("refusing to write an empty dataset")
    ds = Dataset(records=list(records), manifest=dict(manifest))
    manifest_blob = _encode_manifest(ds.manifest)
    blob = bytearray()
    blob += _HEADER_STRUCT.pack(MAGIC, VERSION, len(ds.records), len(manifest_blob))
    blob += manifest_blob
    for record in ds.records:
        blob += record.pack()
    checksum = fnv1a64(bytes(blob))
    blob += struct.pack("<Q", checksum)
    with open(path, "wb") as fh:
        fh.write(blob)
    return ds


def read_dataset(path) -> Dataset:
    """Read and fully validate a dataset file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER_STRUCT.size:
        raise TruncationError(f"file has {len(data)} bytes, header needs {_HEADER_STRUCT.size}")
    magic, version, count, manifest_len = _HEADER_STRUCT.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not a slice dataset file")
    if version != VERSION:
        raise VersionError(f"unsupported dataset version {version}")
    expected_size = _HEADER_STRUCT.size + manifest_len + count * RECORD_SIZE + 8
    if len(data) < expected_size:
        raise TruncationError(
            f"header promises {expected_size} bytes, file has {len(data)}"
        )
    if len(data) > expected_size:
        raise FormatError(f"{len(data) - expected_size} trailing bytes after checksum")
    (stored,) = struct.unpack_from("<Q", data, expected_size - 8)
    actual = fnv1a64(data[: expected_size - 8])
    if stored != actual:
        raise ChecksumError(
            f"checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )
    off = _HEADER_STRUCT.size
    manifest = _decode_manifest(data[off : off + manifest_len])
    off += manifest_len
    records = []
    for _ in range(count):
        records.append(SliceRecord.unpack(data[off : off + RECORD_SIZE]))
        off += RECORD_SIZE
    return Dataset(records=records, manifest=manifest)


def split_dataset(dataset: Dataset, test_fraction: float = 0.25, seed: int = 0,
                  subject_level: bool = False):
    """Seeded disjoint split; returns (train, test).

    Slice-level (default): shuffle record indices, first floor(n * fraction)
    go to test. Subject-level: shuffle subject ids and send the first
    floor(n_subjects * fraction) subjects' records to test, so no subject
    spans both sides.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    if subject_level:
        subjects = sorted({r.subject_id for r in dataset.records})
        order = rng.permutation(len(subjects))
        n_test = int(len(subjects) * test_fraction)
        test_subjects = {subjects[i] for i in order[:n_test]}
        test_idx = [i for i, r in enumerate(dataset.records) if r.subject_id in test_subjects]
        train_idx = [i for i, r in enumerate(dataset.records) if r.subject_id not in test_subjects]
    else:
        order = rng.permutation(n)
        n_test = int(n * test_fraction)
        test_idx = order[:n_test].tolist()
        train_idx = order[n_test:].tolist()

    def derive(indices, role):
        records = [dataset.records[i] for i in indices]
        manifest = {k: v for k, v in dataset.manifest.items() if not k.startswith("count_")}
        manifest.update(count_manifest_keys(records))
        manifest["split_role"] = role
        manifest["split_seed"] = str(seed)
        manifest["split_fraction"] = repr(test_fraction)
        manifest["split_mode"] = "subject" if subject_level else "slice"
        return Dataset(records=records, manifest=manifest)

    return derive(train_idx, "train"), derive(test_idx, "test")


def balance_dataset(dataset: Dataset, majority_target: int, seed: int = 0) -> Dataset:
    """Down-sample the majority class to ``majority_target`` records.

    Sampling is uniform without replacement; the minority class and the
    original record order are untouched. Must run before splitting (the
    split provenance in the manifest is checked), matching the
    balance-then-split experiment order.
    """
    if "split_role" in dataset.manifest:
        raise ValueError("balance_dataset must run before split_dataset, not after")
    nc, ad = dataset.class_counts()
    majority_label = LABEL_AD if ad >= nc else LABEL_NC
    majority_count = max(nc, ad)
    if majority_target > majority_count:
        raise ValueError(
            f"majority_target {majority_target} exceeds majority class count {majority_count}"
        )
    majority_positions = [i for i, r in enumerate(dataset.records) if r.label == majority_label]
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(majority_positions), size=majority_target, replace=False)
    keep = {majority_positions[i] for i in chosen}
    records = [
        r for i, r in enumerate(dataset.records)
        if r.label != majority_label or i in keep
    ]
    manifest = {k: v for k, v in dataset.manifest.items() if not k.startswith("count_")}
    manifest.update(count_manifest_keys(records))
    manifest["balanced"] = "1"
    manifest["balance_target"] = str(majority_target)
    manifest["balance_seed"] = str(seed)
    return Dataset(records=records, manifest=manifest)


def batch_iter(dataset: Dataset, batch_size: int, epoch_seed: int = 0):
    """Seeded-shuffle batches of (pixels [B, 1, 28, 28] float32, labels [B]).

    Pixels are dequantized by multiplying by 1/256; the final partial batch
    is emitted as-is.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.random.default_rng(epoch_seed).permutation(n)
    scale = np.float32(PIXEL_SCALE)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        pixels = np.stack([dataset.records[i].pixels for i in idx])
        x = pixels.astype(np.float32) * scale
        y = np.array([dataset.records[i].label for i in idx], dtype=np.int64)
        yield x[:, None, :, :], y
