"""Exception types shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3. Plain ValueError is used for in-memory dimension and
argument mismatches and is treated as a data error at the CLI boundary.
"""


class AdmriError(Exception):
    """Base class for package-specific errors."""


class UsageError(AdmriError):
    """Bad command line or configuration input."""


class ConfigError(UsageError):
    """Malformed config file: unknown key, bad value, or unparseable line."""


class DataError(AdmriError):
    """A data file or dataset is missing, malformed, or inconsistent."""


class FormatError(DataError):
    """File does not look like the expected format (bad magic, bad structure)."""


class VersionError(FormatError):
    """File format version is not supported."""


class FingerprintError(FormatError):
    """Checkpoint architecture fingerprint does not match the expected network."""


class UnsupportedDataTypeError(DataError):
    """Voxel datatype code is recognized as valid NIfTI but not supported here."""


class TruncationError(DataError):
    """File is shorter than its header claims."""


class ChecksumError(DataError):
    """Stored checksum does not match the file contents."""


class NumericError(AdmriError):
    """A non-finite value appeared where the pipeline requires finite numbers."""
