"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI: IoError-ish -> 1, FormatError -> 2,
ValidationError / MonotonicityError -> 3.
"""


class PcgsError(Exception):
    """Base class for all codec errors."""

    exit_code = 1


class FormatError(PcgsError):
    """Malformed or truncated file: bad magic, length mismatch, corrupt chunk."""

    exit_code = 2


class TruncatedStreamError(FormatError):
    """Decoder ran past the end of a coded chunk."""


class ValidationError(PcgsError):
    """Scene/model inputs violate a declared invariant."""

    exit_code = 3


class MonotonicityError(ValidationError):
    """A mask sequence decreased across levels; the bitstream would be undecodable."""


class CodecError(PcgsError):
    """Internal coding inconsistency (table mismatch, misaligned chunk)."""

    exit_code = 3
