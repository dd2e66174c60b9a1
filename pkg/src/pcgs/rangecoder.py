"""Renormalizing range coder over 2^16-total frequency tables.

Carry handling follows the classic 64-bit-low / 32-bit-range scheme: the
encoder defers bytes that might still receive a carry (a pending 0xFF run),
the decoder primes a 5-byte code window.  One coder instance covers exactly
one level chunk; flush costs at most 5 bytes, so chunks stay independently
decodable and the container can truncate at any chunk boundary.

Symbol-by-symbol methods here are the reference surface; the pipeline feeds
whole event arrays to the same kernels.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from ._kernels import TOTAL
from .entropy import FreqTable
from .errors import CodecError, TruncatedStreamError

__all__ = ["RangeEncoder", "RangeDecoder", "coded_cost"]


class RangeEncoder:
    """Accumulates encoded symbols; ``flush()`` finalizes and returns bytes."""

    def __init__(self):
        self._state = _kernels.rc_encoder_init()
        self._parts: list[bytes] = []
        self._flushed = False

    def encode_symbol(self, table: FreqTable, symbol: int) -> None:
        if self._flushed:
            raise CodecError("encoder already flushed")
        if not 0 <= symbol < table.num_symbols:
            raise CodecError(f"symbol {symbol} outside table of {table.num_symbols}")
        self.encode_many(
            np.array([table.cum(symbol)], dtype=np.int64),
            np.array([table.freq(symbol)], dtype=np.int64),
        )

    def encode_many(self, cums: np.ndarray, freqs: np.ndarray) -> None:
        """Encode parallel (cum, freq) arrays in order."""
        if self._flushed:
            raise CodecError("encoder already flushed")
        n = cums.shape[0]
        if n == 0:
            return
        out = np.empty(3 * n + 64, dtype=np.uint8)
        written = _kernels.rc_encode_events(self._state, cums, freqs, out)
        self._parts.append(out[:written].tobytes())

    def flush(self) -> bytes:
        """Finalize; returns the complete chunk payload."""
        if not self._flushed:
            out = np.empty(16, dtype=np.uint8)
            written = _kernels.rc_encode_flush(self._state, out)
            self._parts.append(out[:written].tobytes())
            self._flushed = True
        return b"".join(self._parts)


class RangeDecoder:
    """Decodes symbols from one chunk payload; detects truncation and overrun."""

    def __init__(self, data: bytes):
        self._data = np.frombuffer(data, dtype=np.uint8)
        self._state = np.zeros(3, dtype=np.int64)
        if _kernels.rc_decoder_init(self._data, self._state) != 0:
            raise TruncatedStreamError(f"chunk of {len(data)} bytes cannot prime the coder")

    def decode_symbol(self, table: FreqTable) -> int:
        syms = self.decode_events(
            np.ones(1, dtype=np.uint8),
            np.zeros(1, dtype=np.int64),
            d_off=np.zeros(1, dtype=np.int64),
            d_m=np.array([table.num_symbols], dtype=np.int64),
            d_cumflat=np.ascontiguousarray(table.cumfreq),
        )
        return int(syms[0])

    def decode_events(
        self,
        ev_kind: np.ndarray,
        ev_tidx: np.ndarray,
        g_lo=None,
        g_a=None,
        g_len=None,
        g_poff=None,
        g_pflat=None,
        d_off=None,
        d_m=None,
        d_cumflat=None,
    ) -> np.ndarray:
        """Decode a mixed event stream (see kernel docs); returns symbols."""
        empty_i = np.empty(0, dtype=np.int64)
        out = np.empty(ev_kind.shape[0], dtype=np.int64)
        status = _kernels.rc_decode_events(
            self._data,
            self._state,
            ev_kind,
            ev_tidx,
            empty_i if g_lo is None else g_lo,
            empty_i if g_a is None else g_a,
            empty_i if g_len is None else g_len,
            empty_i if g_poff is None else g_poff,
            empty_i if g_pflat is None else g_pflat,
            empty_i if d_off is None else d_off,
            empty_i if d_m is None else d_m,
            empty_i if d_cumflat is None else d_cumflat,
            out,
        )
        if status == 1:
            raise TruncatedStreamError("chunk exhausted mid-symbol")
        if status == 2:
            raise CodecError("decoded value outside table range (corrupt stream or table mismatch)")
        return out

    @property
    def bytes_consumed(self) -> int:
        return int(self._state[2])

    def check_fully_consumed(self) -> None:
        """Raise unless the chunk was read exactly to its end."""
        if self.bytes_consumed != self._data.size:
            raise CodecError(
                f"chunk misaligned: consumed {self.bytes_consumed} of {self._data.size} bytes"
            )


def coded_cost(table: FreqTable, symbol: int) -> float:
    """Ideal information content of ``symbol`` under ``table``, in bits."""
    f = table.freq(symbol)
    if f <= 0:
        raise CodecError(f"symbol {symbol} has zero frequency")
    return float(-np.log2(f / TOTAL))
