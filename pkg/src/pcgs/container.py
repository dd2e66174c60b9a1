"""Progressive bitstream container: header chunk, level chunks, size trailer.

    "PCGSBITS" | version u16 | declared levels u16
    header chunk := u64 length | header payload
    level chunk  := u64 length | coder payload          (one per level)
    trailer      := "PCGSTRLR" | u64 header payload len | u64 per-level len * S
                    | "PCGSEND."

Any prefix that ends at a level-chunk boundary still parses: the reader stops
at the trailer magic or at a clean end of data, whichever comes first.
``truncate`` rewrites declared levels and the trailer, so its output is a
well-formed file that decodes exactly like a level-limited decode of the
original.

The header payload is itself a sequence of tagged sections (tag + u64 len):
META, NETW, HASH, LCFG, MLVL (first-decode levels, range-coded against an
in-header histogram), LOCQ (valid anchor locations, 16 bits per axis over the
grid bbox).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .entropy import normalize_count_table
from .errors import FormatError
from .masking import MaskState, anchor_first_from_gauss
from .model import EntropyNet, HashGrid, LevelConfig
from .modelio import _hash_parse, _hash_payload, _netw_parse, _netw_payload, _Reader
from .rangecoder import RangeDecoder, RangeEncoder

BITS_MAGIC = b"PCGSBITS"
TRAILER_MAGIC = b"PCGSTRLR"
END_MAGIC = b"PCGSEND."
BITS_VERSION = 1

__all__ = [
    "ProgressiveBitstream",
    "HeaderData",
    "write_header",
    "parse_header",
    "truncate",
    "inspect",
    "quantize_locations",
    "dequantize_locations",
]


# ---------------------------------------------------------------------------
# Location quantization (16 bits per axis over the grid bbox)
# ---------------------------------------------------------------------------


def quantize_locations(locations: np.ndarray, bbox: np.ndarray) -> np.ndarray:
    """Map locations onto the 16-bit grid of the bbox (round half up)."""
    lo = bbox[0].astype(np.float64)
    hi = bbox[1].astype(np.float64)
    t = (np.asarray(locations, dtype=np.float64) - lo) / (hi - lo)
    q = np.floor(t * 65535.0 + 0.5)
    return np.clip(q, 0, 65535).astype(np.uint16)


def dequantize_locations(loc_q: np.ndarray, bbox: np.ndarray) -> np.ndarray:
    """Grid coordinates back to scene units; both codec sides use these."""
    lo = bbox[0].astype(np.float64)
    hi = bbox[1].astype(np.float64)
    return lo + loc_q.astype(np.float64) / 65535.0 * (hi - lo)


# ---------------------------------------------------------------------------
# Header
# ---------------------------------------------------------------------------


@dataclass
class HeaderData:
    """Decoded header: shared model state plus the mask plan.

    ``gauss_first`` covers all original anchors (rows of zeros for anchors
    that never decode), so original indices are recoverable; quantized
    locations are stored only for the anchors valid at the deepest level,
    in ascending original-index order.
    """

    net: EntropyNet
    grid: HashGrid
    cfg: LevelConfig
    total_anchors: int
    gauss_first: np.ndarray  # (N, K) first-decode levels, 0 = never
    loc_q: np.ndarray  # (n_valid, 3) uint16

    @property
    def num_valid(self) -> int:
        return int(self.loc_q.shape[0])

    def mask_state(self) -> MaskState:
        return MaskState(
            gauss_first_level=self.gauss_first.astype(np.int64),
            anchor_first_level=anchor_first_from_gauss(self.gauss_first),
        )


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _split_sections(payload: bytes, what: str):
    sections = {}
    order = []
    pos = 0
    while pos < len(payload):
        if pos + 12 > len(payload):
            raise FormatError(f"{what}: truncated section framing")
        tag = payload[pos : pos + 4]
        (length,) = struct.unpack("<Q", payload[pos + 4 : pos + 12])
        pos += 12
        if pos + length > len(payload):
            raise FormatError(f"{what}: section {tag!r} overruns header")
        sections[tag] = payload[pos : pos + length]
        order.append((tag, length))
        pos += length
    return sections, order


def _code_first_levels(gauss_first: np.ndarray, num_levels: int) -> bytes:
    """Histogram + range-coded first-decode levels (alphabet 0..S)."""
    values = np.ascontiguousarray(gauss_first, dtype=np.int64).reshape(-1)
    m = num_levels + 1
    counts = np.bincount(values, minlength=m).astype(np.int64)
    if values.size and values.max() >= m:
        raise FormatError(f"first-decode level {values.max()} exceeds level count {num_levels}")
    head = struct.pack("<I", m) + counts.astype("<u8").tobytes()
    if values.size == 0:
        return head + struct.pack("<Q", 0)
    cum = normalize_count_table(counts)
    enc = RangeEncoder()
    enc.encode_many(cum[values], cum[values + 1] - cum[values])
    coded = enc.flush()
    return head + struct.pack("<Q", len(coded)) + coded


def _decode_first_levels(payload: bytes, n_values: int, what: str) -> np.ndarray:
    r = _Reader(payload, what)
    m = r.u32()
    counts = np.frombuffer(r.take(8 * m), dtype="<u8").astype(np.int64)
    coded_len = r.u64()
    coded = r.take(coded_len)
    r.done()
    if n_values == 0:
        return np.zeros(0, dtype=np.int64)
    cum = normalize_count_table(counts)
    dec = RangeDecoder(coded)
    n = n_values
    syms = dec.decode_events(
        np.ones(n, dtype=np.uint8),
        np.zeros(n, dtype=np.int64),
        d_off=np.zeros(1, dtype=np.int64),
        d_m=np.array([m], dtype=np.int64),
        d_cumflat=cum,
    )
    dec.check_fully_consumed()
    return syms


def write_header(
    net: EntropyNet,
    grid: HashGrid,
    cfg: LevelConfig,
    mask_state: MaskState,
    loc_q_valid: np.ndarray,
) -> bytes:
    """Serialize the shared decode state; deterministic byte layout.

    First-decode levels are coded for every Gaussian of every anchor (zero
    rows for anchors that never decode); ``loc_q_valid`` holds quantized
    locations only for anchors valid at the deepest level, ascending by
    original index.
    """
    gauss_first = mask_state.gauss_first_level
    total_anchors, k = gauss_first.shape
    n_valid = int(np.count_nonzero(mask_state.anchor_first_level))
    if loc_q_valid.shape != (n_valid, 3):
        raise FormatError(
            f"expected {(n_valid, 3)} quantized locations, got {tuple(loc_q_valid.shape)}"
        )
    meta = struct.pack(
        "<QQIII",
        int(total_anchors),
        n_valid,
        int(k),
        int(cfg.feat_dim),
        int(cfg.num_levels),
    )
    blob = b""
    blob += _section(b"META", meta)
    blob += _section(b"NETW", _netw_payload(net))
    blob += _section(b"HASH", _hash_payload(grid))
    blob += _section(
        b"LCFG",
        struct.pack("<III", cfg.num_levels, cfg.feat_dim, cfg.offsets_per_anchor)
        + np.ascontiguousarray(np.asarray(cfg.lambdas), dtype="<f4").tobytes(),
    )
    blob += _section(b"MLVL", _code_first_levels(gauss_first, cfg.num_levels))
    blob += _section(b"LOCQ", np.ascontiguousarray(loc_q_valid, dtype="<u2").tobytes())
    return blob


def parse_header(payload: bytes, what: str = "header") -> HeaderData:
    sections, _ = _split_sections(payload, what)

    def need(tag):
        if tag not in sections:
            raise FormatError(f"{what}: missing section {tag!r}")
        return sections[tag]

    r = _Reader(need(b"META"), f"{what} META")
    total_anchors = r.u64()
    n_valid = r.u64()
    k = r.u32()
    d = r.u32()
    s = r.u32()
    r.done()

    net = _netw_parse(need(b"NETW"), what)
    grid = _hash_parse(need(b"HASH"), what)

    r = _Reader(need(b"LCFG"), f"{what} LCFG")
    s2, d2, k2 = r.u32(), r.u32(), r.u32()
    lambdas = r.f32_array((s2,))
    r.done()
    if (s2, d2, k2) != (s, d, k):
        raise FormatError(f"{what}: LCFG ({s2}, {d2}, {k2}) disagrees with META ({s}, {d}, {k})")
    cfg = LevelConfig(num_levels=s, lambdas=tuple(float(x) for x in lambdas),
                      feat_dim=d, offsets_per_anchor=k)

    gauss_first = _decode_first_levels(need(b"MLVL"), total_anchors * k, f"{what} MLVL").reshape(
        total_anchors, k
    )
    locq_raw = need(b"LOCQ")
    if len(locq_raw) != n_valid * 6:
        raise FormatError(f"{what}: LOCQ has {len(locq_raw)} bytes, expected {n_valid * 6}")
    loc_q = np.frombuffer(locq_raw, dtype="<u2").reshape(n_valid, 3)
    derived_valid = int(np.count_nonzero(anchor_first_from_gauss(gauss_first)))
    if derived_valid != n_valid:
        raise FormatError(
            f"{what}: {derived_valid} valid anchors in mask state but {n_valid} locations"
        )

    return HeaderData(
        net=net,
        grid=grid,
        cfg=cfg,
        total_anchors=total_anchors,
        gauss_first=gauss_first,
        loc_q=loc_q,
    )


# ---------------------------------------------------------------------------
# Whole-file container
# ---------------------------------------------------------------------------


@dataclass
class ProgressiveBitstream:
    """Parsed container: header payload plus level-chunk payloads."""

    header: bytes
    levels: list = field(default_factory=list)
    declared_levels: int = 0
    trailer_sizes: list | None = None

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def to_bytes(self) -> bytes:
        parts = [BITS_MAGIC, struct.pack("<HH", BITS_VERSION, len(self.levels))]
        parts.append(struct.pack("<Q", len(self.header)))
        parts.append(self.header)
        for payload in self.levels:
            parts.append(struct.pack("<Q", len(payload)))
            parts.append(payload)
        parts.append(TRAILER_MAGIC)
        parts.append(struct.pack("<Q", len(self.header)))
        for payload in self.levels:
            parts.append(struct.pack("<Q", len(payload)))
        parts.append(END_MAGIC)
        return b"".join(parts)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes, what: str = "bitstream") -> "ProgressiveBitstream":
        if len(data) < 12:
            raise FormatError(f"{what}: too short")
        if data[:8] != BITS_MAGIC:
            raise FormatError(f"{what}: bad magic {data[:8]!r}")
        version, declared = struct.unpack("<HH", data[8:12])
        if version != BITS_VERSION:
            raise FormatError(f"{what}: unsupported version {version}")
        pos = 12
        if pos + 8 > len(data):
            raise FormatError(f"{what}: missing header chunk")
        (hlen,) = struct.unpack("<Q", data[pos : pos + 8])
        pos += 8
        if pos + hlen > len(data):
            raise FormatError(f"{what}: header chunk overruns file")
        header = data[pos : pos + hlen]
        pos += hlen

        levels = []
        trailer_sizes = None
        while pos < len(data):
            if data[pos : pos + 8] == TRAILER_MAGIC:
                pos += 8
                need = 8 * (1 + len(levels)) + 8
                if pos + need > len(data):
                    raise FormatError(f"{what}: truncated trailer")
                (t_header,) = struct.unpack("<Q", data[pos : pos + 8])
                pos += 8
                sizes = []
                for _ in range(len(levels)):
                    (sz,) = struct.unpack("<Q", data[pos : pos + 8])
                    sizes.append(sz)
                    pos += 8
                if data[pos : pos + 8] != END_MAGIC:
                    raise FormatError(f"{what}: bad trailer end marker")
                pos += 8
                if pos != len(data):
                    raise FormatError(f"{what}: {len(data) - pos} bytes after trailer")
                if t_header != len(header):
                    raise FormatError(
                        f"{what}: trailer header size {t_header} != actual {len(header)}"
                    )
                for i, sz in enumerate(sizes):
                    if sz != len(levels[i]):
                        raise FormatError(
                            f"{what}: trailer level {i + 1} size {sz} != actual {len(levels[i])}"
                        )
                trailer_sizes = sizes
                break
            if pos + 8 > len(data):
                raise FormatError(f"{what}: truncated chunk framing at byte {pos}")
            (clen,) = struct.unpack("<Q", data[pos : pos + 8])
            pos += 8
            if pos + clen > len(data):
                raise FormatError(f"{what}: level chunk overruns file")
            levels.append(data[pos : pos + clen])
            pos += clen

        return cls(
            header=header,
            levels=levels,
            declared_levels=declared,
            trailer_sizes=trailer_sizes,
        )

    @classmethod
    def load(cls, path: str) -> "ProgressiveBitstream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), what=path)


def truncate(bs: ProgressiveBitstream, level: int) -> ProgressiveBitstream:
    """Keep the header and the first ``level`` chunks; rewrite the trailer."""
    if not 1 <= level <= bs.num_levels:
        raise FormatError(f"truncate level must be in [1, {bs.num_levels}], got {level}")
    return ProgressiveBitstream(
        header=bs.header,
        levels=list(bs.levels[:level]),
        declared_levels=level,
        trailer_sizes=[len(p) for p in bs.levels[:level]],
    )


def inspect(bs: ProgressiveBitstream) -> dict:
    """Size ledger and mask ratios; sums reconcile with the file size exactly."""
    head = parse_header(bs.header)
    _, section_order = _split_sections(bs.header, "header")
    state = head.mask_state()
    n_total = head.total_anchors
    k = head.cfg.offsets_per_anchor

    file_bytes = len(bs.to_bytes())
    level_totals = [8 + len(p) for p in bs.levels]
    header_overhead = file_bytes - sum(level_totals)

    levels = []
    cumulative = header_overhead
    for s in range(1, bs.num_levels + 1):
        cumulative += level_totals[s - 1]
        levels.append(
            {
                "level": s,
                "delta_payload_bytes": len(bs.levels[s - 1]),
                "delta_bytes": level_totals[s - 1],
                "cumulative_bytes": cumulative,
                "anchor_ratio": state.anchor_ratio(s, total=n_total),
                "gauss_ratio": state.gauss_ratio(s, total=n_total * k),
            }
        )
    return {
        "file_bytes": file_bytes,
        "header_bytes": header_overhead,
        "header_payload_bytes": len(bs.header),
        "declared_levels": bs.declared_levels,
        "present_levels": bs.num_levels,
        "total_anchors": n_total,
        "valid_anchors": head.num_valid,
        "offsets_per_anchor": k,
        "feat_dim": head.cfg.feat_dim,
        "header_sections": [
            {"tag": tag.decode("ascii"), "bytes": int(ln)} for tag, ln in section_order
        ],
        "levels": levels,
    }
