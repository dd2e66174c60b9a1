"""Chunked binary interchange for scenes, models, and reconstruction exports.

Layout (all integers little-endian, all reals 32-bit IEEE floats):

    magic "PCGSMODL" | version u16 | chunk*
    chunk := tag (4 ASCII bytes) | u64 payload length | payload

Scene/model files carry META, LOCS, FEAT, SCAL, OFFS, MASK, HASH, NETW, LCFG
in that order; reconstruction exports carry RECO, LOCS, FEAT, SCAL, GBIT,
OFFS.  Writers are canonical (fixed order, no padding), so identical inputs
produce identical bytes.  See docs/FORMAT.md for the field tables.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .model import AnchorScene, EntropyNet, HashGrid, LevelConfig, MaskParams

MODEL_MAGIC = b"PCGSMODL"
MODEL_VERSION = 1

__all__ = [
    "write_scene_file",
    "read_scene_file",
    "write_reconstruction_file",
    "read_reconstruction_file",
    "SceneBundle",
]


@dataclass
class SceneBundle:
    """Everything the encoder consumes, as loaded from one file."""

    scene: AnchorScene
    params: MaskParams
    grid: HashGrid
    net: EntropyNet
    cfg: LevelConfig


def _f32_bytes(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _chunk(tag: bytes, payload: bytes) -> bytes:
    if len(tag) != 4:
        raise ValueError(f"tag must be 4 bytes, got {tag!r}")
    return tag + struct.pack("<Q", len(payload)) + payload


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos} (need {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        raw = self.take(4 * n)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")


def _read_chunks(data: bytes, path: str):
    if len(data) < 10:
        raise FormatError(f"{path}: too short for a container")
    if data[:8] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:8]!r}")
    version = struct.unpack("<H", data[8:10])[0]
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    chunks = {}
    order = []
    pos = 10
    while pos < len(data):
        if pos + 12 > len(data):
            raise FormatError(f"{path}: truncated chunk framing at byte {pos}")
        tag = data[pos : pos + 4]
        (length,) = struct.unpack("<Q", data[pos + 4 : pos + 12])
        pos += 12
        if pos + length > len(data):
            raise FormatError(f"{path}: chunk {tag!r} claims {length} bytes past end of file")
        chunks[tag] = data[pos : pos + length]
        order.append(tag)
        pos += length
    return chunks, order


def _require(chunks, tag: bytes, path: str) -> bytes:
    if tag not in chunks:
        raise FormatError(f"{path}: missing chunk {tag!r}")
    return chunks[tag]


# ---------------------------------------------------------------------------
# Scene/model bundle
# ---------------------------------------------------------------------------


def _netw_payload(net: EntropyNet) -> bytes:
    c = net.num_channels
    s = net.num_levels
    head = struct.pack(
        "<ffIIIII",
        float(net.q_base),
        float(net.sigma_min),
        s,
        c,
        net.rate_b1.shape[0],
        net.trit_b1.shape[0],
        net.hash_width,
    )
    arrays = [
        net.rate_w1, net.rate_b1, net.rate_w2, net.rate_b2, net.rate_w3, net.rate_b3,
        net.trit_w1, net.trit_b1, net.trit_w2, net.trit_b2, net.trit_w3, net.trit_b3,
        net.level_lambdas,
    ]
    return head + b"".join(_f32_bytes(a) for a in arrays)


def _netw_parse(payload: bytes, path: str) -> EntropyNet:
    r = _Reader(payload, f"{path} NETW")
    q_base = r.f32()
    sigma_min = r.f32()
    s = r.u32()
    c = r.u32()
    hr = r.u32()
    ht = r.u32()
    fw = r.u32()
    net = EntropyNet(
        rate_w1=r.f32_array((hr, fw + s)),
        rate_b1=r.f32_array((hr,)),
        rate_w2=r.f32_array((hr, hr)),
        rate_b2=r.f32_array((hr,)),
        rate_w3=r.f32_array((3 * c, hr)),
        rate_b3=r.f32_array((3 * c,)),
        trit_w1=r.f32_array((ht, 1 + fw + s)),
        trit_b1=r.f32_array((ht,)),
        trit_w2=r.f32_array((ht, ht)),
        trit_b2=r.f32_array((ht,)),
        trit_w3=r.f32_array((3, ht)),
        trit_b3=r.f32_array((3,)),
        level_lambdas=r.f32_array((s,)),
        q_base=float(q_base),
        sigma_min=float(sigma_min),
    )
    r.done()
    return net


def _hash_payload(grid: HashGrid) -> bytes:
    head = struct.pack("<III", grid.num_levels, grid.table_size_log2, grid.feat_per_level)
    res = np.ascontiguousarray(grid.resolutions, dtype="<u4").tobytes()
    bbox = _f32_bytes(grid.bbox)
    bits = np.packbits(grid.values.reshape(grid.num_levels, -1), axis=1, bitorder="little")
    return head + res + bbox + bits.tobytes()


def _hash_parse(payload: bytes, path: str) -> HashGrid:
    r = _Reader(payload, f"{path} HASH")
    levels = r.u32()
    log2 = r.u32()
    f = r.u32()
    res = np.frombuffer(r.take(4 * levels), dtype="<u4").astype(np.int64)
    bbox = r.f32_array((2, 3))
    t = 1 << log2
    per_level = (t * f + 7) // 8
    packed = np.frombuffer(r.take(levels * per_level), dtype=np.uint8).reshape(levels, per_level)
    bits = np.unpackbits(packed, axis=1, count=t * f, bitorder="little")
    r.done()
    return HashGrid(
        num_levels=levels,
        resolutions=res,
        table_size_log2=log2,
        feat_per_level=f,
        values=bits.reshape(levels, t, f),
        bbox=bbox,
    )


def write_scene_file(path: str, bundle: SceneBundle) -> None:
    sc = bundle.scene
    p = bundle.params
    cfg = bundle.cfg
    n, k, d = sc.num_anchors, sc.offsets_per_anchor, sc.feat_dim
    s = cfg.num_levels

    meta = struct.pack("<QII", n, k, d)
    mask = (
        struct.pack("<fI", float(p.threshold), s)
        + _f32_bytes(p.base_feats)
        + _f32_bytes(p.level_feats)
    )
    lcfg = struct.pack("<III", s, d, k) + _f32_bytes(np.asarray(cfg.lambdas))

    blob = MODEL_MAGIC + struct.pack("<H", MODEL_VERSION)
    blob += _chunk(b"META", meta)
    blob += _chunk(b"LOCS", _f32_bytes(sc.locations))
    blob += _chunk(b"FEAT", _f32_bytes(sc.anchor_feats))
    blob += _chunk(b"SCAL", _f32_bytes(sc.scalings))
    blob += _chunk(b"OFFS", _f32_bytes(sc.offsets))
    blob += _chunk(b"MASK", mask)
    blob += _chunk(b"HASH", _hash_payload(bundle.grid))
    blob += _chunk(b"NETW", _netw_payload(bundle.net))
    blob += _chunk(b"LCFG", lcfg)
    with open(path, "wb") as fh:
        fh.write(blob)


def read_scene_file(path: str) -> SceneBundle:
    with open(path, "rb") as fh:
        data = fh.read()
    chunks, _ = _read_chunks(data, path)

    r = _Reader(_require(chunks, b"META", path), f"{path} META")
    n, k, d = r.u64(), r.u32(), r.u32()
    r.done()

    def arr(tag, shape):
        rr = _Reader(_require(chunks, tag, path), f"{path} {tag.decode()}")
        out = rr.f32_array(shape)
        rr.done()
        return out

    scene = AnchorScene(
        num_anchors=n,
        offsets_per_anchor=k,
        feat_dim=d,
        locations=arr(b"LOCS", (n, 3)),
        anchor_feats=arr(b"FEAT", (n, d)),
        scalings=arr(b"SCAL", (n, 6)),
        offsets=arr(b"OFFS", (n, 3 * k)),
    )

    r = _Reader(_require(chunks, b"MASK", path), f"{path} MASK")
    threshold = r.f32()
    s = r.u32()
    base = r.f32_array((n, k))
    level = r.f32_array((s, n, k))
    r.done()
    params = MaskParams(base_feats=base, level_feats=level, threshold=float(threshold))

    grid = _hash_parse(_require(chunks, b"HASH", path), path)
    net = _netw_parse(_require(chunks, b"NETW", path), path)

    r = _Reader(_require(chunks, b"LCFG", path), f"{path} LCFG")
    s2, d2, k2 = r.u32(), r.u32(), r.u32()
    lambdas = r.f32_array((s2,))
    r.done()
    if (d2, k2) != (d, k):
        raise FormatError(f"{path}: LCFG layout ({d2}, {k2}) disagrees with META ({d}, {k})")
    cfg = LevelConfig(num_levels=s2, lambdas=tuple(float(x) for x in lambdas),
                      feat_dim=d2, offsets_per_anchor=k2)

    return SceneBundle(scene=scene, params=params, grid=grid, net=net, cfg=cfg)


# ---------------------------------------------------------------------------
# Reconstruction export
# ---------------------------------------------------------------------------


def write_reconstruction_file(path: str, recon) -> None:
    """Export a Reconstruction in the shared container with a RECO annotation."""
    n_pres = int(recon.locations.shape[0])
    gp = np.ascontiguousarray(recon.gauss_present, dtype=np.uint8)
    n_gauss = int(gp.sum())
    reco = struct.pack(
        "<IQQII",
        recon.level,
        recon.total_anchors,
        n_pres,
        recon.offsets_per_anchor,
        recon.feat_dim,
    ) + struct.pack("<Q", n_gauss)

    off3 = np.ascontiguousarray(recon.offsets).reshape(n_pres, -1, 3)
    blob = MODEL_MAGIC + struct.pack("<H", MODEL_VERSION)
    blob += _chunk(b"RECO", reco)
    blob += _chunk(b"AIDX", np.ascontiguousarray(recon.original_index, dtype="<u8").tobytes())
    blob += _chunk(b"LOCS", _f32_bytes(recon.locations))
    blob += _chunk(b"FEAT", _f32_bytes(recon.anchor_feats))
    blob += _chunk(b"SCAL", _f32_bytes(recon.scalings))
    blob += _chunk(b"GBIT", np.packbits(gp.reshape(-1), bitorder="little").tobytes())
    blob += _chunk(b"OFFS", _f32_bytes(off3[gp.astype(bool)]))
    with open(path, "wb") as fh:
        fh.write(blob)


def read_reconstruction_file(path: str):
    """Load a RECO export; returns a dict of arrays (inspection/diff helper)."""
    with open(path, "rb") as fh:
        data = fh.read()
    chunks, _ = _read_chunks(data, path)
    r = _Reader(_require(chunks, b"RECO", path), f"{path} RECO")
    level = r.u32()
    total_n = r.u64()
    n_pres = r.u64()
    k = r.u32()
    d = r.u32()
    n_gauss = r.u64()
    r.done()

    def arr(tag, shape):
        rr = _Reader(_require(chunks, tag, path), f"{path} {tag.decode()}")
        out = rr.f32_array(shape)
        rr.done()
        return out

    gb = _require(chunks, b"GBIT", path)
    gauss_present = np.unpackbits(
        np.frombuffer(gb, dtype=np.uint8), count=n_pres * k, bitorder="little"
    ).reshape(n_pres, k)
    return {
        "level": level,
        "total_anchors": total_n,
        "original_index": np.frombuffer(_require(chunks, b"AIDX", path), dtype="<u8"),
        "gauss_present": gauss_present,
        "locations": arr(b"LOCS", (n_pres, 3)),
        "anchor_feats": arr(b"FEAT", (n_pres, d)),
        "scalings": arr(b"SCAL", (n_pres, 6)),
        "offsets": arr(b"OFFS", (n_gauss, 3)),
    }
