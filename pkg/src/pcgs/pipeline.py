"""Encode/decode orchestration across progressive levels.

At each level, in ascending anchor order, an anchor is either newly decoded
(its D+6 channels coded as Gaussian-model symbols at the level step), refined
(one trit per channel under the trinomial head), or skipped; the anchor's
newly decoded Gaussians then contribute three Gaussian-model offset symbols
each.  Offsets are never refined.  Both codec sides derive the event layout
and every frequency table from the same state (header-equivalent), which is
what keeps the range coder aligned; the encoder additionally knows the scene
values and turns them into symbols.

All per-level work is batched over anchor ranges so table memory stays
bounded; the range coder state persists across batches within one level
chunk and each level chunk is flushed independently.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._kernels import TOTAL, WINDOW
from .container import (
    HeaderData,
    ProgressiveBitstream,
    dequantize_locations,
    parse_header,
    quantize_locations,
    write_header,
)
from .entropy import (
    build_gaussian_tables,
    build_trit_tables,
    eval_rate_head_batch,
    hash_features,
    trit_logits_batch,
)
from .errors import CodecError, FormatError, ValidationError
from .masking import MaskState, build_mask_state
from .model import AnchorScene, EntropyNet, HashGrid, LevelConfig, MaskParams, validate_scene
from .modelio import SceneBundle
from .rangecoder import RangeDecoder, RangeEncoder

logger = logging.getLogger(__name__)

__all__ = [
    "encode",
    "decode",
    "estimate_rate",
    "reconstruction_error",
    "Reconstruction",
    "RateEstimate",
    "GroupErrors",
]

# Anchors per batch, by coding level (deeper levels build wider table cores).
_BATCH_BY_LEVEL = (8192, 4096, 2048, 1024)


def _batch_size(level: int) -> int:
    return _BATCH_BY_LEVEL[min(level, len(_BATCH_BY_LEVEL)) - 1]


@dataclass
class Reconstruction:
    """Decoded state after some level: values for every present anchor/Gaussian."""

    level: int
    total_anchors: int
    feat_dim: int
    offsets_per_anchor: int
    original_index: np.ndarray  # (n_present,) indices into the original scene
    locations: np.ndarray  # (n_present, 3) bbox-grid coordinates
    anchor_feats: np.ndarray  # (n_present, D)
    scalings: np.ndarray  # (n_present, 6)
    gauss_present: np.ndarray  # (n_present, K) uint8
    offsets: np.ndarray  # (n_present, 3K), zero where Gaussian absent

    @property
    def anchor_coverage(self) -> float:
        return self.original_index.shape[0] / max(self.total_anchors, 1)

    @property
    def gauss_coverage(self) -> float:
        return float(self.gauss_present.sum()) / max(
            self.total_anchors * self.offsets_per_anchor, 1
        )


@dataclass
class RateEstimate:
    """Ideal bit consumption of one level, split by the three coded segments."""

    level: int
    new_anchor_bits: float
    refine_bits: float
    new_offset_bits: float

    @property
    def total_bits(self) -> float:
        return self.new_anchor_bits + self.refine_bits + self.new_offset_bits


@dataclass
class LevelStats:
    level: int
    new_anchors: int
    refined_anchors: int
    new_gaussians: int
    symbols: int
    clamped_symbols: int
    estimate: RateEstimate
    chunk_bytes: int = 0


@dataclass
class EncodeResult:
    bitstream: ProgressiveBitstream
    stats: list
    level_lattices: list | None = None
    table_digest: str | None = None


# ---------------------------------------------------------------------------
# Shared coding state
# ---------------------------------------------------------------------------


class _CodingState:
    """Everything both sides know: masks, features, and lattice evolution."""

    def __init__(
        self,
        net: EntropyNet,
        grid: HashGrid,
        cfg: LevelConfig,
        mask_state: MaskState,
        total_anchors: int,
        loc_q_valid: np.ndarray,
    ):
        self.net = net
        self.grid = grid
        self.cfg = cfg
        self.total_anchors = total_anchors
        self.d = cfg.feat_dim
        self.k = cfg.offsets_per_anchor
        self.ca = self.d + 6  # anchor channels coded per anchor

        afirst_full = mask_state.anchor_first_level
        self.valid_index = np.flatnonzero(afirst_full > 0)
        self.afirst = afirst_full[self.valid_index].astype(np.int64)
        self.gfirst = mask_state.gauss_first_level[self.valid_index].astype(np.int64)
        self.n_valid = int(self.valid_index.shape[0])

        self.loc_q = loc_q_valid
        self.locations = dequantize_locations(loc_q_valid, grid.bbox)
        self.fh = hash_features(self.locations, grid) if self.n_valid else np.zeros((0, grid.feature_width))

        self.lattice = np.zeros((self.n_valid, self.ca), dtype=np.int64)
        self.q1_fp = np.zeros((self.n_valid, self.ca), dtype=np.int64)
        self.off_lattice = np.zeros((self.n_valid, 3 * self.k), dtype=np.int64)
        self.off_q1_fp = np.zeros((self.n_valid, 3 * self.k), dtype=np.int64)

    def anchor_values_f64(self, scene: AnchorScene):
        """Encoder-side channel values (n_valid, D+6) in canonical channel order."""
        idx = self.valid_index
        return np.concatenate(
            [
                np.asarray(scene.anchor_feats, dtype=np.float64)[idx],
                np.asarray(scene.scalings, dtype=np.float64)[idx],
            ],
            axis=1,
        )

    def reconstruction(self, level: int) -> Reconstruction:
        present = (self.afirst > 0) & (self.afirst <= level)
        pos = np.flatnonzero(present)
        pow3 = float(3 ** (level - 1))
        step = self.q1_fp[pos].astype(np.float64) / 65536.0 / pow3
        values = self.lattice[pos].astype(np.float64) * step

        gp = ((self.gfirst[pos] > 0) & (self.gfirst[pos] <= level)).astype(np.uint8)
        off = np.zeros((pos.shape[0], 3 * self.k), dtype=np.float64)
        if pos.shape[0]:
            glev = self.gfirst[pos]  # (p, K)
            opow = np.power(3.0, (glev - 1).clip(min=0)).repeat(3, axis=1)
            ostep = self.off_q1_fp[pos].astype(np.float64) / 65536.0 / opow
            mask3 = gp.repeat(3, axis=1).astype(bool)
            off[mask3] = (self.off_lattice[pos].astype(np.float64) * ostep)[mask3]
        return Reconstruction(
            level=level,
            total_anchors=self.total_anchors,
            feat_dim=self.d,
            offsets_per_anchor=self.k,
            original_index=self.valid_index[pos],
            locations=self.locations[pos],
            anchor_feats=values[:, : self.d],
            scalings=values[:, self.d :],
            gauss_present=gp,
            offsets=off,
        )


@dataclass
class _LevelBatchPlan:
    """Event layout for one anchor range at one level (identical on both sides)."""

    i0: int
    i1: int
    new_idx: np.ndarray  # local anchor indices newly decoded here
    ref_idx: np.ndarray  # local anchor indices refined here
    ng_i: np.ndarray  # local anchor index per new Gaussian
    ng_k: np.ndarray  # offset slot per new Gaussian
    ev_kind: np.ndarray  # (E,) uint8
    ev_tidx: np.ndarray  # (E,) int64 per-kind table index
    pos_new: np.ndarray  # event positions of new-anchor channel symbols (n_new*CA)
    pos_ref: np.ndarray  # event positions of trit symbols (n_ref*CA)
    pos_off: np.ndarray  # event positions of offset symbols (n_ng*3)


def _plan_batch(state: _CodingState, level: int, i0: int, i1: int) -> _LevelBatchPlan:
    af = state.afirst[i0:i1]
    gf = state.gfirst[i0:i1]
    ca = state.ca

    new_m = af == level
    ref_m = (af > 0) & (af < level)
    ng_m = gf == level

    new_idx = np.flatnonzero(new_m)
    ref_idx = np.flatnonzero(ref_m)
    ng_i, ng_k = np.nonzero(ng_m)

    ev_anchor = np.where(new_m | ref_m, ca, 0) + 3 * ng_m.sum(axis=1)
    starts = np.concatenate([[0], np.cumsum(ev_anchor)])
    total = int(starts[-1])

    ev_kind = np.empty(total, dtype=np.uint8)
    ev_tidx = np.empty(total, dtype=np.int64)

    pos_new = (starts[new_idx][:, None] + np.arange(ca)[None, :]).reshape(-1)
    pos_ref = (starts[ref_idx][:, None] + np.arange(ca)[None, :]).reshape(-1)
    if ng_i.size:
        rank = np.cumsum(ng_m, axis=1) - 1  # within-anchor rank of each new Gaussian
        base = starts[ng_i] + ca + 3 * rank[ng_i, ng_k]
        pos_off = (base[:, None] + np.arange(3)[None, :]).reshape(-1)
    else:
        pos_off = np.zeros(0, dtype=np.int64)

    n_new_tab = pos_new.shape[0]
    ev_kind[pos_new] = 0
    ev_tidx[pos_new] = np.arange(n_new_tab)
    ev_kind[pos_off] = 0
    ev_tidx[pos_off] = n_new_tab + np.arange(pos_off.shape[0])
    ev_kind[pos_ref] = 1
    ev_tidx[pos_ref] = np.arange(pos_ref.shape[0])

    return _LevelBatchPlan(
        i0=i0,
        i1=i1,
        new_idx=new_idx,
        ref_idx=ref_idx,
        ng_i=ng_i,
        ng_k=ng_k,
        ev_kind=ev_kind,
        ev_tidx=ev_tidx,
        pos_new=pos_new,
        pos_ref=pos_ref,
        pos_off=pos_off,
    )


def _batch_tables(state: _CodingState, level: int, plan: _LevelBatchPlan, audit=None):
    """Gaussian-table params and trit cum rows for one batch, both sides."""
    net = state.net
    ca = state.ca

    g_new = plan.new_idx + plan.i0
    g_ng_i = plan.ng_i + plan.i0
    need_eval = np.unique(np.concatenate([g_new, np.unique(g_ng_i)])) if (
        g_new.size or g_ng_i.size
    ) else np.zeros(0, dtype=np.int64)

    # Rate-head evaluation for anchors contributing Gaussian-model symbols.
    mu_rows = sg_rows = q1_rows = None
    row_of = {}
    if need_eval.size:
        q1_all, mu_all, sg_all = eval_rate_head_batch(state.fh[need_eval], level, net)
        row_of = {int(a): i for i, a in enumerate(need_eval)}
        q1_rows, mu_rows, sg_rows = q1_all, mu_all, sg_all

    n_new = g_new.shape[0]
    n_off = plan.ng_i.shape[0]
    n_gauss_tables = n_new * ca + n_off * 3
    mu_fp = np.empty(n_gauss_tables, dtype=np.int64)
    sg_fp = np.empty(n_gauss_tables, dtype=np.int64)
    q1_fp = np.empty(n_gauss_tables, dtype=np.int64)
    if n_new:
        rows = np.array([row_of[int(a)] for a in g_new], dtype=np.int64)
        mu_fp[: n_new * ca] = mu_rows[rows][:, :ca].reshape(-1)
        sg_fp[: n_new * ca] = sg_rows[rows][:, :ca].reshape(-1)
        q1_fp[: n_new * ca] = q1_rows[rows][:, :ca].reshape(-1)
    if n_off:
        rows = np.array([row_of[int(a)] for a in g_ng_i], dtype=np.int64)
        cols = (ca + 3 * plan.ng_k)[:, None] + np.arange(3)[None, :]
        mu_fp[n_new * ca :] = mu_rows[rows[:, None], cols].reshape(-1)
        sg_fp[n_new * ca :] = sg_rows[rows[:, None], cols].reshape(-1)
        q1_fp[n_new * ca :] = q1_rows[rows[:, None], cols].reshape(-1)

    kmu, a_arr, len_arr, poff, pflat = build_gaussian_tables(mu_fp, sg_fp, q1_fp, level)

    # Trinomial tables for refined channels.
    n_ref = plan.ref_idx.shape[0]
    if n_ref:
        g_ref = plan.ref_idx + plan.i0
        prev_norm = state.lattice[g_ref].astype(np.float64) * (3.0 ** (2 - level))
        logits_fp = trit_logits_batch(prev_norm, state.fh[g_ref], level, net)
        trit_cum = build_trit_tables(logits_fp)
    else:
        trit_cum = np.zeros((0, 4), dtype=np.int64)

    if audit is not None:
        h = hashlib.sha256()
        for arr in (kmu, a_arr, len_arr, pflat, trit_cum, q1_fp):
            h.update(np.ascontiguousarray(arr).tobytes())
        audit.update(h.digest())

    return (kmu, a_arr, len_arr, poff, pflat, q1_fp), trit_cum


def _gauss_cum_freq(symbols, kmu, a_arr, len_arr, poff, pflat):
    """Vectorized (cum, freq) lookup in compact tables for known symbols."""
    lo = kmu - WINDOW
    b = a_arr + len_arr - 1
    below = symbols < a_arr
    above = symbols > b
    core = ~(below | above)
    cum = np.empty(symbols.shape[0], dtype=np.int64)
    freq = np.ones(symbols.shape[0], dtype=np.int64)
    cum[below] = symbols[below] - lo[below]
    pl = pflat[poff + len_arr]
    cum[above] = pl[above] + (symbols[above] - b[above] - 1)
    ci = poff[core] + (symbols[core] - a_arr[core])
    cum[core] = pflat[ci]
    freq[core] = pflat[ci + 1] - pflat[ci]
    return cum, freq


def _encode_symbols(state, scene_vals, off_vals, level, plan, tables, trit_cum):
    """Turn encoder-side values into symbols plus (cum, freq) event arrays."""
    kmu, a_arr, len_arr, poff, pflat, q1_fp = tables
    ca = state.ca
    pow3 = float(3 ** (level - 1))
    n_new = plan.new_idx.shape[0]
    n_off = plan.ng_i.shape[0]
    n_ref = plan.ref_idx.shape[0]
    clamped = 0

    ev = plan.ev_kind.shape[0]
    cums = np.empty(ev, dtype=np.int64)
    freqs = np.empty(ev, dtype=np.int64)

    if n_new:
        vals = scene_vals[plan.new_idx + plan.i0]
        q_s = q1_fp[: n_new * ca].astype(np.float64) / 65536.0 / pow3
        n_sym = np.floor(vals.reshape(-1) / q_s + 0.5).astype(np.int64)
        lo = kmu[: n_new * ca] - WINDOW
        hi = kmu[: n_new * ca] + WINDOW
        nc = np.clip(n_sym, lo, hi)
        clamped += int(np.count_nonzero(nc != n_sym))
        c, f = _gauss_cum_freq(
            nc, kmu[: n_new * ca], a_arr[: n_new * ca], len_arr[: n_new * ca],
            poff[: n_new * ca], pflat
        )
        cums[plan.pos_new] = c
        freqs[plan.pos_new] = f
        state.lattice[plan.new_idx + plan.i0] = nc.reshape(n_new, ca)
        state.q1_fp[plan.new_idx + plan.i0] = q1_fp[: n_new * ca].reshape(n_new, ca)

    if n_ref:
        g_ref = plan.ref_idx + plan.i0
        vals = scene_vals[g_ref]
        q1 = state.q1_fp[g_ref].astype(np.float64) / 65536.0
        q_s = q1 / pow3
        target = np.floor(vals / q_s + 0.5).astype(np.int64)
        d = target - 3 * state.lattice[g_ref]
        d = np.clip(d, -1, 1)
        sym = (d + 1).reshape(-1)
        rows = trit_cum[np.arange(sym.shape[0])]
        cums[plan.pos_ref] = rows[np.arange(sym.shape[0]), sym]
        freqs[plan.pos_ref] = rows[np.arange(sym.shape[0]), sym + 1] - cums[plan.pos_ref]
        state.lattice[g_ref] = 3 * state.lattice[g_ref] + d

    if n_off:
        g_i = plan.ng_i + plan.i0
        cols = (3 * plan.ng_k)[:, None] + np.arange(3)[None, :]
        vals = off_vals[g_i[:, None], cols]
        sl = slice(n_new * ca, n_new * ca + n_off * 3)
        q_s = q1_fp[sl].astype(np.float64) / 65536.0 / pow3
        n_sym = np.floor(vals.reshape(-1) / q_s + 0.5).astype(np.int64)
        lo = kmu[sl] - WINDOW
        hi = kmu[sl] + WINDOW
        nc = np.clip(n_sym, lo, hi)
        clamped += int(np.count_nonzero(nc != n_sym))
        c, f = _gauss_cum_freq(nc, kmu[sl], a_arr[sl], len_arr[sl], poff[sl], pflat)
        cums[plan.pos_off] = c
        freqs[plan.pos_off] = f
        state.off_lattice[g_i[:, None], cols] = nc.reshape(n_off, 3)
        state.off_q1_fp[g_i[:, None], cols] = q1_fp[sl].reshape(n_off, 3)

    return cums, freqs, clamped


def _apply_decoded(state, level, plan, tables, syms):
    """Mirror of the encoder's lattice updates, driven by decoded symbols."""
    kmu, a_arr, len_arr, poff, pflat, q1_fp = tables
    ca = state.ca
    n_new = plan.new_idx.shape[0]
    n_off = plan.ng_i.shape[0]

    if n_new:
        g_new = plan.new_idx + plan.i0
        state.lattice[g_new] = syms[plan.pos_new].reshape(n_new, ca)
        state.q1_fp[g_new] = q1_fp[: n_new * ca].reshape(n_new, ca)
    if plan.ref_idx.shape[0]:
        g_ref = plan.ref_idx + plan.i0
        d = syms[plan.pos_ref].reshape(-1, ca) - 1
        state.lattice[g_ref] = 3 * state.lattice[g_ref] + d
    if n_off:
        g_i = plan.ng_i + plan.i0
        cols = (3 * plan.ng_k)[:, None] + np.arange(3)[None, :]
        sl = slice(n_new * ca, n_new * ca + n_off * 3)
        state.off_lattice[g_i[:, None], cols] = syms[plan.pos_off].reshape(n_off, 3)
        state.off_q1_fp[g_i[:, None], cols] = q1_fp[sl].reshape(n_off, 3)


def _segment_bits(freqs, plan):
    log2 = np.log2(TOTAL) - np.log2(freqs.astype(np.float64))
    return (
        float(log2[plan.pos_new].sum()),
        float(log2[plan.pos_ref].sum()),
        float(log2[plan.pos_off].sum()),
    )


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def _make_state_from_inputs(scene, params, net, cfg, grid) -> _CodingState:
    mask_state = build_mask_state(params)
    valid = np.flatnonzero(mask_state.anchor_first_level > 0)
    loc_q = quantize_locations(np.asarray(scene.locations, dtype=np.float64)[valid], grid.bbox)
    return _CodingState(net, grid, cfg, mask_state, scene.num_anchors, loc_q), mask_state


def encode(
    scene: AnchorScene,
    params: MaskParams,
    net: EntropyNet,
    cfg: LevelConfig,
    grid: HashGrid,
    levels: int | None = None,
    keep_level_lattices: bool = False,
    audit: bool = False,
) -> EncodeResult:
    """One-pass progressive encode; returns the bitstream plus per-level stats."""
    problems = validate_scene(scene, params, net, cfg)
    if problems:
        raise ValidationError("; ".join(problems))
    s_max = cfg.num_levels if levels is None else int(levels)
    if not 1 <= s_max <= cfg.num_levels:
        raise ValidationError(f"levels must be in [1, {cfg.num_levels}], got {s_max}")

    state, mask_state = _make_state_from_inputs(scene, params, net, cfg, grid)
    header = write_header(net, grid, cfg, mask_state, state.loc_q)

    scene_vals = state.anchor_values_f64(scene)
    off_vals = np.asarray(scene.offsets, dtype=np.float64)[state.valid_index]

    auditor = hashlib.sha256() if audit else None
    chunks = []
    stats = []
    lattices = [] if keep_level_lattices else None
    for s in range(1, s_max + 1):
        enc = RangeEncoder()
        bsz = _batch_size(s)
        seg = np.zeros(3)
        counts = np.zeros(4, dtype=np.int64)  # new, ref, newg, clamped
        n_events = 0
        for i0 in range(0, state.n_valid, bsz):
            i1 = min(state.n_valid, i0 + bsz)
            plan = _plan_batch(state, s, i0, i1)
            if plan.ev_kind.shape[0] == 0:
                continue
            tables, trit_cum = _batch_tables(state, s, plan, audit=auditor)
            cums, freqs, clamped = _encode_symbols(
                state, scene_vals, off_vals, s, plan, tables, trit_cum
            )
            enc.encode_many(cums, freqs)
            seg += _segment_bits(freqs, plan)
            counts += (plan.new_idx.shape[0], plan.ref_idx.shape[0], plan.ng_i.shape[0], clamped)
            n_events += plan.ev_kind.shape[0]
        payload = enc.flush()
        chunks.append(payload)
        est = RateEstimate(s, seg[0], seg[1], seg[2])
        stats.append(
            LevelStats(
                level=s,
                new_anchors=int(counts[0]),
                refined_anchors=int(counts[1]),
                new_gaussians=int(counts[2]),
                symbols=n_events,
                clamped_symbols=int(counts[3]),
                estimate=est,
                chunk_bytes=len(payload),
            )
        )
        if counts[3]:
            logger.warning("level %d: %d symbols clamped to the coding window", s, counts[3])
        if keep_level_lattices:
            lattices.append(
                {
                    "lattice": state.lattice.copy(),
                    "q1_fp": state.q1_fp.copy(),
                    "off_lattice": state.off_lattice.copy(),
                    "off_q1_fp": state.off_q1_fp.copy(),
                    "recon": state.reconstruction(s),
                }
            )

    bs = ProgressiveBitstream(
        header=header,
        levels=chunks,
        declared_levels=s_max,
        trailer_sizes=[len(c) for c in chunks],
    )
    return EncodeResult(
        bitstream=bs,
        stats=stats,
        level_lattices=lattices,
        table_digest=auditor.hexdigest() if auditor else None,
    )


def decode(
    bs: ProgressiveBitstream,
    levels: int | None = None,
    snapshots: bool = False,
    audit: bool = False,
):
    """Decode ``levels`` chunks; returns the Reconstruction (or per-level list).

    The reconstruction after level s is value-exact equal to the encoder's
    quantized state at that level.
    """
    head: HeaderData = parse_header(bs.header)
    available = bs.num_levels
    s_max = available if levels is None else int(levels)
    if not 1 <= s_max <= available:
        raise FormatError(f"requested {s_max} levels, stream has {available}")

    state = _CodingState(
        head.net, head.grid, head.cfg, head.mask_state(), head.total_anchors, head.loc_q
    )
    auditor = hashlib.sha256() if audit else None
    recons = []
    for s in range(1, s_max + 1):
        dec = RangeDecoder(bs.levels[s - 1])
        bsz = _batch_size(s)
        any_events = False
        for i0 in range(0, state.n_valid, bsz):
            i1 = min(state.n_valid, i0 + bsz)
            plan = _plan_batch(state, s, i0, i1)
            if plan.ev_kind.shape[0] == 0:
                continue
            any_events = True
            tables, trit_cum = _batch_tables(state, s, plan, audit=auditor)
            kmu, a_arr, len_arr, poff, pflat, q1_fp = tables
            n_trit = trit_cum.shape[0]
            syms = dec.decode_events(
                plan.ev_kind,
                plan.ev_tidx,
                g_lo=kmu - WINDOW,
                g_a=a_arr,
                g_len=len_arr,
                g_poff=poff,
                g_pflat=pflat,
                d_off=4 * np.arange(max(n_trit, 1), dtype=np.int64),
                d_m=np.full(max(n_trit, 1), 3, dtype=np.int64),
                d_cumflat=np.ascontiguousarray(trit_cum.reshape(-1)),
            )
            _apply_decoded(state, s, plan, tables, syms)
        dec.check_fully_consumed()
        del any_events
        if snapshots:
            recons.append(state.reconstruction(s))

    if snapshots:
        result = recons
    else:
        result = state.reconstruction(s_max)
    if audit:
        return result, auditor.hexdigest()
    return result


def estimate_rate(
    scene: AnchorScene,
    params: MaskParams,
    net: EntropyNet,
    cfg: LevelConfig,
    grid: HashGrid,
    level: int,
) -> RateEstimate:
    """Ideal bit count of one level under the coder's own snapped tables.

    Sums -log2 of the table share of every symbol the level would code:
    Gaussian-model terms gated by the new-anchor mask, trinomial terms for
    refined anchors, Gaussian-model terms for newly decoded offsets.
    """
    if not 1 <= level <= cfg.num_levels:
        raise ValidationError(f"level must be in [1, {cfg.num_levels}], got {level}")
    state, _ = _make_state_from_inputs(scene, params, net, cfg, grid)
    scene_vals = state.anchor_values_f64(scene)
    off_vals = np.asarray(scene.offsets, dtype=np.float64)[state.valid_index]
    seg = np.zeros(3)
    for s in range(1, level + 1):
        bsz = _batch_size(s)
        for i0 in range(0, state.n_valid, bsz):
            i1 = min(state.n_valid, i0 + bsz)
            plan = _plan_batch(state, s, i0, i1)
            if plan.ev_kind.shape[0] == 0:
                continue
            tables, trit_cum = _batch_tables(state, s, plan)
            cums, freqs, _ = _encode_symbols(
                state, scene_vals, off_vals, s, plan, tables, trit_cum
            )
            if s == level:
                seg += _segment_bits(freqs, plan)
    return RateEstimate(level, seg[0], seg[1], seg[2])


@dataclass
class GroupErrors:
    """Per-group mean squared error over the anchors present at a level."""

    feat_mse: float
    scaling_mse: float
    offset_mse: float
    anchor_coverage: float
    gauss_coverage: float


def reconstruction_error(scene: AnchorScene, recon: Reconstruction) -> GroupErrors:
    """MSE of each channel group against the source, absent anchors excluded."""
    if (
        scene.num_anchors != recon.total_anchors
        or scene.feat_dim != recon.feat_dim
        or scene.offsets_per_anchor != recon.offsets_per_anchor
    ):
        raise ValidationError(
            f"scene extents ({scene.num_anchors}, {scene.feat_dim}, {scene.offsets_per_anchor}) "
            f"do not match reconstruction ({recon.total_anchors}, {recon.feat_dim}, "
            f"{recon.offsets_per_anchor})"
        )
    idx = recon.original_index
    if idx.shape[0] == 0:
        return GroupErrors(0.0, 0.0, 0.0, 0.0, 0.0)
    df = np.asarray(scene.anchor_feats, dtype=np.float64)[idx] - recon.anchor_feats
    ds = np.asarray(scene.scalings, dtype=np.float64)[idx] - recon.scalings
    feat_mse = float(np.mean(df * df))
    scal_mse = float(np.mean(ds * ds))
    gm = recon.gauss_present.astype(bool).repeat(3, axis=1)
    if gm.any():
        do = (np.asarray(scene.offsets, dtype=np.float64)[idx] - recon.offsets)[gm]
        off_mse = float(np.mean(do * do))
    else:
        off_mse = 0.0
    return GroupErrors(
        feat_mse=feat_mse,
        scaling_mse=scal_mse,
        offset_mse=off_mse,
        anchor_coverage=recon.anchor_coverage,
        gauss_coverage=recon.gauss_coverage,
    )


def encode_bundle(bundle: SceneBundle, **kw) -> EncodeResult:
    return encode(bundle.scene, bundle.params, bundle.net, bundle.cfg, bundle.grid, **kw)
