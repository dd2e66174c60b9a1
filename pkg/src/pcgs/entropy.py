"""Deterministic entropy-model evaluation: hash features, rate head, tables.

The model outputs that drive frequency tables (q, mu, sigma, trit logits) are
snapped to a 2^-16 fixed-point grid before any probability is formed; table
probabilities are evaluated by one shared vectorized path and normalized to
integer frequencies by compiled kernels.  Encoder and decoder therefore
construct bit-identical tables from the decoded header, which is what keeps
the two sides of the range coder aligned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import TOTAL, WINDOW, ZMAX
from .errors import CodecError
from .model import HASH_PRIMES, EntropyNet, HashGrid, snap_fixed_int

__all__ = [
    "ChannelModel",
    "FreqTable",
    "hash_feature",
    "hash_features",
    "eval_rate_head",
    "eval_rate_head_batch",
    "gaussian_bin_prob",
    "gaussian_freq_table",
    "trinomial_probs",
    "trit_logits_batch",
    "normal_cdf",
    "build_gaussian_tables",
    "build_trit_tables",
    "normalize_count_table",
]

# Fixed rational approximation of the standard normal CDF
# (5-term polynomial in 1/(1 + p|z|) times the density; abs error < 1e-7).
_CDF_P = 0.2316419
_CDF_B = (0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429)
_INV_SQRT_2PI = 0.3989422804014327


def normal_cdf(z):
    """Standard normal CDF by the coder's fixed rational approximation.

    Vectorized; abs error below 1e-7 everywhere.
    """
    z = np.asarray(z, dtype=np.float64)
    az = np.abs(z)
    t = 1.0 / (1.0 + _CDF_P * az)
    b1, b2, b3, b4, b5 = _CDF_B
    poly = t * (b1 + t * (b2 + t * (b3 + t * (b4 + t * b5))))
    tail = _INV_SQRT_2PI * np.exp(-0.5 * az * az) * poly
    out = np.where(z < 0.0, tail, 1.0 - tail)
    if out.ndim == 0:
        return float(out)
    return out


# Table construction samples the rational approximation on a fixed even grid
# and interpolates linearly between samples; the composite error stays below
# 1e-7 and the sampled curve is strictly monotone, so bin probabilities are
# never negative.  The grid is part of the normative table definition.
CDF_GRID_POINTS = (1 << 14) + 1
CDF_GRID = normal_cdf(np.linspace(-ZMAX, ZMAX, CDF_GRID_POINTS))
assert np.all(np.diff(CDF_GRID) > 0.0)


def table_cdf(z):
    """The clamped, grid-interpolated CDF used for frequency tables."""
    z = np.asarray(z, dtype=np.float64)
    grid_n = CDF_GRID_POINTS - 1
    u = (np.clip(z, -ZMAX, ZMAX) + ZMAX) * (grid_n / (2.0 * ZMAX))
    gi = np.minimum(u.astype(np.int64), grid_n - 1)
    w = u - gi
    out = CDF_GRID[gi] * (1.0 - w) + CDF_GRID[gi + 1] * w
    out = np.where(z <= -ZMAX, 0.0, np.where(z >= ZMAX, 1.0, out))
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# Hash grid lookup
# ---------------------------------------------------------------------------


def hash_features(x: np.ndarray, grid: HashGrid) -> np.ndarray:
    """Trilinear hash-grid features for points x (N, 3); components in [-1, 1].

    Points are clamped to the grid bbox.  Per resolution level, the eight
    surrounding {-1, +1} entries (addressed by the spatial hash of integer
    vertex coordinates) are trilinearly blended; levels are concatenated.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    lo = grid.bbox[0].astype(np.float64)
    hi = grid.bbox[1].astype(np.float64)
    xn = np.clip((x - lo) / (hi - lo), 0.0, 1.0)

    n = x.shape[0]
    mask = np.uint32((1 << grid.table_size_log2) - 1)
    out = np.empty((n, grid.feature_width), dtype=np.float64)
    vals = grid.dequantized()
    f = grid.feat_per_level

    for lvl in range(grid.num_levels):
        res = int(grid.resolutions[lvl])
        pos = xn * (res - 1)
        i0 = np.minimum(pos.astype(np.int64), res - 2)
        i0 = np.maximum(i0, 0)
        w = pos - i0
        acc = np.zeros((n, f), dtype=np.float64)
        for corner in range(8):
            cx = (corner >> 0) & 1
            cy = (corner >> 1) & 1
            cz = (corner >> 2) & 1
            ix = (i0[:, 0] + cx).astype(np.uint32)
            iy = (i0[:, 1] + cy).astype(np.uint32)
            iz = (i0[:, 2] + cz).astype(np.uint32)
            h = (ix * HASH_PRIMES[0]) ^ (iy * HASH_PRIMES[1]) ^ (iz * HASH_PRIMES[2])
            h &= mask
            wx = w[:, 0] if cx else 1.0 - w[:, 0]
            wy = w[:, 1] if cy else 1.0 - w[:, 1]
            wz = w[:, 2] if cz else 1.0 - w[:, 2]
            acc += (wx * wy * wz)[:, None] * vals[lvl, h]
        out[:, lvl * f : (lvl + 1) * f] = acc
    return out


def hash_feature(x: np.ndarray, grid: HashGrid) -> np.ndarray:
    """Feature vector for a single point (3,)."""
    return hash_features(np.asarray(x, dtype=np.float64).reshape(1, 3), grid)[0]


# ---------------------------------------------------------------------------
# Rate head
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelModel:
    """Post-activation, grid-snapped coder inputs for one channel.

    q1 is the level-1-equivalent step; the step actually used at level s is
    q1 / 3**(s-1).  The *_fp fields are the canonical fixed-point integers
    (units of 2^-16) that table construction consumes.
    """

    q1: float
    mu: float
    sigma: float
    q1_fp: int
    mu_fp: int
    sigma_fp: int


def _relu(x):
    return np.maximum(x, 0.0)


def _one_hot(level: int, num_levels: int) -> np.ndarray:
    if not 1 <= level <= num_levels:
        raise ValueError(f"level must be in [1, {num_levels}], got {level}")
    e = np.zeros(num_levels, dtype=np.float64)
    e[level - 1] = 1.0
    return e


def eval_rate_head_batch(fh: np.ndarray, level: int, net: EntropyNet):
    """Snapped (q1, mu, sigma) fixed-point arrays for a batch of hash features.

    Returns (q1_fp, mu_fp, sigma_fp), each (B, C) int64.
    """
    fh = np.atleast_2d(np.asarray(fh, dtype=np.float64))
    b = fh.shape[0]
    s = net.num_levels
    c = net.num_channels
    x = np.concatenate([fh, np.tile(_one_hot(level, s), (b, 1))], axis=1)
    h1 = _relu(x @ net.rate_w1.T.astype(np.float64) + net.rate_b1.astype(np.float64))
    h2 = _relu(h1 @ net.rate_w2.T.astype(np.float64) + net.rate_b2.astype(np.float64))
    y = h2 @ net.rate_w3.T.astype(np.float64) + net.rate_b3.astype(np.float64)
    q_raw = y[:, 0:c]
    mu_raw = y[:, c : 2 * c]
    sg_raw = y[:, 2 * c : 3 * c]
    q = net.q_base * (1.0 + np.tanh(q_raw))
    sg = np.logaddexp(0.0, sg_raw) + net.sigma_min
    q1_fp = np.maximum(snap_fixed_int(q), 1)
    sg_fp = np.maximum(snap_fixed_int(sg), 1)
    mu_fp = snap_fixed_int(mu_raw)
    return q1_fp, mu_fp, sg_fp


def eval_rate_head(fh: np.ndarray, level: int, net: EntropyNet) -> list[ChannelModel]:
    """Per-channel ChannelModels for one hash feature at one level."""
    q1_fp, mu_fp, sg_fp = eval_rate_head_batch(np.asarray(fh).reshape(1, -1), level, net)
    scale = 1.0 / 65536.0
    return [
        ChannelModel(
            q1=float(q1_fp[0, i]) * scale,
            mu=float(mu_fp[0, i]) * scale,
            sigma=float(sg_fp[0, i]) * scale,
            q1_fp=int(q1_fp[0, i]),
            mu_fp=int(mu_fp[0, i]),
            sigma_fp=int(sg_fp[0, i]),
        )
        for i in range(q1_fp.shape[1])
    ]


# ---------------------------------------------------------------------------
# Trit head
# ---------------------------------------------------------------------------


def trit_logits_batch(prev_norm: np.ndarray, fh: np.ndarray, level: int, net: EntropyNet):
    """Snapped trinomial logits for (B, C_ref) previous values sharing (B,) features.

    prev_norm: previous quantized values divided by their channel q1.
    Returns int64 logits in fixed-point units, shape (B, C_ref, 3).
    """
    prev_norm = np.asarray(prev_norm, dtype=np.float64)
    fh = np.atleast_2d(np.asarray(fh, dtype=np.float64))
    b, c_ref = prev_norm.shape
    h = net.trit_b1.shape[0]
    s = net.num_levels
    rest = np.concatenate([fh, np.tile(_one_hot(level, s), (b, 1))], axis=1)
    w1 = net.trit_w1.astype(np.float64)
    w1_v = w1[:, 0]
    w1_r = w1[:, 1:]
    shared = rest @ w1_r.T + net.trit_b1.astype(np.float64)  # (B, H)
    buf = np.multiply(prev_norm[:, :, None], w1_v[None, None, :])
    buf += shared[:, None, :]
    np.maximum(buf, 0.0, out=buf)
    # flatten the (B, C_ref) batch so the hidden layers run as single GEMMs
    h1 = buf.reshape(b * c_ref, h)
    h2 = _relu(h1 @ net.trit_w2.T.astype(np.float64) + net.trit_b2.astype(np.float64))
    logits = h2 @ net.trit_w3.T.astype(np.float64) + net.trit_b3.astype(np.float64)
    return snap_fixed_int(logits.reshape(b, c_ref, 3))


# ---------------------------------------------------------------------------
# Table construction (the single normative path)
# ---------------------------------------------------------------------------


def _num_table_chunks() -> int:
    if _kernels._USE_NUMBA:
        import numba

        return max(1, numba.get_num_threads()) * 4
    return 1


def build_gaussian_tables(mu_fp, sg_fp, q1_fp, level: int):
    """Compact Gaussian tables for a batch of channels coded at ``level``.

    The coding step is q1 / 3**(level-1).  Returns (kmu, a, length, poff,
    pflat): window centers, core starts, core lengths, and offsets into the
    flat exclusive-prefix array (pflat[poff[i] + j] = cumulative frequency
    before core symbol a + j; one count per flank symbol is implicit).
    """
    t = int(mu_fp.shape[0])
    pow3 = float(3 ** (level - 1))
    if t == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z, z
    mu_fp = np.ascontiguousarray(mu_fp, dtype=np.int64)
    sg_fp = np.ascontiguousarray(sg_fp, dtype=np.int64)
    q1_fp = np.ascontiguousarray(q1_fp, dtype=np.int64)
    q = q1_fp.astype(np.float64) / 65536.0 / pow3
    mu = mu_fp.astype(np.float64) / 65536.0
    sg = sg_fp.astype(np.float64) / 65536.0
    kmu = np.floor(mu / q + 0.5).astype(np.int64)
    hw_f = ZMAX * sg / q
    halfw = np.where(hw_f >= WINDOW, WINDOW, np.minimum(hw_f.astype(np.int64) + 2, WINDOW))
    a_arr = kmu - halfw
    len_arr = 2 * halfw + 1
    poff = np.zeros(t + 1, dtype=np.int64)
    np.cumsum(len_arr + 1, out=poff[1:])

    pflat, status = _kernels.fill_gauss_tables(
        mu_fp, sg_fp, q1_fp, pow3, CDF_GRID, len_arr, poff, kmu, a_arr, _num_table_chunks()
    )
    if status != 0:
        raise CodecError(f"degenerate Gaussian table (status {status})")
    return kmu, a_arr, len_arr, poff[:t], pflat


def build_trit_tables(logits_fp) -> np.ndarray:
    """Trinomial cumulative rows (T, 4) from snapped logits (T, 3)."""
    logits_fp = np.ascontiguousarray(logits_fp, dtype=np.int64).reshape(-1, 3)
    if logits_fp.shape[0] == 0:
        return np.zeros((0, 4), dtype=np.int64)
    l = logits_fp.astype(np.float64) / 65536.0
    e = np.exp(l - l.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    cum, status = _kernels.fill_dense_tables(p, _num_table_chunks())
    if status != 0:
        raise CodecError(f"degenerate trinomial table (status {status})")
    return cum


def normalize_count_table(counts) -> np.ndarray:
    """Dense cumulative table (M+1,) from integer counts (header coding)."""
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    m = counts.shape[0]
    if total > 0:
        p = counts.astype(np.float64) / total
    else:
        p = np.full(m, 1.0 / m)
    cum, status = _kernels.fill_dense_tables(p.reshape(1, m), 1)
    if status != 0:
        raise CodecError(f"degenerate count table (status {status})")
    return cum[0]


# ---------------------------------------------------------------------------
# Public single-table operations
# ---------------------------------------------------------------------------


def gaussian_bin_prob(f_hat: float, q: float, model: ChannelModel) -> float:
    """Probability mass of the width-q bin centered at f_hat under N(mu, sigma)."""
    if not q > 0:
        raise ValueError(f"step must be positive, got {q}")
    z_hi = (f_hat + 0.5 * q - model.mu) / model.sigma
    z_lo = (f_hat - 0.5 * q - model.mu) / model.sigma
    return float(normal_cdf(z_hi) - normal_cdf(z_lo))


@dataclass
class FreqTable:
    """Integer frequencies over a bounded symbol window, total exactly 2^16.

    ``cumfreq`` has M+1 entries (exclusive prefix sums, last = 2^16).  For
    Gaussian tables ``offset`` maps table index i to lattice index offset + i.
    """

    cumfreq: np.ndarray
    offset: int = 0

    @property
    def num_symbols(self) -> int:
        return int(self.cumfreq.shape[0]) - 1

    def freq(self, i: int) -> int:
        return int(self.cumfreq[i + 1] - self.cumfreq[i])

    def cum(self, i: int) -> int:
        return int(self.cumfreq[i])

    def coded_cost(self, i: int) -> float:
        """Ideal information content of symbol i in bits."""
        return float(-np.log2(self.freq(i) / TOTAL))


def gaussian_freq_table(model: ChannelModel, q: float | None = None, *, level: int | None = None) -> FreqTable:
    """Full window table (2W+1 symbols around round(mu/q)) for one channel.

    The coding step is either an explicit ``q`` (snapped to the fixed-point
    grid) or, with ``level`` given, the channel's own q1 / 3**(level-1) --
    the form the codec itself uses.  The window keeps W = 2^12 lattice steps
    on each side of the model mean; tail mass beyond the window is folded
    into the two boundary symbols, and every symbol keeps frequency >= 1 so
    it stays codable.
    """
    if (q is None) == (level is None):
        raise ValueError("specify exactly one of q and level")
    if level is not None:
        q1_fp = np.array([model.q1_fp], dtype=np.int64)
        lv = level
    else:
        if not q > 0:
            raise ValueError(f"step must be positive, got {q}")
        q1_fp = np.maximum(snap_fixed_int(np.array([q])), 1).astype(np.int64)
        lv = 1
    kmu, a, ln, poff, pflat = build_gaussian_tables(
        np.array([model.mu_fp], dtype=np.int64),
        np.array([model.sigma_fp], dtype=np.int64),
        q1_fp,
        lv,
    )
    return expand_compact_table(int(kmu[0]), int(a[0]), int(ln[0]), pflat[poff[0] : poff[0] + ln[0] + 1])


def expand_compact_table(kmu: int, a: int, length: int, prefix: np.ndarray) -> FreqTable:
    """Materialize a compact (flank + core) table as a dense FreqTable."""
    lo = kmu - WINDOW
    hi = kmu + WINDOW
    m = hi - lo + 1
    cum = np.empty(m + 1, dtype=np.int64)
    left = a - lo
    cum[: left + 1] = np.arange(left + 1)
    cum[left : left + length + 1] = prefix
    right_start = left + length
    tail = m - right_start
    cum[right_start : m + 1] = prefix[-1] + np.arange(tail + 1)
    if cum[-1] != TOTAL:
        raise CodecError(f"table total {int(cum[-1])} != {TOTAL}")
    return FreqTable(cumfreq=cum, offset=lo)


def trinomial_probs(prev_value: float, fh: np.ndarray, level: int, net: EntropyNet, q1: float = 1.0):
    """Trinomial (p1, p2, p3) for one refined channel, snapped to the table grid.

    ``prev_value`` is the level s-1 quantized value; it is normalized by the
    channel's q1 before entering the network.  Probabilities are the
    frequency-table shares (each >= 1/2^16, summing to exactly 1).
    """
    if level < 2:
        raise ValueError(f"refinement needs level >= 2, got {level}")
    prev_norm = np.array([[float(prev_value) / float(q1)]], dtype=np.float64)
    logits_fp = trit_logits_batch(prev_norm, np.asarray(fh).reshape(1, -1), level, net)
    cum = build_trit_tables(logits_fp.reshape(1, 3))
    f = np.diff(cum[0]).astype(np.float64)
    return tuple(f / TOTAL)
