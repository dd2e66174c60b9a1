"""Compiled hot loops: range coder and frequency-table normalization.

Everything that determines coded bytes runs through these kernels plus the
vectorized helpers in :mod:`pcgs.entropy`, on both the encode and decode
paths, from integer (fixed-point) inputs.  That makes the frequency tables
bit-reproducible across runs and across the two sides of the codec
regardless of BLAS/thread nondeterminism upstream.

Set PCGS_NO_NUMBA=1 to run the pure-Python versions (slow; debugging only).
"""

from __future__ import annotations

import os

import numpy as np

TOTAL_BITS = 16
TOTAL = 1 << TOTAL_BITS          # frequency-table grand total
RC_TOP = 1 << 24                 # renormalization threshold
RC_MASK32 = (1 << 32) - 1
WINDOW = 1 << 12                 # symbols kept on each side of the window center
# CDF clamp: |z| beyond this is exact 0/1.  Tail mass past 4 sigma is below
# 2 parts in 2^16, i.e. under the per-symbol frequency floor the table grants
# anyway, so folding it into the nearest explicit symbol costs nothing.
ZMAX = 4.0
REM_SCALE = float(1 << 40)       # remainder quantization for promotion keys

_USE_NUMBA = os.environ.get("PCGS_NO_NUMBA", "") != "1"

if _USE_NUMBA:
    # the TBB probe warns on older TBB builds; OpenMP serves the same purpose
    os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
    from numba import njit, prange

    def _jit(**kw):
        return njit(cache=True, **kw)
else:  # pragma: no cover - debugging fallback
    def prange(*args):  # type: ignore
        return range(*args)

    def _jit(**kw):
        def deco(fn):
            return fn

        return deco


# ---------------------------------------------------------------------------
# Range coder: 64-bit low accumulator, 32-bit range, byte renormalization.
# Encoder state: int64[4] = (low, range, cache, cache_size).
# Decoder state: int64[3] = (range, code, read_pos).
# ---------------------------------------------------------------------------


@_jit()
def rc_encoder_init():
    state = np.zeros(4, dtype=np.int64)
    state[1] = RC_MASK32
    state[2] = 0
    state[3] = 1
    return state


@_jit()
def _rc_shift_low(state, out, pos):
    low = state[0]
    if low < 0xFF000000 or low > RC_MASK32:
        carry = low >> 32
        out[pos] = (state[2] + carry) & 0xFF
        pos += 1
        for _ in range(state[3] - 1):
            out[pos] = (0xFF + carry) & 0xFF
            pos += 1
        state[2] = (low >> 24) & 0xFF
        state[3] = 1
    else:
        state[3] += 1
    state[0] = (low << 8) & RC_MASK32
    return pos


@_jit()
def rc_encode_events(state, cums, freqs, out):
    """Encode (cum, freq) pairs against the 2^16 total; returns bytes written.

    The table's top symbol absorbs the range remainder left by the
    r = range >> 16 truncation, so the coder's loss against the ideal
    table entropy stays in the 0.01% regime.
    """
    pos = 0
    for i in range(cums.shape[0]):
        r = state[1] >> TOTAL_BITS
        base = cums[i] * r
        state[0] += base
        if cums[i] + freqs[i] == TOTAL:
            state[1] -= base
        else:
            state[1] = freqs[i] * r
        while state[1] < RC_TOP:
            pos = _rc_shift_low(state, out, pos)
            state[1] <<= 8
    return pos


@_jit()
def rc_encode_flush(state, out):
    pos = 0
    for _ in range(5):
        pos = _rc_shift_low(state, out, pos)
    return pos


@_jit()
def rc_decoder_init(data, state):
    """Returns 0 on success, 1 if the chunk is too short to prime the coder."""
    if data.size < 5:
        return 1
    state[0] = RC_MASK32
    code = np.int64(0)
    for i in range(5):
        code = ((code << 8) | np.int64(data[i])) & RC_MASK32
    state[1] = code
    state[2] = 5
    return 0


@_jit()
def rc_decode_events(
    data,
    state,
    ev_kind,
    ev_tidx,
    g_lo,
    g_a,
    g_len,
    g_poff,
    g_pflat,
    d_off,
    d_m,
    d_cumflat,
    out_syms,
):
    """Decode a mixed event stream; ev_tidx[e] selects the table of event e.

    kind 0: compact Gaussian table (unit-frequency flanks around an explicit
            core); out symbol is the absolute lattice index.
    kind 1: dense table at d_cumflat[d_off[t] : d_off[t] + d_m[t] + 1];
            out symbol is the index.

    Returns 0 ok, 1 truncated chunk.  Values in the truncation dead zone
    belong to the top symbol (mirror of the encoder's remainder absorption).
    """
    n = data.size
    for e in range(ev_kind.shape[0]):
        r = state[0] >> TOTAL_BITS
        dv = state[1] // r
        if dv >= TOTAL:
            dv = np.int64(TOTAL - 1)
        t = ev_tidx[e]
        if ev_kind[e] == 0:
            lo = g_lo[t]
            a = g_a[t]
            length = g_len[t]
            off = g_poff[t]
            p0 = g_pflat[off]
            pl = g_pflat[off + length]
            if dv < p0:
                sym = lo + dv
                cum = dv
                fr = np.int64(1)
            elif dv >= pl:
                sym = a + length + (dv - pl)
                cum = pl + (dv - pl)
                fr = np.int64(1)
            else:
                j_lo = np.int64(0)
                j_hi = length
                while j_hi - j_lo > 1:
                    mid = (j_lo + j_hi) >> 1
                    if g_pflat[off + mid] <= dv:
                        j_lo = mid
                    else:
                        j_hi = mid
                sym = a + j_lo
                cum = g_pflat[off + j_lo]
                fr = g_pflat[off + j_lo + 1] - cum
        else:
            off = d_off[t]
            m = d_m[t]
            j_lo = np.int64(0)
            j_hi = m
            while j_hi - j_lo > 1:
                mid = (j_lo + j_hi) >> 1
                if d_cumflat[off + mid] <= dv:
                    j_lo = mid
                else:
                    j_hi = mid
            sym = j_lo
            cum = d_cumflat[off + j_lo]
            fr = d_cumflat[off + j_lo + 1] - cum
        out_syms[e] = sym
        base = cum * r
        state[1] -= base
        if cum + fr == TOTAL:
            state[0] -= base
        else:
            state[0] = fr * r
        while state[0] < RC_TOP:
            if state[2] >= n:
                return 1
            state[1] = ((state[1] << 8) | np.int64(data[state[2]])) & RC_MASK32
            state[2] += 1
            state[0] <<= 8
    return 0


# ---------------------------------------------------------------------------
# Frequency-table normalization.
#
# Shared scheme: every symbol owns one guaranteed count, the remaining budget
# B = TOTAL - M is split as floor(p*B) plus one extra count for the B - sum
# largest remainders (ties broken toward the lower symbol index).  Remainders
# are compared through quantized integer keys so the selection is exact and
# reproducible.
# ---------------------------------------------------------------------------


@_jit()
def _kth_smallest(sel, length, k):
    """In-place quickselect over sel[:length] (entries unique); returns entry k."""
    lo = np.int64(0)
    hi = length - 1
    while True:
        if lo >= hi:
            return sel[lo]
        pivot = sel[(lo + hi) >> 1]
        i = lo
        j = hi
        while i <= j:
            while sel[i] < pivot:
                i += 1
            while sel[j] > pivot:
                j -= 1
            if i <= j:
                tmp = sel[i]
                sel[i] = sel[j]
                sel[j] = tmp
                i += 1
                j -= 1
        if k <= j:
            hi = j
        elif k >= i:
            lo = i
        else:
            return sel[k]


@_jit()
def _normalize_freqs(p, p0, length, budget, freqs, keys, sel):
    """Fill freqs[:length] with 1 + largest-remainder shares of ``budget``.

    ``p`` is read at p[p0 : p0 + length]; ``keys``/``sel``/``freqs`` are
    caller-owned scratch.  Returns 0 on success, negative on a degenerate
    distribution.
    """
    total_g = np.int64(0)
    for j in range(length):
        pj = p[p0 + j]
        if pj < 0.0:
            pj = 0.0
        x = pj * budget
        g = np.int64(x)
        if g > budget:
            g = np.int64(budget)
        rem = x - g
        if rem < 0.0:
            rem = 0.0
        elif rem >= 1.0:
            rem = 0.9999999999
        total_g += g
        freqs[j] = 1 + g
        # unique composite key: quantized remainder (desc) then index (asc)
        keys[j] = (np.int64(rem * REM_SCALE) << 14) | np.int64(16383 - j)
    r_extra = budget - total_g
    if r_extra < 0:
        return -1
    if r_extra > length:
        return -2
    if r_extra > 0:
        for j in range(length):
            sel[j] = keys[j]
        thresh = _kth_smallest(sel, length, length - r_extra)
        for j in range(length):
            if keys[j] >= thresh:
                freqs[j] += 1
    return 0


@_jit(parallel=True)
def fill_gauss_tables(mu_fp, sg_fp, q1_fp, pow3, cdf_grid, len_arr, poff, kmu, a_arr, n_chunks):
    """Exclusive-prefix arrays for a batch of Gaussian tables.

    The CDF is the piecewise-linear interpolation of ``cdf_grid`` (values of
    the rational approximation on an even grid over [-ZMAX, ZMAX]), clamped
    to exact 0/1 outside; the two core-end boundaries are folded to exact
    0 and 1 so each core carries the full window mass.  Output pflat uses the
    ``poff`` offsets: pflat[poff[i] + j] = cumulative frequency before core
    symbol a+j, including one count per left-flank symbol.
    """
    t = len_arr.shape[0]
    total = poff[t] if t > 0 else 0
    pflat = np.empty(total, dtype=np.int64)
    status = np.zeros(n_chunks, dtype=np.int64)
    budget = np.int64(TOTAL - (2 * WINDOW + 1))
    grid_n = cdf_grid.shape[0] - 1
    grid_scale = grid_n / (2.0 * ZMAX)
    chunk = (t + n_chunks - 1) // n_chunks
    for ci in prange(n_chunks):
        lo_i = ci * chunk
        hi_i = min(t, lo_i + chunk)
        if lo_i >= hi_i:
            continue
        cdf = np.empty(2 * WINDOW + 2, dtype=np.float64)
        probs = np.empty(2 * WINDOW + 1, dtype=np.float64)
        freqs = np.empty(2 * WINDOW + 1, dtype=np.int64)
        keys = np.empty(2 * WINDOW + 1, dtype=np.int64)
        sel = np.empty(2 * WINDOW + 1, dtype=np.int64)
        for i in range(lo_i, hi_i):
            off = poff[i]
            length = len_arr[i]
            q = (q1_fp[i] / 65536.0) / pow3
            mu = mu_fp[i] / 65536.0
            sg = sg_fp[i] / 65536.0
            a = a_arr[i]
            cdf[0] = 0.0
            cdf[length] = 1.0
            for j in range(1, length):
                z = (((a + j) - 0.5) * q - mu) / sg
                if z <= -ZMAX:
                    cdf[j] = 0.0
                elif z >= ZMAX:
                    cdf[j] = 1.0
                else:
                    u = (z + ZMAX) * grid_scale
                    gi = np.int64(u)
                    if gi >= grid_n:
                        gi = grid_n - 1
                    w = u - gi
                    cdf[j] = cdf_grid[gi] * (1.0 - w) + cdf_grid[gi + 1] * w
            for j in range(length):
                probs[j] = cdf[j + 1] - cdf[j]
            rc = _normalize_freqs(probs, 0, length, budget, freqs, keys, sel)
            if rc != 0:
                status[ci] = rc
            pflat[off] = a - (kmu[i] - WINDOW)
            for j in range(length):
                pflat[off + j + 1] = pflat[off + j] + freqs[j]
    st = np.int64(0)
    for ci in range(n_chunks):
        if status[ci] != 0:
            st = status[ci]
    return pflat, st


@_jit(parallel=True)
def fill_dense_tables(probs, n_chunks):
    """Cumulative rows (T, M+1) from per-table probability rows (T, M)."""
    t = probs.shape[0]
    m = probs.shape[1]
    cum = np.empty((t, m + 1), dtype=np.int64)
    status = np.zeros(n_chunks, dtype=np.int64)
    budget = np.int64(TOTAL - m)
    chunk = (t + n_chunks - 1) // n_chunks
    flat = probs.reshape(-1)
    for ci in prange(n_chunks):
        lo_i = ci * chunk
        hi_i = min(t, lo_i + chunk)
        if lo_i >= hi_i:
            continue
        freqs = np.empty(m, dtype=np.int64)
        keys = np.empty(m, dtype=np.int64)
        sel = np.empty(m, dtype=np.int64)
        for i in range(lo_i, hi_i):
            rc = _normalize_freqs(flat, i * m, m, budget, freqs, keys, sel)
            if rc != 0:
                status[ci] = rc
            cum[i, 0] = 0
            for j in range(m):
                cum[i, j + 1] = cum[i, j] + freqs[j]
    st = np.int64(0)
    for ci in range(n_chunks):
        if status[ci] != 0:
            st = status[ci]
    return cum, st
