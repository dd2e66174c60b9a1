"""Independent reference implementations used to cross-check the codec.

These deliberately avoid the production code paths: the quantizer oracle
walks sub-intervals with exact rational arithmetic, the entropy oracle is a
plain summation, and the table oracles rebuild full-window frequency tables
in pure Python following the documented construction rules.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from pcgs._kernels import REM_SCALE, TOTAL, WINDOW, ZMAX
from pcgs.entropy import CDF_GRID, CDF_GRID_POINTS


def oracle_quantize(f: float, q1: float, first_level: int, target_level: int) -> float:
    """Exhaustive sub-interval walk with exact rationals; no rounding shortcuts.

    At the first level, scan integers for the half-open interval containing
    f/q_t; at each refinement, scan the three candidate sub-intervals in
    left-to-right order.  Half-open intervals give the ties-to-the-right rule
    for free.
    """
    ff = Fraction(float(f))
    fq1 = Fraction(float(q1))
    t, s = first_level, target_level
    assert 1 <= t <= s

    q_t = fq1 / 3 ** (t - 1)
    x = ff / q_t
    n = math.floor(x)
    # scan a small neighborhood for the containing half-open interval
    found = None
    for cand in (n - 1, n, n + 1):
        if Fraction(2 * cand - 1, 2) <= x < Fraction(2 * cand + 1, 2):
            found = cand
            break
    assert found is not None, "initial interval scan failed"
    n = found

    for level in range(t + 1, s + 1):
        q_s = fq1 / 3 ** (level - 1)
        x = ff / q_s
        chosen = None
        for cand in (3 * n - 1, 3 * n, 3 * n + 1):
            if Fraction(2 * cand - 1, 2) <= x < Fraction(2 * cand + 1, 2):
                chosen = cand
                break
        if chosen is None:
            # value outside the inherited interval (clamped encoder input):
            # take the nearest edge candidate
            chosen = 3 * n - 1 if x < 3 * n else 3 * n + 1
        n = chosen

    return n * (q1 / float(3 ** (s - 1)))


def oracle_entropy(pairs) -> float:
    """Ideal bits of a (table, symbol) sequence by direct summation."""
    bits = 0.0
    for table, symbol in pairs:
        bits += -math.log2(table.freq(symbol) / TOTAL)
    return bits


def _normalize_reference(probs, budget):
    """Largest-remainder split of ``budget`` with the documented tie rule."""
    m = len(probs)
    g = []
    keys = []
    for j, pj in enumerate(probs):
        pj = max(pj, 0.0)
        x = pj * budget
        gj = min(int(x), budget)
        rem = x - gj
        rem = min(max(rem, 0.0), 0.9999999999)
        g.append(gj)
        keys.append((int(rem * REM_SCALE) << 14) | (16383 - j))
    r_extra = budget - sum(g)
    assert 0 <= r_extra <= m, r_extra
    freqs = [1 + gj for gj in g]
    if r_extra > 0:
        thresh = sorted(keys, reverse=True)[r_extra - 1]
        for j in range(m):
            if keys[j] >= thresh:
                freqs[j] += 1
    return freqs


def _grid_cdf_scalar(z: float) -> float:
    """Pure-Python mirror of the normative grid-interpolated CDF."""
    if z <= -ZMAX:
        return 0.0
    if z >= ZMAX:
        return 1.0
    grid_n = CDF_GRID_POINTS - 1
    u = (z + ZMAX) * (grid_n / (2.0 * ZMAX))
    gi = int(u)
    if gi >= grid_n:
        gi = grid_n - 1
    w = u - gi
    return CDF_GRID[gi] * (1.0 - w) + CDF_GRID[gi + 1] * w


def brute_force_gauss_table(mu_fp: int, sg_fp: int, q1_fp: int, level: int):
    """Full-window table by the documented rules, no compact representation.

    Returns (window_lo, cumfreq) with cumfreq of length 2W+2.
    """
    pow3 = float(3 ** (level - 1))
    q = (q1_fp / 65536.0) / pow3
    mu = mu_fp / 65536.0
    sg = sg_fp / 65536.0
    kmu = int(np.floor(mu / q + 0.5))
    lo = kmu - WINDOW
    m = 2 * WINDOW + 1

    # core extent mirrors the normative definition
    hw_f = ZMAX * sg / q
    halfw = WINDOW if hw_f >= WINDOW else min(int(hw_f) + 2, WINDOW)
    a = kmu - halfw
    b = kmu + halfw

    cdf = []
    for k in range(lo, lo + m + 1):
        if k <= a:
            cdf.append(0.0)
        elif k > b:
            cdf.append(1.0)
        else:
            z = ((k - 0.5) * q - mu) / sg
            cdf.append(_grid_cdf_scalar(z))
    probs = [cdf[j + 1] - cdf[j] for j in range(m)]
    freqs = _normalize_reference(probs, TOTAL - m)
    cum = [0]
    for fr in freqs:
        cum.append(cum[-1] + fr)
    assert cum[-1] == TOTAL
    return lo, np.asarray(cum, dtype=np.int64)


def brute_force_trit_table(logits_fp) -> np.ndarray:
    """3-symbol cumulative row by the documented rules."""
    l = [v / 65536.0 for v in logits_fp]
    m = max(l)
    e = [math.exp(v - m) for v in l]
    z = sum(e)
    probs = [v / z for v in e]
    freqs = _normalize_reference(probs, TOTAL - 3)
    cum = [0]
    for fr in freqs:
        cum.append(cum[-1] + fr)
    assert cum[-1] == TOTAL
    return np.asarray(cum, dtype=np.int64)
