"""Monotone per-level masks over Gaussians and anchors.

A Gaussian is valid at level s when sigmoid(base + sum of softplus(level
terms up to s)) exceeds the threshold; softplus keeps the argument
non-decreasing in s, so validity can only switch on, never off.  An anchor is
valid when any of its Gaussians is.  The whole mask stack compresses to one
integer per Gaussian: the first level at which it decodes (0 = never).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MonotonicityError
from .model import MaskParams

__all__ = [
    "MaskState",
    "compute_gauss_mask",
    "derive_anchor_mask",
    "delta_mask",
    "build_mask_state",
]


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.logaddexp(0.0, x)


def compute_gauss_mask(params: MaskParams, level: int) -> np.ndarray:
    """Per-Gaussian validity bits at ``level`` (1-based)."""
    s_total = params.level_feats.shape[0]
    if not 1 <= level <= s_total:
        raise ValueError(f"level must be in [1, {s_total}], got {level}")
    arg = np.asarray(params.base_feats, dtype=np.float64).copy()
    for l in range(level):
        arg += _softplus(np.asarray(params.level_feats[l], dtype=np.float64))
    return (_sigmoid(arg) > params.threshold).astype(np.uint8)


def derive_anchor_mask(gauss_mask: np.ndarray) -> np.ndarray:
    """Anchor validity: OR over the anchor's Gaussians."""
    return np.any(np.asarray(gauss_mask) != 0, axis=-1).astype(np.uint8)


def delta_mask(mask_s: np.ndarray, mask_prev: np.ndarray) -> np.ndarray:
    """Newly-decoded indicator mask_s - mask_prev; errors if any bit turned off."""
    a = np.asarray(mask_s, dtype=np.int8)
    b = np.asarray(mask_prev, dtype=np.int8)
    d = a - b
    if np.any(d < 0):
        raise MonotonicityError(
            f"mask decreased for {int(np.sum(d < 0))} entries; levels must be non-decreasing"
        )
    return d.astype(np.uint8)


@dataclass
class MaskState:
    """First-decode levels: (N, K) for Gaussians, (N,) for anchors; 0 = never."""

    gauss_first_level: np.ndarray
    anchor_first_level: np.ndarray

    @property
    def num_levels_max(self) -> int:
        return int(self.gauss_first_level.max(initial=0))

    def gauss_mask(self, level: int) -> np.ndarray:
        g = self.gauss_first_level
        return ((g > 0) & (g <= level)).astype(np.uint8)

    def anchor_mask(self, level: int) -> np.ndarray:
        a = self.anchor_first_level
        return ((a > 0) & (a <= level)).astype(np.uint8)

    def anchor_ratio(self, level: int, total: int | None = None) -> float:
        n = total if total is not None else self.anchor_first_level.shape[0]
        return float(self.anchor_mask(level).sum()) / max(n, 1)

    def gauss_ratio(self, level: int, total: int | None = None) -> float:
        n = total if total is not None else self.gauss_first_level.size
        return float(self.gauss_mask(level).sum()) / max(n, 1)


def anchor_first_from_gauss(gauss_first: np.ndarray) -> np.ndarray:
    """min over nonzero Gaussian first-levels per anchor (0 if all zero)."""
    g = np.asarray(gauss_first, dtype=np.int64)
    masked = np.where(g == 0, np.iinfo(np.int64).max, g)
    first = masked.min(axis=1)
    first[first == np.iinfo(np.int64).max] = 0
    return first


def build_mask_state(params: MaskParams) -> MaskState:
    """Collapse the per-level masks to first-decode levels."""
    s_total = params.level_feats.shape[0]
    n, k = params.base_feats.shape
    first = np.zeros((n, k), dtype=np.int64)
    arg = np.asarray(params.base_feats, dtype=np.float64).copy()
    for s in range(1, s_total + 1):
        arg += _softplus(np.asarray(params.level_feats[s - 1], dtype=np.float64))
        on = _sigmoid(arg) > params.threshold
        first[(first == 0) & on] = s
    return MaskState(
        gauss_first_level=first,
        anchor_first_level=anchor_first_from_gauss(first),
    )
