"""Scene, mask-parameter, entropy-network and level-configuration types.

All types are plain containers over numpy arrays, immutable by convention
after construction; nothing here mutates shared state, so instances are safe
to read from many workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "AnchorScene",
    "MaskParams",
    "HashGrid",
    "EntropyNet",
    "LevelConfig",
    "validate_scene",
    "snap_fixed",
    "HASH_PRIMES",
]

# Spatial hash: prime-multiply XOR over integer cell coordinates.
HASH_PRIMES = (np.uint32(1), np.uint32(2654435761), np.uint32(805459861))

FIXED_POINT_BITS = 16
FIXED_POINT_ONE = 1 << FIXED_POINT_BITS


def snap_fixed(x):
    """Round to the 2^-16 grid (ties toward +inf); returns float64."""
    return np.floor(np.asarray(x, dtype=np.float64) * FIXED_POINT_ONE + 0.5) / FIXED_POINT_ONE


def snap_fixed_int(x):
    """Fixed-point integer form of snap_fixed (units of 2^-16)."""
    return np.floor(np.asarray(x, dtype=np.float64) * FIXED_POINT_ONE + 0.5).astype(np.int64)


@dataclass
class AnchorScene:
    """Uncompressed source: N anchors, each with K Gaussian offsets.

    locations: (N, 3); anchor_feats: (N, D); scalings: (N, 6);
    offsets: (N, 3K) with offset (k, j) at column 3k + j.
    """

    num_anchors: int
    offsets_per_anchor: int
    feat_dim: int
    locations: np.ndarray
    anchor_feats: np.ndarray
    scalings: np.ndarray
    offsets: np.ndarray

    @property
    def num_channels(self) -> int:
        return self.feat_dim + 6 + 3 * self.offsets_per_anchor


@dataclass
class MaskParams:
    """Learnable masking features: base (N, K) plus one (N, K) sheet per level."""

    base_feats: np.ndarray
    level_feats: np.ndarray  # (S, N, K)
    threshold: float = 0.01


@dataclass
class HashGrid:
    """Binary multiresolution hash grid; entries dequantize to {-1, +1}.

    values: (num_levels, 2**table_size_log2, feat_per_level) uint8 in {0, 1}.
    bbox: (2, 3) float32 (low corner, high corner) used to normalize
    coordinates; locations are also quantized against this box.
    """

    num_levels: int
    resolutions: np.ndarray
    table_size_log2: int
    feat_per_level: int
    values: np.ndarray
    bbox: np.ndarray

    @property
    def feature_width(self) -> int:
        return self.num_levels * self.feat_per_level

    def dequantized(self) -> np.ndarray:
        return self.values.astype(np.float64) * 2.0 - 1.0


@dataclass
class EntropyNet:
    """Rate head (q, mu, sigma per channel) and trit head (3 logits).

    Rate head: (hash feature, one-hot level) -> 3*C outputs laid out as
    [q_raw(C), mu(C), sigma_raw(C)] where C = D + 6 + 3K.
    Trit head: (prev value / q1, hash feature, one-hot level) -> 3 logits.
    Weight matrices are stored (out, in); forward passes run in float64.
    """

    rate_w1: np.ndarray
    rate_b1: np.ndarray
    rate_w2: np.ndarray
    rate_b2: np.ndarray
    rate_w3: np.ndarray
    rate_b3: np.ndarray
    trit_w1: np.ndarray
    trit_b1: np.ndarray
    trit_w2: np.ndarray
    trit_b2: np.ndarray
    trit_w3: np.ndarray
    trit_b3: np.ndarray
    level_lambdas: np.ndarray
    q_base: float = 1.0
    sigma_min: float = 1e-4

    @property
    def num_levels(self) -> int:
        return int(self.level_lambdas.shape[0])

    @property
    def num_channels(self) -> int:
        return int(self.rate_b3.shape[0]) // 3

    @property
    def hash_width(self) -> int:
        return int(self.rate_w1.shape[1]) - self.num_levels


@dataclass(frozen=True)
class LevelConfig:
    """Level count, per-level rate identifiers, and the channel layout."""

    num_levels: int
    lambdas: tuple
    feat_dim: int
    offsets_per_anchor: int

    @property
    def num_channels(self) -> int:
        return self.feat_dim + 6 + 3 * self.offsets_per_anchor


def _check_shape(report, name, arr, shape):
    if tuple(arr.shape) != tuple(shape):
        report.append(f"{name}: expected shape {tuple(shape)}, got {tuple(arr.shape)}")
        return False
    return True


def _check_finite(report, name, arr):
    if not np.all(np.isfinite(arr)):
        report.append(f"{name}: contains non-finite values")


def validate_scene(scene: AnchorScene, params: MaskParams, net: EntropyNet, cfg: LevelConfig):
    """Cross-check every declared invariant; returns a list of violations.

    Empty list means the inputs are mutually consistent.  Pure report: nothing
    raises, nothing is mutated, and repeated calls return the same answer.
    """
    report: list[str] = []
    n, k, d = scene.num_anchors, scene.offsets_per_anchor, scene.feat_dim
    s = cfg.num_levels

    if _check_shape(report, "locations", scene.locations, (n, 3)):
        _check_finite(report, "locations", scene.locations)
    if _check_shape(report, "anchor_feats", scene.anchor_feats, (n, d)):
        _check_finite(report, "anchor_feats", scene.anchor_feats)
    if _check_shape(report, "scalings", scene.scalings, (n, 6)):
        _check_finite(report, "scalings", scene.scalings)
    if _check_shape(report, "offsets", scene.offsets, (n, 3 * k)):
        _check_finite(report, "offsets", scene.offsets)

    _check_shape(report, "mask base_feats", params.base_feats, (n, k))
    if params.level_feats.ndim != 3 or params.level_feats.shape[0] != s:
        report.append(
            f"mask level_feats: expected {s} level sheets, got shape {tuple(params.level_feats.shape)}"
        )
    elif params.level_feats.shape[1:] != (n, k):
        report.append(
            f"mask level_feats: expected per-level shape ({n}, {k}), got {tuple(params.level_feats.shape[1:])}"
        )
    if not 0.0 < float(params.threshold) < 1.0:
        report.append(f"mask threshold: must be in (0, 1), got {params.threshold}")

    if cfg.feat_dim != d or cfg.offsets_per_anchor != k:
        report.append(
            f"level config channel layout ({cfg.feat_dim}, {cfg.offsets_per_anchor}) "
            f"does not match scene ({d}, {k})"
        )
    if len(cfg.lambdas) != s:
        report.append(f"level config: {len(cfg.lambdas)} lambdas for {s} levels")
    lam = np.asarray(cfg.lambdas, dtype=np.float64)
    if lam.size > 1 and not np.all(np.diff(lam) < 0):
        report.append("level lambdas must be strictly decreasing")

    if net.num_levels != s:
        report.append(f"entropy net built for {net.num_levels} levels, config has {s}")
    if net.num_channels != cfg.num_channels:
        report.append(
            f"entropy net emits {net.num_channels} channels, layout needs {cfg.num_channels}"
        )
    if not net.q_base > 0:
        report.append(f"q_base must be positive, got {net.q_base}")
    if not net.sigma_min > 0:
        report.append(f"sigma_min must be positive, got {net.sigma_min}")

    return report


def validate_grid(grid: HashGrid, net: EntropyNet):
    """Grid-side invariants; separate so scene checks stay grid-independent."""
    report: list[str] = []
    if grid.values.shape != (grid.num_levels, 1 << grid.table_size_log2, grid.feat_per_level):
        report.append(
            f"hash values: expected {(grid.num_levels, 1 << grid.table_size_log2, grid.feat_per_level)}, "
            f"got {tuple(grid.values.shape)}"
        )
    elif not np.all((grid.values == 0) | (grid.values == 1)):
        report.append("hash values must be single bits (0 or 1)")
    if grid.feature_width != net.hash_width:
        report.append(
            f"hash feature width {grid.feature_width} does not match net input width {net.hash_width}"
        )
    if grid.bbox.shape != (2, 3):
        report.append(f"bbox: expected shape (2, 3), got {tuple(grid.bbox.shape)}")
    elif not np.all(grid.bbox[1] > grid.bbox[0]):
        report.append("bbox: high corner must exceed low corner on every axis")
    return report
