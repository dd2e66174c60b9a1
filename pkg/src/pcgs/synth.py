"""Synthetic scenes and models with controllable mask and rate statistics.

The mask solver works per level on score arrays: every anchor draws a scalar
score; its first Gaussian (the lead) carries that score, the others sit a
positive distance below it.  Activating a level adds a softplus increment to
every score, so hitting a target valid ratio reduces to choosing the offset
where the score distribution crosses the mask threshold; leads control the
anchor ratio, the rest control the Gaussian ratio.  Offsets are found by
bisection on the realized count and then folded back into per-level masking
features, so the generated scene reproduces the targets through the ordinary
mask evaluation path.

In calibrated mode, attributes are sampled from the (mu, sigma) the rate head
itself predicts at the anchor's (quantized) location and first-decode level,
which makes the ideal coding rate analytically known; adversarial mode draws
attributes independently of the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .container import dequantize_locations, quantize_locations
from .entropy import eval_rate_head_batch, hash_features
from .errors import ValidationError
from .masking import build_mask_state
from .model import AnchorScene, EntropyNet, HashGrid, LevelConfig, MaskParams
from .modelio import SceneBundle

__all__ = ["SynthSpec", "generate", "parse_spec_file", "write_spec_file", "default_lambdas"]

# Example per-dataset level schedules (rate trade-off identifiers).
_LAMBDA_SETS = {
    3: (8e-4, 4e-4, 0.5e-4),
    4: (4e-4, 2.5e-4, 1e-4, 0.2e-4),
}


def default_lambdas(num_levels: int):
    if num_levels in _LAMBDA_SETS:
        return _LAMBDA_SETS[num_levels]
    # strictly decreasing fallback for unusual level counts
    return tuple(float(x) for x in np.geomspace(8e-4, 0.2e-4, num_levels))


@dataclass
class SynthSpec:
    """Extents, targets, and initialization knobs for one synthetic bundle."""

    num_anchors: int = 10000
    offsets_per_anchor: int = 10
    feat_dim: int = 50
    num_levels: int = 3
    seed: int = 0
    anchor_targets: tuple = ()  # realized r(m^a_s) per level
    gauss_targets: tuple = ()  # realized r(m^g_s) per level
    mode: str = "calibrated"  # or "adversarial"
    adv_scale: float = 2.5
    trit_mode: str = "random"  # or "uniform" (zeroed trit head)
    lambdas: tuple = ()
    extent: float = 10.0
    mask_threshold: float = 0.01
    hash_levels: int = 4
    hash_resolutions: tuple = (16, 32, 64, 128)
    hash_table_log2: int = 15
    hash_feat_per_level: int = 4
    rate_hidden: int = 64
    trit_hidden: int = 16
    q_base: float = 1.0
    sigma_min: float = 1e-4

    def __post_init__(self):
        if not self.anchor_targets:
            self.anchor_targets = _default_targets(self.num_levels, 0.5, 1.0)
        if not self.gauss_targets:
            self.gauss_targets = _default_targets(self.num_levels, 0.3, 0.8)
        if not self.lambdas:
            self.lambdas = default_lambdas(self.num_levels)


def _default_targets(s: int, first: float, last: float):
    return tuple(float(x) for x in np.linspace(first, last, s))


def _check_targets(spec: SynthSpec):
    ra = np.asarray(spec.anchor_targets, dtype=np.float64)
    rg = np.asarray(spec.gauss_targets, dtype=np.float64)
    if ra.shape != (spec.num_levels,) or rg.shape != (spec.num_levels,):
        raise ValidationError(
            f"need {spec.num_levels} anchor and gauss targets, got {len(ra)} and {len(rg)}"
        )
    if np.any(np.diff(ra) < 0) or np.any(np.diff(rg) < 0):
        raise ValidationError("sparsity targets must be non-decreasing across levels")
    if np.any(ra <= 0) or np.any(ra > 1) or np.any(rg <= 0) or np.any(rg > 1):
        raise ValidationError("sparsity targets must lie in (0, 1]")
    if np.any(rg > ra):
        raise ValidationError("gauss ratio above anchor ratio is unrealizable (OR structure)")
    return ra, rg


def _bisect_offset(scores: np.ndarray, threshold: float, want: int) -> float:
    """Offset A with count(scores + A > threshold) == want, by bisection."""
    n = scores.shape[0]
    want = int(np.clip(want, 0, n))
    lo = threshold - scores.max() - 1.0  # activates nothing
    hi = threshold - scores.min() + 1.0  # activates everything
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        got = int(np.count_nonzero(scores + mid > threshold))
        if got < want:
            lo = mid
        elif got > want:
            hi = mid
        else:
            return mid
    return 0.5 * (lo + hi)


def _softplus_inverse(y: np.ndarray) -> np.ndarray:
    # softplus(-40) ~ 4e-18: close enough to a zero increment at f32 storage
    out = np.full_like(y, -40.0)
    pos = y > 1e-12
    out[pos] = np.log(np.expm1(y[pos]))
    return out


def _solve_masks(spec: SynthSpec, rng: np.random.Generator):
    n, k, s = spec.num_anchors, spec.offsets_per_anchor, spec.num_levels
    ra, rg = _check_targets(spec)
    theta = float(np.log(spec.mask_threshold / (1.0 - spec.mask_threshold)))

    lead = rng.normal(theta - 5.0, 1.0, size=n)
    # small gaps keep high Gaussian ratios reachable at large K; the minimum
    # gap is the slack the level offsets may use (see feasibility check)
    gap_min = 0.02
    gap = gap_min + rng.exponential(0.25, size=(n, k - 1))
    rest = lead[:, None] - gap

    a_off = np.empty(s)
    b_off = np.empty(s)
    for lv in range(s):
        a_off[lv] = _bisect_offset(lead, theta, round(ra[lv] * n))
        lead_count = int(np.count_nonzero(lead + a_off[lv] > theta))
        want_rest = round(rg[lv] * n * k) - lead_count
        if want_rest < 0:
            raise ValidationError(
                f"level {lv + 1}: gauss target {rg[lv]} below the anchor-lead floor "
                f"{lead_count / (n * k):.4f}"
            )
        b_off[lv] = _bisect_offset(rest.reshape(-1), theta, want_rest)
        # a non-lead must never fire before its lead: every gap is >= gap_min,
        # so offsets up to a_off + gap_min cannot activate an invalid anchor
        if b_off[lv] > a_off[lv] + gap_min:
            raise ValidationError(
                f"level {lv + 1}: targets need non-lead Gaussians on anchors that are "
                f"not yet valid (gauss {rg[lv]} too high for anchor {ra[lv]})"
            )
    if np.any(np.diff(a_off) < 0) or np.any(np.diff(b_off) < 0):
        raise ValidationError("realized offsets decreased; targets are not jointly monotone")

    inc_a = np.diff(np.concatenate([[0.0], a_off]))
    inc_b = np.diff(np.concatenate([[0.0], b_off]))
    level_feats = np.empty((s, n, k), dtype=np.float32)
    for lv in range(s):
        level_feats[lv, :, 0] = _softplus_inverse(inc_a[lv : lv + 1]).astype(np.float32)
        level_feats[lv, :, 1:] = _softplus_inverse(inc_b[lv : lv + 1]).astype(np.float32)

    base = np.empty((n, k), dtype=np.float32)
    base[:, 0] = lead.astype(np.float32)
    base[:, 1:] = rest.astype(np.float32)
    return MaskParams(base_feats=base, level_feats=level_feats, threshold=spec.mask_threshold)


def _init_net(spec: SynthSpec, rng: np.random.Generator) -> EntropyNet:
    s = spec.num_levels
    c = spec.feat_dim + 6 + 3 * spec.offsets_per_anchor
    fw = spec.hash_levels * spec.hash_feat_per_level
    hr, ht = spec.rate_hidden, spec.trit_hidden

    def w(shape, scale):
        return (rng.normal(0.0, scale, size=shape)).astype(np.float32)

    rate_b3 = np.zeros(3 * c, dtype=np.float32)
    rate_b3[2 * c :] = 0.5  # sigma_raw bias: softplus(0.5) ~ 0.97

    if spec.trit_mode == "uniform":
        trit_w3 = np.zeros((3, ht), dtype=np.float32)
        trit_b3 = np.zeros(3, dtype=np.float32)
    else:
        trit_w3 = w((3, ht), 0.5 / np.sqrt(ht))
        trit_b3 = w((3,), 0.2)

    return EntropyNet(
        rate_w1=w((hr, fw + s), 1.0 / np.sqrt(fw + s)),
        rate_b1=np.zeros(hr, dtype=np.float32),
        rate_w2=w((hr, hr), 1.0 / np.sqrt(hr)),
        rate_b2=np.zeros(hr, dtype=np.float32),
        rate_w3=w((3 * c, hr), 0.3 / np.sqrt(hr)),
        rate_b3=rate_b3,
        trit_w1=w((ht, 1 + fw + s), 1.0 / np.sqrt(1 + fw + s)),
        trit_b1=np.zeros(ht, dtype=np.float32),
        trit_w2=w((ht, ht), 1.0 / np.sqrt(ht)),
        trit_b2=np.zeros(ht, dtype=np.float32),
        trit_w3=trit_w3,
        trit_b3=trit_b3,
        level_lambdas=np.asarray(spec.lambdas, dtype=np.float32),
        q_base=spec.q_base,
        sigma_min=spec.sigma_min,
    )


def generate(spec: SynthSpec) -> SceneBundle:
    """Deterministic bundle for one spec+seed; identical inputs, identical bytes."""
    rng = np.random.default_rng(spec.seed)
    n, k, d, s = spec.num_anchors, spec.offsets_per_anchor, spec.feat_dim, spec.num_levels
    c = d + 6 + 3 * k

    params = _solve_masks(spec, rng)

    pad = 1e-3 * spec.extent
    bbox = np.array(
        [[-pad, -pad, -pad], [spec.extent + pad] * 3], dtype=np.float32
    )
    locations = rng.uniform(0.0, spec.extent, size=(n, 3)).astype(np.float32)

    grid = HashGrid(
        num_levels=spec.hash_levels,
        resolutions=np.asarray(spec.hash_resolutions, dtype=np.int64),
        table_size_log2=spec.hash_table_log2,
        feat_per_level=spec.hash_feat_per_level,
        values=rng.integers(0, 2, size=(spec.hash_levels, 1 << spec.hash_table_log2, spec.hash_feat_per_level)).astype(np.uint8),
        bbox=bbox,
    )
    net = _init_net(spec, rng)
    # interchange files store reals as f32; canonicalize so round-trips are exact
    cfg = LevelConfig(
        num_levels=s,
        lambdas=tuple(float(np.float32(x)) for x in spec.lambdas),
        feat_dim=d,
        offsets_per_anchor=k,
    )

    noise = rng.normal(0.0, 1.0, size=(n, c))
    if spec.mode == "adversarial":
        attrs = spec.adv_scale * noise
    elif spec.mode == "calibrated":
        # attributes follow the snapped model at the location the codec will
        # actually evaluate (16-bit quantized coordinates)
        attrs = spec.adv_scale * noise  # fallback for anchors that never decode
        mask_state = build_mask_state(params)
        afirst = mask_state.anchor_first_level
        gfirst = mask_state.gauss_first_level
        valid = np.flatnonzero(afirst > 0)
        if valid.size:
            loc_q = quantize_locations(locations[valid].astype(np.float64), bbox)
            x_used = dequantize_locations(loc_q, bbox)
            fh = hash_features(x_used, grid)
            scale = 1.0 / 65536.0
            for lv in range(1, s + 1):
                rows = np.flatnonzero((afirst[valid] == lv) | np.any(gfirst[valid] == lv, axis=1))
                if rows.size == 0:
                    continue
                _, mu_fp, sg_fp = eval_rate_head_batch(fh[rows], lv, net)
                mu = mu_fp.astype(np.float64) * scale
                sg = sg_fp.astype(np.float64) * scale
                sampled = mu + sg * noise[valid[rows]]
                ca = d + 6
                anew = afirst[valid[rows]] == lv
                tgt = valid[rows[anew]]
                attrs[tgt, :ca] = sampled[anew, :ca]
                gnew = gfirst[valid[rows]] == lv  # (rows, K)
                gi, gk = np.nonzero(gnew)
                if gi.size:
                    cols = (ca + 3 * gk)[:, None] + np.arange(3)[None, :]
                    attrs[valid[rows[gi]][:, None], cols] = sampled[gi[:, None], cols]
    else:
        raise ValidationError(f"unknown calibration mode {spec.mode!r}")

    scene = AnchorScene(
        num_anchors=n,
        offsets_per_anchor=k,
        feat_dim=d,
        locations=locations,
        anchor_feats=attrs[:, :d].astype(np.float32),
        scalings=attrs[:, d : d + 6].astype(np.float32),
        offsets=attrs[:, d + 6 :].astype(np.float32),
    )
    return SceneBundle(scene=scene, params=params, grid=grid, net=net, cfg=cfg)


# ---------------------------------------------------------------------------
# Spec files: line-oriented key=value text
# ---------------------------------------------------------------------------

_TUPLE_KEYS = {"anchor_targets", "gauss_targets", "lambdas", "hash_resolutions"}
_INT_KEYS = {
    "num_anchors", "offsets_per_anchor", "feat_dim", "num_levels", "seed",
    "hash_levels", "hash_table_log2", "hash_feat_per_level", "rate_hidden", "trit_hidden",
}
_FLOAT_KEYS = {"adv_scale", "extent", "mask_threshold", "q_base", "sigma_min"}
_STR_KEYS = {"mode", "trit_mode"}


def parse_spec_file(path: str) -> SynthSpec:
    kw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key in _TUPLE_KEYS:
                kw[key] = tuple(float(v) if key != "hash_resolutions" else int(v)
                                for v in value.split(",") if v.strip())
            elif key in _INT_KEYS:
                kw[key] = int(value)
            elif key in _FLOAT_KEYS:
                kw[key] = float(value)
            elif key in _STR_KEYS:
                kw[key] = value
            else:
                raise ValidationError(f"{path}:{line_no}: unknown key {key!r}")
    return SynthSpec(**kw)


def write_spec_file(path: str, spec: SynthSpec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in asdict(spec).items():
            if isinstance(value, tuple):
                fh.write(f"{key}={','.join(str(v) for v in value)}\n")
            else:
                fh.write(f"{key}={value}\n")
