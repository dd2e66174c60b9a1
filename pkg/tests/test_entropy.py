import mpmath
import numpy as np
import pytest

from pcgs._kernels import TOTAL, WINDOW
from pcgs.entropy import (
    ChannelModel,
    build_gaussian_tables,
    build_trit_tables,
    eval_rate_head,
    expand_compact_table,
    gaussian_bin_prob,
    gaussian_freq_table,
    hash_feature,
    hash_features,
    normal_cdf,
    normalize_count_table,
    table_cdf,
    trinomial_probs,
)
from pcgs.model import EntropyNet, HashGrid

from oracles import brute_force_gauss_table, brute_force_trit_table


def make_net(s=3, c=20, fw=16, hr=8, ht=4, fill=0.0, q_base=1.0, sigma_min=1e-4):
    z = lambda *shape: np.full(shape, fill, dtype=np.float32)
    return EntropyNet(
        rate_w1=z(hr, fw + s), rate_b1=z(hr),
        rate_w2=z(hr, hr), rate_b2=z(hr),
        rate_w3=z(3 * c, hr), rate_b3=z(3 * c),
        trit_w1=z(ht, 1 + fw + s), trit_b1=z(ht),
        trit_w2=z(ht, ht), trit_b2=z(ht),
        trit_w3=z(3, ht), trit_b3=z(3),
        level_lambdas=np.array([8e-4, 4e-4, 0.5e-4][:s], dtype=np.float32),
        q_base=q_base, sigma_min=sigma_min,
    )


def make_grid(seed=0, levels=4, log2=10, f=4):
    rng = np.random.default_rng(seed)
    return HashGrid(
        num_levels=levels,
        resolutions=np.array([16, 32, 64, 128][:levels]),
        table_size_log2=log2,
        feat_per_level=f,
        values=rng.integers(0, 2, size=(levels, 1 << log2, f)).astype(np.uint8),
        bbox=np.array([[0, 0, 0], [1, 1, 1]], dtype=np.float32),
    )


# ---------------------------------------------------------------------------
# normal CDF
# ---------------------------------------------------------------------------


def test_normal_cdf_accuracy():
    zs = np.linspace(-8, 8, 4001)
    ours = normal_cdf(zs)
    ref = np.array([float(mpmath.ncdf(z)) for z in zs])
    assert np.max(np.abs(ours - ref)) < 1e-7


def test_table_cdf_accuracy_and_monotonicity():
    zs = np.linspace(-4.5, 4.5, 6007)
    ours = table_cdf(zs)
    ref = np.array([float(mpmath.ncdf(z)) for z in zs])
    inside = np.abs(zs) < 3.9
    assert np.max(np.abs(ours[inside] - ref[inside])) < 1e-7
    fine = table_cdf(np.linspace(-3.99, 3.99, 20011))
    assert np.all(np.diff(fine) >= 0)


# ---------------------------------------------------------------------------
# hash features
# ---------------------------------------------------------------------------


def test_hash_feature_at_vertex_returns_entry():
    grid = make_grid()
    # all-ones table: every interpolated value is exactly +1
    grid.values[:] = 1
    f = hash_feature(np.array([0.37, 0.81, 0.05]), grid)
    assert np.allclose(f, 1.0)
    grid.values[:] = 0
    f = hash_feature(np.array([0.37, 0.81, 0.05]), grid)
    assert np.allclose(f, -1.0)


def test_hash_feature_cell_center_cancellation():
    grid = make_grid(levels=1, log2=16)
    res = int(grid.resolutions[0])
    # choose a cell and force a 4/4 split of its corner entries
    i0 = np.array([3, 5, 7])
    corners = []
    for c in range(8):
        ix, iy, iz = (int(v) for v in i0 + [(c >> 0) & 1, (c >> 1) & 1, (c >> 2) & 1])
        h = ((ix * 1) ^ (iy * 2654435761) ^ (iz * 805459861)) % (1 << 32)
        corners.append(h & ((1 << 16) - 1))
    assert len(set(corners)) == 8, "hash collision in test setup"
    for j, h in enumerate(corners):
        grid.values[0, h, :] = 1 if j < 4 else 0
    center = (i0 + 0.5) / (res - 1)
    f = hash_feature(center, grid)
    assert np.allclose(f, 0.0, atol=1e-12)


def test_hash_feature_range_and_clamp():
    grid = make_grid(seed=3)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 1.5, size=(200, 3))  # includes out-of-bbox points
    f = hash_features(pts, grid)
    assert np.all(f >= -1.0) and np.all(f <= 1.0)
    # out-of-box points clamp to the boundary value
    inside = np.clip(pts, 0, 1)
    assert np.allclose(hash_features(inside, grid), f)


def test_hash_feature_interpolation_smoothness():
    # |f(x) - f(y)| is bounded by the summed per-axis slopes of a +-1-valued
    # trilinear patch: 2 * (res-1) per axis in normalized coordinates
    grid = make_grid(seed=4)
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(300, 3))
    d = rng.uniform(-1, 1, size=(300, 3)) * 1e-3
    y = np.clip(x + d, 0, 1)
    fx = hash_features(x, grid)
    fy = hash_features(y, grid)
    f = grid.feat_per_level
    for lvl in range(grid.num_levels):
        res = int(grid.resolutions[lvl])
        lhs = np.abs(fx[:, lvl * f : (lvl + 1) * f] - fy[:, lvl * f : (lvl + 1) * f]).max(axis=1)
        rhs = 2.0 * (res - 1) * np.abs(x - y).sum(axis=1)
        assert np.all(lhs <= rhs + 1e-9)


# ---------------------------------------------------------------------------
# rate head
# ---------------------------------------------------------------------------


def test_rate_head_zero_weights():
    net = make_net(fill=0.0)
    fh = np.zeros(16)
    models = eval_rate_head(fh, 1, net)
    assert len(models) == 20
    for m in models:
        assert m.q1 == 1.0  # q_base * (1 + tanh(0))
        assert m.mu == 0.0
        # softplus(0) + sigma_min, snapped to the 2^-16 grid
        expect = np.floor((np.log(2.0) + 1e-4) * 65536 + 0.5) / 65536
        assert m.sigma == expect


def test_rate_head_determinism():
    rng = np.random.default_rng(0)
    net = make_net()
    for arr in (net.rate_w1, net.rate_w2, net.rate_w3, net.rate_b3):
        arr[:] = rng.normal(0, 0.3, arr.shape).astype(np.float32)
    fh = rng.uniform(-1, 1, 16)
    a = eval_rate_head(fh, 2, net)
    b = eval_rate_head(fh, 2, net)
    assert all(x == y for x, y in zip(a, b))


def test_rate_head_saturation():
    net = make_net()
    net.rate_b3[:20] = 1e6  # q_raw -> +inf surrogate
    models = eval_rate_head(np.zeros(16), 1, net)
    assert all(m.q1 == 2.0 for m in models)  # exactly 2*q_base after snap


def test_sigma_floor_clamps():
    net = make_net()
    net.rate_b3[40:] = -1e6  # sigma_raw -> -inf surrogate
    models = eval_rate_head(np.zeros(16), 1, net)
    # softplus underflows to 0; the snapped value keeps the grid floor
    assert all(m.sigma_fp >= 1 for m in models)
    assert all(m.sigma == m.sigma_fp / 65536 for m in models)


# ---------------------------------------------------------------------------
# gaussian bin probabilities
# ---------------------------------------------------------------------------


def cm(q1=1.0, mu=0.0, sigma=1.0):
    return ChannelModel(
        q1=q1, mu=mu, sigma=sigma,
        q1_fp=int(round(q1 * 65536)), mu_fp=int(round(mu * 65536)),
        sigma_fp=int(round(sigma * 65536)),
    )


def test_bin_prob_standard_value():
    p = gaussian_bin_prob(0.0, 2.0, cm(sigma=1.0))
    assert p == pytest.approx(0.6826894921, abs=1e-6)


def test_bin_prob_maximal_at_mean():
    m = cm(mu=0.73, sigma=0.9)
    q = 0.25
    center = round(m.mu / q)
    probs = [gaussian_bin_prob(k * q, q, m) for k in range(center - 40, center + 41)]
    assert np.argmax(probs) == 40


def test_bin_prob_small_q_density_limit():
    m = cm(mu=0.2, sigma=1.3)
    q = m.sigma / 100
    for fhat in (0.0, 0.5, -1.0):
        p = gaussian_bin_prob(fhat, q, m)
        density = np.exp(-0.5 * ((fhat - m.mu) / m.sigma) ** 2) / np.sqrt(2 * np.pi)
        assert p == pytest.approx(q * density / m.sigma, rel=0.01)


# ---------------------------------------------------------------------------
# frequency tables
# ---------------------------------------------------------------------------


def test_freq_table_near_deterministic():
    m = cm(sigma=1e-4)
    t = gaussian_freq_table(m, q=1.0)
    assert t.num_symbols == 2 * WINDOW + 1
    assert t.freq(WINDOW) >= TOTAL - 2 * WINDOW
    assert t.cumfreq[-1] == TOTAL


def test_freq_table_flat():
    m = cm(sigma=1e6)
    t = gaussian_freq_table(m, q=1.0)
    f = np.diff(t.cumfreq)
    assert f.min() >= 1
    interior = f[1:-1]
    assert interior.max() - interior.min() <= 1  # near-equal shares


def test_freq_table_valid_cdf_random():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = cm(
            q1=float(rng.uniform(0.1, 2.0)),
            mu=float(rng.uniform(-4, 4)),
            sigma=float(rng.uniform(0.05, 5.0)),
        )
        level = int(rng.integers(1, 5))
        t = gaussian_freq_table(m, level=level)
        d = np.diff(t.cumfreq)
        assert d.min() >= 1 and t.cumfreq[-1] == TOTAL
        assert np.all(np.diff(t.cumfreq) > 0)


def test_freq_table_matches_brute_force():
    rng = np.random.default_rng(11)
    cases = [
        (0, int(1e-4 * 65536) + 1, 65536, 1),
        (0, 65536, 2 * 65536, 1),
        (0, 65536 * 100000, 65536, 1),
        (1234567, 91021, 40000, 3),
    ]
    for _ in range(60):
        cases.append(
            (
                int(rng.integers(-5 * 65536, 5 * 65536)),
                max(1, int(rng.uniform(0.02, 4.0) * 65536)),
                max(1, int(rng.uniform(0.05, 2.0) * 65536)),
                int(rng.integers(1, 5)),
            )
        )
    for mu_fp, sg_fp, q1_fp, level in cases:
        kmu, a, ln, poff, pflat = build_gaussian_tables(
            np.array([mu_fp], dtype=np.int64),
            np.array([sg_fp], dtype=np.int64),
            np.array([q1_fp], dtype=np.int64),
            level,
        )
        got = expand_compact_table(int(kmu[0]), int(a[0]), int(ln[0]), pflat[: ln[0] + 1])
        lo, cum = brute_force_gauss_table(mu_fp, sg_fp, q1_fp, level)
        assert got.offset == lo
        assert np.array_equal(got.cumfreq, cum), (mu_fp, sg_fp, q1_fp, level)


def test_window_mass_totals():
    # the folded window carries all the mass: totals are exact by construction
    for sigma in (0.01, 1.0, 47.0):
        t = gaussian_freq_table(cm(sigma=sigma), q=0.5)
        assert t.cumfreq[-1] == TOTAL


# ---------------------------------------------------------------------------
# trinomial head
# ---------------------------------------------------------------------------


def test_trinomial_uniform_logits():
    net = make_net(fill=0.0)
    p = trinomial_probs(0.0, np.zeros(16), 2, net)
    assert sum(p) == 1.0
    assert all(abs(x - 1 / 3) <= 2 / TOTAL for x in p)


def test_trinomial_softmax_by_hand():
    cum = build_trit_tables(
        np.array([[int(np.log(2.0) * 65536), 0, 0]], dtype=np.int64)
    )
    f = np.diff(cum[0]) / TOTAL
    assert f[0] == pytest.approx(0.5, abs=2e-4)
    assert f[1] == pytest.approx(0.25, abs=2e-4)
    assert f[2] == pytest.approx(0.25, abs=2e-4)
    assert np.diff(cum[0]).sum() == TOTAL


def test_trinomial_matches_brute_force():
    rng = np.random.default_rng(3)
    logit_sets = [np.zeros(3, dtype=np.int64)]
    for _ in range(200):
        logit_sets.append(rng.integers(-20 * 65536, 20 * 65536, 3))
    batch = np.stack(logit_sets)
    cums = build_trit_tables(batch)
    for i, ls in enumerate(logit_sets):
        assert np.array_equal(cums[i], brute_force_trit_table([int(v) for v in ls])), ls


def test_trinomial_requires_refinement_level():
    net = make_net()
    with pytest.raises(ValueError):
        trinomial_probs(0.0, np.zeros(16), 1, net)


def test_normalize_count_table():
    cum = normalize_count_table(np.array([900, 50, 50, 0]))
    f = np.diff(cum)
    assert f.sum() == TOTAL and f.min() >= 1
    assert f[0] == pytest.approx(0.9 * TOTAL, rel=0.01)
    assert f[3] == 1  # unseen value keeps the floor count

    # zero counts fall back to uniform
    cum0 = normalize_count_table(np.zeros(4, dtype=np.int64))
    assert np.diff(cum0).sum() == TOTAL
