import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgs.quantizer import (
    QuantLattice,
    lattice_index,
    quantize_at_level,
    round_quantize,
    step_schedule,
    trit_refine,
)

from oracles import oracle_quantize


def test_round_quantize_examples():
    assert round_quantize(0.7, 0.5) == 0.5
    assert round_quantize(0.0, 0.37) == 0.0
    # exact half rounds toward +inf
    assert round_quantize(0.25, 0.5) == 0.5
    assert round_quantize(-0.25, 0.5) == 0.0
    assert round_quantize(-0.75, 0.5) == -0.5


def test_round_quantize_error_bound():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        q = float(rng.uniform(1e-4, 10.0))
        f = float(rng.uniform(-50, 50))
        fhat = round_quantize(f, q)
        assert abs(f - fhat) <= q / 2 * (1 + 1e-12)


def test_round_quantize_rejects_bad_step():
    with pytest.raises(ValueError):
        round_quantize(1.0, 0.0)
    with pytest.raises(ValueError):
        round_quantize(1.0, -1.0)


def test_trit_refine_examples():
    prev = QuantLattice(value=0.0, step=1.0, level=1, index=0)
    r = trit_refine(0.4, prev)
    assert r.index == 1 and r.trit_index == 3
    assert r.value == 1 * (1.0 / 3.0) and r.step == 1.0 / 3.0

    # f at the left/mid boundary: the right side (mid) wins
    r2 = trit_refine(-1 / 6, prev)
    assert r2.index == 0 and r2.trit_index == 2 and r2.value == 0.0

    r3 = trit_refine(0.0, prev)
    assert r3.trit_index == 2 and r3.value == 0.0


def test_trit_refine_clamps_outside_interval(caplog):
    prev = QuantLattice(value=0.0, step=1.0, level=1, index=0)
    r = trit_refine(5.0, prev)  # far outside [-1/2, 1/2)
    assert r.index == 1  # clamped to the right candidate


def test_step_schedule():
    assert step_schedule(1.0, 1) == 1.0
    assert step_schedule(1.0, 3) == 1.0 / 9.0
    assert step_schedule(0.6, 2) == 0.6 / 3.0
    with pytest.raises(ValueError):
        step_schedule(0.0, 1)
    with pytest.raises(ValueError):
        step_schedule(1.0, 0)


def test_quantize_at_level_worked_examples():
    a = quantize_at_level(0.4, 1.0, 1, 2)
    b = quantize_at_level(0.4, 1.0, 2, 2)
    assert a.index == b.index == 1
    assert a.value == b.value == 1 * step_schedule(1.0, 2)
    c = quantize_at_level(0.123, 1.0, 1, 1)
    assert c.value == round_quantize(0.123, 1.0)


@pytest.mark.parametrize("q1", [1.0, 0.6, 54.0, 3.7e-5, 2.4e5])
def test_path_independence_random_grid(q1):
    rng = np.random.default_rng(17)
    fs = rng.uniform(-5 * q1, 5 * q1, 4000)
    for s in range(1, 5):
        qs = step_schedule(q1, s)
        direct = [round_quantize(float(f), qs) for f in fs]
        for t in range(1, s + 1):
            chained = [quantize_at_level(float(f), q1, t, s) for f in fs]
            assert [c.value for c in chained] == direct
            assert [c.index for c in chained] == [
                lattice_index(float(f), q1, s) for f in fs
            ]


@pytest.mark.parametrize("scale", [2.0 ** (-40), 1.0, 2.0 ** 40])
def test_path_independence_exact_boundaries(scale):
    # q1 = 54 * 2^j makes every sub-interval boundary exactly representable,
    # so the ties-right rule is exercised with no floating slack at all
    q1 = 54.0 * scale
    for s in range(1, 5):
        qs = step_schedule(q1, s)
        cmax = int(round(5 * q1 / qs))
        cs = np.arange(-cmax - 1, cmax + 2)
        bounds = (cs + 0.5) * qs
        direct = [round_quantize(float(f), qs) for f in bounds]
        for t in range(1, s + 1):
            chained = [quantize_at_level(float(f), q1, t, s).value for f in bounds]
            assert chained == direct


def test_agrees_with_interval_walk_oracle():
    rng = np.random.default_rng(5)
    for q1 in (1.0, 0.6, 54.0):
        fs = list(rng.uniform(-5 * q1, 5 * q1, 500))
        # include every exact boundary of the deepest level
        qs4 = step_schedule(q1, 4)
        fs += [float((c + 0.5) * qs4) for c in range(-30, 30)]
        for t in range(1, 5):
            for s in range(t, 5):
                for f in fs:
                    got = quantize_at_level(f, q1, t, s).value
                    want = oracle_quantize(f, q1, t, s)
                    assert got == want, (f, q1, t, s)


def test_oracle_spans_magnitudes():
    rng = np.random.default_rng(6)
    for expo in range(-3, 3):
        q1 = 10.0 ** expo
        for f in rng.uniform(-5 * q1, 5 * q1, 50):
            assert quantize_at_level(float(f), q1, 1, 4).value == oracle_quantize(
                float(f), q1, 1, 4
            )


@given(
    f=st.floats(-100, 100, allow_nan=False),
    q1=st.floats(1e-3, 100, allow_nan=False),
    t=st.integers(1, 4),
    s=st.integers(1, 4),
)
@settings(max_examples=300, deadline=None)
def test_quantizer_properties(f, q1, t, s):
    if t > s:
        t, s = s, t
    lat = quantize_at_level(f, q1, t, s)
    # error contraction
    assert abs(f - lat.value) <= q1 / (2 * 3 ** (s - 1)) * (1 + 1e-9)
    # refinement containment
    if s > t:
        prev = quantize_at_level(f, q1, t, s - 1)
        assert abs(lat.value - prev.value) <= prev.step / 2 * (1 + 1e-9)
    # determinism
    again = quantize_at_level(f, q1, t, s)
    assert again.value == lat.value and again.index == lat.index


def test_error_contraction_sequence():
    rng = np.random.default_rng(3)
    q1 = 1.0
    for f in rng.uniform(-5, 5, 200):
        prev_err = None
        for s in range(1, 5):
            lat = quantize_at_level(float(f), q1, 1, s)
            err = abs(f - lat.value)
            assert err <= q1 / (2 * 3 ** (s - 1)) * (1 + 1e-12)
            if prev_err is not None:
                assert err <= prev_err * (1 + 1e-12)
            prev_err = err
