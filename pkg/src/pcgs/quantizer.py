"""Progressive quantization: rounding at initial decode, trit refinement after.

A channel value lives on a lattice whose step shrinks by 3x per level,
``q_s = q1 / 3**(s-1)``.  A value first decoded at level ``t`` is rounded onto
the level-``t`` lattice; each later level picks one of three candidates
(left / keep / right) a third of a step apart.  Because the step schedule is
an exact power of three, the value reached at level ``s`` does not depend on
``t``: refining from any earlier level lands on the same lattice point as
rounding directly at level ``s``.

Lattice positions are kept as integers (value = index * q_s); floats appear
only on input and in the reconstructed value.  Rounding is round-half-up
(ties toward +inf), matching the refinement tie rule "right wins", and the
index is computed from the *exact* rational value of the float inputs so that
tie cases are reproducible and the path-independence property is exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

logger = logging.getLogger(__name__)

__all__ = [
    "QuantLattice",
    "round_quantize",
    "trit_refine",
    "step_schedule",
    "quantize_at_level",
    "lattice_index",
]


def _rh_exact(num: int, den: int) -> int:
    """Round-half-up of num/den (den > 0), exact integer arithmetic."""
    return (2 * num + den) // (2 * den)


def lattice_index(f: float, q1: float, s: int) -> int:
    """Lattice index of ``f`` at level ``s``: round-half-up of f * 3**(s-1) / q1.

    Computed on the exact rational values of the float inputs, so results at
    half-step boundaries are deterministic and consistent across levels.
    """
    if not q1 > 0:
        raise ValueError(f"step must be positive, got {q1}")
    if s < 1:
        raise ValueError(f"level must be >= 1, got {s}")
    fn, fd = float(f).as_integer_ratio()
    qn, qd = float(q1).as_integer_ratio()
    # f * 3^(s-1) / q1 = (fn * 3^(s-1) * qd) / (fd * qn)
    return _rh_exact(fn * 3 ** (s - 1) * qd, fd * qn)


def step_schedule(q1: float, s: int) -> float:
    """Quantization step at level ``s``: q1 / 3**(s-1), exact integer power."""
    if not q1 > 0:
        raise ValueError(f"step must be positive, got {q1}")
    if s < 1:
        raise ValueError(f"level must be >= 1, got {s}")
    return q1 / float(3 ** (s - 1))


@dataclass(frozen=True)
class QuantLattice:
    """A quantized channel value: integer lattice position plus its step.

    ``value`` is always ``index * step``.  ``trit_index`` records which of the
    three refinement candidates produced the value (1=left, 2=mid, 3=right);
    it is None for a value produced by initial rounding.
    """

    value: float
    step: float
    level: int
    index: int
    trit_index: int | None = None


def round_quantize(f: float, q: float) -> float:
    """Quantize ``f`` to the nearest multiple of ``q``, ties toward +inf."""
    if not q > 0:
        raise ValueError(f"step must be positive, got {q}")
    fn, fd = float(f).as_integer_ratio()
    qn, qd = float(q).as_integer_ratio()
    return _rh_exact(fn * qd, fd * qn) * q


def trit_refine(f: float, prev: QuantLattice) -> QuantLattice:
    """Refine ``prev`` one level by choosing among three sub-interval midpoints.

    Candidates are ``prev.value + prev.step/3 * {-1, 0, +1}``; the one nearest
    ``f`` wins, ties to the right.  ``f`` is expected to lie inside
    ``[prev.value - prev.step/2, prev.value + prev.step/2)``; values outside
    (encoder-side numeric drift) are clamped to the nearest edge candidate.
    """
    if not prev.step > 0:
        raise ValueError(f"step must be positive, got {prev.step}")
    # Exact comparison: d = round-half-up of (f - prev.value) / (prev.step/3),
    # clamped to the candidate range.
    ff = Fraction(float(f))
    fv = Fraction(prev.value)
    fq3 = Fraction(prev.step) / 3
    d_num = ff - fv
    d = _rh_exact(d_num.numerator * fq3.denominator, d_num.denominator * fq3.numerator)
    if d < -1 or d > 1:
        logger.warning(
            "trit_refine: value %g outside inherited interval of %g +/- %g/2; clamped",
            f,
            prev.value,
            prev.step,
        )
        d = max(-1, min(1, d))
    new_index = 3 * prev.index + d
    new_step = prev.step / 3.0
    return QuantLattice(
        value=new_index * new_step,
        step=new_step,
        level=prev.level + 1,
        index=new_index,
        trit_index=d + 2,
    )


def quantize_at_level(f: float, q1: float, first_level: int, target_level: int) -> QuantLattice:
    """Round at ``first_level`` then trit-refine up to ``target_level``.

    By the 3x step schedule the result equals rounding ``f`` directly at
    ``target_level``, whatever ``first_level`` was.
    """
    t, s = first_level, target_level
    if not 1 <= t <= s:
        raise ValueError(f"need 1 <= first_level <= target_level, got {t}, {s}")
    n = lattice_index(f, q1, t)
    trit = None
    for j in range(t + 1, s + 1):
        target = lattice_index(f, q1, j)
        d = target - 3 * n
        # Exact arithmetic guarantees |d| <= 1; clamp stays as a guard.
        d = max(-1, min(1, d))
        n = 3 * n + d
        trit = d + 2
    step = step_schedule(q1, s)
    return QuantLattice(value=n * step, step=step, level=s, index=n, trit_index=trit)
