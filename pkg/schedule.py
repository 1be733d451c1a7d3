# schedule.py
"""Pruning schedules: how many weights survive at round t"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.interpolate import PchipInterpolator

from models import ScheduleKind, ScheduleSpec


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _knot_fraction(spec: ScheduleSpec, k: int) -> float:
    return (1.0 - spec.p_g) ** k


@lru_cache(maxsize=64)
def _continuous_curve(s: int, p_g: float, last_knot: int) -> PchipInterpolator:
    ks = np.arange(1, last_knot + 1, dtype=np.float64)
    return PchipInterpolator(ks * s, (1.0 - p_g) ** ks, extrapolate=False)


def _continuous_fraction(spec: ScheduleSpec, t: int) -> float:
    k = t // spec.s
    if k == 0:
        return 1.0
    if t % spec.s == 0:
        return _knot_fraction(spec, k)
    # knots 1..last_knot must bracket t; at least two for PCHIP
    last_knot = max(spec.T, t) // spec.s + 2
    value = float(_continuous_curve(spec.s, spec.p_g, last_knot)(float(t)))
    upper = _knot_fraction(spec, k)
    lower = _knot_fraction(spec, k + 1)
    return min(max(value, lower), upper)


def remaining_fraction(spec: ScheduleSpec, t: int) -> float:
    """Unrounded surviving fraction at round t, floor applied."""
    if t < 1:
        raise ValueError(f"round must be >= 1, got {t}")
    if spec.kind == ScheduleKind.STEPWISE:
        frac = _knot_fraction(spec, t // spec.s)
    else:
        frac = _continuous_fraction(spec, t)
    return max(frac, spec.floor_fraction)


def remaining_params(spec: ScheduleSpec, t: int) -> int:
    """
    K_t for round t (t >= 1).

    Stepwise: round(d * max((1 - p_g)^(t // s), floor)). Continuous: a monotone cubic
    through the stepwise knots (k*s, (1 - p_g)^k), equal to stepwise at every knot.
    Rounding is half away from zero.
    """
    return _round_half_up(spec.d * remaining_fraction(spec, t))


def prune_events(spec: ScheduleSpec) -> list[int]:
    """Rounds 1..T where K_t drops below K_{t-1} (K_0 = d)."""
    events = []
    previous = spec.d
    for t in range(1, spec.T + 1):
        k = remaining_params(spec, t)
        if k < previous:
            events.append(t)
        previous = k
    return events


def preview_rows(spec: ScheduleSpec) -> list[tuple[int, int]]:
    """(t, K_t) for t = 1..T, for plotting."""
    return [(t, remaining_params(spec, t)) for t in range(1, spec.T + 1)]
