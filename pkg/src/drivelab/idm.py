"""Intelligent driver model car-following law.

Used for all surrounding traffic in both scenarios and for the ego's
longitudinal control while overtaking.
"""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class IDMParams:
    v0: float = 10.0     # desired speed, m/s
    T: float = 1.5       # time headway, s
    s0: float = 2.0      # jam distance, m
    a: float = 1.5       # max acceleration, m/s^2
    b: float = 2.0       # comfortable deceleration, m/s^2
    b_max: float = 5.0   # hard braking bound, m/s^2
    delta: float = 4.0   # free-flow exponent


def idm_acceleration(v: float, gap: float, dv: float, p: IDMParams) -> float:
    """Acceleration for speed ``v``, bumper gap ``gap`` and approach rate ``dv``.

    ``dv`` is ego speed minus leader speed. ``gap`` must be positive; a
    non-positive gap is a collision state handled upstream. ``gap=inf``
    means free road.
    """
    if gap <= 0:
        raise ValueError("idm gap must be positive")
    s_star = p.s0 + v * p.T + v * dv / (2.0 * math.sqrt(p.a * p.b))
    interaction = 0.0 if math.isinf(gap) else (s_star / gap) ** 2
    acc = p.a * (1.0 - (v / p.v0) ** p.delta - interaction)
    return max(-p.b_max, min(p.a, acc))
