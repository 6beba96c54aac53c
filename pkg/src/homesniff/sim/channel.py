"""Log-distance path loss with wall attenuation, shadowing and an RSSI-dependent drop ramp."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from homesniff.sim.scenario import ChannelParams, Wall

MIN_DISTANCE_M = 0.1


def _orient(ax, ay, bx, by, cx, cy) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_cross(p1, p2, q1, q2) -> bool:
    """Proper or endpoint-touching intersection; collinear overlap does not count."""
    d1 = _orient(*q1, *q2, *p1)
    d2 = _orient(*q1, *q2, *p2)
    d3 = _orient(*p1, *p2, *q1)
    d4 = _orient(*p1, *p2, *q2)
    if d1 == 0 and d2 == 0:
        return False
    return (d1 * d2 <= 0) and (d3 * d4 <= 0)


def wall_loss(tx, rx, walls: Sequence[Wall]) -> float:
    return math.fsum(w.attenuation_db for w in walls if segments_cross(tx, rx, w.a, w.b))


def mean_rssi(tx, rx, p0_dbm: float, n: float, walls: Sequence[Wall] = ()) -> float:
    d = max(math.hypot(tx[0] - rx[0], tx[1] - rx[1]), MIN_DISTANCE_M)
    return p0_dbm - 10.0 * n * math.log10(d) - wall_loss(tx, rx, walls)


def sample_rssi(tx, rx, p0_dbm: float, n: float, walls: Sequence[Wall] = (),
                sigma_db: float = 0.0, rng: Optional[np.random.Generator] = None) -> float:
    value = mean_rssi(tx, rx, p0_dbm, n, walls)
    if sigma_db > 0:
        if rng is None:
            raise ValueError("shadowing needs an RNG")
        value += float(rng.normal(0.0, sigma_db))
    return value


def drop_probability(rssi_dbm, channel: ChannelParams):
    """0 at or above the ramp start, ``drop_max`` at or below its end, linear between."""
    if not channel.drops:
        return np.zeros_like(np.asarray(rssi_dbm, dtype=float))
    span = channel.drop_start_dbm - channel.drop_full_dbm
    frac = np.clip((channel.drop_start_dbm - np.asarray(rssi_dbm, dtype=float)) / span, 0.0, 1.0)
    return frac * channel.drop_max
