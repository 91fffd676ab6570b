"""Jerk-limited elevator trajectories.

The torso elevator follows prescribed seven-segment S-curves (jerk ramp,
constant accel, jerk ramp, cruise, and the mirrored deceleration half).
A plan starts from the current position/velocity: a nonzero-velocity start
is handled by a jerk-limited stop segment followed by a rest-to-rest
profile, which keeps position and velocity continuous across replans
(acceleration may jump at the replan instant).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ElevatorSpec


def _vel_change_segments(dv: float, a_max: float, j_max: float) -> list[tuple[float, float]]:
    """(duration, jerk) segments changing velocity by dv from/to zero accel."""
    if dv == 0.0:
        return []
    s = math.copysign(1.0, dv)
    mag = abs(dv)
    if mag >= a_max * a_max / j_max:
        tj = a_max / j_max
        tc = mag / a_max - a_max / j_max
        segs = [(tj, s * j_max), (tc, 0.0), (tj, -s * j_max)]
    else:
        tj = math.sqrt(mag / j_max)
        segs = [(tj, s * j_max), (tj, -s * j_max)]
    return [(d, j) for d, j in segs if d > 0.0]


def _rest_to_rest_segments(dist: float, spec: ElevatorSpec) -> list[tuple[float, float]]:
    """Seven-segment profile covering signed ``dist`` starting and ending at rest."""
    if dist == 0.0:
        return []
    s = math.copysign(1.0, dist)
    d = abs(dist)
    a, j, vmax = spec.a_max, spec.j_max, spec.v_max

    def d_min(v: float) -> float:
        # accel + decel distance when peaking at velocity v with no cruise
        if v >= a * a / j:
            t_acc = v / a + a / j
        else:
            t_acc = 2.0 * math.sqrt(v / j)
        return v * t_acc

    if d_min(vmax) <= d:
        v_pk = vmax
        t_cruise = (d - d_min(vmax)) / vmax
    else:
        t_cruise = 0.0
        if d <= 2.0 * a ** 3 / j ** 2:
            v_pk = (d * math.sqrt(j) / 2.0) ** (2.0 / 3.0)
        else:
            v_pk = (-a * a / j + math.sqrt(a ** 4 / j ** 2 + 4.0 * a * d)) / 2.0
    half = _vel_change_segments(s * v_pk, a, j)
    segs = list(half)
    if t_cruise > 0.0:
        segs.append((t_cruise, 0.0))
    segs.extend(_vel_change_segments(-s * v_pk, a, j))
    return segs


@dataclass
class Trajectory:
    """Piecewise-constant-jerk trajectory sampled in absolute time."""

    t0: float
    target: float
    knot_t: np.ndarray   # absolute times, first entry == t0
    knot_h: np.ndarray
    knot_v: np.ndarray
    knot_a: np.ndarray
    jerks: np.ndarray    # one per segment (len(knot_t) - 1)

    def sample(self, t: float) -> tuple[float, float, float]:
        """(position, velocity, acceleration) at absolute time ``t``."""
        if t >= self.knot_t[-1]:
            return float(self.knot_h[-1]), 0.0, 0.0
        if t <= self.knot_t[0]:
            return float(self.knot_h[0]), float(self.knot_v[0]), float(self.knot_a[0])
        i = int(np.searchsorted(self.knot_t, t, side="right")) - 1
        dt = t - self.knot_t[i]
        j = self.jerks[i]
        a0, v0, h0 = self.knot_a[i], self.knot_v[i], self.knot_h[i]
        a = a0 + j * dt
        v = v0 + a0 * dt + 0.5 * j * dt * dt
        h = h0 + v0 * dt + 0.5 * a0 * dt * dt + j * dt ** 3 / 6.0
        return float(h), float(v), float(a)

    @property
    def end_time(self) -> float:
        return float(self.knot_t[-1])


def _segments_distance(segs: list[tuple[float, float]], v0: float) -> float:
    h, v, a = 0.0, v0, 0.0
    for d, j in segs:
        h += v * d + 0.5 * a * d * d + j * d ** 3 / 6.0
        v += a * d + 0.5 * j * d * d
        a += j * d
    return h


def _through_move_segments(dist: float, v0: float, spec: ElevatorSpec
                           ) -> list[tuple[float, float]] | None:
    """Profile covering ``dist`` from initial velocity v0 (same direction).

    Accelerates from v0 to a peak, optionally cruises, and decelerates to
    rest.  Returns None when stopping alone already overshoots ``dist``
    (the caller falls back to stop-then-reverse).
    """
    s = math.copysign(1.0, dist)
    d = abs(dist)
    v0s = v0 * s
    if v0s < 0.0:
        return None

    def profile(v_pk: float) -> list[tuple[float, float]]:
        segs = _vel_change_segments(s * v_pk - v0, spec.a_max, spec.j_max)
        return segs + _vel_change_segments(-s * v_pk, spec.a_max, spec.j_max)

    def dist_at(v_pk: float) -> float:
        return s * _segments_distance(profile(v_pk), v0)

    if dist_at(v0s) > d:
        return None  # cannot even hold the current speed without overshoot
    if dist_at(spec.v_max) <= d:
        v_pk = spec.v_max
        up = _vel_change_segments(s * v_pk - v0, spec.a_max, spec.j_max)
        down = _vel_change_segments(-s * v_pk, spec.a_max, spec.j_max)
        covered = s * _segments_distance(up + down, v0)
        return up + [((d - covered) / v_pk, 0.0)] + down
    lo, hi = v0s, max(spec.v_max, v0s)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if dist_at(mid) <= d:
            lo = mid
        else:
            hi = mid
    return profile(lo)


def plan_move(h0: float, v0: float, h_des: float, spec: ElevatorSpec,
              t0: float = 0.0) -> Trajectory:
    """Plan a jerk-limited move from (h0, v0) to rest at ``h_des``.

    ``h_des`` is clamped to the elevator range.  The returned trajectory is
    continuous in position and velocity at ``t0``.  Starts already moving
    toward the target keep their velocity; a start moving away (or fast
    enough to overshoot) stops first and replans from rest.
    """
    target = min(max(h_des, spec.h_min), spec.h_max)
    segs: list[tuple[float, float]] = []
    h, v = h0, v0
    if abs(v0) > 1e-12 and abs(target - h0) > 1e-12:
        through = _through_move_segments(target - h0, v0, spec)
        if through is not None:
            segs = through
            h, v = target, 0.0
    if not segs and abs(v0) > 1e-12:
        stop = _vel_change_segments(-v0, spec.a_max, spec.j_max)
        segs.extend(stop)
        h += _segments_distance(stop, v0)
        v = 0.0
    if abs(v) < 1e-12 and (not segs or abs(target - h) > 1e-15):
        segs.extend(_rest_to_rest_segments(target - h, spec))

    n = len(segs)
    knot_t = np.empty(n + 1)
    knot_h = np.empty(n + 1)
    knot_v = np.empty(n + 1)
    knot_a = np.empty(n + 1)
    jerks = np.empty(max(n, 0))
    knot_t[0], knot_h[0], knot_v[0], knot_a[0] = t0, h0, v0, 0.0
    for i, (d, j) in enumerate(segs):
        jerks[i] = j
        a0, vv, hh = knot_a[i], knot_v[i], knot_h[i]
        knot_t[i + 1] = knot_t[i] + d
        knot_a[i + 1] = a0 + j * d
        knot_v[i + 1] = vv + a0 * d + 0.5 * j * d * d
        knot_h[i + 1] = hh + vv * d + 0.5 * a0 * d * d + j * d ** 3 / 6.0
    # pin the endpoint exactly; accumulated float error stays far below 1e-9
    if n > 0:
        knot_h[-1] = target
        knot_v[-1] = 0.0
        knot_a[-1] = 0.0
    return Trajectory(t0=t0, target=target, knot_t=knot_t, knot_h=knot_h,
                      knot_v=knot_v, knot_a=knot_a, jerks=jerks)
