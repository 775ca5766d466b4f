"""Frenet motion primitives: quartic longitudinal + quintic lateral polynomials.

A primitive is solved from a starting waypoint (position, velocity,
acceleration in both axes) and a target waypoint where only the end speed and
end lateral offset vary; end accelerations and lateral end velocity are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

T_PRIMITIVE = 3.0   # primitive duration, s
DTAU = 0.1          # interpolation interval, s
N_SAMPLES = int(round(T_PRIMITIVE / DTAU)) + 1  # 31

V_MAX = 15.0        # m/s upper bound on commanded end speed
A_LON_MAX = 4.0     # m/s^2
A_LAT_MAX = 3.0     # m/s^2
SPEED_CAP = 16.0    # m/s feasibility ceiling on sampled speed


@dataclass(frozen=True)
class BoundaryStart:
    d_xs: float
    v_xs: float
    a_xs: float
    d_ys: float
    v_ys: float
    a_ys: float


@dataclass(frozen=True)
class BoundaryEnd:
    v_xe: float
    d_ye: float
    a_xe: float = 0.0
    v_ye: float = 0.0
    a_ye: float = 0.0


@dataclass(frozen=True)
class MotionPrimitive:
    lon_coeffs: np.ndarray   # a0..a4
    lat_coeffs: np.ndarray   # b0..b5
    duration: float
    start: BoundaryStart
    end: BoundaryEnd

    def lon(self, tau):
        return np.polyval(self.lon_coeffs[::-1], tau)

    def lon_d(self, tau):
        return np.polyval(np.polyder(self.lon_coeffs[::-1]), tau)

    def lon_dd(self, tau):
        return np.polyval(np.polyder(self.lon_coeffs[::-1], 2), tau)

    def lat(self, tau):
        return np.polyval(self.lat_coeffs[::-1], tau)

    def lat_d(self, tau):
        return np.polyval(np.polyder(self.lat_coeffs[::-1]), tau)

    def lat_dd(self, tau):
        return np.polyval(np.polyder(self.lat_coeffs[::-1], 2), tau)

    def samples(self, dtau: float = DTAU) -> np.ndarray:
        """Array (n, 7): tau, s, s', s'', d, d', d'' at the interpolation grid."""
        tau = np.arange(0.0, self.duration + 0.5 * dtau, dtau)
        return np.stack([tau, self.lon(tau), self.lon_d(tau), self.lon_dd(tau),
                         self.lat(tau), self.lat_d(tau), self.lat_dd(tau)], axis=1)

    def state_at(self, tau: float) -> BoundaryStart:
        """Frenet boundary state reached at time tau (for C2 chaining)."""
        return BoundaryStart(float(self.lon(tau)), float(self.lon_d(tau)),
                             float(self.lon_dd(tau)), float(self.lat(tau)),
                             float(self.lat_d(tau)), float(self.lat_dd(tau)))


def solve_primitive(start: BoundaryStart, end: BoundaryEnd,
                    duration: float = T_PRIMITIVE) -> MotionPrimitive:
    """Solve polynomial coefficients from the boundary conditions.

    Longitudinal: quartic fixed by 3 start conditions plus end velocity and
    acceleration (velocity keeping, no end-position constraint).
    Lateral: quintic fixed by 3 start and 3 end conditions.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    T = duration
    a0, a1, a2 = start.d_xs, start.v_xs, 0.5 * start.a_xs
    # [x'(T); x''(T)] = [v_xe; a_xe]
    A = np.array([[3 * T ** 2, 4 * T ** 3],
                  [6 * T, 12 * T ** 2]])
    rhs = np.array([end.v_xe - a1 - 2 * a2 * T,
                    end.a_xe - 2 * a2])
    a3, a4 = np.linalg.solve(A, rhs)
    lon = np.array([a0, a1, a2, a3, a4])

    b0, b1, b2 = start.d_ys, start.v_ys, 0.5 * start.a_ys
    B = np.array([[T ** 3, T ** 4, T ** 5],
                  [3 * T ** 2, 4 * T ** 3, 5 * T ** 4],
                  [6 * T, 12 * T ** 2, 20 * T ** 3]])
    rhs = np.array([end.d_ye - b0 - b1 * T - b2 * T ** 2,
                    end.v_ye - b1 - 2 * b2 * T,
                    end.a_ye - 2 * b2])
    b3, b4, b5 = np.linalg.solve(B, rhs)
    lat = np.array([b0, b1, b2, b3, b4, b5])
    return MotionPrimitive(lon, lat, T, start, end)


@dataclass(frozen=True)
class ActionBounds:
    v_lo: float = 0.0
    v_hi: float = V_MAX
    d_lo: float = -3.5
    d_hi: float = 3.5


def map_action(raw: np.ndarray, bounds: ActionBounds) -> BoundaryEnd:
    """Squash an unbounded 2-vector into (v_xe, d_ye) via tanh + affine map."""
    u = np.tanh(np.asarray(raw, dtype=float))
    v_xe = bounds.v_lo + 0.5 * (u[0] + 1.0) * (bounds.v_hi - bounds.v_lo)
    d_ye = bounds.d_lo + 0.5 * (u[1] + 1.0) * (bounds.d_hi - bounds.d_lo)
    return BoundaryEnd(v_xe=float(v_xe), d_ye=float(d_ye))


def squash_log_det(raw: np.ndarray, bounds: ActionBounds) -> float:
    """log |d squashed / d raw| for the tanh + affine map (both components)."""
    raw = np.asarray(raw, dtype=float)
    spans = np.array([bounds.v_hi - bounds.v_lo, bounds.d_hi - bounds.d_lo])
    # log(1 - tanh(u)^2) computed stably as 2*(log 2 - u - softplus(-2u))
    log_one_minus_t2 = 2.0 * (math.log(2.0) - raw - np.logaddexp(0.0, -2.0 * raw))
    return float(np.sum(np.log(0.5 * spans) + log_one_minus_t2))


def check_feasible(prim: MotionPrimitive, dtau: float = DTAU) -> bool:
    """Dynamic feasibility over the sample grid: bounded accelerations and speed."""
    s = prim.samples(dtau)
    v_lon = s[:, 2]
    a_lon = s[:, 3]
    a_lat = s[:, 6]
    speed = np.hypot(v_lon, s[:, 5])
    return bool(np.all(np.abs(a_lon) <= A_LON_MAX + 1e-9)
                and np.all(np.abs(a_lat) <= A_LAT_MAX + 1e-9)
                and np.all(v_lon >= -1e-9)
                and np.all(speed <= SPEED_CAP + 1e-9))


def clamp_to_feasible(start: BoundaryStart, end: BoundaryEnd,
                      bounds: ActionBounds,
                      duration: float = T_PRIMITIVE) -> tuple[MotionPrimitive, BoundaryEnd]:
    """Solve the primitive; if infeasible, pull the end speed toward the start
    speed (binary shrink) until the feasibility filter accepts it."""
    prim = solve_primitive(start, end, duration)
    if check_feasible(prim):
        return prim, end
    v_ref = float(np.clip(start.v_xs, bounds.v_lo, bounds.v_hi))
    d_ref = float(np.clip(start.d_ys, bounds.d_lo, bounds.d_hi))
    lo, hi = 0.0, 1.0  # blend toward the (feasible) hold-current end condition
    best = BoundaryEnd(v_xe=v_ref, d_ye=d_ref)
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        cand = BoundaryEnd(v_xe=v_ref + mid * (end.v_xe - v_ref),
                           d_ye=d_ref + mid * (end.d_ye - d_ref))
        if check_feasible(solve_primitive(start, cand, duration)):
            best, lo = cand, mid
        else:
            hi = mid
    return solve_primitive(start, best, duration), best
