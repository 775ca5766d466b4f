"""Shared independent oracles for the test suite.

These deliberately avoid the library's own geometry/algebra routines wherever
an independent formulation is possible, so agreement is evidence rather than
tautology.
"""

from __future__ import annotations

import math

import numpy as np

from occlusim.geom2d import Polygon


def random_layout(rng: np.random.Generator, n_occ: int | None = None):
    """Random ego viewpoint plus a set of boxes that never contain the ego."""
    ego = rng.uniform(-5.0, 5.0, size=2)
    sensor_range = float(rng.uniform(30.0, 60.0))
    if n_occ is None:
        n_occ = int(rng.integers(1, 5))
    occluders = []
    while len(occluders) < n_occ:
        center = ego + rng.uniform(8.0, 0.8 * sensor_range) * _unit(rng.uniform(0, 2 * math.pi))
        length = rng.uniform(2.0, 14.0)
        width = rng.uniform(2.0, 10.0)
        heading = rng.uniform(0.0, math.pi)
        box = _box(center, length, width, heading)
        if not box.contains(ego):
            occluders.append(box)
    return ego, occluders, sensor_range


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def _box(center, length, width, heading):
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return Polygon(local @ rot.T + center)


def dense_ray_visible_area(ego, occluders, sensor_range, n_rays=100_000):
    """Brute-force visible area: mean squared free-ray distance over a dense
    uniform fan (the limit integral (1/2)∫ r(θ)² dθ)."""
    ego = np.asarray(ego, dtype=float)
    angles = 2.0 * math.pi * np.arange(n_rays) / n_rays
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    r = np.full(n_rays, sensor_range)
    for occ in occluders:
        q = occ.vertices
        seg = np.roll(q, -1, axis=0) - q
        for j in range(len(q)):
            denom = d[:, 0] * seg[j, 1] - d[:, 1] * seg[j, 0]
            qp = q[j] - ego
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (qp[0] * seg[j, 1] - qp[1] * seg[j, 0]) / denom
                u = (qp[0] * d[:, 1] - qp[1] * d[:, 0]) / denom
            hit = (np.abs(denom) > 1e-12) & (u >= 0.0) & (u <= 1.0) & (t > 1e-9)
            r = np.where(hit & (t < r), t, r)
    return 0.5 * float(np.mean(r * r)) * 2.0 * math.pi


def convex_contains(p, vertices, tol=1e-9) -> bool:
    """Half-plane oracle: point inside a counterclockwise convex polygon."""
    v = np.asarray(vertices, dtype=float)
    w = np.roll(v, -1, axis=0)
    cross = (w[:, 0] - v[:, 0]) * (p[1] - v[:, 1]) - (w[:, 1] - v[:, 1]) * (p[0] - v[:, 0])
    return bool(np.all(cross >= -tol))


def random_convex_polygon(rng: np.random.Generator, n: int = 8) -> np.ndarray:
    """Counterclockwise convex polygon via hull of random points."""
    pts = rng.uniform(-10.0, 10.0, size=(n + 6, 2))
    hull = _convex_hull(pts)
    return hull


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def half(points):
        out = []
        for p in points:
            while len(out) >= 2 and cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def solve_quintic_6x6(start, end, T):
    """Generic dense 6x6 linear solve for the lateral quintic (oracle for the
    closed-form coefficient path)."""
    d0, v0, a0 = start
    d1, v1, a1 = end
    M = np.zeros((6, 6))
    rhs = np.array([d0, v0, a0, d1, v1, a1], dtype=float)
    M[0, 0] = 1.0
    M[1, 1] = 1.0
    M[2, 2] = 2.0
    for k in range(6):
        M[3, k] = T ** k
        M[4, k] = k * T ** (k - 1) if k >= 1 else 0.0
        M[5, k] = k * (k - 1) * T ** (k - 2) if k >= 2 else 0.0
    return np.linalg.solve(M, rhs)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of scalar f at x (same shape as x)."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.max(np.abs(a - b)))
    den = float(np.max(np.abs(a)) + np.max(np.abs(b)) + 1e-8)
    return num / den
