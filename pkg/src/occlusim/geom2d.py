"""2D geometry primitives: polygons, visibility by ray casting, Frenet paths."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12
_CORNER_EPS = 1e-4  # angular offset around occluder corners


class DegenerateInputError(ValueError):
    """Raised when geometry inputs are degenerate (e.g. viewpoint inside an occluder)."""


class ProjectionOutOfRangeError(ValueError):
    """Raised when a point is too far from a reference path to project."""


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    a = (a + math.pi) % (2.0 * math.pi) - math.pi
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counterclockwise vertex order.

    Vertices are stored as an (n, 2) float array; the closing edge is implicit.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs >= 3 vertices of dimension 2")
        if not np.all(np.isfinite(v)):
            raise ValueError("polygon vertices must be finite")
        if signed_area(v) < 0:
            v = v[::-1].copy()
        object.__setattr__(self, "vertices", v)

    @property
    def area(self) -> float:
        return signed_area(self.vertices)

    def edges(self) -> np.ndarray:
        """Edge array of shape (n, 2, 2): (start, end) per edge."""
        v = self.vertices
        return np.stack([v, np.roll(v, -1, axis=0)], axis=1)

    def contains(self, p) -> bool:
        return point_in_polygon(p, self)


def signed_area(vertices: np.ndarray) -> float:
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def box_polygon(cx: float, cy: float, length: float, width: float,
                heading: float = 0.0) -> Polygon:
    """Oriented rectangle centered at (cx, cy), long axis along `heading`."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return Polygon(local @ rot.T + np.array([cx, cy]))


def point_in_polygon(p, poly: Polygon, tol: float = 1e-9) -> bool:
    """Even-odd containment; points on the boundary count as inside."""
    p = np.asarray(p, dtype=float)
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    # boundary check: distance from p to each edge segment
    d = w - v
    seg_len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - v, d) / np.maximum(seg_len2, _EPS), 0.0, 1.0)
    closest = v + t[:, None] * d
    if np.min(np.einsum("ij,ij->i", p - closest, p - closest)) <= tol * tol:
        return True
    # crossing count for the ray going in +x
    y1, y2 = v[:, 1], w[:, 1]
    cond = (y1 > p[1]) != (y2 > p[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = v[:, 0] + (p[1] - y1) / (y2 - y1) * (w[:, 0] - v[:, 0])
    return int(np.count_nonzero(cond & (x_cross > p[0]))) % 2 == 1


def points_in_polygon(pts: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorized even-odd test for many points (boundary treated as inside
    only up to floating point; intended for sampling, not exact queries)."""
    pts = np.asarray(pts, dtype=float)
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    y1 = v[:, 1][None, :]
    y2 = w[:, 1][None, :]
    py = pts[:, 1][:, None]
    px = pts[:, 0][:, None]
    cond = (y1 > py) != (y2 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = v[:, 0][None, :] + (py - y1) / (y2 - y1) * (w[:, 0] - v[:, 0])[None, :]
    cross = cond & (x_cross > px)
    return np.count_nonzero(cross, axis=1) % 2 == 1


def _is_convex(poly: Polygon) -> bool:
    v = poly.vertices
    a = np.roll(v, -1, axis=0) - v
    b = np.roll(a, -1, axis=0)
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return bool(np.all(cross > -1e-12))


def polygon_clip(a: Polygon, b: Polygon) -> list[Polygon]:
    """Intersection of two simple polygons as a list of simple polygons.

    Uses Sutherland-Hodgman when `b` is convex, shapely otherwise.
    """
    if _is_convex(b):
        out = _sutherland_hodgman(a.vertices, b.vertices)
        if out is None or len(out) < 3 or abs(signed_area(out)) < 1e-12:
            return []
        return [Polygon(out)]
    import shapely.geometry as sg

    inter = sg.Polygon(a.vertices).buffer(0).intersection(sg.Polygon(b.vertices).buffer(0))
    polys = []
    geoms = getattr(inter, "geoms", [inter])
    for g in geoms:
        if g.geom_type == "Polygon" and g.area > 1e-12:
            polys.append(Polygon(np.asarray(g.exterior.coords)[:-1]))
    return polys


def _sutherland_hodgman(subject: np.ndarray, clip_ccw: np.ndarray):
    out = list(subject)
    n = len(clip_ccw)
    for i in range(n):
        e0 = clip_ccw[i]
        e1 = clip_ccw[(i + 1) % n]
        edge = e1 - e0
        if not out:
            return None
        inp = out
        out = []
        prev = inp[-1]
        prev_in = edge[0] * (prev[1] - e0[1]) - edge[1] * (prev[0] - e0[0]) >= -_EPS
        for cur in inp:
            cur_in = edge[0] * (cur[1] - e0[1]) - edge[1] * (cur[0] - e0[0]) >= -_EPS
            if cur_in:
                if not prev_in:
                    out.append(_line_intersect(prev, cur, e0, e1))
                out.append(cur)
            elif prev_in:
                out.append(_line_intersect(prev, cur, e0, e1))
            prev, prev_in = cur, cur_in
    if not out:
        return None
    arr = np.asarray(out, dtype=float)
    # drop duplicate consecutive vertices
    keep = np.ones(len(arr), dtype=bool)
    for i in range(len(arr)):
        if np.allclose(arr[i], arr[(i + 1) % len(arr)], atol=1e-12):
            keep[i] = False
    arr = arr[keep]
    return arr if len(arr) >= 3 else None


def _line_intersect(p1, p2, q1, q2):
    d1 = np.asarray(p2, dtype=float) - p1
    d2 = np.asarray(q2, dtype=float) - q1
    denom = d1[0] * d2[1] - d1[1] * d2[0]
    t = ((q1[0] - p1[0]) * d2[1] - (q1[1] - p1[1]) * d2[0]) / denom
    return np.asarray(p1) + t * d1


# ---------------------------------------------------------------------------
# visibility


def _occluder_segments(occluders: list[Polygon]) -> np.ndarray:
    if not occluders:
        return np.zeros((0, 2, 2))
    return np.concatenate([p.edges() for p in occluders], axis=0)


def _ray_distances(origin: np.ndarray, angles: np.ndarray, segments: np.ndarray,
                   max_range: float) -> np.ndarray:
    """Distance from origin to first segment hit along each angle, capped."""
    t = np.full(len(angles), max_range)
    if len(segments) == 0:
        return t
    d = np.stack([np.cos(angles), np.sin(angles)], axis=1)          # (A, 2)
    q = segments[:, 0, :]                                            # (S, 2)
    s = segments[:, 1, :] - segments[:, 0, :]                        # (S, 2)
    denom = d[:, None, 0] * s[None, :, 1] - d[:, None, 1] * s[None, :, 0]
    qp = q[None, :, :] - origin[None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hit = (qp[:, :, 0] * s[None, :, 1] - qp[:, :, 1] * s[None, :, 0]) / denom
        u_hit = (qp[:, :, 0] * d[:, None, 1] - qp[:, :, 1] * d[:, None, 0]) / denom
    valid = (np.abs(denom) > _EPS) & (u_hit >= -1e-12) & (u_hit <= 1.0 + 1e-12) & (t_hit > 1e-9)
    t_hit = np.where(valid, t_hit, np.inf)
    return np.minimum(t, t_hit.min(axis=1))


def visibility_polygon(ego, occluders: list[Polygon], sensor_range: float,
                       n_rays: int = 720, base_angle: float = 0.0) -> Polygon:
    """Region visible from `ego` given polygonal occluders, by ray casting.

    Rays are cast uniformly plus at every occluder-corner angle +/- a small
    offset so shadow edges land exactly on corners. Vertices are ordered
    counterclockwise starting at `base_angle`.
    """
    ego = np.asarray(ego, dtype=float)
    if sensor_range <= 0:
        raise ValueError("sensor_range must be positive")
    if n_rays < 36:
        raise ValueError("n_rays must be >= 36")
    for occ in occluders:
        if occ.contains(ego):
            raise DegenerateInputError("viewpoint lies inside an occluder")
    segments = _occluder_segments(occluders)
    angles = base_angle + 2.0 * math.pi * np.arange(n_rays) / n_rays
    if len(segments):
        corners = np.concatenate([p.vertices for p in occluders], axis=0)
        rel = corners - ego
        within = np.einsum("ij,ij->i", rel, rel) <= (sensor_range * 1.5) ** 2
        ca = np.arctan2(rel[within, 1], rel[within, 0])
        angles = np.concatenate([angles, ca - _CORNER_EPS, ca, ca + _CORNER_EPS])
    rel_ang = np.mod(angles - base_angle, 2.0 * math.pi)
    order = np.argsort(rel_ang, kind="stable")
    angles = angles[order]
    # drop near-duplicate angles to keep the polygon simple
    rel_sorted = rel_ang[order]
    keep = np.empty(len(angles), dtype=bool)
    keep[0] = True
    keep[1:] = np.diff(rel_sorted) > 1e-9
    angles = angles[keep]
    dist = _ray_distances(ego, angles, segments, sensor_range)
    verts = ego[None, :] + dist[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Polygon(verts)


def segment_clear(a, b, occluders: list[Polygon]) -> bool:
    """True if the open segment a-b crosses no occluder edge (cheap visibility test)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    for occ in occluders:
        q = occ.vertices
        s = np.roll(q, -1, axis=0) - q
        denom = d[0] * s[:, 1] - d[1] * s[:, 0]
        qp = q - a
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / denom
            u = (qp[:, 0] * d[1] - qp[:, 1] * d[0]) / denom
        hit = (np.abs(denom) > _EPS) & (t > 1e-9) & (t < 1.0 - 1e-9) & (u >= 0.0) & (u <= 1.0)
        if np.any(hit):
            return False
    return True


# ---------------------------------------------------------------------------
# Frenet reference paths


@dataclass
class ReferencePath:
    """Polyline centerline with cumulative arc length and lane width."""

    centerline: np.ndarray
    lane_width: float = 3.5
    arclength: np.ndarray = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.centerline, dtype=float)
        if c.ndim != 2 or c.shape[0] < 2:
            raise ValueError("centerline needs >= 2 points")
        seg = np.linalg.norm(np.diff(c, axis=0), axis=1)
        if np.any(seg <= 0):
            raise ValueError("centerline arc length must be strictly increasing")
        if np.any(seg > 2.0 + 1e-9):
            raise ValueError("centerline samples must be spaced <= 2 m")
        self.centerline = c
        self.arclength = np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def to_frenet(self, p, max_offset: float = 20.0) -> tuple[float, float]:
        """Project a point to (s, d); d > 0 left of the travel direction."""
        p = np.asarray(p, dtype=float)
        c = self.centerline
        a = c[:-1]
        d = c[1:] - a
        seg_len2 = np.einsum("ij,ij->i", d, d)
        t = np.clip(np.einsum("j,ij->i", p, d) - np.einsum("ij,ij->i", a, d), 0.0, seg_len2)
        t = t / seg_len2
        proj = a + t[:, None] * d
        dist2 = np.einsum("ij,ij->i", p - proj, p - proj)
        i = int(np.argmin(dist2))
        if dist2[i] > max_offset * max_offset:
            raise ProjectionOutOfRangeError(
                f"point {p} is {math.sqrt(dist2[i]):.1f} m from the centerline")
        s = float(self.arclength[i] + t[i] * math.sqrt(seg_len2[i]))
        tang = d[i] / math.sqrt(seg_len2[i])
        rel = p - proj[i]
        lat = float(tang[0] * rel[1] - tang[1] * rel[0])
        return s, lat

    def to_frenet_batch(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized projection of (n, 2) points to (n, 2) [s, d] pairs.

        No range check; callers needing the 20 m guard use to_frenet.
        """
        pts = np.asarray(pts, dtype=float)
        c = self.centerline
        a = c[:-1]
        d = c[1:] - a
        seg_len2 = np.einsum("ij,ij->i", d, d)
        t = pts @ d.T - np.einsum("ij,ij->i", a, d)[None, :]
        t = np.clip(t / seg_len2[None, :], 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
        diff = pts[:, None, :] - proj
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        i = np.argmin(dist2, axis=1)
        rows = np.arange(len(pts))
        seg_len = np.sqrt(seg_len2[i])
        s = self.arclength[i] + t[rows, i] * seg_len
        tang = d[i] / seg_len[:, None]
        rel = pts - proj[rows, i]
        lat = tang[:, 0] * rel[:, 1] - tang[:, 1] * rel[:, 0]
        return np.stack([s, lat], axis=1)

    def from_frenet(self, s: float, d: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.arclength, s, side="right") - 1,
                        0, len(self.arclength) - 2))
        seg = self.centerline[i + 1] - self.centerline[i]
        seg_len = float(np.linalg.norm(seg))
        tang = seg / seg_len
        base = self.centerline[i] + (s - self.arclength[i]) * tang
        normal = np.array([-tang[1], tang[0]])
        return base + d * normal

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.arclength, s, side="right") - 1,
                        0, len(self.arclength) - 2))
        seg = self.centerline[i + 1] - self.centerline[i]
        return math.atan2(seg[1], seg[0])


def straight_path(start, end, lane_width: float = 3.5, spacing: float = 2.0) -> ReferencePath:
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    n = max(2, int(math.ceil(np.linalg.norm(end - start) / spacing)) + 1)
    pts = start[None, :] + np.linspace(0.0, 1.0, n)[:, None] * (end - start)[None, :]
    return ReferencePath(pts, lane_width=lane_width)
