"""Vectorized observation: visible-region boundary, lane, and agent-history
polylines in the ego frame, padded and masked for the encoder."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .geom2d import (Polygon, points_in_polygon, visibility_polygon, wrap_angle)
from .world import WorldState

N_POLY = 16
N_NODE = 64
HISTORY = 20          # agent history samples (2 s at the 0.1 s tick)
FEATURE_DIM = 5
POS_SCALE = 1.0 / 50.0
SPEED_SCALE = 1.0 / 20.0
LANE_SPACING = 2.0

KIND_VR, KIND_LANE, KIND_AGENT = 0, 1, 2
N_KINDS = 3


@dataclass
class PolylineBatch:
    """Fixed-capacity padded polyline set. Padding entries are all-zero with
    their mask bits cleared."""

    nodes: np.ndarray       # (N_POLY, N_NODE, FEATURE_DIM)
    node_mask: np.ndarray   # (N_POLY, N_NODE) bool
    poly_mask: np.ndarray   # (N_POLY,) bool
    kinds: np.ndarray       # (N_POLY,) int

    @classmethod
    def empty(cls) -> "PolylineBatch":
        return cls(np.zeros((N_POLY, N_NODE, FEATURE_DIM)),
                   np.zeros((N_POLY, N_NODE), dtype=bool),
                   np.zeros(N_POLY, dtype=bool),
                   np.zeros(N_POLY, dtype=int))

    def add(self, kind: int, features: np.ndarray) -> bool:
        """Append one polyline; returns False when capacity is exhausted."""
        free = np.flatnonzero(~self.poly_mask)
        if len(free) == 0 or len(features) == 0:
            return False
        i = free[0]
        n = min(len(features), N_NODE)
        self.nodes[i, :n] = features[:n]
        self.node_mask[i, :n] = True
        self.poly_mask[i] = True
        self.kinds[i] = kind
        return True

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes.tolist(),
            "node_mask": self.node_mask.tolist(),
            "poly_mask": self.poly_mask.tolist(),
            "kinds": self.kinds.tolist(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolylineBatch":
        return cls(np.asarray(d["nodes"], dtype=float),
                   np.asarray(d["node_mask"], dtype=bool),
                   np.asarray(d["poly_mask"], dtype=bool),
                   np.asarray(d["kinds"], dtype=int))


def downsample_polygon(poly: Polygon, max_segments: int) -> Polygon:
    """Decimate vertices (smallest-triangle-area first) down to max_segments."""
    if max_segments < 8:
        raise ValueError("max_segments must be >= 8")
    v = poly.vertices
    if len(v) <= max_segments:
        return poly
    # bulk prefilter: drop alternating vertices from low-area runs (dominated by
    # the densely sampled range arc) until the exact heap pass is cheap
    while len(v) > 4 * max_segments:
        a, c = np.roll(v, 1, axis=0), np.roll(v, -1, axis=0)
        areas = 0.5 * np.abs((v[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                             - (v[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        small = areas <= np.quantile(areas, 0.75)
        drop = small & (np.arange(len(v)) % 2 == 1)
        if not drop.any():
            break
        v = v[~drop]
    n = len(v)
    if n <= max_segments:
        return Polygon(v)
    prev = np.arange(-1, n - 1) % n
    nxt = np.arange(1, n + 1) % n
    alive = np.ones(n, dtype=bool)
    ver = np.zeros(n, dtype=int)

    def tri_area(i):
        a, b, c = v[prev[i]], v[i], v[nxt[i]]
        return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    a, b, c = v[prev], v, v[nxt]
    areas = 0.5 * np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                         - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    heap = [(areas[i], 0, i) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining > max_segments and heap:
        _, stamp, i = heapq.heappop(heap)
        if not alive[i] or stamp != ver[i]:
            continue  # stale entry
        alive[i] = False
        remaining -= 1
        p, q = prev[i], nxt[i]
        nxt[p], prev[q] = q, p
        ver[p] += 1
        ver[q] += 1
        heapq.heappush(heap, (tri_area(p), ver[p], p))
        heapq.heappush(heap, (tri_area(q), ver[q], q))
    return Polygon(v[alive])


def ego_frame(ego_pos: np.ndarray, ego_heading: float, pts: np.ndarray) -> np.ndarray:
    c, s = math.cos(ego_heading), math.sin(ego_heading)
    rot = np.array([[c, s], [-s, c]])
    return (np.asarray(pts, dtype=float) - ego_pos) @ rot.T


def _segments_to_features(pts_ego: np.ndarray, closed: bool) -> np.ndarray:
    """(sx, sy, ex, ey, 0) rows for consecutive point pairs, scaled."""
    p = pts_ego * POS_SCALE
    if closed:
        starts, ends = p, np.roll(p, -1, axis=0)
    else:
        starts, ends = p[:-1], p[1:]
    feats = np.zeros((len(starts), FEATURE_DIM))
    feats[:, 0:2] = starts
    feats[:, 2:4] = ends
    return feats


@dataclass
class Observer:
    """Builds PolylineBatch observations for the ego each decision step."""

    sensor_range: float = 50.0
    n_rays: int = 720
    include_vr: bool = True

    def _visible_ids(self, world: WorldState) -> set[int]:
        """Agents with a clear ego sightline, ignoring each agent's own body."""
        from .geom2d import segment_clear

        ego = world.ego
        occs = world.static_occluders
        out = set()
        for a in world.traffic():
            if not a.active:
                continue
            rel = a.position - ego.position
            if float(rel @ rel) > self.sensor_range ** 2:
                continue
            blockers = [o.occluder() for o in world.traffic()
                        if o.active and o.id != a.id]
            if segment_clear(ego.position, a.position, occs + blockers):
                out.add(a.id)
        return out

    def visible_region(self, world: WorldState) -> Polygon:
        ego = world.ego
        return visibility_polygon(ego.position, world.occluders(exclude_id=ego.id),
                                  self.sensor_range, self.n_rays,
                                  base_angle=ego.heading)

    def build(self, world: WorldState, vr: Polygon,
              exposed: dict[int, list[tuple]] | None = None,
              visible_ids: set[int] | None = None) -> PolylineBatch:
        """Assemble the observation in the ego frame.

        exposed: per-agent contiguous visible-history samples (x, y, v, psi, t);
        falls back to single current-state samples for visible agents.
        visible_ids: agents with a clear sightline from the ego (an agent's own
        body must not count as its occluder, so the VR point test is wrong for
        vehicle centers); derived here when not supplied.
        """
        ego = world.ego
        batch = PolylineBatch.empty()

        if self.include_vr:
            vr_small = downsample_polygon(vr, N_NODE)
            pts = ego_frame(ego.position, ego.heading, vr_small.vertices)
            batch.add(KIND_VR, _segments_to_features(pts, closed=True))

        for lane in world.lanes:
            pts = getattr(lane, "_sample_cache", None)
            if pts is None:
                s_grid = np.arange(0.0, lane.length + 1e-9, LANE_SPACING)
                pts = np.array([lane.from_frenet(s, 0.0) for s in s_grid])
                lane._sample_cache = pts
            rel = pts - ego.position
            in_range = np.einsum("ij,ij->i", rel, rel) <= self.sensor_range ** 2
            inside = in_range & points_in_polygon(pts, vr)
            # contiguous visible runs become separate polylines
            i = 0
            while i < len(pts):
                if not inside[i]:
                    i += 1
                    continue
                j = i
                while j < len(pts) and inside[j]:
                    j += 1
                if j - i >= 2:
                    run = ego_frame(ego.position, ego.heading, pts[i:j])
                    batch.add(KIND_LANE, _segments_to_features(run, closed=False))
                i = j

        if visible_ids is None:
            visible_ids = self._visible_ids(world)
        for agent in world.traffic():
            if not agent.active or agent.id not in visible_ids:
                continue
            if exposed is not None and agent.id in exposed:
                samples = exposed[agent.id][-HISTORY:]
            else:
                samples = [(agent.x, agent.y, agent.speed, agent.heading, world.time)]
            if not samples:
                continue
            feats = np.zeros((len(samples), FEATURE_DIM))
            pts = ego_frame(ego.position, ego.heading,
                            np.array([[s[0], s[1]] for s in samples]))
            feats[:, 0:2] = pts * POS_SCALE
            feats[:, 2] = [s[2] * SPEED_SCALE for s in samples]
            feats[:, 3] = [wrap_angle(s[3] - ego.heading) for s in samples]
            feats[:, 4] = [s[4] - world.time for s in samples]
            batch.add(KIND_AGENT, feats)

        return batch


def rasterize_observation(world: WorldState, vr: Polygon, size: int = 32,
                          extent: float = 50.0,
                          visible_ids: set[int] | None = None) -> np.ndarray:
    """Coarse ego-centric occupancy grid (3, size, size): visible cells,
    drivable cells, visible-agent cells. Used by the grid-observation ablation."""
    ego = world.ego
    lin = (np.arange(size) + 0.5) / size * 2.0 * extent - extent
    gx, gy = np.meshgrid(lin, lin)
    pts_ego = np.stack([gx.ravel(), gy.ravel()], axis=1)
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    rot = np.array([[c, -s], [s, c]])
    pts_world = pts_ego @ rot.T + ego.position
    from .geom2d import points_in_polygon

    grid = np.zeros((3, size * size))
    grid[0] = points_in_polygon(pts_world, vr)
    grid[1] = points_in_polygon(pts_world, world.drivable_area)
    if visible_ids is None:
        visible_ids = Observer(extent)._visible_ids(world)
    for agent in world.traffic():
        if agent.active and agent.id in visible_ids:
            d = pts_world - agent.position
            near = np.einsum("ij,ij->i", d, d) <= (0.5 * agent.length) ** 2
            grid[2, near] = 1.0
    return grid.reshape(3, size, size)


class ObservationLog:
    """JSONL dump of PolylineBatch observations, one record per tick."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, t: float, batch: PolylineBatch, extra: dict | None = None):
        import json

        rec = {"t": t, "batch": batch.to_json()}
        if extra:
            rec.update(extra)
        self._fh.write(json.dumps(rec) + "\n")

    def close(self):
        self._fh.close()
