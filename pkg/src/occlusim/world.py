"""Simulation state: agents, kinematic stepping, collision and off-road checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom2d import Polygon, ReferencePath, point_in_polygon, wrap_angle

DT = 0.1  # simulation tick, also the history sampling interval


@dataclass
class AgentState:
    id: int
    x: float
    y: float
    heading: float
    speed: float
    accel: float = 0.0
    length: float = 4.6
    width: float = 1.9
    role: str = "traffic"  # "ego" or "traffic"
    lane_index: int = -1   # index into world.lanes for traffic agents
    s: float = 0.0         # arc position along its lane (traffic agents)
    active: bool = True

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError("agent extents must be positive")
        self.heading = wrap_angle(self.heading)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def footprint(self) -> np.ndarray:
        """Oriented-rectangle corner array (4, 2), counterclockwise."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        hl, hw = 0.5 * self.length, 0.5 * self.width
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.position[None, :]

    def occluder(self) -> Polygon:
        return Polygon(self.footprint())


class HistoryBuffer:
    """Per-agent ring of (x, y, v, psi, t) samples at the simulation tick."""

    def __init__(self, capacity: int = 40):
        self.capacity = capacity
        self._data: dict[int, list[tuple[float, float, float, float, float]]] = {}

    def append(self, agent: AgentState, t: float):
        buf = self._data.setdefault(agent.id, [])
        buf.append((agent.x, agent.y, agent.speed, agent.heading, t))
        if len(buf) > self.capacity:
            del buf[0]

    def recent(self, agent_id: int, n: int) -> list[tuple[float, float, float, float, float]]:
        return self._data.get(agent_id, [])[-n:]

    def clear(self):
        self._data.clear()


@dataclass
class WorldState:
    time: float
    agents: list[AgentState]
    static_occluders: list[Polygon]
    lanes: list[ReferencePath]
    drivable_area: Polygon
    history: HistoryBuffer = field(default_factory=HistoryBuffer)

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError("agent ids must be unique")

    @property
    def ego(self) -> AgentState:
        for a in self.agents:
            if a.role == "ego":
                return a
        raise LookupError("no ego agent")

    def traffic(self) -> list[AgentState]:
        return [a for a in self.agents if a.role != "ego"]

    def occluders(self, exclude_id: int | None = None) -> list[Polygon]:
        """Static occluders plus the footprints of active (non-excluded) agents."""
        occs = list(self.static_occluders)
        for a in self.agents:
            if a.active and a.id != exclude_id:
                occs.append(a.occluder())
        return occs

    def record_history(self):
        for a in self.agents:
            if a.active:
                self.history.append(a, self.time)


def step(world: WorldState, ego_pose: tuple[float, float, float, float] | None,
         traffic_commands: dict[int, float] | None = None, dt: float = DT) -> WorldState:
    """Advance the world one tick in place and return it.

    ego_pose: (x, y, heading, speed) at t+dt, sampled from the ego primitive.
    traffic_commands: agent id -> speed command for this tick.
    """
    traffic_commands = traffic_commands or {}
    for a in world.agents:
        if a.role == "ego":
            if ego_pose is not None:
                new_speed = ego_pose[3]
                a.accel = (new_speed - a.speed) / dt
                a.x, a.y, a.heading, a.speed = ego_pose[0], ego_pose[1], wrap_angle(ego_pose[2]), new_speed
        else:
            if not a.active:
                continue
            cmd = traffic_commands.get(a.id, a.speed)
            cmd = max(0.0, cmd)
            a.accel = (cmd - a.speed) / dt
            ds = 0.5 * (a.speed + cmd) * dt
            a.speed = cmd
            lane = world.lanes[a.lane_index]
            a.s = min(a.s + ds, lane.length)
            pos = lane.from_frenet(a.s, 0.0)
            a.x, a.y = float(pos[0]), float(pos[1])
            a.heading = lane.heading_at(a.s)
    world.time = round(world.time + dt, 9)
    world.record_history()
    return world


def _sat_separated(ca: np.ndarray, cb: np.ndarray) -> bool:
    """Separating-axis test for two convex corner sets."""
    for corners in (ca, cb):
        edges = np.roll(corners, -1, axis=0) - corners
        for e in edges[:2]:  # rectangles: two unique axes each
            axis = np.array([-e[1], e[0]])
            pa = ca @ axis
            pb = cb @ axis
            if pa.max() < pb.min() - 1e-12 or pb.max() < pa.min() - 1e-12:
                return True
    return False


def detect_collision(world: WorldState) -> tuple[int, int] | None:
    """First overlapping pair of active agent rectangles; ego pairs checked first."""
    active = [a for a in world.agents if a.active]
    ego = [a for a in active if a.role == "ego"]
    others = [a for a in active if a.role != "ego"]
    ordered: list[tuple[AgentState, AgentState]] = []
    for e in ego:
        for o in others:
            ordered.append((e, o))
    for i in range(len(others)):
        for j in range(i + 1, len(others)):
            ordered.append((others[i], others[j]))
    for a, b in ordered:
        if abs(a.x - b.x) > 0.5 * (a.length + b.length) + 2.0:
            continue
        if abs(a.y - b.y) > 0.5 * (a.length + b.length) + 2.0:
            continue
        if not _sat_separated(a.footprint(), b.footprint()):
            return (a.id, b.id)
    return None


def off_road(world: WorldState) -> bool:
    """True iff any ego bounding-box corner is outside the drivable area."""
    for corner in world.ego.footprint():
        if not point_in_polygon(corner, world.drivable_area):
            return True
    return False
