"""Benchmark scenario builders, occluded-region spawning with an edge-biased
curriculum, traffic behavior, and episode termination logic."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .geom2d import (Polygon, ReferencePath, straight_path,
                     visibility_polygon, wrap_angle)
from .world import DT, AgentState, WorldState

LANE_WIDTH = 3.5
CURRICULUM_LAMBDA0 = 2.0   # m; spawn-weight length scale at progress 0
BRAKE_DECEL = 4.0          # traffic braking, m/s^2

SCENARIO_KINDS = ("overtake", "t_intersection", "crossroad")

MODES = {
    "overtake": ("none", "early", "late"),
    "t_intersection": ("none", "right"),
    "crossroad": ("none", "left", "right", "both"),
}


class InvalidConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    kind: str = "t_intersection"
    seed: int = 0
    timeout: float = 30.0
    speed_range: tuple[float, float] = (6.0, 12.0)
    entry_time_range: tuple[float, float] = (0.0, 5.0)
    count_range: tuple[int, int] = (0, 1)
    curriculum_lambda0: float = CURRICULUM_LAMBDA0
    sensor_range: float = 65.0
    n_rays: int = 720
    truck_speed_range: tuple[float, float] = (4.0, 6.0)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise InvalidConfigError(f"unknown scenario kind {self.kind!r}")
        if self.timeout <= 0:
            raise InvalidConfigError("timeout must be positive")
        if self.count_range[0] > self.count_range[1] or self.count_range[0] < 0:
            raise InvalidConfigError("bad count_range")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        for key in ("speed_range", "entry_time_range", "count_range",
                    "truck_speed_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def default_for(cls, kind: str, seed: int = 0) -> "ScenarioConfig":
        if kind == "overtake":
            return cls(kind="overtake", seed=seed, timeout=40.0,
                       speed_range=(8.0, 14.0), entry_time_range=(0.0, 6.0),
                       count_range=(0, 1))
        if kind == "t_intersection":
            return cls(kind="t_intersection", seed=seed, timeout=30.0,
                       speed_range=(6.0, 12.0), entry_time_range=(0.0, 5.0),
                       count_range=(0, 1))
        if kind == "crossroad":
            return cls(kind="crossroad", seed=seed, timeout=30.0,
                       speed_range=(6.0, 12.0), entry_time_range=(0.0, 2.0),
                       count_range=(0, 2))
        raise InvalidConfigError(f"unknown scenario kind {kind!r}")


@dataclass
class SpawnEntry:
    lane_index: int
    s0: float
    speed: float
    activation_time: float
    length: float = 4.6
    width: float = 1.9


@dataclass
class SpawnPlan:
    entries: list[SpawnEntry] = field(default_factory=list)


@dataclass
class Scenario:
    """A built scenario: initial world, ego reference path, goal, spawn regions."""

    config: ScenarioConfig
    world: WorldState
    ego_path: ReferencePath
    goal_s: float                       # success when ego path-s exceeds this
    d_bounds: tuple[float, float]       # lateral action band along ego_path
    spawn_lanes: list[tuple[int, float, float, str]]  # (lane, s_min, s_max, side)
    ego_start_speed: float

    def goal_reached(self) -> bool:
        s, _ = self.ego_path.to_frenet(self.world.ego.position)
        return s >= self.goal_s


def _cross_shape(vx0, vx1, vy0, vy1, hx0, hx1, hy0, hy1) -> Polygon:
    """Union of a vertical road band [vx0,vx1]x[vy0,vy1] and a horizontal band
    [hx0,hx1]x[hy0,hy1] as a 12-vertex polygon."""
    return Polygon(np.array([
        [vx1, vy0], [vx1, hy0], [hx1, hy0], [hx1, hy1], [vx1, hy1], [vx1, vy1],
        [vx0, vy1], [vx0, hy1], [hx0, hy1], [hx0, hy0], [vx0, hy0], [vx0, vy0],
    ]))


def build(config: ScenarioConfig) -> Scenario:
    """Construct the initial WorldState and scenario contract for a config."""
    if config.kind == "overtake":
        lane_ego = straight_path((-20.0, -1.75), (220.0, -1.75))
        lane_on = straight_path((220.0, 1.75), (-20.0, 1.75))
        drivable = Polygon(np.array([[-20.0, -LANE_WIDTH], [220.0, -LANE_WIDTH],
                                     [220.0, LANE_WIDTH], [-20.0, LANE_WIDTH]]))
        ego = AgentState(id=0, x=0.0, y=-1.75, heading=0.0, speed=8.0, role="ego")
        rng = np.random.default_rng(config.seed)
        truck_speed = float(rng.uniform(*config.truck_speed_range))
        truck = AgentState(id=1, x=30.0, y=-1.75, heading=0.0, speed=truck_speed,
                           length=8.0, width=2.5, lane_index=0, s=50.0)
        world = WorldState(0.0, [ego, truck], [], [lane_ego, lane_on], drivable)
        # oncoming spawn band: behind the truck shadow, ahead of the ego
        return Scenario(config, world, lane_ego, goal_s=170.0,
                        d_bounds=(-0.6, 4.1),
                        spawn_lanes=[(1, 40.0, 170.0, "oncoming")],
                        ego_start_speed=8.0)

    if config.kind == "t_intersection":
        lane_ego = straight_path((1.75, -40.0), (1.75, 40.0))
        lane_cross = straight_path((60.0, -1.75), (-40.0, -1.75))
        drivable = _cross_shape(-LANE_WIDTH, LANE_WIDTH, -40.0, 40.0,
                                -40.0, 60.0, -LANE_WIDTH, LANE_WIDTH)
        occ = Polygon(np.array([[8.0, -18.0], [30.0, -18.0],
                                [30.0, -8.0], [8.0, -8.0]]))
        ego = AgentState(id=0, x=1.75, y=-30.0, heading=math.pi / 2,
                         speed=6.0, role="ego")
        world = WorldState(0.0, [ego], [occ], [lane_ego, lane_cross], drivable)
        return Scenario(config, world, lane_ego, goal_s=55.0,
                        d_bounds=(-1.0, 1.0),
                        spawn_lanes=[(1, 0.0, 52.0, "right")],
                        ego_start_speed=6.0)

    if config.kind == "crossroad":
        lane_ego = straight_path((1.75, -40.0), (1.75, 40.0))
        lane_right = straight_path((60.0, -1.75), (-60.0, -1.75))
        lane_left = straight_path((-60.0, 1.75), (60.0, 1.75))
        drivable = _cross_shape(-LANE_WIDTH, LANE_WIDTH, -40.0, 40.0,
                                -60.0, 60.0, -LANE_WIDTH, LANE_WIDTH)
        occ_r = Polygon(np.array([[8.0, -18.0], [30.0, -18.0],
                                  [30.0, -8.0], [8.0, -8.0]]))
        occ_l = Polygon(np.array([[-30.0, -18.0], [-8.0, -18.0],
                                  [-8.0, -8.0], [-30.0, -8.0]]))
        ego = AgentState(id=0, x=1.75, y=-30.0, heading=math.pi / 2,
                         speed=6.0, role="ego")
        world = WorldState(0.0, [ego], [occ_r, occ_l],
                           [lane_ego, lane_right, lane_left], drivable)
        return Scenario(config, world, lane_ego, goal_s=55.0,
                        d_bounds=(-1.0, 1.0),
                        spawn_lanes=[(1, 16.0, 40.0, "right"),
                                     (2, 19.0, 44.0, "left")],
                        ego_start_speed=6.0)

    raise InvalidConfigError(config.kind)


def _dist_to_boundary(pts: np.ndarray, poly: Polygon) -> np.ndarray:
    v = poly.vertices
    w = np.roll(v, -1, axis=0)
    d = w - v
    seg_len2 = np.maximum(np.einsum("ij,ij->i", d, d), 1e-12)
    t = (pts @ d.T - np.einsum("ij,ij->i", v, d)[None, :]) / seg_len2[None, :]
    t = np.clip(t, 0.0, 1.0)
    proj = v[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = pts[:, None, :] - proj
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff).min(axis=1))


def spawn_hidden_agents(scenario: Scenario, progress: float,
                        rng: np.random.Generator,
                        mode: str | None = None) -> SpawnPlan:
    """Sample hidden agents inside the ego's blind spot.

    Spawn positions are weighted by exp(-dist_to_VR_boundary / lambda) where
    lambda grows with training progress, approaching uniform sampling late.
    """
    config = scenario.config
    world = scenario.world
    ego = world.ego
    vr = visibility_polygon(ego.position, world.occluders(exclude_id=ego.id),
                            config.sensor_range, config.n_rays)
    lam = config.curriculum_lambda0 * (1.0 + 9.0 * float(np.clip(progress, 0.0, 1.0)))

    sides: list[str]
    if mode is None:
        count = int(rng.integers(config.count_range[0], config.count_range[1] + 1))
        all_sides = [sl[3] for sl in scenario.spawn_lanes]
        sides = [all_sides[int(rng.integers(len(all_sides)))] for _ in range(count)]
    elif mode == "none":
        sides = []
    elif mode == "both":
        sides = ["left", "right"]
    elif mode in ("early", "late"):
        sides = ["oncoming"]
    else:
        sides = [mode]

    plan = SpawnPlan()
    from .geom2d import points_in_polygon

    for side in sides:
        cands = [sl for sl in scenario.spawn_lanes if sl[3] == side]
        if not cands:
            continue
        lane_idx, s_min, s_max, _ = cands[0]
        lane = world.lanes[lane_idx]
        s_grid = np.arange(s_min, s_max, 0.5)
        pts = np.array([lane.from_frenet(s, 0.0) for s in s_grid])
        rel = pts - ego.position
        far_enough = np.einsum("ij,ij->i", rel, rel) > 15.0 ** 2
        hidden = ~points_in_polygon(pts, vr) & far_enough
        if not np.any(hidden):
            continue
        s_hidden = s_grid[hidden]
        # keep spawns on the same lane at least 15 m apart
        taken = [e.s0 for e in plan.entries if e.lane_index == lane_idx]
        if taken:
            clear = np.all(np.abs(s_hidden[:, None] - np.array(taken)[None, :]) > 15.0,
                           axis=1)
            if not np.any(clear):
                continue
            s_hidden = s_hidden[clear]
            hidden_pts = pts[hidden][clear]
        else:
            hidden_pts = pts[hidden]
        if progress >= 1.0:
            # uniform limit of the edge-biased law once training is complete
            w = np.full(len(s_hidden), 1.0 / len(s_hidden))
        else:
            dist = _dist_to_boundary(hidden_pts, vr)
            w = np.exp(-dist / lam)
            w = w / w.sum()
        s0 = float(rng.choice(s_hidden, p=w))
        lo, hi = config.entry_time_range
        if mode == "early":
            hi = lo + (hi - lo) / 3.0
        elif mode == "late":
            lo = lo + (hi - lo) / 3.0
        plan.entries.append(SpawnEntry(
            lane_index=lane_idx, s0=s0,
            speed=float(rng.uniform(*config.speed_range)),
            activation_time=float(rng.uniform(lo, hi))))
    return plan


def apply_spawn_plan(world: WorldState, plan: SpawnPlan) -> dict[int, SpawnEntry]:
    """Instantiate spawned agents; returns id -> plan entry for the controller."""
    next_id = max(a.id for a in world.agents) + 1
    mapping = {}
    for e in plan.entries:
        lane = world.lanes[e.lane_index]
        pos = lane.from_frenet(e.s0, 0.0)
        agent = AgentState(id=next_id, x=float(pos[0]), y=float(pos[1]),
                           heading=lane.heading_at(e.s0), speed=0.0,
                           length=e.length, width=e.width,
                           lane_index=e.lane_index, s=e.s0)
        world.agents.append(agent)
        mapping[next_id] = e
        next_id += 1
    return mapping


class TrafficController:
    """Constant-speed lane tracking with a front-gap braking rule."""

    def __init__(self, assignments: dict[int, SpawnEntry],
                 extra_targets: dict[int, float] | None = None):
        self.assignments = assignments
        self.extra_targets = extra_targets or {}

    def target_speed(self, agent_id: int) -> float:
        if agent_id in self.assignments:
            return self.assignments[agent_id].speed
        return self.extra_targets.get(agent_id, 0.0)

    def commands(self, world: WorldState) -> dict[int, float]:
        out = {}
        for a in world.traffic():
            if not a.active:
                continue
            entry = self.assignments.get(a.id)
            if entry is not None and world.time < entry.activation_time - 1e-9:
                out[a.id] = 0.0
                continue
            out[a.id] = traffic_policy_step(a, world, self.target_speed(a.id))
        return out


def traffic_policy_step(agent: AgentState, world: WorldState,
                        target_speed: float) -> float:
    """Speed command: track target speed, brake at 4 m/s^2 when the front gap
    to a same-direction leader falls below v^2/(2*4) + 5 m.

    The gap rule only considers agents travelling along the same lane
    direction; crossing or oncoming vehicles are not treated as leaders, so
    cross-traffic does not yield to the ego.
    """
    lane = world.lanes[agent.lane_index]
    gap = math.inf
    for other in world.agents:
        if other.id == agent.id or not other.active:
            continue
        rel = other.position - agent.position
        if float(np.dot(rel, rel)) > 80.0 ** 2:
            continue
        try:
            s_o, d_o = lane.to_frenet(other.position, max_offset=30.0)
        except Exception:
            continue
        if abs(d_o) > 0.5 * LANE_WIDTH:
            continue
        if abs(wrap_angle(other.heading - lane.heading_at(min(max(s_o, 0.0), lane.length)))) > math.pi / 4:
            continue
        ds = s_o - agent.s - 0.5 * (agent.length + other.length)
        if ds > 0:
            gap = min(gap, ds)
    if gap < agent.speed ** 2 / (2.0 * BRAKE_DECEL) + 5.0:
        return max(0.0, agent.speed - BRAKE_DECEL * DT)
    return target_speed


RUNNING, SUCCESS, COLLISION, TIMEOUT, OFF_ROAD = (
    "running", "success", "collision", "timeout", "off_road")


def episode_status(scenario: Scenario) -> str:
    """Terminal condition with priority collision > off_road > success > timeout."""
    from .world import detect_collision, off_road

    world = scenario.world
    pair = detect_collision(world)
    ego_id = world.ego.id
    if pair is not None and ego_id in pair:
        return COLLISION
    if off_road(world):
        return OFF_ROAD
    if scenario.goal_reached():
        return SUCCESS
    if world.time >= scenario.config.timeout - 1e-9:
        return TIMEOUT
    return RUNNING


def save_config(config: ScenarioConfig, path):
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2)


def load_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_json(json.load(fh))
