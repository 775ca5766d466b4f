"""Non-learned comparison planners: a blind planner that reacts only to
visible agents, and a reachable-state-analysis (RSA) speed planner that
assumes worst-case hypothetical agents in every occluded corridor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom2d import Polygon, ReferencePath, points_in_polygon
from .smp import ActionBounds, BoundaryEnd, BoundaryStart, clamp_to_feasible
from .world import AgentState

BLIND_TARGET_SPEED = 12.0
RSA_TARGET_SPEED = 12.0
V_HYP_MAX = 14.0        # worst-case hidden-agent speed, m/s
RSA_MARGIN = 0.5        # s
RSA_BRAKE = 4.0         # m/s^2 planning deceleration
EGO_HALF_WIDTH = 0.95


@dataclass(frozen=True)
class ReachableSet:
    """Positions (as arc length along a corridor lane) reachable by a
    hypothetical hidden agent within horizon tau_h."""

    lane_index: int
    edge_s: float          # blind-spot boundary closest to the conflict zone
    tau_h: float
    v_hyp_max: float

    @property
    def interval(self) -> tuple[float, float]:
        return (self.edge_s, self.edge_s + self.v_hyp_max * self.tau_h)


def _project_agents(ego_path: ReferencePath, agents: list[AgentState]) -> list[tuple]:
    out = []
    for a in agents:
        sd = ego_path.to_frenet_batch(a.position[None, :])[0]
        out.append((float(sd[0]), float(sd[1]), a))
    return out


def _lead_gap(projected, s_ego: float, d_center: float,
              half_band: float = 1.75) -> tuple[float, float]:
    """Nearest agent ahead within the lateral band around d_center:
    (gap to its rear bumper, its speed). (inf, 0) when the band is clear."""
    gap, speed = math.inf, 0.0
    for s, d, a in projected:
        if abs(d - d_center) < half_band and s > s_ego:
            g = s - s_ego - 0.5 * a.length - 2.3
            if g < gap:
                gap, speed = g, a.speed
    return gap, speed


def _follow_speed(v_ego: float, gap: float, v_lead: float, target: float) -> float:
    """Gap-keeping command: hold target on a free lane, converge to the leader
    speed as the gap closes on its braking envelope."""
    if not math.isfinite(gap):
        return target
    safe = v_ego * v_ego / (2.0 * RSA_BRAKE) + 6.0
    if gap > 1.5 * safe:
        return target
    if gap < 0.5 * safe:
        return max(0.0, min(target, v_lead - 1.0, math.sqrt(2.0 * RSA_BRAKE * max(0.0, gap))))
    return max(0.0, min(target, v_lead + 0.3 * (gap - safe)))


class BlindPlanner:
    """Lane keeping with gap control on visible leaders; overtakes a slow
    leader when the visible part of the oncoming lane looks clear. Ignores
    occlusion entirely."""

    def __init__(self, target_speed: float = BLIND_TARGET_SPEED):
        self.target = target_speed
        self._zones = None

    def _zones_for(self, scen):
        if self._zones is None:
            self._zones = conflict_zones(scen)
        return self._zones

    def act(self, env) -> BoundaryEnd:
        scen = env.scenario
        world = env.world
        ego = world.ego
        path = scen.ego_path
        s_ego, d_ego = env.ego_state.d_xs, env.ego_state.d_ys
        visible = env._visible_agents()
        proj = _project_agents(path, visible)
        can_change = scen.d_bounds[1] > 2.0   # overtake map exposes the left lane

        # gap acceptance against visible crossing traffic: brake hard only when
        # a constant-velocity extrapolation of a visible agent occupies a
        # conflict zone at the same time the ego does
        hazard = False
        v_ego = max(ego.speed, 2.0)
        for lane_idx, s_in, s_out in self._zones_for(scen):
            lane = world.lanes[lane_idx]
            entry_pt = path.from_frenet(0.5 * (s_in + s_out), 0.0)
            lane_s_conflict = float(lane.to_frenet_batch(entry_pt[None, :])[0, 0])
            t_e_in = (s_in - s_ego - 0.5 * ego.length) / v_ego
            t_e_out = (s_out - s_ego + 0.5 * ego.length) / v_ego
            if t_e_out <= 0:
                continue
            for a in visible:
                if a.lane_index != lane_idx or a.speed < 0.5:
                    continue  # stationary agents read as yielding
                d_a = lane_s_conflict - a.s
                t_a_in = (d_a - 0.5 * a.length - 2.0) / a.speed
                t_a_out = (d_a + 0.5 * a.length + 2.0) / a.speed
                if t_a_out < 0:
                    continue  # already past the conflict
                if t_a_in - 0.3 < t_e_out and t_e_in < t_a_out + 0.3:
                    hazard = True

        gap, v_lead = _lead_gap(proj, s_ego, 0.0)
        v_cmd = _follow_speed(ego.speed, gap, v_lead, self.target)
        if hazard:
            v_cmd = min(v_cmd, max(0.0, ego.speed - 4.0))
        d_cmd = 0.0
        if can_change:
            on_gap, _ = _lead_gap(proj, s_ego - 5.0, 3.5)
            oncoming_clear = on_gap > 90.0
            if d_ego < 1.0:
                if math.isfinite(gap) and gap < 40.0 and v_lead < 0.5 * self.target \
                        and oncoming_clear:
                    d_cmd, v_cmd = 3.5, self.target
            else:
                own_gap, _ = _lead_gap(proj, s_ego - 8.0, 0.0)
                if own_gap > 24.0:
                    d_cmd, v_cmd = 0.0, self.target
                elif on_gap < 45.0:
                    d_cmd, v_cmd = 0.0, max(4.0, ego.speed - 3.0)  # bail out
                else:
                    d_cmd, v_cmd = 3.5, self.target
        return BoundaryEnd(v_xe=float(np.clip(v_cmd, 0.0, 15.0)), d_ye=d_cmd)


def conflict_zones(scenario) -> list[tuple[int, float, float]]:
    """(lane_index, ego-path entry s, exit s) where a non-ego lane corridor
    crosses the ego path."""
    path = scenario.ego_path
    zones = []
    for idx, lane in enumerate(scenario.world.lanes):
        if lane is path:
            continue
        s_grid = np.arange(0.0, lane.length + 1e-9, 1.0)
        pts = np.array([lane.from_frenet(s, 0.0) for s in s_grid])
        sd = path.to_frenet_batch(pts)
        near = np.abs(sd[:, 1]) < 0.5 * lane.lane_width + EGO_HALF_WIDTH
        if not np.any(near):
            continue
        zones.append((idx, float(sd[near, 0].min() - 1.0),
                      float(sd[near, 0].max() + 1.0)))
    return zones


def hidden_edge_distance(lane: ReferencePath, vr: Polygon, ego_pos: np.ndarray,
                         sensor_range: float, conflict_lane_s: float,
                         spacing: float = 1.0) -> float:
    """Arc distance from the nearest occluded lane point (upstream of the
    conflict point) to the conflict point; inf when the whole approach is
    visibly clear."""
    s_grid = np.arange(0.0, conflict_lane_s, spacing)
    if len(s_grid) == 0:
        return 0.0
    pts = np.array([lane.from_frenet(s, 0.0) for s in s_grid])
    rel = pts - ego_pos
    in_range = np.einsum("ij,ij->i", rel, rel) <= sensor_range ** 2
    visible = in_range & points_in_polygon(pts, vr)
    hidden = ~visible
    if not np.any(hidden):
        return math.inf
    return float(conflict_lane_s - s_grid[hidden].max())


class RsaPlanner:
    """Occlusion-aware speed planner: for every conflict point, either clear it
    before the worst-case hidden agent can arrive, or stay able to stop short
    of it. Never commands a lane change."""

    def __init__(self, target_speed: float = RSA_TARGET_SPEED,
                 v_hyp_max: float = V_HYP_MAX, margin: float = RSA_MARGIN):
        self.target = target_speed
        self.v_hyp = v_hyp_max
        self.margin = margin
        self._zones = None

    def reachable_sets(self, env, tau_h: float = 2.0) -> list[ReachableSet]:
        scen = env.scenario
        vr = env.visible_region
        ego = scen.world.ego
        out = []
        for lane_idx, s_in, _s_out in self._zones_for(scen):
            lane = scen.world.lanes[lane_idx]
            entry_pt = scen.ego_path.from_frenet(0.5 * (s_in + _s_out), 0.0)
            lane_s_conflict = float(lane.to_frenet_batch(entry_pt[None, :])[0, 0])
            d_hidden = hidden_edge_distance(lane, vr, ego.position,
                                            env.observer.sensor_range, lane_s_conflict)
            if math.isfinite(d_hidden):
                out.append(ReachableSet(lane_idx, lane_s_conflict - d_hidden,
                                        tau_h, self.v_hyp))
        return out

    def _zones_for(self, scen):
        if self._zones is None:
            self._zones = conflict_zones(scen)
        return self._zones

    def act(self, env) -> BoundaryEnd:
        scen = env.scenario
        world = env.world
        ego = world.ego
        path = scen.ego_path
        s_ego = env.ego_state.d_xs
        vr = env.visible_region
        visible = env._visible_agents()
        proj = _project_agents(path, visible)

        gap, v_lead = _lead_gap(proj, s_ego, 0.0)
        v_limit = _follow_speed(ego.speed, gap, v_lead, self.target)

        constraints = []  # (dist_to_entry, worst-case arrival time, dist_to_exit)
        for lane_idx, s_in, s_out in self._zones_for(scen):
            lane = world.lanes[lane_idx]
            entry_pt = path.from_frenet(0.5 * (s_in + s_out), 0.0)
            lane_s_conflict = float(lane.to_frenet_batch(entry_pt[None, :])[0, 0])
            d_entry = s_in - s_ego - 0.5 * ego.length
            d_exit = s_out - s_ego + 0.5 * ego.length
            if d_exit <= 0:
                continue  # already past
            t_arr = math.inf
            d_hidden = hidden_edge_distance(lane, vr, ego.position,
                                            env.observer.sensor_range, lane_s_conflict)
            if math.isfinite(d_hidden):
                t_arr = d_hidden / self.v_hyp
            # visible approaching agents on this corridor, worst case no braking
            for a in visible:
                if a.lane_index == lane_idx:
                    d_a = lane_s_conflict - a.s
                    if d_a > -2.0 and a.speed > 0.2:
                        t_arr = min(t_arr, max(0.0, d_a) / max(a.speed, 1e-6))
                    elif d_a > -2.0:
                        t_arr = min(t_arr, max(0.0, d_a) / self.v_hyp + 1.5)
            constraints.append((d_entry, t_arr, d_exit))

        if not constraints:
            return BoundaryEnd(v_xe=float(np.clip(v_limit, 0.0, 15.0)), d_ye=0.0)

        t_exec = env.config.t_exec
        state = env.ego_state
        bounds = env.action_bounds
        for v_cand in np.arange(min(self.target, v_limit), -0.1, -0.5):
            v_cand = max(0.0, float(v_cand))
            pass_traj = None
            stop_traj = None
            ok = True
            for d_entry, t_arr, d_exit in constraints:
                if pass_traj is None:
                    pass_traj = _simulate_plan(state, v_cand, bounds, t_exec)
                t_clear = _time_to_distance(pass_traj, d_exit)
                if t_clear + self.margin <= t_arr:
                    continue  # clears before the hypothetical agent arrives
                if stop_traj is None:
                    stop_traj = _simulate_plan(state, v_cand, bounds, t_exec,
                                               brake_after=t_exec)
                if stop_traj[-1][1] <= d_entry - 0.5:
                    continue  # can still stop short of the conflict zone
                ok = False
                break
            if ok:
                return BoundaryEnd(v_xe=v_cand, d_ye=0.0)
        if any(d_entry < 0.5 for d_entry, _t, _d in constraints):
            # already committed into a conflict zone; clear it as fast as
            # possible instead of stopping inside
            return BoundaryEnd(v_xe=float(np.clip(v_limit, 0.0, 15.0)), d_ye=0.0)
        return BoundaryEnd(v_xe=0.0, d_ye=0.0)


def _simulate_plan(state: BoundaryStart, v_cmd: float, bounds: ActionBounds,
                   t_exec: float, brake_after: float | None = None,
                   total: float = 16.0) -> list[tuple[float, float, float]]:
    """Forward-simulate the ego through the primitive pipeline when the same
    speed command is re-issued every decision step (switching to a full-stop
    command after brake_after, if given).

    Returns (t, distance travelled, speed) rows at the simulation tick; this is
    the exact closed-loop response including clamping, so stop distances and
    clearing times account for the smoothing the primitives impose.
    """
    st = BoundaryStart(0.0, state.v_xs, state.a_xs, 0.0, 0.0, 0.0)
    rows = [(0.0, 0.0, st.v_xs)]
    t = 0.0
    n_exec = max(1, int(round(t_exec / 0.1)))
    while t < total - 1e-9:
        cmd = v_cmd
        if brake_after is not None and t >= brake_after - 1e-9:
            cmd = 0.0
        prim, _ = clamp_to_feasible(st, BoundaryEnd(v_xe=cmd, d_ye=0.0), bounds)
        samples = prim.samples()
        for i in range(1, n_exec + 1):
            rows.append((t + 0.1 * i, samples[i, 1], samples[i, 2]))
        st = prim.state_at(n_exec * 0.1)
        t += n_exec * 0.1
        if brake_after is not None and t > brake_after and st.v_xs < 0.05:
            break
    return rows


def _time_to_distance(traj: list[tuple[float, float, float]], dist: float) -> float:
    """First time at which the simulated plan has travelled dist; extrapolates
    at the final speed past the simulated horizon."""
    for t, s, _v in traj:
        if s >= dist:
            return t
    t_end, s_end, v_end = traj[-1]
    if v_end < 0.1:
        return math.inf
    return t_end + (dist - s_end) / v_end
