"""Risk checking during primitive execution: short-term prediction of visible
agents, RSS longitudinal envelopes, early termination, and reward labeling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geom2d import ReferencePath
from .world import DT, AgentState, WorldState

PRED_HORIZON_STEPS = 20  # 2 s at the simulation tick

EXECUTED = "executed"
RISKY_TERMINATED = "risky_terminated"
COLLIDED = "collided"


@dataclass(frozen=True)
class RssParams:
    """Loose preset: under-approximates strict RSS so only clearly dangerous
    situations trigger termination."""

    reaction_time: float = 0.3   # rho, s
    a_max: float = 2.0           # ego max accel during reaction, m/s^2
    b_min: float = 6.0           # ego comfortable/min braking, m/s^2
    b_max: float = 8.0           # other agent's max braking, m/s^2
    lateral_margin: float = 0.5  # m


@dataclass
class RiskVerdict:
    outcome: str                     # executed / risky_terminated / collided
    tick: int = -1                   # tick index within the decision step
    agent_id: int | None = None


def rss_longitudinal_min_gap(v_rear: float, v_front: float, params: RssParams) -> float:
    """Worst-case braking gap the rear vehicle must keep to the front one."""
    if v_rear < 0 or v_front < 0:
        raise ValueError("speeds must be nonnegative")
    rho, a, bm, bo = params.reaction_time, params.a_max, params.b_min, params.b_max
    gap = (v_rear * rho + 0.5 * a * rho ** 2
           + (v_rear + rho * a) ** 2 / (2.0 * bm)
           - v_front ** 2 / (2.0 * bo))
    return max(0.0, gap)


def predict_cv(agents: list[AgentState], horizon: int = PRED_HORIZON_STEPS
               ) -> dict[int, np.ndarray]:
    """Constant-velocity-and-heading extrapolation: id -> (horizon, 2) points."""
    out = {}
    steps = DT * np.arange(1, horizon + 1)
    for a in agents:
        d = np.array([math.cos(a.heading), math.sin(a.heading)]) * a.speed
        out[a.id] = a.position[None, :] + steps[:, None] * d[None, :]
    return out


class TrajectoryPredictor:
    """Per-tick short-term prediction of visible agents.

    mode "cv" extrapolates constant velocity; mode "learned" runs the trained
    predictor head on the agent's history polyline feature.
    """

    def __init__(self, mode: str = "cv", params=None, observer=None):
        if mode not in ("cv", "learned"):
            raise ValueError(f"unknown prediction mode {mode!r}")
        if mode == "learned" and params is None:
            raise ValueError("learned mode needs network parameters")
        self.mode = mode
        self.params = params
        self.observer = observer

    def predict(self, world: WorldState, visible: list[AgentState],
                batch=None) -> dict[int, np.ndarray]:
        if self.mode == "cv" or batch is None:
            return predict_cv(visible)
        from .net import encode, predictor_forward
        from .obs import KIND_AGENT, POS_SCALE, ego_frame

        ego = world.ego
        _, poly_feats = encode(batch, self.params)
        # agent polylines appear in insertion order; match visible order
        agent_rows = [i for i in range(len(batch.kinds))
                      if batch.poly_mask[i] and batch.kinds[i] == KIND_AGENT]
        out = {}
        c, s = math.cos(ego.heading), math.sin(ego.heading)
        rot = np.array([[c, -s], [s, c]])
        cv = predict_cv(visible)
        for agent, row in zip(visible, agent_rows):
            feat = poly_feats.value[row:row + 1]
            from .autodiff import constant
            offsets = predictor_forward(constant(feat), self.params).value / POS_SCALE
            base = ego_frame(ego.position, ego.heading, agent.position[None, :])[0]
            pts_ego = base[None, :] + np.cumsum(offsets, axis=0)
            out[agent.id] = pts_ego @ rot.T + ego.position
        for agent in visible:
            out.setdefault(agent.id, cv[agent.id])
        return out


def check_step(ego_plan: np.ndarray, ego_size: tuple[float, float],
               predictions: dict[int, np.ndarray],
               agents: dict[int, AgentState],
               path: ReferencePath, params: RssParams) -> int | None:
    """Risk check for the remainder of the current primitive.

    ego_plan: (k, 3) future [s, d, v] samples along the reference path at the
    tick spacing, truncated to min(remaining primitive, prediction horizon).
    Returns the violating agent id, or None when the remainder is safe.
    """
    k = min(len(ego_plan), PRED_HORIZON_STEPS)
    if k == 0:
        return None
    ego_len, ego_w = ego_size
    for aid, pred in predictions.items():
        agent = agents[aid]
        sd = path.to_frenet_batch(pred[:k])
        half_w = 0.5 * (ego_w + agent.width) + params.lateral_margin
        half_l = 0.5 * (ego_len + agent.length)
        tang = np.array([math.cos(agent.heading), math.sin(agent.heading)])
        # longitudinal speed of the agent along the ego path; receding clamps to 0
        v_front = max(0.0, agent.speed * float(
            np.dot(tang, _path_tangent(path, float(sd[0, 0])))))
        for j in range(k):
            s_a, d_a = sd[j]
            s_e, d_e, v_e = ego_plan[j]
            lat = abs(d_a - d_e)
            lon = s_a - s_e
            if lat < half_w and lon > 0:
                gap = lon - half_l
                if gap < rss_longitudinal_min_gap(max(0.0, v_e), v_front, params):
                    return aid
            if abs(lon) < half_l and lat - 0.5 * (ego_w + agent.width) < params.lateral_margin:
                return aid
    return None


def _path_tangent(path: ReferencePath, s: float) -> np.ndarray:
    h = path.heading_at(s)
    return np.array([math.cos(h), math.sin(h)])


def comfort_stop_profile(v0: float, b_min: float, n_ticks: int) -> np.ndarray:
    """Speeds for the next n_ticks while decelerating at b_min to zero."""
    v = np.maximum(0.0, v0 - b_min * DT * np.arange(1, n_ticks + 1))
    return v


@dataclass(frozen=True)
class RewardConfig:
    progress_weight: float = 0.1
    collision_penalty: float = -1.0
    success_bonus: float = 1.0
    failure_penalty: float = -1.0   # off-road / timeout
    ds_max: float = 15.0            # v_max * T_exec normalizer, set per config


def label_reward(verdict: RiskVerdict, delta_s: float, cfg: RewardConfig,
                 terminal: str | None = None) -> float:
    """Risk-aware step reward; terminal episode bonuses folded into the step."""
    if verdict.outcome == COLLIDED:
        return cfg.collision_penalty
    if verdict.outcome == RISKY_TERMINATED:
        return 0.0
    r = cfg.progress_weight * delta_s / cfg.ds_max
    if terminal == "success":
        r += cfg.success_bonus
    elif terminal in ("off_road", "timeout"):
        r += cfg.failure_penalty
    return r
