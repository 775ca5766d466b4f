"""Closed-loop episode environment: one decision step = executing a primitive
prefix of T_exec seconds with per-tick risk checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import scenario as scn
from .geom2d import segment_clear
from .obs import Observer, rasterize_observation
from .safety import (COLLIDED, EXECUTED, RISKY_TERMINATED, RewardConfig,
                     RiskVerdict, RssParams, TrajectoryPredictor, check_step,
                     label_reward)
from .smp import (ActionBounds, BoundaryEnd, BoundaryStart, clamp_to_feasible,
                  V_MAX)
from .world import DT, step as world_step

T_EXEC_DEFAULT = 1.0


@dataclass
class EnvConfig:
    scenario: scn.ScenarioConfig
    t_exec: float = T_EXEC_DEFAULT
    safety_enabled: bool = True
    include_vr: bool = True
    grid_obs: bool = False
    prediction_mode: str = "cv"
    rss: RssParams = field(default_factory=RssParams)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if not 0 < self.t_exec < 3.0:
            raise ValueError("t_exec must lie in (0, T)")


@dataclass
class StepResult:
    observation: object
    reward: float
    done: bool
    status: str                 # running / success / collision / timeout / off_road
    verdict: RiskVerdict
    delta_s: float
    info: dict


class Env:
    """Single scenario instance. Deterministic given seed and action stream."""

    def __init__(self, config: EnvConfig, seed: int = 0,
                 predictor_params=None):
        self.config = config
        self.base_seed = seed
        self.observer = Observer(sensor_range=config.scenario.sensor_range,
                                 n_rays=config.scenario.n_rays,
                                 include_vr=config.include_vr)
        self.predictor = TrajectoryPredictor(
            config.prediction_mode, params=predictor_params)
        self.reward_cfg = RewardConfig(
            progress_weight=config.reward.progress_weight,
            collision_penalty=config.reward.collision_penalty,
            success_bonus=config.reward.success_bonus,
            failure_penalty=config.reward.failure_penalty,
            ds_max=V_MAX * config.t_exec)
        self._episode = -1
        self.scenario: scn.Scenario | None = None

    # -- lifecycle ----------------------------------------------------------

    def reset(self, mode: str | None = None, progress: float = 0.0,
              episode_seed: int | None = None):
        self._episode += 1
        seed = episode_seed if episode_seed is not None else (
            self.base_seed * 100_003 + self._episode)
        self.rng = np.random.default_rng(seed)
        cfg = self.config.scenario
        built_cfg = scn.ScenarioConfig.from_json({**cfg.to_json(), "seed": seed})
        self.scenario = scn.build(built_cfg)
        self.world = self.scenario.world
        plan = scn.spawn_hidden_agents(self.scenario, progress, self.rng, mode=mode)
        assignments = scn.apply_spawn_plan(self.world, plan)
        # pre-placed traffic (e.g. the truck) keeps its initial speed as target
        extra = {a.id: a.speed for a in self.world.traffic()
                 if a.id not in assignments}
        self.controller = scn.TrafficController(assignments, extra)
        ego = self.world.ego
        s0, d0 = self.scenario.ego_path.to_frenet(ego.position)
        self.ego_state = BoundaryStart(s0, ego.speed, 0.0, d0, 0.0, 0.0)
        self.action_bounds = ActionBounds(
            v_lo=0.0, v_hi=V_MAX,
            d_lo=self.scenario.d_bounds[0], d_hi=self.scenario.d_bounds[1])
        self.exposed: dict[int, list[tuple]] = {}
        self.status = scn.RUNNING
        self.decision_index = 0
        self.world.record_history()
        self._update_exposure()
        return self.observe()

    def observe(self):
        vr = self.observer.visible_region(self.world)
        self._vr = vr
        visible = {a.id for a in self._visible_agents()}
        if self.config.grid_obs:
            self._last_batch = None
            return rasterize_observation(self.world, vr, visible_ids=visible)
        self._last_batch = self.observer.build(self.world, vr, self.exposed,
                                               visible_ids=visible)
        return self._last_batch

    @property
    def visible_region(self):
        return self._vr

    # -- per-tick helpers ---------------------------------------------------

    def _visible_agents(self):
        ego = self.world.ego
        occs = self.world.static_occluders
        out = []
        for a in self.world.traffic():
            if not a.active:
                continue
            rel = a.position - ego.position
            if float(rel @ rel) > self.observer.sensor_range ** 2:
                continue
            blockers = [o.occluder() for o in self.world.traffic()
                        if o.active and o.id != a.id]
            if segment_clear(ego.position, a.position, occs + blockers):
                out.append(a)
        return out

    def _update_exposure(self):
        visible = {a.id for a in self._visible_agents()}
        t = self.world.time
        for a in self.world.traffic():
            if a.id in visible:
                self.exposed.setdefault(a.id, []).append(
                    (a.x, a.y, a.speed, a.heading, t))
                if len(self.exposed[a.id]) > 40:
                    del self.exposed[a.id][0]
            elif a.id in self.exposed:
                del self.exposed[a.id]  # visibility streak broken

    def _ego_pose_from_frenet(self, s, d, sd, dd, prev_heading):
        path = self.scenario.ego_path
        pos = path.from_frenet(s, d)
        h_path = path.heading_at(s)
        speed = math.hypot(sd, dd)
        if speed > 0.5:
            # slip angle capped at ~20 deg: steering geometry bounds yaw
            # relative to the path tangent, and the footprint stays within the
            # road band even at a lane-edge center position
            offset = math.atan2(dd, max(sd, 1e-6))
            heading = h_path + max(-0.35, min(0.35, offset))
        else:
            heading = prev_heading
        return float(pos[0]), float(pos[1]), heading, float(speed)

    # -- decision step ------------------------------------------------------

    def step(self, end: BoundaryEnd) -> StepResult:
        if self.status != scn.RUNNING:
            raise RuntimeError("episode is terminal; call reset()")
        cfg = self.config
        prim, end = clamp_to_feasible(self.ego_state, end, self.action_bounds)
        n_exec = int(round(cfg.t_exec / DT))
        samples = prim.samples()           # (31, 7): tau, s, s', s'', d, d', d''
        ego = self.world.ego
        s_begin = self.ego_state.d_xs
        verdict = RiskVerdict(EXECUTED)
        stop_speeds = None
        stop_state = None
        path = self.scenario.ego_path
        agent_map = {a.id: a for a in self.world.agents}

        for i in range(n_exec):
            if cfg.safety_enabled and stop_speeds is None:
                visible = self._visible_agents()
                if visible:
                    preds = self.predictor.predict(self.world, visible,
                                                   batch=self._last_batch)
                    horizon = min(len(samples) - 1 - i, 20)
                    plan = np.stack([samples[i + 1:i + 1 + horizon, 1],
                                     samples[i + 1:i + 1 + horizon, 4],
                                     samples[i + 1:i + 1 + horizon, 2]], axis=1)
                    bad = check_step(plan, (ego.length, ego.width), preds,
                                     agent_map, path, cfg.rss)
                    if bad is not None:
                        verdict = RiskVerdict(RISKY_TERMINATED, tick=i, agent_id=bad)
                        v0 = math.hypot(samples[i, 2], samples[i, 5])
                        n_rem = n_exec - i
                        stop_speeds = np.maximum(
                            0.0, v0 - cfg.rss.b_min * DT * np.arange(1, n_rem + 1))
                        stop_state = [samples[i, 1], samples[i, 4]]  # s, d frozen

            if stop_speeds is None:
                row = samples[i + 1]
                pose = self._ego_pose_from_frenet(row[1], row[4], row[2], row[5],
                                                  ego.heading)
            else:
                v = stop_speeds[i - verdict.tick]
                stop_state[0] += v * DT
                pose = self._ego_pose_from_frenet(stop_state[0], stop_state[1],
                                                  v, 0.0, ego.heading)
            commands = self.controller.commands(self.world)
            world_step(self.world, pose, commands)
            self._update_exposure()
            status = scn.episode_status(self.scenario)
            if status != scn.RUNNING:
                self.status = status
                if status == scn.COLLISION:
                    verdict = RiskVerdict(COLLIDED, tick=i)
                break

        # boundary state for the next decision step (C2 chaining)
        if stop_speeds is None:
            executed = min(n_exec, i + 1) if self.status != scn.RUNNING else n_exec
            self.ego_state = prim.state_at(executed * DT)
        else:
            v_end = self.world.ego.speed
            self.ego_state = BoundaryStart(stop_state[0], v_end,
                                           -cfg.rss.b_min if v_end > 0 else 0.0,
                                           stop_state[1], 0.0, 0.0)

        delta_s = self.ego_state.d_xs - s_begin
        terminal = self.status if self.status != scn.RUNNING else None
        reward = label_reward(verdict, delta_s, self.reward_cfg, terminal)
        self.decision_index += 1
        obs = self.observe() if self.status == scn.RUNNING else None
        return StepResult(obs, reward, self.status != scn.RUNNING, self.status,
                          verdict, delta_s,
                          {"t": self.world.time, "speed": self.world.ego.speed})
