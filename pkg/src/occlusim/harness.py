"""Closed-loop evaluation suites, metrics, episode logging, ablation presets,
and plot-ready exports."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .baselines import BlindPlanner, RsaPlanner
from .env import Env, EnvConfig
from .net import PolicyParams, policy_forward_np
from .smp import map_action
from . import scenario as scn

POLICY_NAMES = ("padai", "blind", "rsa")


@dataclass
class EpisodeRecord:
    seed: int
    scenario: str
    policy: str
    mode: str
    outcome: str
    duration: float
    mean_speed: float
    decisions: list = field(default_factory=list)   # per-decision dicts
    ticks: list = field(default_factory=list)       # per-tick dicts

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EpisodeRecord":
        return cls(**d)


@dataclass
class MetricsSummary:
    scenario: str
    policy: str
    episodes: int
    success_rate: float      # %
    collision_rate: float    # %
    timeout_rate: float      # %
    off_road_rate: float     # %
    mean_speed: float        # m/s over successful episodes
    mean_latency_ms: float
    p95_latency_ms: float

    def rates_sum(self) -> float:
        return (self.success_rate + self.collision_rate
                + self.timeout_rate + self.off_road_rate)


class LearnedPolicy:
    """Deterministic evaluation of a trained policy (action = squashed mean)."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def act(self, env, obs):
        po = policy_forward_np(obs, self.params)
        return map_action(po.mu, env.action_bounds)


class PlannerPolicy:
    def __init__(self, planner):
        self.planner = planner

    def act(self, env, obs):
        return self.planner.act(env)


def make_policy(name: str, checkpoint: str | None = None,
                params: PolicyParams | None = None):
    if name == "padai":
        if params is None:
            if checkpoint is None:
                raise ValueError("padai policy needs a checkpoint")
            params = PolicyParams.load(checkpoint)
        policy = LearnedPolicy(params)
    elif name == "blind":
        policy = PlannerPolicy(BlindPlanner())
    elif name == "rsa":
        policy = PlannerPolicy(RsaPlanner())
    else:
        raise ValueError(f"unknown policy {name!r}; expected one of {POLICY_NAMES}")
    policy.name = name
    return policy


def env_config_for(policy_name: str, scenario_cfg: scn.ScenarioConfig,
                   t_exec: float = 1.0, include_vr: bool = True,
                   safety: bool | None = None) -> EnvConfig:
    """Baselines implement their own caution, so the risk-termination
    mechanism is only active for the learned policy."""
    if safety is None:
        safety = policy_name == "padai"
    return EnvConfig(scenario=scenario_cfg, t_exec=t_exec,
                     safety_enabled=safety, include_vr=include_vr)


def stratified_modes(kind: str, n_episodes: int) -> list[str]:
    """Balanced mode assignment; per-mode counts differ by at most one."""
    modes = scn.MODES[kind]
    return [modes[i % len(modes)] for i in range(n_episodes)]


def evaluate(policy, env_config: EnvConfig, n_episodes: int = 100,
             seed_base: int = 0, record_ticks: bool = True,
             progress_spawn: float = 1.0,
             predictor_params=None) -> tuple[MetricsSummary, list[EpisodeRecord]]:
    """Run a deterministic evaluation suite with a balanced mode split."""
    kind = env_config.scenario.kind
    modes = stratified_modes(kind, n_episodes)
    env = Env(env_config, seed=seed_base, predictor_params=predictor_params)
    records = []
    policy_name = getattr(policy, "name", policy.__class__.__name__)
    for i in range(n_episodes):
        seed = seed_base * 100_003 + i
        obs = env.reset(mode=modes[i], progress=progress_spawn, episode_seed=seed)
        rec = EpisodeRecord(seed=seed, scenario=kind, policy=policy_name,
                            mode=modes[i], outcome="", duration=0.0, mean_speed=0.0)
        speeds = []
        done = False
        status = scn.RUNNING
        while not done:
            t0 = time.perf_counter()
            action = policy.act(env, obs)
            latency = (time.perf_counter() - t0) * 1000.0
            t_before = env.world.time
            res = env.step(action)
            rec.decisions.append({
                "t": t_before, "v_xe": action.v_xe, "d_ye": action.d_ye,
                "verdict": res.verdict.outcome, "reward": res.reward,
                "latency_ms": latency})
            if record_ticks:
                ego = env.world.ego
                rec.ticks.append({
                    "t": env.world.time, "x": ego.x, "y": ego.y,
                    "heading": ego.heading, "speed": ego.speed,
                    "agents": [[a.id, a.x, a.y, a.heading, a.speed]
                               for a in env.world.traffic() if a.active]})
            speeds.append(env.world.ego.speed)
            obs = res.observation
            done = res.done
            status = res.status
        rec.outcome = status
        rec.duration = env.world.time
        rec.mean_speed = float(np.mean(speeds)) if speeds else 0.0
        records.append(rec)

    n = len(records)
    outcomes = [r.outcome for r in records]
    succ = [r for r in records if r.outcome == scn.SUCCESS]
    lat = [d["latency_ms"] for r in records for d in r.decisions]
    summary = MetricsSummary(
        scenario=kind, policy=policy_name, episodes=n,
        success_rate=100.0 * outcomes.count(scn.SUCCESS) / n,
        collision_rate=100.0 * outcomes.count(scn.COLLISION) / n,
        timeout_rate=100.0 * outcomes.count(scn.TIMEOUT) / n,
        off_road_rate=100.0 * outcomes.count(scn.OFF_ROAD) / n,
        mean_speed=float(np.mean([r.mean_speed for r in succ])) if succ else 0.0,
        mean_latency_ms=float(np.mean(lat)) if lat else 0.0,
        p95_latency_ms=float(np.percentile(lat, 95)) if lat else 0.0)
    return summary, records


# ---------------------------------------------------------------------------
# ablation presets


def ablation_preset(name: str, base_scenario: str = "overtake") -> list[dict]:
    """Returns modified training-config descriptors for the named ablation.

    All arms share the same scenario overrides so budgets and tasks are
    identical across configurations. On the overtake map the leader truck is
    slowed below goal-range/timeout, so simply following it can never succeed
    and the policy is forced to decide when an occluded overtake is safe.
    """
    overrides = {"truck_speed_range": (2.0, 3.0)} if base_scenario == "overtake" else {}
    base = {"scenario": base_scenario, "t_exec": 1.0, "include_vr": True,
            "safety_enabled": True, "grid_obs": False,
            "scenario_overrides": overrides}
    if name == "no_vr":
        return [{**base, "label": "no_vr", "include_vr": False}]
    if name == "texec_sweep":
        return [{**base, "label": f"texec_{t}", "t_exec": t}
                for t in (0.1, 0.5, 1.0, 2.0)]
    if name == "no_safety":
        return [{**base, "label": "no_safety", "safety_enabled": False}]
    if name == "grid_obs":
        return [{**base, "label": "grid_obs", "grid_obs": True}]
    raise ValueError(f"unknown ablation {name!r}")


def env_config_from_preset(preset: dict) -> EnvConfig:
    scenario_cfg = scn.ScenarioConfig.default_for(preset["scenario"])
    overrides = preset.get("scenario_overrides") or {}
    if overrides:
        scenario_cfg = scn.ScenarioConfig.from_json(
            {**scenario_cfg.to_json(), **overrides})
    return EnvConfig(scenario=scenario_cfg, t_exec=preset["t_exec"],
                     safety_enabled=preset["safety_enabled"],
                     include_vr=preset["include_vr"],
                     grid_obs=preset["grid_obs"])


# ---------------------------------------------------------------------------
# export


def export_metrics_csv(summaries: list[MetricsSummary], path):
    """Table-layout CSV: one row per (scenario, policy) with SR, CR, Speed.

    Wall-clock latency is excluded so the file is bit-stable across runs;
    latency is reported via export_latency_report.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "policy", "success_rate", "collision_rate",
                    "speed"])
        for s in sorted(summaries, key=lambda s: (s.scenario, s.policy)):
            w.writerow([s.scenario, s.policy, f"{s.success_rate:.2f}",
                        f"{s.collision_rate:.2f}", f"{s.mean_speed:.3f}"])


def export_latency_report(summaries: list[MetricsSummary], path):
    with open(path, "w") as fh:
        json.dump([{"scenario": s.scenario, "policy": s.policy,
                    "mean_latency_ms": s.mean_latency_ms,
                    "p95_latency_ms": s.p95_latency_ms} for s in summaries],
                  fh, indent=2)


def export_episodes_jsonl(records: list[EpisodeRecord], path):
    records = sorted(records, key=lambda r: r.seed)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def load_episodes_jsonl(path) -> list[EpisodeRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(EpisodeRecord.from_json(json.loads(line)))
    return out


def replay_to_csv(record: EpisodeRecord, path):
    """Re-render an episode record to a per-tick CSV for external plotting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "heading", "speed", "n_agents"])
        for tick in record.ticks:
            w.writerow([tick["t"], tick["x"], tick["y"], tick["heading"],
                        tick["speed"], len(tick["agents"])])
