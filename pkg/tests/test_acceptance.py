"""Acceptance suite: one test per criterion, each printing a single
pass/fail line. Training-dependent criteria use checkpoints under artifacts/
when present and train them in place otherwise (same budgets either way)."""

import csv

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from occlusim import harness, rl, scenario as scn
from occlusim.autodiff import constant, minimum
from occlusim.env import Env, EnvConfig
from occlusim.geom2d import visibility_polygon
from occlusim.net import (HIDDEN, PolicyParams, actor_forward, critic_forward,
                          encode, gaussian_entropy, gaussian_log_prob,
                          predictor_forward)
from occlusim.safety import RssParams, rss_longitudinal_min_gap
from occlusim.smp import (BoundaryEnd, BoundaryStart, T_PRIMITIVE,
                          solve_primitive)

from helpers import dense_ray_visible_area, random_layout
from test_net import random_batch
from test_rl import synthetic_batch

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts"
TINT_DIR = ARTIFACTS / "train_t_intersection"
ABLATE_DIR = ARTIFACTS / "ablate"
TINT_BUDGET = 120_000
ABLATION_BUDGET = 100_000
EVAL_EPISODES = 100


def report(num, ok, detail):
    line = f"ACCEPTANCE {num:2d} [{'PASS' if ok else 'FAIL'}] {detail}"
    print("\n" + line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared heavy fixtures (module scope: each evaluation runs once)


def _evaluate(policy_name, kind, checkpoint=None, t_exec=1.0,
              episodes=EVAL_EPISODES, seed_base=0):
    cfg = harness.env_config_for(policy_name,
                                 scn.ScenarioConfig.default_for(kind),
                                 t_exec=t_exec)
    policy = harness.make_policy(policy_name, checkpoint=checkpoint)
    summary, records = harness.evaluate(policy, cfg, n_episodes=episodes,
                                        seed_base=seed_base,
                                        record_ticks=False)
    return summary, records


@pytest.fixture(scope="module")
def baseline_evals():
    out = {}
    for policy in ("blind", "rsa"):
        for kind in ("overtake", "t_intersection", "crossroad"):
            out[(policy, kind)] = _evaluate(policy, kind)[0]
    return out


def _ensure_tint_checkpoint():
    ckpt = TINT_DIR / "checkpoint_final.npz"
    if not ckpt.exists():
        cfg = EnvConfig(scenario=scn.ScenarioConfig.default_for("t_intersection"))
        rl.train(cfg, rl.PpoConfig(total_steps=TINT_BUDGET), str(TINT_DIR),
                 seed=0, quiet=True)
    return ckpt


@pytest.fixture(scope="module")
def tint_policy_eval():
    ckpt = _ensure_tint_checkpoint()
    return _evaluate("padai", "t_intersection", checkpoint=str(ckpt))


ABLATION_ARMS = ("texec_1.0", "texec_0.1", "no_vr", "no_safety")


def _arm_preset(label):
    for name in ("texec_sweep", "no_vr", "no_safety"):
        for preset in harness.ablation_preset(name, base_scenario="overtake"):
            if preset["label"] == label:
                return preset
    raise KeyError(label)


def _ensure_ablation_checkpoints():
    out = {}
    for label in ABLATION_ARMS:
        ckpt = ABLATE_DIR / label / "checkpoint_final.npz"
        if not ckpt.exists():
            cfg = harness.env_config_from_preset(_arm_preset(label))
            rl.train(cfg, rl.PpoConfig(total_steps=ABLATION_BUDGET),
                     str(ABLATE_DIR / label), seed=0, quiet=True)
        out[label] = ckpt
    return out


@pytest.fixture(scope="module")
def ablation_evals():
    ckpts = _ensure_ablation_checkpoints()
    out = {}
    for label in ABLATION_ARMS:
        preset = _arm_preset(label)
        cfg = harness.env_config_from_preset(preset)
        policy = harness.make_policy("padai", checkpoint=str(ckpts[label]))
        out[label], _ = harness.evaluate(policy, cfg,
                                         n_episodes=EVAL_EPISODES,
                                         seed_base=0, record_ticks=False)
    return out


# ---------------------------------------------------------------------------
# 1. visibility-polygon oracle, monotonicity, runtime


def test_criterion_01_visibility_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    monotone = True
    for _ in range(50):
        ego, occluders, sensor_range = random_layout(rng)
        vis = visibility_polygon(ego, occluders, sensor_range, n_rays=720)
        oracle = dense_ray_visible_area(ego, occluders, sensor_range,
                                        n_rays=100_000)
        worst = max(worst, abs(vis.area - oracle) / oracle)
        if len(occluders) > 1:
            fewer = visibility_polygon(ego, occluders[:-1], sensor_range,
                                       n_rays=720)
            monotone &= vis.area <= fewer.area + 1e-9

    ego, occluders, sensor_range = random_layout(rng, n_occ=4)
    times = []
    for _ in range(30):
        t0 = time.perf_counter()
        visibility_polygon(ego, occluders, sensor_range, n_rays=720)
        times.append(time.perf_counter() - t0)
    ms = 1000.0 * float(np.median(times))
    report(1, worst <= 0.005 and monotone and ms < 5.0,
           f"visibility area err {100 * worst:.3f}% (<=0.5%), "
           f"monotone={monotone}, median {ms:.2f} ms/polygon (<5)")


# ---------------------------------------------------------------------------
# 2. primitive boundary conditions, C2 concatenation, symmetry


def test_criterion_02_primitives():
    rng = np.random.default_rng(7)

    def rand_start():
        return BoundaryStart(float(rng.uniform(-50, 50)),
                             float(rng.uniform(0, 15)),
                             float(rng.uniform(-4, 4)),
                             float(rng.uniform(-3.5, 3.5)),
                             float(rng.uniform(-2, 2)),
                             float(rng.uniform(-3, 3)))

    def rand_end():
        return BoundaryEnd(v_xe=float(rng.uniform(0, 15)),
                           d_ye=float(rng.uniform(-3.5, 3.5)))

    T = T_PRIMITIVE
    worst_bc = 0.0
    for _ in range(10_000):
        s, e = rand_start(), rand_end()
        p = solve_primitive(s, e)
        worst_bc = max(
            worst_bc,
            abs(p.lon(0.0) - s.d_xs), abs(p.lon_d(0.0) - s.v_xs),
            abs(p.lon_dd(0.0) - s.a_xs), abs(p.lat(0.0) - s.d_ys),
            abs(p.lat_d(0.0) - s.v_ys), abs(p.lat_dd(0.0) - s.a_ys),
            abs(p.lon_d(T) - e.v_xe), abs(p.lat(T) - e.d_ye))

    worst_c2 = 0.0
    for _ in range(200):
        p1 = solve_primitive(rand_start(), rand_end())
        p2 = solve_primitive(p1.state_at(T), rand_end())
        for attr in ("lon", "lon_d", "lon_dd", "lat", "lat_d", "lat_dd"):
            worst_c2 = max(worst_c2, abs(float(getattr(p1, attr)(T))
                                         - float(getattr(p2, attr)(0.0))))

    p = solve_primitive(BoundaryStart(0, 0, 0, 0, 0, 0),
                        BoundaryEnd(v_xe=0.0, d_ye=3.5))
    sym = abs(p.lat(T / 2) - 1.75)
    for f in np.linspace(0.0, 0.5, 21):
        sym = max(sym, abs((p.lat(T / 2 + f * T) - 1.75)
                           + (p.lat(T / 2 - f * T) - 1.75)))
    report(2, worst_bc < 1e-9 and worst_c2 < 1e-6 and sym < 1e-9,
           f"10k boundary err {worst_bc:.2e} (<1e-9), "
           f"C2 err {worst_c2:.2e} (<1e-6), symmetry err {sym:.2e} (<1e-9)")


# ---------------------------------------------------------------------------
# 3. finite-difference gradient suite, 20 seeds, every layer


def test_criterion_03_gradient_suite():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        params = PolicyParams(rng)
        b = random_batch(rng, n_poly=3, n_node=4)
        a = rng.normal(size=2)
        adv = float(rng.normal())
        ret = float(rng.normal())

        def loss_value():
            g, per = encode(b, params)
            mu, sigma = actor_forward(g, params)
            v = critic_forward(g, params)
            pred = predictor_forward(per.mean(axis=0).reshape(1, HIDDEN),
                                     params)
            actor = gaussian_log_prob(a, mu, sigma) * adv \
                + gaussian_entropy(sigma) * 0.01
            critic = (v - ret).square().sum()
            return actor + critic + pred.square().sum() * 0.01

        loss = loss_value()
        params.zero_grad()
        loss.backward()
        for name, t in params.tensors.items():
            flat = t.value.reshape(-1)
            gflat = np.zeros_like(flat) if t.grad is None \
                else t.grad.reshape(-1)
            idx = rng.choice(flat.size, size=min(3, flat.size), replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + 1e-4
                fp = float(loss_value().value)
                flat[i] = orig - 1e-4
                fm = float(loss_value().value)
                flat[i] = orig
                fd = (fp - fm) / 2e-4
                denom = max(abs(gflat[i]), abs(fd), 1e-3)
                worst = max(worst, abs(gflat[i] - fd) / denom)
    report(3, worst < 1e-3,
           f"worst relative gradient error {worst:.2e} over 20 seeds, "
           "all layers + composed actor/critic/predictor loss (<1e-3)")


# ---------------------------------------------------------------------------
# 4. GAE hand recursion, clip branch, critic descent


def test_criterion_04_gae_ppo_oracles():
    adv, ret = rl.compute_gae([1.0, 1.0, 1.0], [0.0] * 4, [False] * 3,
                              0.99, 0.95)
    want = [1.0 + 0.9405 * (1.0 + 0.9405), 1.0 + 0.9405, 1.0]
    gae_err = float(np.max(np.abs(np.asarray(adv) - want)))

    ratio, a = constant(np.array([2.0])), constant(np.array([3.0]))
    surr = minimum(ratio * a, ratio.clip(0.8, 1.2) * a)
    clip_ok = abs(surr.value[0] - 1.2 * 3.0) < 1e-12
    r2, a2 = constant(np.array([0.5])), constant(np.array([-3.0]))
    surr2 = minimum(r2 * a2, r2.clip(0.8, 1.2) * a2)
    clip_ok &= abs(surr2.value[0] - 0.8 * -3.0) < 1e-12

    rng = np.random.default_rng(11)
    params = PolicyParams(rng)
    batch = synthetic_batch(params, rng)
    cfg = rl.PpoConfig(epochs=1, minibatch_size=len(batch), lr_critic=1e-3)
    s1 = rl.ppo_update(batch, params, cfg)
    s2 = rl.ppo_update(batch, params, cfg)
    descent = s2["critic_loss"] < s1["critic_loss"]
    report(4, gae_err < 1e-9 and clip_ok and descent,
           f"GAE hand-recursion err {gae_err:.2e} (<1e-9), clip branches ok, "
           f"critic loss {s1['critic_loss']:.4f} -> {s2['critic_loss']:.4f}")


# ---------------------------------------------------------------------------
# 5. RSS spot values, monotonicity, 1000 randomized zero-collision episodes


def test_criterion_05_safety_mechanism():
    strict = RssParams(reaction_time=0.5, a_max=2.0, b_min=4.0, b_max=6.0)
    spot = rss_longitudinal_min_gap(10.0, 0.0, strict)
    spot_err = abs(spot - 20.375)

    monotone = True
    for params in (strict, RssParams()):
        for v_front in (0.0, 5.0, 12.0):
            gaps = [rss_longitudinal_min_gap(v, v_front, params)
                    for v in np.linspace(0.0, 15.0, 31)]
            monotone &= all(b >= a for a, b in zip(gaps, gaps[1:]))

    cfg = EnvConfig(scenario=scn.ScenarioConfig.default_for("overtake"),
                    safety_enabled=True)
    env = Env(cfg, seed=0)
    rng = np.random.default_rng(123)
    collisions = risky = 0
    stops_obeyed = True
    for ep in range(1000):
        env.reset(progress=1.0, episode_seed=900_000 + ep)
        done = False
        while not done:
            t_before = env.world.time
            res = env.step(BoundaryEnd(v_xe=float(rng.uniform(0.0, 15.0)),
                                       d_ye=0.0))
            if res.verdict.outcome == "risky_terminated":
                risky += 1
                # from the verdict tick on, the comfort-stop profile may only
                # shed speed, never gain it
                ticks = [s for s in env.world.history.recent(0, 15)
                         if s[4] > t_before + 1e-9]
                speeds = [s[2] for s in ticks][res.verdict.tick:]
                stops_obeyed &= all(b <= a + 1e-9
                                    for a, b in zip(speeds, speeds[1:]))
            done = res.done
        if res.status == scn.COLLISION:
            collisions += 1
    report(5, spot_err < 1e-9 and monotone and collisions == 0
           and risky > 0 and stops_obeyed,
           f"spot 20.375 err {spot_err:.1e}, monotone={monotone}, "
           f"collisions {collisions}/1000, {risky} risky stops "
           f"(obeyed={stops_obeyed})")


# ---------------------------------------------------------------------------
# 6. baseline directional reproduction


def test_criterion_06_baseline_direction(baseline_evals):
    rsa_cr = {k: baseline_evals[("rsa", k)].collision_rate
              for k in ("overtake", "t_intersection", "crossroad")}
    speed_ordered = all(
        baseline_evals[("rsa", k)].mean_speed
        < baseline_evals[("blind", k)].mean_speed
        for k in ("overtake", "t_intersection", "crossroad"))
    blind_cr_x = baseline_evals[("blind", "crossroad")].collision_rate
    ok = all(v == 0.0 for v in rsa_cr.values()) and speed_ordered \
        and blind_cr_x > 20.0
    report(6, ok,
           f"RSA CR {tuple(rsa_cr.values())} (all 0), "
           f"RSA slower than blind on all maps: {speed_ordered}, "
           f"blind crossroad CR {blind_cr_x:.0f}% (>20%)")


# ---------------------------------------------------------------------------
# 7. learned-policy training outcome on the occluded T-intersection


def test_criterion_07_training_outcome(tint_policy_eval, baseline_evals):
    summary, _ = tint_policy_eval
    rsa_speed = baseline_evals[("rsa", "t_intersection")].mean_speed
    with open(TINT_DIR / "training_curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    sr_curve = [float(r["success_rate"]) for r in rows]
    q = max(1, len(sr_curve) // 4)
    improving = np.mean(sr_curve[-q:]) >= np.mean(sr_curve[:q])
    ok = summary.success_rate >= 90.0 and summary.collision_rate <= 5.0 \
        and summary.mean_speed > rsa_speed and improving
    report(7, ok,
           f"t-intersection SR {summary.success_rate:.0f}% (>=90), "
           f"CR {summary.collision_rate:.0f}% (<=5), speed "
           f"{summary.mean_speed:.2f} > RSA {rsa_speed:.2f}, "
           f"curve improving={improving} ({TINT_BUDGET} steps)")


# ---------------------------------------------------------------------------
# 8. ablation directions at identical budgets


def test_criterion_08_ablation_direction(ablation_evals):
    sr = {label: ablation_evals[label].success_rate
          for label in ABLATION_ARMS}
    full = sr["texec_1.0"]
    ok = (full - sr["no_vr"] >= 20.0
          and full >= sr["texec_0.1"]
          and full - sr["no_safety"] >= 10.0)
    report(8, ok,
           f"SR full {full:.0f}%, no_vr {sr['no_vr']:.0f}% (gap>=20), "
           f"texec_0.1 {sr['texec_0.1']:.0f}% (<=full), "
           f"no_safety {sr['no_safety']:.0f}% (gap>=10), "
           f"identical {ABLATION_BUDGET}-step budgets")


# ---------------------------------------------------------------------------
# 9. per-decision latency of the full learned pipeline


def test_criterion_09_decision_latency():
    ckpt = _ensure_tint_checkpoint()
    policy = harness.make_policy("padai", checkpoint=str(ckpt))
    cfg = harness.env_config_for("padai",
                                 scn.ScenarioConfig.default_for("t_intersection"))
    env = Env(cfg, seed=0)
    times = []
    for ep in range(3):
        obs = env.reset(mode="right", progress=1.0, episode_seed=50 + ep)
        done = False
        while not done:
            t0 = time.perf_counter()
            action = policy.act(env, obs)          # observe-encode-act
            res = env.step(action)                 # solve + safety + sim
            times.append(time.perf_counter() - t0)
            obs, done = res.observation, res.done
    mean_ms = 1000.0 * float(np.mean(times))
    report(9, mean_ms < 100.0,
           f"mean per-decision latency {mean_ms:.1f} ms over "
           f"{len(times)} decisions (<100 ms)")


# ---------------------------------------------------------------------------
# 10. fixed-seed eval reproduces the metrics CSV bit-for-bit


def test_criterion_10_determinism(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        proc = subprocess.run(
            [sys.executable, "-m", "occlusim.cli", "eval",
             "--scenario", "t_intersection", "--policy", "rsa",
             "--episodes", "5", "--seed", "2", "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append((out / "metrics.csv").read_bytes())
    report(10, outs[0] == outs[1],
           "fixed-seed eval metrics.csv bit-identical across two runs "
           f"({len(outs[0])} bytes)")
