"""PPO at the primitive level: rollout collection over parallel env instances,
generalized advantage estimation, clipped-surrogate updates with alternating
actor/critic optimizers, checkpointing, and the curriculum progress signal."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, clip_grad_norm, constant, minimum
from .env import Env, EnvConfig
from .net import (PolicyParams, actor_forward, critic_forward, encode,
                  gaussian_entropy, policy_forward_np, predictor_forward,
                  stack_batches, trim)
from .obs import KIND_AGENT, POS_SCALE, ego_frame
from .smp import BoundaryEnd, map_action
from . import scenario as scn


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    lr_actor: float = 3e-4
    lr_critic: float = 1e-3
    epochs: int = 4
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    rollout_steps: int = 2048     # decision steps per batch, all envs combined
    n_envs: int = 8
    total_steps: int = 300_000
    checkpoint_every: int = 10    # iterations
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0 < self.clip_eps <= 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5]")
        if not (0 < self.gae_lambda <= 1 and 0 < self.gamma <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")


@dataclass
class Transition:
    obs: object
    raw_action: np.ndarray
    squashed: tuple[float, float]
    log_prob: float
    reward: float
    value: float
    done: bool
    verdict: str
    status: str
    speed: float
    snapshot: int
    advantage: float = 0.0
    ret: float = 0.0


class PpoNanError(RuntimeError):
    pass


def compute_gae(rewards, values, dones, gamma: float, lam: float):
    """delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t, accumulated with
    the exponential lambda weighting. `values` carries the bootstrap entry.

    Returns (advantages, returns); advantages are not normalized here.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    n = len(rewards)
    if len(values) != n + 1 or len(dones) != n:
        raise ValueError("length mismatch: need len(values) == len(rewards) + 1")
    adv = np.zeros(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterm = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t]
        acc = delta + gamma * lam * nonterm * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def collect_rollouts(params: PolicyParams, envs: list[Env], n_steps: int,
                     rngs: list[np.random.Generator], progress: float = 0.0,
                     deterministic: bool = False,
                     obs_cache: dict | None = None) -> list[list[Transition]]:
    """Run each env for n_steps decision steps; returns per-env transition lists.

    obs_cache maps env index -> current observation, letting episodes span
    collection phases without resetting.
    """
    out = []
    snapshot = params.snapshot
    for idx, env in enumerate(envs):
        rng = rngs[idx]
        obs = None if obs_cache is None else obs_cache.get(idx)
        if obs is None:
            obs = env.reset(progress=progress)
        transitions: list[Transition] = []
        for _ in range(n_steps):
            po = policy_forward_np(obs, params)
            raw = po.mu if deterministic else rng.normal(po.mu, po.sigma)
            end = map_action(raw, env.action_bounds)
            lp = _gauss_logp_np(raw, po.mu, po.sigma)
            res = env.step(end)
            transitions.append(Transition(
                obs, np.asarray(raw, dtype=float), (end.v_xe, end.d_ye), lp,
                res.reward, po.value, res.done, res.verdict.outcome, res.status,
                res.info["speed"], snapshot))
            obs = res.observation
            if res.done:
                obs = env.reset(progress=progress)
        if obs_cache is not None:
            obs_cache[idx] = obs
        out.append(transitions)
    return out


def _gauss_logp_np(raw, mu, sigma) -> float:
    z = (np.asarray(raw) - mu) / sigma
    return float(-0.5 * np.sum(z * z) - np.sum(np.log(sigma))
                 - 0.5 * len(mu) * math.log(2.0 * math.pi))


def bootstrap_values(params: PolicyParams, envs: list[Env],
                     rollouts: list[list[Transition]],
                     obs_cache: dict) -> list[float]:
    """State value of each env's current observation (0 after a terminal)."""
    vals = []
    for idx, transitions in enumerate(rollouts):
        if transitions and transitions[-1].done:
            vals.append(0.0)
        else:
            vals.append(policy_forward_np(obs_cache[idx], params).value)
    return vals


def _forward_batch(obs_list, params: PolicyParams):
    if params.grid_mode:
        grid = np.stack([o.reshape(-1) for o in obs_list])
        h = constant(grid)
        h = (h @ params["g_w1"] + params["g_b1"]).relu()
        return (h @ params["g_w2"] + params["g_b2"]).relu()
    stacked = stack_batches([trim(o) for o in obs_list])
    g, _ = encode(stacked, params)
    return g


def ppo_update(batch: list[Transition], params: PolicyParams, config: PpoConfig,
               optimizers: tuple[Adam, Adam] | None = None,
               rng: np.random.Generator | None = None) -> dict:
    """Clipped-surrogate actor update and value regression, alternating the two
    optimizers over shuffled minibatches. Mutates params in place."""
    rng = rng or np.random.default_rng(0)
    if optimizers is None:
        optimizers = (Adam(params.actor_params(), lr=config.lr_actor),
                      Adam(params.critic_params(), lr=config.lr_critic))
    opt_actor, opt_critic = optimizers

    obs = [t.obs for t in batch]
    raw = np.stack([t.raw_action for t in batch])
    old_lp = np.array([t.log_prob for t in batch])
    rewards = np.array([t.reward for t in batch])
    # GAE is computed per contiguous env segment by the caller; here the batch
    # already carries per-transition advantages/returns when present.
    adv = np.array([getattr(t, "advantage") for t in batch])
    ret = np.array([getattr(t, "ret") for t in batch])
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = len(batch)
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0, "n_minibatches": 0}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            mb_obs = [obs[i] for i in idx]

            # actor step
            g = _forward_batch(mb_obs, params)
            mu, sigma = actor_forward(g, params)
            a = constant(raw[idx])
            z = (a - mu) / sigma
            lp = (z.square() * -0.5 - sigma.log()).sum(axis=1) \
                - 0.5 * raw.shape[1] * math.log(2.0 * math.pi)
            ratio = (lp - constant(old_lp[idx])).exp()
            adv_c = constant(adv[idx])
            surr = minimum(ratio * adv_c,
                           ratio.clip(1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv_c)
            entropy = gaussian_entropy(sigma)
            actor_loss = -surr.mean() - config.entropy_coef * entropy
            if not np.isfinite(actor_loss.value).all():
                raise PpoNanError("NaN/inf in actor loss")
            params.zero_grad()
            actor_loss.backward()
            clip_grad_norm(opt_actor.params, config.max_grad_norm)
            opt_actor.step()

            # critic step (fresh forward after the actor step)
            g = _forward_batch(mb_obs, params)
            v = critic_forward(g, params).reshape(len(idx))
            critic_loss = (v - constant(ret[idx])).square().mean()
            if not np.isfinite(critic_loss.value).all():
                raise PpoNanError("NaN/inf in critic loss")
            params.zero_grad()
            critic_loss.backward()
            clip_grad_norm(opt_critic.params, config.max_grad_norm)
            opt_critic.step()

            stats["actor_loss"] += float(actor_loss.value)
            stats["critic_loss"] += float(critic_loss.value)
            stats["entropy"] += float(entropy.value)
            stats["n_minibatches"] += 1
    for key in ("actor_loss", "critic_loss", "entropy"):
        stats[key] /= max(1, stats["n_minibatches"])
    params.snapshot += 1
    return stats


def attach_advantages(rollouts: list[list[Transition]], boots: list[float],
                      gamma: float, lam: float) -> list[Transition]:
    """Compute GAE per env stream and flatten into one batch."""
    flat = []
    for transitions, boot in zip(rollouts, boots):
        rewards = [t.reward for t in transitions]
        dones = [t.done for t in transitions]
        values = [t.value for t in transitions] + [boot]
        adv, ret = compute_gae(rewards, values, dones, gamma, lam)
        for t, a, r in zip(transitions, adv, ret):
            t.advantage = float(a)
            t.ret = float(r)
            flat.append(t)
    return flat


@dataclass
class IterationStats:
    iteration: int
    steps: int
    mean_reward: float
    success_rate: float
    collision_rate: float
    risky_rate: float
    mean_speed: float
    actor_loss: float
    critic_loss: float
    entropy: float


def train(env_config: EnvConfig, ppo: PpoConfig, out_dir: str,
          seed: int = 0, predictor_params=None,
          log_every: int = 1, quiet: bool = False) -> PolicyParams:
    """Alternate rollout collection and PPO updates; writes training_curve.csv
    and periodic checkpoints under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    grid_mode = env_config.grid_obs
    params = PolicyParams(np.random.default_rng(seed), grid_mode=grid_mode)
    params.snapshot = 0
    envs = [Env(env_config, seed=seed * 1000 + i, predictor_params=predictor_params)
            for i in range(ppo.n_envs)]
    rngs = [np.random.default_rng(seed * 977 + 13 * i + 1) for i in range(ppo.n_envs)]
    update_rng = np.random.default_rng(seed + 424243)
    optimizers = (Adam(params.actor_params(), lr=ppo.lr_actor),
                  Adam(params.critic_params(), lr=ppo.lr_critic))
    obs_cache: dict = {}

    curve_path = os.path.join(out_dir, "training_curve.csv")
    with open(curve_path, "w", newline="") as fh:
        csv.writer(fh).writerow(
            ["iteration", "steps", "mean_reward", "success_rate",
             "collision_rate", "risky_rate", "mean_speed",
             "actor_loss", "critic_loss", "entropy"])

    steps_done = 0
    iteration = 0
    per_env = max(1, ppo.rollout_steps // ppo.n_envs)
    while steps_done < ppo.total_steps:
        progress = steps_done / ppo.total_steps
        rollouts = collect_rollouts(params, envs, per_env, rngs,
                                    progress=progress, obs_cache=obs_cache)
        boots = bootstrap_values(params, envs, rollouts, obs_cache)
        batch = attach_advantages(rollouts, boots, ppo.gamma, ppo.gae_lambda)
        steps_done += len(batch)
        iteration += 1
        try:
            ustats = ppo_update(batch, params, ppo, optimizers, update_rng)
        except PpoNanError as err:
            ustats = {"actor_loss": float("nan"), "critic_loss": float("nan"),
                      "entropy": float("nan")}
            if not quiet:
                print(f"iteration {iteration}: update aborted ({err})")

        terminals = [t for t in batch if t.done]
        n_term = max(1, len(terminals))
        stats = IterationStats(
            iteration, steps_done,
            mean_reward=float(np.mean([t.reward for t in batch])),
            success_rate=100.0 * sum(t.status == scn.SUCCESS for t in terminals) / n_term,
            collision_rate=100.0 * sum(t.status == scn.COLLISION for t in terminals) / n_term,
            risky_rate=100.0 * sum(t.verdict == "risky_terminated" for t in batch) / len(batch),
            mean_speed=float(np.mean([t.speed for t in batch])),
            actor_loss=ustats["actor_loss"], critic_loss=ustats["critic_loss"],
            entropy=ustats["entropy"])
        with open(curve_path, "a", newline="") as fh:
            csv.writer(fh).writerow([
                stats.iteration, stats.steps, f"{stats.mean_reward:.6f}",
                f"{stats.success_rate:.2f}", f"{stats.collision_rate:.2f}",
                f"{stats.risky_rate:.2f}", f"{stats.mean_speed:.3f}",
                f"{stats.actor_loss:.6f}", f"{stats.critic_loss:.6f}",
                f"{stats.entropy:.6f}"])
        if not quiet and iteration % log_every == 0:
            print(f"iter {iteration:4d} steps {steps_done:8d} "
                  f"reward {stats.mean_reward:+.4f} SR {stats.success_rate:5.1f}% "
                  f"CR {stats.collision_rate:5.1f}% risky {stats.risky_rate:4.1f}% "
                  f"v {stats.mean_speed:4.1f}", flush=True)
        if iteration % ppo.checkpoint_every == 0:
            params.save(os.path.join(out_dir, f"checkpoint_{iteration:05d}.npz"))
    params.save(os.path.join(out_dir, "checkpoint_final.npz"))
    return params


# ---------------------------------------------------------------------------
# prediction-model pretraining on auto-labeled rollout logs


def collect_prediction_data(env_config: EnvConfig, n_episodes: int = 20,
                            seed: int = 0, max_samples: int = 1500) -> list:
    """Roll episodes with a simple constant-speed ego and auto-label each
    visible agent-history polyline with the agent's ground-truth positions over
    the next 2 s, expressed as scaled ego-frame offsets.

    Returns (observation batch, agent polyline row, (20, 2) target) triples.
    Run with safety disabled so the ego keeps moving and exposure varies.
    """
    env = Env(env_config, seed=seed)
    rng = np.random.default_rng(seed + 7)
    samples = []
    for ep in range(n_episodes):
        obs = env.reset(progress=1.0, episode_seed=seed * 100_003 + ep)
        v_cmd = float(rng.uniform(3.0, 10.0))
        traj: dict[int, dict[float, tuple[float, float]]] = {}

        def pull():
            for a in env.world.traffic():
                for (x, y, _v, _psi, t) in env.world.history.recent(a.id, 40):
                    traj.setdefault(a.id, {})[round(t, 2)] = (x, y)

        pull()
        records = []
        done = False
        while not done:
            batch = obs
            vis = env.observer._visible_ids(env.world)
            ids = [a.id for a in env.world.traffic()
                   if a.active and a.id in vis]
            rows = [i for i in range(len(batch.kinds))
                    if batch.poly_mask[i] and batch.kinds[i] == KIND_AGENT]
            ego = env.world.ego
            records.append((env.world.time, batch, ids[:len(rows)], rows,
                            ego.position.copy(), ego.heading))
            res = env.step(BoundaryEnd(v_xe=v_cmd, d_ye=0.0))
            pull()
            obs = res.observation
            done = res.done

        for t0, batch, ids, rows, epos, ehead in records:
            for aid, row in zip(ids, rows):
                future = []
                for k in range(0, 21):
                    key = round(t0 + 0.1 * k, 2)
                    pt = traj.get(aid, {}).get(key)
                    if pt is None:
                        break
                    future.append(pt)
                if len(future) < 21:
                    continue
                pts_ego = ego_frame(epos, ehead, np.array(future))
                offsets = np.diff(pts_ego, axis=0)          # (20, 2)
                samples.append((batch, row, offsets * POS_SCALE))
    if len(samples) > max_samples:
        keep = rng.choice(len(samples), size=max_samples, replace=False)
        samples = [samples[i] for i in sorted(keep)]
    return samples


def pretrain_predictor(env_config: EnvConfig, n_episodes: int = 20,
                       seed: int = 0, epochs: int = 3, lr: float = 1e-3,
                       batch_size: int = 16, params: PolicyParams | None = None,
                       quiet: bool = True) -> tuple[PolicyParams, float]:
    """MSE regression of the predictor head (and its encoder trunk) on
    auto-labeled rollouts. Returns (params, final mean loss)."""
    data = collect_prediction_data(env_config, n_episodes, seed)
    if not data:
        raise RuntimeError("no prediction samples collected")
    if params is None:
        params = PolicyParams(np.random.default_rng(seed))
    opt = Adam(params.predictor_params(), lr=lr)
    rng = np.random.default_rng(seed + 99)
    last = float("nan")
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total, count = 0.0, 0
        for start in range(0, len(data), batch_size):
            idx = order[start:start + batch_size]
            params.zero_grad()
            loss = None
            for i in idx:
                batch, row, target = data[i]
                _, feats = encode(trim(batch), params)
                sel = np.zeros((1, feats.shape[0]))
                sel[0, row] = 1.0
                pred = predictor_forward(constant(sel) @ feats, params)
                term = (pred - constant(target)).square().mean()
                loss = term if loss is None else loss + term
            loss = loss * (1.0 / len(idx))
            loss.backward()
            opt.step()
            total += float(loss.value)
            count += 1
        last = total / max(1, count)
        if not quiet:
            print(f"predictor epoch {epoch}: loss {last:.6f}", flush=True)
    return params, last


def prediction_ade(params: PolicyParams, data: list) -> float:
    """Average displacement error (m) of the predictor head on a dataset."""
    errs = []
    for batch, row, target in data:
        _, feats = encode(trim(batch), params)
        sel = np.zeros((1, feats.shape[0]))
        sel[0, row] = 1.0
        pred = predictor_forward(constant(sel) @ feats, params).value
        p = np.cumsum(pred / POS_SCALE, axis=0)
        t = np.cumsum(target / POS_SCALE, axis=0)
        errs.append(float(np.mean(np.linalg.norm(p - t, axis=1))))
    return float(np.mean(errs))
