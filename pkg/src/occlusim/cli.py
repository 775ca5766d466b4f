"""Command-line entry point: train, eval, ablate, replay."""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import harness, rl, scenario as scn
from .env import EnvConfig

SCENARIOS = tuple(scn.MODES)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _env_config(args, cfg: dict, policy: str | None = None) -> EnvConfig:
    scen_over = dict(cfg.get("scenario", {}))
    scen_cfg = scn.ScenarioConfig.default_for(args.scenario)
    if scen_over:
        scen_cfg = scn.ScenarioConfig.from_json({**scen_cfg.to_json(), **scen_over})
    env_over = dict(cfg.get("env", {}))
    if policy is not None:
        env_over.setdefault("safety_enabled", policy == "padai")
    return EnvConfig(scenario=scen_cfg, **env_over)


def cmd_train(args):
    cfg = _load_config(args.config)
    env_config = _env_config(args, cfg)
    ppo = rl.PpoConfig(**cfg.get("ppo", {}))
    if args.steps is not None:
        ppo.total_steps = args.steps
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "run_config.json"), "w") as fh:
        json.dump({"scenario": env_config.scenario.to_json(),
                   "env": cfg.get("env", {}), "ppo": vars(ppo),
                   "seed": args.seed}, fh, indent=2)
    rl.train(env_config, ppo, args.out, seed=args.seed)
    print(f"final checkpoint: {os.path.join(args.out, 'checkpoint_final.npz')}")


def cmd_eval(args):
    cfg = _load_config(args.config)
    env_config = _env_config(args, cfg, policy=args.policy)
    policy = harness.make_policy(args.policy, checkpoint=args.checkpoint)
    summary, records = harness.evaluate(policy, env_config,
                                        n_episodes=args.episodes,
                                        seed_base=args.seed)
    os.makedirs(args.out, exist_ok=True)
    harness.export_metrics_csv([summary], os.path.join(args.out, "metrics.csv"))
    harness.export_latency_report([summary], os.path.join(args.out, "latency.json"))
    harness.export_episodes_jsonl(records, os.path.join(args.out, "episodes.jsonl"))
    print(f"{summary.scenario}/{summary.policy}: "
          f"SR {summary.success_rate:.1f}% CR {summary.collision_rate:.1f}% "
          f"speed {summary.mean_speed:.2f} m/s "
          f"latency mean {summary.mean_latency_ms:.1f} ms "
          f"p95 {summary.p95_latency_ms:.1f} ms")
    print(f"wrote metrics.csv, latency.json, episodes.jsonl under {args.out}")


def cmd_ablate(args):
    presets = harness.ablation_preset(args.name, base_scenario=args.scenario)
    os.makedirs(args.out, exist_ok=True)
    cfg = _load_config(args.config)
    for preset in presets:
        run_dir = os.path.join(args.out, preset["label"])
        if args.train:
            env_config = harness.env_config_from_preset(preset)
            ppo = rl.PpoConfig(**cfg.get("ppo", {}))
            if args.steps is not None:
                ppo.total_steps = args.steps
            rl.train(env_config, ppo, run_dir, seed=args.seed)
        else:
            os.makedirs(run_dir, exist_ok=True)
            with open(os.path.join(run_dir, "preset.json"), "w") as fh:
                json.dump(preset, fh, indent=2)
        print(f"{preset['label']}: {run_dir}")


def cmd_replay(args):
    records = harness.load_episodes_jsonl(args.records)
    if not 0 <= args.index < len(records):
        sys.exit(f"episode index {args.index} out of range (0..{len(records) - 1})")
    harness.replay_to_csv(records[args.index], args.out)
    rec = records[args.index]
    print(f"episode {args.index} ({rec.scenario}/{rec.mode}, {rec.outcome}) "
          f"-> {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occlusim")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the learned policy with PPO")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--config", help="JSON config with env/ppo/scenario overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, help="override total environment steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation of a policy")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--policy", choices=harness.POLICY_NAMES, required=True)
    p.add_argument("--checkpoint", help="policy checkpoint (.npz), padai only")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON config with env/scenario overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="emit or train ablation configurations")
    p.add_argument("--name", required=True,
                   choices=("no_vr", "texec_sweep", "no_safety", "grid_obs"))
    p.add_argument("--scenario", choices=SCENARIOS, default="overtake")
    p.add_argument("--config", help="JSON config with ppo overrides")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--train", action="store_true",
                   help="train each configuration instead of just writing it")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("replay", help="re-render a logged episode to CSV")
    p.add_argument("--records", required=True, help="episodes.jsonl from eval")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
