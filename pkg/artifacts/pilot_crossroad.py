"""Short pilot runs for ablation-arm design on the crossroad map."""
import sys

from occlusim import harness, rl

label = sys.argv[1]            # e.g. "texec_1.0" or "no_vr"
steps = int(sys.argv[2])
name = "texec_sweep" if label.startswith("texec") else label
preset = next(p for p in harness.ablation_preset(name, base_scenario="crossroad")
              if p["label"] == label)
cfg = harness.env_config_from_preset(preset)
out = f"artifacts/pilot_crossroad/{label}"
rl.train(cfg, rl.PpoConfig(total_steps=steps), out, seed=0)
