import sys
sys.path.insert(0, "tests")
from test_acceptance import _arm_preset, ABLATION_ARMS, ABLATION_BUDGET, ABLATE_DIR
from occlusim import harness, rl

for label in ABLATION_ARMS:
    out = ABLATE_DIR / label
    if (out / "checkpoint_final.npz").exists():
        print(f"{label}: already trained", flush=True)
        continue
    print(f"=== training {label} ===", flush=True)
    cfg = harness.env_config_from_preset(_arm_preset(label))
    rl.train(cfg, rl.PpoConfig(total_steps=ABLATION_BUDGET), str(out), seed=0)
