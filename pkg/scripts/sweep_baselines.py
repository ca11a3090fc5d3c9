"""Compare MAGRPO with the single-agent, sequential and untrained baselines on
the assembly task, over several seeds, through the experiment harness.

    python3 scripts/sweep_baselines.py --out runs/sweep --seeds 5 --horizon 1
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from magrpo_lab.harness import config_from_dict, evaluate, final_window_means, run_experiment

VARIANTS = {
    "magrpo": {"train": {"method": "magrpo"}},
    "single_agent": {"train": {"method": "single_agent"}},
    "sequential": {"env": {"sequential_mode": True}, "train": {"method": "magrpo"}},
    "untrained": {"train": {"method": "magrpo", "episodes": 0}},
}


def variant_config(name, seed, args):
    raw = {"seed": seed,
           "env": {"name": "coop_assembly", "horizon": args.horizon, "feedback": args.feedback},
           "train": {"group_size": args.group_size, "learning_rate": args.lr,
                     "episodes": args.episodes},
           "eval": {"samples": 20, "k": [1, 5]}}
    for section, values in VARIANTS[name].items():
        raw[section].update(values)
    return config_from_dict(raw)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/sweep")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--horizon", type=int, default=1)
    ap.add_argument("--feedback", default="guided")
    ap.add_argument("--group-size", type=int, default=16)
    ap.add_argument("--lr", type=float, default=8.0)
    ap.add_argument("--episodes", type=int, default=1000)
    args = ap.parse_args(argv)
    summary = {}
    for name in VARIANTS:
        finals, pass1 = [], []
        for seed in range(args.seeds):
            cfg = variant_config(name, seed, args)
            res = run_experiment(cfg, Path(args.out) / name / f"seed{seed}")
            if res.episodes:
                records = [json.loads(x) for x in res.log_path.read_text().splitlines()[1:]]
                finals.append(final_window_means(records)["total_return"])
            pass1.append(evaluate(res.checkpoint_path, cfg).pass_at_k[1])
        summary[name] = {"final_window_return": float(np.mean(finals)) if finals else None,
                         "pass@1": float(np.mean(pass1))}
        ret = summary[name]["final_window_return"]
        print(f"{name:<13} final-window return {'-' if ret is None else f'{ret:.3f}':>6}  "
              f"pass@1 {summary[name]['pass@1']:.3f}")
    (Path(args.out) / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
