"""Pilot runs for the matrix-game convergence checks, on seeds the tests never use.

Records, per seed, the greedy joint action reached by MAGRPO on the joint
utility and by independent learners on each reward decomposition, using the
fixed hyperparameters G=32, alpha=0.1, 500 episodes.

    python3 scripts/pilot_matrix_games.py --out scripts/pilots/matrix_games.json
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from magrpo_lab.envs import MATRIX_TASK, TABLE3, MatrixGameEnv
from magrpo_lab.envs.matrix import ACTIONS
from magrpo_lab.magrpo import TrainConfig, greedy_joint_action, train, train_independent

RUNS = {
    "magrpo_table3": ("table3", train),
    "independent_posg1": ("posg1", train_independent),
    "independent_posg2": ("posg2", train_independent),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs=2, default=(100, 120), metavar=("START", "STOP"))
    ap.add_argument("--out", default="scripts/pilots/matrix_games.json")
    args = ap.parse_args(argv)
    seeds = list(range(*args.seeds))
    record = {"pilot_seeds": seeds, "group_size": 32, "learning_rate": 0.1, "episodes": 500,
              "runs": {}}
    for name, (preset, trainer) in RUNS.items():
        env = MatrixGameEnv.preset(preset)
        t0 = time.perf_counter()
        per_seed = {}
        for seed in seeds:
            res = trainer(TrainConfig(32, 0.1, 500, seed=seed), lambda: env, (MATRIX_TASK,))
            i, j = greedy_joint_action(env, res.policies, MATRIX_TASK)
            per_seed[str(seed)] = {"greedy": [ACTIONS[i], ACTIONS[j]], "joint_utility": TABLE3[i][j]}
        optimal = sum(v["joint_utility"] == 10 for v in per_seed.values())
        record["runs"][name] = {"optimal_seeds": optimal, "seconds": round(time.perf_counter() - t0, 1),
                                "per_seed": per_seed}
        print(f"{name:<18} optimum (A1,A1) in {optimal}/{len(seeds)} pilot seeds")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(record, indent=1) + "\n")


if __name__ == "__main__":
    main()
