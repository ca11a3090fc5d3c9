"""Equilibrium analysis of the cooperative matrix game and its two decompositions,
followed by a learning comparison over seeds.

    python3 scripts/appendix_analysis.py [--seeds 20]
"""
from __future__ import annotations

import argparse
from collections import Counter

from magrpo_lab.envs import MATRIX_TASK, TABLE3, MatrixGameEnv
from magrpo_lab.envs.matrix import ACTIONS
from magrpo_lab.harness import analyze_game, config_from_dict
from magrpo_lab.magrpo import TrainConfig, greedy_joint_action, train, train_independent


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args(argv)
    for preset in ("posg1", "posg2"):
        print(f"== {preset} ==")
        print(analyze_game(config_from_dict({"env": {"name": "matrix", "preset": preset}}))
              .format_table())
        print()
    print("== greedy joint action after training (G=32, alpha=0.1, 500 episodes) ==")
    for label, preset, trainer in (("MAGRPO, joint reward", "table3", train),
                                   ("independent, posg1", "posg1", train_independent),
                                   ("independent, posg2", "posg2", train_independent)):
        env = MatrixGameEnv.preset(preset)
        outcomes = Counter()
        for seed in range(args.seeds):
            res = trainer(TrainConfig(32, 0.1, 500, seed=seed), lambda: env, (MATRIX_TASK,))
            i, j = greedy_joint_action(env, res.policies, MATRIX_TASK)
            outcomes[(ACTIONS[i], ACTIONS[j], TABLE3[i][j])] += 1
        summary = ", ".join(f"({a}, {b}) -> {u:g}: {n}" for (a, b, u), n in sorted(outcomes.items()))
        print(f"{label:<22} {summary}")


if __name__ == "__main__":
    main()
