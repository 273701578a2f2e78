"""
Error frame and the reference controller
========================================

Generate the bundled scenario set, run the path-reading reference
controller over the evaluation grid on both tiers, and print the table.
"""

import numpy as np

from tracklearn.geometry import SourceTag
from tracklearn.harness import EvalGrid, TangentOracle, run_episode, run_grid
from tracklearn.pipeline.paths import PathGenSpec, generate_virtual_paths
from tracklearn.vehicle import ModelTier

scenarios = generate_virtual_paths(PathGenSpec(), np.random.default_rng(0))
evals = scenarios.select(SourceTag.VIRTUAL, "eval")
print(f"{len(scenarios)} scenarios, {len(evals)} virtual eval paths")

# One episode started 1 m left of the path: the deviation decays to centimetres.
path = evals[4].buffer
devs, rewards, reason, _ = run_episode(TangentOracle(), path, 1.0, ModelTier.HF)
print(f"{evals[4].name}: |eps_d| at 0 s {devs[0]:.2f} m, at 2.5 s {devs[50]:.3f} m, "
      f"end reason {reason.value}, mean reward {rewards.mean():.3f}")

# The full 8 path x 7 deviation grid on each tier.
grid = EvalGrid([("oracle", TangentOracle())], evals)
for tier in (ModelTier.ST, ModelTier.HF):
    rep = run_grid(grid, tier)
    print(f"[{tier.value}]")
    for (_, name), c in rep.cells.items():
        print(f"  {name:28s} mean {100 * c.mean_abs:5.2f} cm  max {100 * c.max_abs:6.2f} cm")
