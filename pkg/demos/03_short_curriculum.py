"""
A short two-phase curriculum
============================

Train a small SAC agent on virtual paths, fine-tune it on the noisy logged
surrogate paths, then evaluate the best checkpoint on both tiers. The budget
is tiny so this finishes in a few minutes; the tracking is correspondingly
rough.
"""

import numpy as np

from tracklearn.geometry import SourceTag
from tracklearn.harness import EvalGrid, gap_ratio, run_grid
from tracklearn.learn.sac import SacConfig
from tracklearn.pipeline.paths import PathGenSpec, generate_virtual_paths
from tracklearn.pipeline.training import TrainConfig, run_curriculum
from tracklearn.vehicle import ModelTier

scenarios = generate_virtual_paths(PathGenSpec(), np.random.default_rng(0))
cfg = TrainConfig(variant="SAC-ST-RW", phase1_steps=15_000, phase2_steps=5000, stop_on_plateau=False,
                  sac=SacConfig(batch_size=64), seed=0)


def show(rec):
    print(f"step {rec.step:6d}  phase {rec.phase}  eval reward {rec.mean_eval_reward:.3f}  alpha {rec.alpha:.4f}")


res = run_curriculum(cfg, scenarios, on_eval=show)
print(f"reward change at the data switch: {res.log.dip:+.3f}")

# Deterministic evaluation of the final best checkpoint, and the transfer gap.
grid = EvalGrid([("sac", res.agent)], scenarios.select(SourceTag.VIRTUAL, "eval"), init_deviations=(-0.5, 0.0, 0.5))
st, hf = run_grid(grid, ModelTier.ST), run_grid(grid, ModelTier.HF)
for rep in (st, hf):
    c = rep.policies["sac"]
    print(f"[{rep.tier}] mean |eps_d| {c.mean_abs:.3f} m, completion {rep.completion_rate():.0%}")
for (_, path), g in gap_ratio(hf, st).ratios.items():
    print(f"gap ratio {path:28s} {g.value:.2f}")
