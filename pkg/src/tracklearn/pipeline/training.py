"""Two-phase curriculum: pretrain on virtual paths, fine-tune on logged ones.

A :class:`Trainer` owns every piece of mutable training state (agent,
replay memory, the live episode and all RNG streams) so that pickling it at
an evaluation boundary and resuming later continues bit-identically.
"""

from __future__ import annotations

import csv
import json
import math
import pickle
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..env import EPS_D_MAX, EPS_THETA_MAX, OBS_CHANNELS, OBS_DIM, EpisodeConfig, TrackingEnv, observation_scale
from ..errors import ConfigError, LoadError, UsageError
from ..geometry import SourceTag
from ..learn.replay import ReplayBuffer
from ..learn.sac import SacAgent, SacConfig, save_checkpoint
from ..learn.schedule import lr_schedule
from ..vehicle import NOMINAL_PARAMS, ModelTier, RandomizationConfig, VehicleParams, randomize_params
from .paths import ScenarioSet

EVAL_EVERY = 2500
EVAL_SCENARIOS = 4
PLATEAU_K = 10
PLATEAU_MIN_DELTA = 0.005
RESUME_NAME = "resume.pkl"

# variant -> (training tier, fine-tune on logged paths)
VARIANTS = {
    "SAC-ST-VD": (ModelTier.ST, False),
    "SAC-ST-RW": (ModelTier.ST, True),
    "SAC-HF-VD": (ModelTier.HF, False),
    "SAC-HF-RW": (ModelTier.HF, True),
}


@dataclass(frozen=True)
class DRConfig:
    """Randomization applied at every training reset.

    Physical parameters are randomized on the dynamic tier; the kinematic
    tier only perturbs geometry (wheelbase, CoG position) and delay.
    ``obs_noise_range`` bounds a per-episode noise level in normalised
    observation units.
    """

    param_frac: float = 0.1
    delays: tuple = (0, 1, 2)
    init_dev_range: float = 1.5
    init_heading_range: float = 0.3
    obs_noise_range: tuple = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "delays", tuple(int(d) for d in self.delays))
        object.__setattr__(self, "obs_noise_range", tuple(float(s) for s in self.obs_noise_range))
        if not self.delays:
            raise ConfigError("dr.delays must not be empty", "dr.delays")
        if not 0.0 <= self.param_frac <= 0.3:
            raise ConfigError("dr.param_frac must lie in [0, 0.3]", "dr.param_frac")
        if self.init_dev_range < 0 or self.init_heading_range < 0:
            raise ConfigError("initial-condition ranges must be non-negative", "dr")
        lo, hi = self.obs_noise_range
        if not 0.0 <= lo <= hi:
            raise ConfigError("dr.obs_noise_range must satisfy 0 <= lo <= hi", "dr.obs_noise_range")

    @classmethod
    def disabled(cls) -> "DRConfig":
        return cls(param_frac=0.0, delays=(0,), init_dev_range=0.0, init_heading_range=0.0)

    def randomization(self, tier) -> RandomizationConfig:
        if ModelTier(tier) is ModelTier.HF:
            return RandomizationConfig.full(self.param_frac, self.delays)
        return RandomizationConfig.geometry_only(self.param_frac, self.delays)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "SAC-HF-RW"
    phase1_steps: int = 150_000
    phase2_steps: int = 100_000
    eval_every: int = EVAL_EVERY
    eval_scenarios: int = EVAL_SCENARIOS
    plateau_k: int = PLATEAU_K
    plateau_min_delta: float = PLATEAU_MIN_DELTA
    stop_on_plateau: bool = True
    mixed_finetune: bool = False
    max_episode_steps: int = 1200
    eps_d_max: float = EPS_D_MAX
    eps_theta_max: float = EPS_THETA_MAX
    eval_jobs: int = 1
    nominal: VehicleParams = NOMINAL_PARAMS
    dr: DRConfig = field(default_factory=DRConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {sorted(VARIANTS)}",
                              "train.variant")
        for key in ("phase1_steps", "eval_every", "eval_scenarios", "plateau_k", "max_episode_steps", "eval_jobs"):
            if getattr(self, key) < 1:
                raise ConfigError(f"train.{key} must be positive", f"train.{key}")
        if self.phase2_steps < 0:
            raise ConfigError("train.phase2_steps must be non-negative", "train.phase2_steps")

    @property
    def tier(self) -> ModelTier:
        return VARIANTS[self.variant][0]

    @property
    def fine_tune(self) -> bool:
        return VARIANTS[self.variant][1]

    def phases(self) -> list:
        """``(train tags, eval tag, step budget)`` for each phase."""
        out = [((SourceTag.VIRTUAL,), SourceTag.VIRTUAL, self.phase1_steps)]
        if self.fine_tune:
            tags = (SourceTag.VIRTUAL, SourceTag.REAL_LOG) if self.mixed_finetune else (SourceTag.REAL_LOG,)
            out.append((tags, SourceTag.REAL_LOG, self.phase2_steps))
        return out


@dataclass
class EvalRecord:
    step: int
    phase: int
    mean_eval_reward: float
    scenario_rewards: list
    lr: float
    alpha: float
    q1_loss: float
    q2_loss: float
    actor_loss: float
    steps_per_sec: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    phase_markers: list = field(default_factory=list)
    wall_clock_per_100k: dict = field(default_factory=dict)  # tier -> seconds
    path_tag_counts: dict = field(default_factory=dict)  # phase -> {tag: episodes}
    dip: float | None = None

    def append(self, rec: EvalRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise UsageError(f"eval record at step {rec.step} does not follow step {self.records[-1].step}")
        self.records.append(rec)

    def phase_records(self, phase: int) -> list:
        return [r for r in self.records if r.phase == phase]

    def deterministic_view(self) -> dict:
        """Everything except wall-clock measurements."""
        recs = [{k: v for k, v in asdict(r).items() if k != "steps_per_sec"} for r in self.records]
        return {"records": recs, "phase_markers": [dict(m) for m in self.phase_markers],
                "path_tag_counts": {k: dict(v) for k, v in self.path_tag_counts.items()}, "dip": self.dip}

    def write_csv(self, path) -> None:
        n = max((len(r.scenario_rewards) for r in self.records), default=EVAL_SCENARIOS)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "phase", "mean_eval_reward", *(f"scenario_reward_{i}" for i in range(n)),
                        "lr", "alpha", "q1_loss", "q2_loss", "actor_loss", "steps_per_sec"])
            for r in self.records:
                cells = [repr(x) for x in r.scenario_rewards] + [""] * (n - len(r.scenario_rewards))
                w.writerow([r.step, r.phase, repr(r.mean_eval_reward), *cells, repr(r.lr), repr(r.alpha),
                            repr(r.q1_loss), repr(r.q2_loss), repr(r.actor_loss), f"{r.steps_per_sec:.1f}"])


def plateau_detect(rewards, k: int = PLATEAU_K, min_delta: float = PLATEAU_MIN_DELTA) -> bool:
    """True once the best reward has risen by less than ``min_delta`` over the last ``k`` evaluations.

    The window's best is compared with the best before the window, or with
    the window's first value when nothing precedes it.
    """
    rewards = list(rewards)
    if len(rewards) < k:
        return False
    window, before = rewards[-k:], rewards[:-k]
    baseline = max(before) if before else window[0]
    return max(window) - baseline < min_delta


@dataclass
class SnapshotEval:
    mean_reward: float
    scenario_rewards: list
    scenario_steps: list


def _eval_episode(agent: SacAgent, cfg: EpisodeConfig, rng) -> tuple:
    env = TrackingEnv(cfg, rng)
    obs, total = env.obs, 0.0
    while not env.done:
        res = env.step(agent.act(obs, deterministic=True))
        total += res.reward
        obs = res.obs
    return total, env.steps


def evaluate_snapshot(agent: SacAgent, eval_paths, rng, tier=ModelTier.ST, n_scenarios: int = EVAL_SCENARIOS,
                      init_dev_range: float = 1.5, init_heading_range: float = 0.3, max_steps: int = 1200,
                      params: VehicleParams = NOMINAL_PARAMS, jobs: int = 1, policy=None,
                      eps_d_max: float = EPS_D_MAX, eps_theta_max: float = EPS_THETA_MAX) -> SnapshotEval:
    """Deterministic rollouts on ``n_scenarios`` sampled paths with random initial conditions.

    Returns total reward over total steps across the episodes. Every episode
    gets its own RNG stream drawn up front, so threading changes nothing.
    ``policy`` optionally replaces the agent with any ``(obs, env) -> action``.
    """
    if not eval_paths:
        raise UsageError("no evaluation paths")
    idx = rng.choice(len(eval_paths), n_scenarios, replace=len(eval_paths) < n_scenarios)
    cfgs, rngs = [], []
    for i in idx:
        d = rng.uniform(-init_dev_range, init_dev_range) if init_dev_range > 0 else 0.0
        h = rng.uniform(-init_heading_range, init_heading_range) if init_heading_range > 0 else 0.0
        cfgs.append(EpisodeConfig(eval_paths[i], tier, d, h, params, max_steps, eps_d_max, eps_theta_max))
        rngs.append(np.random.default_rng(rng.integers(2 ** 63)))

    def run(j):
        if policy is None:
            return _eval_episode(agent, cfgs[j], rngs[j])
        env = TrackingEnv(cfgs[j], rngs[j])
        total = 0.0
        while not env.done:
            total += env.step(policy(env.obs, env)).reward
        return total, env.steps

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            out = list(ex.map(run, range(n_scenarios)))
    else:
        out = [run(j) for j in range(n_scenarios)]
    rewards = [r for r, _ in out]
    steps = [s for _, s in out]
    return SnapshotEval(sum(rewards) / sum(steps), [r / s for r, s in out], steps)


@dataclass
class PhaseOutcome:
    phase: int
    best_agent: SacAgent
    best_reward: float
    best_step: int
    end_reason: str


class Trainer:
    """Resumable driver for one curriculum.

    Call :meth:`run` to execute all phases; ``stop_after_evals`` interrupts
    after that many evaluations (state is saved first when ``out_dir`` is set).
    """

    def __init__(self, cfg: TrainConfig, scenarios: ScenarioSet, out_dir=None, on_eval=None):
        self.cfg = cfg
        self.scenarios = scenarios
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.on_eval = on_eval
        for tags, eval_tag, _ in cfg.phases():
            for tag in tags:
                if not scenarios.buffers(tag, "train"):
                    raise ConfigError(f"no {tag.value} training paths available", "data")
            if not scenarios.buffers(eval_tag, "eval"):
                raise ConfigError(f"no {eval_tag.value} evaluation paths available", "data")
        sac = replace(cfg.sac, seed=cfg.seed, obs_dim=OBS_DIM)
        self.agent = SacAgent(sac)
        self.replay = ReplayBuffer(sac.buffer_size, OBS_DIM)
        streams = np.random.SeedSequence(cfg.seed).spawn(6)
        self.episode_rng, self.env_rng, self.noise_rng, self.eval_rng, self.replay_rng, self.warmup_rng = (
            np.random.default_rng(s) for s in streams)
        self.log = TrainLog()
        self.global_step = 0
        self.phase = 0
        self.phase_step = 0
        self.phase_started = False
        self.env = None
        self.outcomes = []
        self._best = None  # (reward, step, agent) within the current phase
        self._loss_sums = np.zeros(4)
        self._loss_n = 0
        self._timer_steps = 0
        self._timer_seconds = 0.0
        self._tier_time = {}

    # episode plumbing -------------------------------------------------------

    def _train_paths(self):
        tags = self.cfg.phases()[self.phase][0]
        return [s.buffer for s in self.scenarios if s.split == "train" and s.buffer.source_tag in tags]

    def _new_episode(self):
        cfg, dr = self.cfg, self.cfg.dr
        rng = self.episode_rng
        paths = self._train_paths()
        buf = paths[int(rng.integers(len(paths)))]
        d = rng.uniform(-dr.init_dev_range, dr.init_dev_range) if dr.init_dev_range > 0 else 0.0
        h = rng.uniform(-dr.init_heading_range, dr.init_heading_range) if dr.init_heading_range > 0 else 0.0
        params = randomize_params(cfg.nominal, dr.randomization(cfg.tier), rng)
        lo, hi = dr.obs_noise_range
        noise = None
        if hi > 0:
            level = rng.uniform(lo, hi)
            ep = EpisodeConfig(buf, cfg.tier, params=params)
            noise = tuple(level * observation_scale(ep))
        self.env = TrackingEnv(EpisodeConfig(buf, cfg.tier, d, h, params, cfg.max_episode_steps, cfg.eps_d_max,
                                             cfg.eps_theta_max, obs_noise_std=noise), self.env_rng)
        self.agent.noise_reset(self.noise_rng)
        counts = self.log.path_tag_counts.setdefault(self.phase + 1, {})
        counts[buf.source_tag.value] = counts.get(buf.source_tag.value, 0) + 1

    def _train_step(self, budget: int):
        sac = self.agent.cfg
        if self.env is None or self.env.done:
            self._new_episode()
        obs = self.env.obs
        if self.phase == 0 and self.global_step < sac.warmup_steps:
            a = float(self.warmup_rng.uniform(-1.0, 1.0))
        else:
            a = self.agent.act(obs)
        res = self.env.step(a)
        terminal = res.done and not res.done_reason.is_truncation
        self.replay.add(obs, a, res.reward, res.obs, terminal)
        self.global_step += 1
        self.phase_step += 1
        if self.global_step >= sac.warmup_steps and len(self.replay) >= sac.batch_size:
            lr = lr_schedule(sac.lr, self.phase_step, budget)
            rep = self.agent.update(self.replay.sample(sac.batch_size, self.replay_rng), lr)
            self._loss_sums += (rep.q1_loss, rep.q2_loss, rep.actor_loss, 0.0)
            self._loss_n += 1

    # evaluation and checkpoints --------------------------------------------

    def _evaluate(self, budget: int) -> EvalRecord:
        cfg = self.cfg
        eval_tag = cfg.phases()[self.phase][1]
        res = evaluate_snapshot(self.agent, self.scenarios.buffers(eval_tag, "eval"), self.eval_rng, cfg.tier,
                                cfg.eval_scenarios, cfg.dr.init_dev_range, cfg.dr.init_heading_range,
                                cfg.max_episode_steps, cfg.nominal, cfg.eval_jobs, None, cfg.eps_d_max,
                                cfg.eps_theta_max)
        n = max(self._loss_n, 1)
        q1, q2, actor = (self._loss_sums[:3] / n) if self._loss_n else (math.nan,) * 3
        rate = self._timer_steps / self._timer_seconds if self._timer_seconds > 0 else 0.0
        rec = EvalRecord(self.global_step, self.phase + 1, res.mean_reward, res.scenario_rewards,
                         lr_schedule(self.agent.cfg.lr, self.phase_step, budget), self.agent.alpha,
                         float(q1), float(q2), float(actor), rate)
        self.log.append(rec)
        self._loss_sums[:] = 0.0
        self._loss_n = 0
        if self._best is None or rec.mean_eval_reward > self._best[0]:
            self._best = (rec.mean_eval_reward, rec.step, self.agent.clone())
            self._save_agent(self.agent, f"phase{self.phase + 1}_best.npz", rec)
        self._save_agent(self.agent, "latest.npz", rec)
        return rec

    def _save_agent(self, agent, name, rec):
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(agent, self.out_dir / name, OBS_CHANNELS,
                        {"step": rec.step, "phase": rec.phase, "mean_eval_reward": rec.mean_eval_reward,
                         "variant": self.cfg.variant})

    def save_state(self, path=None) -> Path:
        path = Path(path) if path is not None else self.out_dir / RESUME_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            pickle.dump(self, fh, protocol=pickle.HIGHEST_PROTOCOL)
        tmp.replace(path)
        return path

    def __getstate__(self):
        state = self.__dict__.copy()
        state["on_eval"] = None
        return state

    @staticmethod
    def load_state(path, cfg: TrainConfig | None = None) -> "Trainer":
        path = Path(path)
        if path.is_dir():
            path = path / RESUME_NAME
        try:
            with open(path, "rb") as fh:
                trainer = pickle.load(fh)
        except (OSError, pickle.UnpicklingError, EOFError, AttributeError) as exc:
            raise LoadError(f"cannot read resume state {path}: {exc}") from exc
        if not isinstance(trainer, Trainer):
            raise LoadError(f"{path} does not hold trainer state")
        if cfg is not None and cfg != trainer.cfg:
            diff = [k for k in asdict(cfg) if asdict(cfg)[k] != asdict(trainer.cfg)[k]]
            raise ConfigError(f"resume state was produced with a different configuration (differs in {diff})",
                              "train")
        return trainer

    # phases -----------------------------------------------------------------

    def _start_phase(self):
        tags, eval_tag, budget = self.cfg.phases()[self.phase]
        if self.phase > 0:
            # hand over the previous phase's best weights, optimizer state included
            self.agent = self.outcomes[-1].best_agent.clone()
        self.phase_step = 0
        self.env = None
        self._best = None
        self.phase_started = True
        self.log.phase_markers.append({"phase": self.phase + 1, "train_tags": [t.value for t in tags],
                                       "eval_tag": eval_tag.value, "start_step": self.global_step})

    def _end_phase(self, reason: str):
        best_reward, best_step, best_agent = self._best if self._best else (math.nan, self.global_step,
                                                                           self.agent.clone())
        self.outcomes.append(PhaseOutcome(self.phase + 1, best_agent, best_reward, best_step, reason))
        self.log.phase_markers[-1].update(end_step=self.global_step, end_reason=reason, best_step=best_step,
                                          best_reward=best_reward)
        if self.phase == 1:
            p1, p2 = self.log.phase_records(1), self.log.phase_records(2)
            if p1 and p2:
                self.log.dip = p2[0].mean_eval_reward - p1[-1].mean_eval_reward
        self.phase += 1
        self.phase_started = False

    def _flush_timer(self):
        tier = self.cfg.tier.value
        secs, steps = self._tier_time.get(tier, (0.0, 0))
        self._tier_time[tier] = (secs + self._timer_seconds, steps + self._timer_steps)
        s, n = self._tier_time[tier]
        self.log.wall_clock_per_100k[tier] = s / n * 1e5 if n else math.nan
        self._timer_seconds, self._timer_steps = 0.0, 0

    @property
    def finished(self) -> bool:
        return self.phase >= len(self.cfg.phases())

    def run(self, stop_after_evals: int | None = None) -> "Trainer":
        cfg = self.cfg
        evals = 0
        while not self.finished:
            if not self.phase_started:
                self._start_phase()
            budget = cfg.phases()[self.phase][2]
            reason = "budget"
            while self.phase_step < budget:
                t0 = time.perf_counter()
                self._train_step(budget)
                self._timer_seconds += time.perf_counter() - t0
                self._timer_steps += 1
                if self.phase_step % cfg.eval_every:
                    continue
                rec = self._evaluate(budget)
                self._flush_timer()
                if self.on_eval is not None:
                    self.on_eval(rec)
                evals += 1
                plateau = cfg.stop_on_plateau and plateau_detect(
                    [r.mean_eval_reward for r in self.log.phase_records(self.phase + 1)], cfg.plateau_k,
                    cfg.plateau_min_delta)
                if plateau:
                    reason = "plateau"
                    break
                if stop_after_evals is not None and evals >= stop_after_evals:
                    if self.out_dir is not None:
                        self.save_state()
                    return self
                if self.out_dir is not None:
                    self.save_state()
            self._flush_timer()
            self._end_phase(reason)
        return self


@dataclass
class CurriculumResult:
    agent: SacAgent  # best checkpoint of the final phase
    last_agent: SacAgent
    log: TrainLog
    outcomes: list
    artifacts: dict


def finalize(trainer: Trainer) -> CurriculumResult:
    """Write the log, the phase-transition marker and the ``best`` checkpoint."""
    if not trainer.finished:
        raise UsageError("curriculum has not finished")
    final = trainer.outcomes[-1]
    artifacts = {}
    out = trainer.out_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        trainer.log.write_csv(out / "train_log.csv")
        save_checkpoint(final.best_agent, out / "best.npz", OBS_CHANNELS,
                        {"step": final.best_step, "phase": final.phase, "mean_eval_reward": final.best_reward,
                         "variant": trainer.cfg.variant})
        (out / "phases.json").write_text(json.dumps({
            "variant": trainer.cfg.variant,
            "phase_markers": trainer.log.phase_markers,
            "dip": trainer.log.dip,
            "wall_clock_per_100k": trainer.log.wall_clock_per_100k,
            "path_tag_counts": {str(k): v for k, v in trainer.log.path_tag_counts.items()},
        }, indent=2) + "\n", encoding="utf-8")
        artifacts = {k: out / v for k, v in (("log", "train_log.csv"), ("best", "best.npz"),
                                              ("latest", "latest.npz"), ("phases", "phases.json"))}
    return CurriculumResult(final.best_agent, trainer.agent, trainer.log, trainer.outcomes, artifacts)


def run_curriculum(cfg: TrainConfig, scenarios: ScenarioSet, out_dir=None, on_eval=None) -> CurriculumResult:
    """Phase 1 on virtual paths, then (for RW variants) phase 2 on logged paths from phase 1's best."""
    trainer = Trainer(cfg, scenarios, out_dir, on_eval)
    trainer.run()
    return finalize(trainer)


def resume_curriculum(path, cfg: TrainConfig | None = None, on_eval=None) -> CurriculumResult:
    trainer = Trainer.load_state(path, cfg)
    trainer.on_eval = on_eval
    trainer.run()
    return finalize(trainer)


__all__ = [
    "CurriculumResult", "DRConfig", "EVAL_EVERY", "EvalRecord", "SnapshotEval", "TrainConfig", "TrainLog",
    "Trainer", "VARIANTS", "evaluate_snapshot", "plateau_detect", "resume_curriculum", "run_curriculum",
]
