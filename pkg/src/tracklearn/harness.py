"""Model-in-the-loop evaluation over path x initial-deviation grids.

Every episode in a grid runs a deterministic policy from the start of the
path with frozen vehicle parameters. Per-step lateral deviations after a
transient window are pooled into mean / std / max statistics per policy and
path, which is the layout of the tables produced by :func:`render_report`.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import EPS_D_MAX, EPS_THETA_MAX, OBS_CHANNELS, DoneReason, EpisodeConfig, TrackingEnv, write_trace_csv
from .errors import UsageError
from .geometry import PathBuffer, wrap_angle
from .learn.sac import SacAgent, load_checkpoint
from .pipeline.paths import Scenario, curvature_to_steer, max_curvature
from .vehicle import NOMINAL_PARAMS, STEER_RATE_LIMIT, ModelTier, VehicleParams, beta

DEFAULT_DEVIATIONS = (-1.25, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)
TRANSIENT_STEPS = 50
UNRELIABLE_DENOMINATOR = 1e-3
EXIT_OK = 0
EXIT_NONCOMPLETION = 2
EXIT_LOAD_ERROR = 3


class AgentPolicy:
    """Deterministic-mode wrapper around a trained agent."""

    def __init__(self, agent: SacAgent):
        self.agent = agent

    def __call__(self, obs, env) -> float:
        return self.agent.act(obs, deterministic=True)

    @classmethod
    def from_checkpoint(cls, path) -> "AgentPolicy":
        agent, _ = load_checkpoint(path, OBS_CHANNELS)
        return cls(agent)


class TangentOracle:
    """Reference controller that reads the path directly.

    The vehicle is projected onto the path segment around the tracked index;
    feed-forward steering comes from the local reference curvature and a
    Stanley-style term closes the course and lateral loops.
    """

    def __init__(self, k_heading: float = 1.2, k_lateral: float = 1.0, smooth: int = 2, preview: int = 1):
        self.k_heading = k_heading
        self.k_lateral = k_lateral
        self.smooth = smooth
        self.preview = preview

    def _projection(self, buf: PathBuffer, i: int, x: float, y: float):
        j0 = max(i - 1, 0)
        j1 = j0 + 1
        sx, sy = buf.x[j1] - buf.x[j0], buf.y[j1] - buf.y[j0]
        u = ((x - buf.x[j0]) * sx + (y - buf.y[j0]) * sy) / (sx * sx + sy * sy)
        u = min(max(u, 0.0), 1.0)
        px, py = buf.x[j0] + u * sx, buf.y[j0] + u * sy
        dth = wrap_angle(float(buf.theta[j1] - buf.theta[j0]))
        th = float(buf.theta[j0]) + u * dth
        return px, py, th

    def _curvature(self, buf: PathBuffer, i: int) -> float:
        lo, hi = max(i - self.smooth, 0), min(i + self.smooth, len(buf) - 1)
        if hi <= lo:
            return 0.0
        dtheta = wrap_angle(float(buf.theta[hi] - buf.theta[lo]))
        ds = float(np.sum(np.hypot(np.diff(buf.x[lo:hi + 1]), np.diff(buf.y[lo:hi + 1]))))
        return dtheta / ds if ds > 0 else 0.0

    def __call__(self, obs, env: TrackingEnv) -> float:
        buf, params = env.cfg.buffer, env.cfg.params
        pose = env.state.pose
        px, py, th = self._projection(buf, env.err.ref_index, pose.x, pose.y)
        c, s = math.cos(th), math.sin(th)
        e_d = -s * (pose.x - px) + c * (pose.y - py)
        kmax = 0.999 * max_curvature(params)
        kappa = min(max(self._curvature(buf, max(env.err.ref_index - 1 + self.preview, 0)), -kmax), kmax)
        ff = curvature_to_steer(params, kappa)
        # Compare courses (yaw plus sideslip) so the tiers' different slip does not bias the loop.
        st = env.state
        slip = math.atan2(st.v_y, st.v_x) if env.cfg.tier == ModelTier.HF and st.v_x > 0.5 else beta(params, st.delta)
        e_th = wrap_angle(pose.theta + slip - th - beta(params, ff))
        v = max(env.state.v_x, 1.0)
        target = ff - self.k_heading * e_th - math.atan(self.k_lateral * e_d / v)
        target = min(max(target, -params.delta_max), params.delta_max)
        rate = (target - env.state.delta) / env.cfg.dt
        return min(max(rate / STEER_RATE_LIMIT, -1.0), 1.0)


class ZeroSteer:
    """Holds the wheel still."""

    def __call__(self, obs, env) -> float:
        return 0.0


def as_policy(p):
    if isinstance(p, SacAgent):
        return AgentPolicy(p)
    if isinstance(p, (str, Path)):
        return AgentPolicy.from_checkpoint(p)
    if callable(p):
        return p
    raise UsageError(f"cannot interpret {p!r} as a policy")


@dataclass
class EvalGrid:
    policies: list  # (label, policy) pairs; policy is an agent, a checkpoint path or a callable
    paths: list  # PathBuffer or Scenario
    init_deviations: tuple = DEFAULT_DEVIATIONS
    params: VehicleParams = NOMINAL_PARAMS
    max_steps: int = 1200
    transient_steps: int = TRANSIENT_STEPS
    record_traces: bool = False
    eps_d_max: float = EPS_D_MAX
    eps_theta_max: float = EPS_THETA_MAX

    def __post_init__(self):
        if not self.init_deviations:
            raise UsageError("the deviation list must not be empty")
        self.init_deviations = tuple(float(d) for d in self.init_deviations)

    def named_paths(self) -> list:
        out = []
        for k, p in enumerate(self.paths):
            if isinstance(p, Scenario):
                out.append((p.name, p.buffer))
            else:
                out.append((p.name or f"path_{k}", p))
        return out


@dataclass
class EpisodeRow:
    policy: str
    path: str
    init_dev: float
    mean_abs: float
    std_abs: float
    max_abs: float
    n_samples: int
    completed: bool
    done_reason: str
    mean_reward: float
    steps: int
    params_digest: str
    samples: np.ndarray = field(default=None, repr=False, compare=False)
    trace: list = field(default=None, repr=False, compare=False)


@dataclass
class CellStats:
    mean_abs: float
    std_abs: float
    max_abs: float
    completed: bool
    mean_reward: float
    n_episodes: int
    n_samples: int


@dataclass
class EvalReport:
    tier: str
    transient_steps: int
    init_deviations: tuple
    episodes: list = field(default_factory=list)
    cells: dict = field(default_factory=dict)  # (policy, path) -> CellStats
    policies: dict = field(default_factory=dict)  # policy -> CellStats
    warnings: list = field(default_factory=list)

    @property
    def policy_labels(self) -> list:
        return list(dict.fromkeys(e.policy for e in self.episodes))

    @property
    def path_labels(self) -> list:
        return list(dict.fromkeys(e.path for e in self.episodes))

    def completion_rate(self, policy: str | None = None) -> float:
        rows = [e for e in self.episodes if policy is None or e.policy == policy]
        return sum(e.completed for e in rows) / len(rows) if rows else 0.0

    def aggregates_dict(self) -> dict:
        return {
            "tier": self.tier,
            "transient_steps": self.transient_steps,
            "init_deviations": list(self.init_deviations),
            "cells": [{"policy": p, "path": q, **asdict(c)} for (p, q), c in self.cells.items()],
            "policies": {p: asdict(c) for p, c in self.policies.items()},
            "warnings": list(self.warnings),
        }

    def to_dict(self) -> dict:
        d = self.aggregates_dict()
        d["episodes"] = [{k: v for k, v in asdict(e).items() if k not in ("samples", "trace")}
                         for e in self.episodes]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rep = cls(d["tier"], d["transient_steps"], tuple(d["init_deviations"]), warnings=list(d["warnings"]))
        rep.cells = {(c["policy"], c["path"]): CellStats(**{k: v for k, v in c.items() if k not in ("policy", "path")})
                     for c in d["cells"]}
        rep.policies = {p: CellStats(**c) for p, c in d["policies"].items()}
        rep.episodes = [EpisodeRow(**e) for e in d.get("episodes", [])]
        return rep


def _stats(samples: np.ndarray):
    if samples.size == 0:
        return math.nan, math.nan, math.nan
    return float(np.mean(samples)), float(np.std(samples)), float(np.max(samples))


def run_episode(policy, buffer: PathBuffer, init_dev: float, tier=ModelTier.ST,
                params: VehicleParams = NOMINAL_PARAMS, max_steps: int = 1200, record_trace: bool = False,
                eps_d_max: float = EPS_D_MAX, eps_theta_max: float = EPS_THETA_MAX):
    """One deterministic episode from the path start. Returns ``(abs_dev_per_step, rewards, reason, env)``."""
    cfg = EpisodeConfig(buffer=buffer, tier=tier, init_eps_d=init_dev, params=params, max_steps=max_steps,
                        eps_d_max=eps_d_max, eps_theta_max=eps_theta_max, start_index=0)
    env = TrackingEnv(cfg, np.random.default_rng(0), record_trace=record_trace)
    obs = env.obs
    devs, rewards = [], []
    while not env.done:
        res = env.step(policy(obs, env))
        devs.append(abs(res.info.eps_d))
        rewards.append(res.reward)
        obs = res.obs
    return np.array(devs), np.array(rewards), env.done_reason, env


def _episode_row(label, policy, path_name, buffer, dev, grid: EvalGrid, tier) -> EpisodeRow:
    devs, rewards, reason, env = run_episode(policy, buffer, dev, tier, grid.params, grid.max_steps,
                                             grid.record_traces, grid.eps_d_max, grid.eps_theta_max)
    samples = devs[grid.transient_steps:]
    if samples.size == 0:
        # Episode ended inside the transient window; keep its deviations visible.
        samples = devs
    mean, std, mx = _stats(samples)
    return EpisodeRow(label, path_name, dev, mean, std, mx, int(samples.size),
                      reason in (DoneReason.PATH_END, DoneReason.MAX_STEPS), reason.value,
                      float(np.mean(rewards)) if rewards.size else 0.0, int(devs.size), grid.params.digest(),
                      samples, env.trace)


def _aggregate(rows) -> CellStats:
    samples = np.concatenate([r.samples for r in rows]) if rows else np.empty(0)
    mean, std, mx = _stats(samples)
    total_steps = sum(r.steps for r in rows)
    mean_reward = sum(r.mean_reward * r.steps for r in rows) / total_steps if total_steps else 0.0
    return CellStats(mean, std, mx, all(r.completed for r in rows), mean_reward, len(rows), int(samples.size))


def run_grid(grid: EvalGrid, eval_tier=ModelTier.ST, jobs: int = 1, order=None) -> EvalReport:
    """Evaluate every (policy, path, initial deviation) combination on ``eval_tier``.

    ``order`` optionally permutes the execution order of the episode list;
    results are keyed, so statistics do not depend on it.
    """
    tier = ModelTier(eval_tier)
    policies = [(label, as_policy(p)) for label, p in grid.policies]
    paths = grid.named_paths()
    jobs_list = [(label, pol, name, buf, dev) for label, pol in policies for name, buf in paths
                 for dev in grid.init_deviations]
    idx = list(range(len(jobs_list))) if order is None else list(order)
    if sorted(idx) != list(range(len(jobs_list))):
        raise UsageError("order must be a permutation of the episode indices")

    def run(i):
        label, pol, name, buf, dev = jobs_list[i]
        return i, _episode_row(label, pol, name, buf, dev, grid, tier)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            results = dict(ex.map(run, idx))
    else:
        results = dict(run(i) for i in idx)
    rows = [results[i] for i in range(len(jobs_list))]

    report = EvalReport(tier.value, grid.transient_steps, grid.init_deviations, rows)
    for label, _ in policies:
        for name, _ in paths:
            report.cells[(label, name)] = _aggregate([r for r in rows if r.policy == label and r.path == name])
        report.policies[label] = _aggregate([r for r in rows if r.policy == label])
    return report


@dataclass
class GapRatio:
    value: float
    numerator: float
    denominator: float
    reliable: bool


@dataclass
class GapTable:
    ratios: dict  # (policy, path) -> GapRatio
    warnings: list


def gap_ratio(report_hi: EvalReport, report_lo: EvalReport) -> GapTable:
    """Mean deviation on the higher-fidelity tier over the lower-fidelity tier, per (policy, path)."""
    ratios, warnings = {}, []
    for key in list(report_hi.cells) + [k for k in report_lo.cells if k not in report_hi.cells]:
        if key not in report_hi.cells or key not in report_lo.cells:
            warnings.append(f"skipped {key[0]}/{key[1]}: missing from one report")
            continue
        num, den = report_hi.cells[key].mean_abs, report_lo.cells[key].mean_abs
        reliable = den >= UNRELIABLE_DENOMINATOR
        value = num / den if den > 0 else math.inf
        if not reliable:
            warnings.append(f"{key[0]}/{key[1]}: denominator {den:.2e} m below 1 mm, ratio unreliable")
        ratios[key] = GapRatio(value, num, den, reliable)
    return GapTable(ratios, warnings)


def format_cell(mean: float, std: float) -> str:
    if math.isnan(mean):
        return "-"
    return f"{mean:.2f}±{std:.2f}"


@dataclass
class RenderResult:
    summary_csv: Path
    metrics_json: Path
    trace_files: list
    exit_code: int


def render_report(report: EvalReport, out_dir, gap: GapTable | None = None) -> RenderResult:
    """Write the summary table, per-episode traces and a JSON metrics bundle."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = report.path_labels
        summary = out_dir / "summary.csv"
        with open(summary, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", *paths])
            for pol in report.policy_labels:
                w.writerow([pol, *(format_cell(report.cells[(pol, p)].mean_abs, report.cells[(pol, p)].std_abs)
                                   for p in paths)])
        traces = []
        trace_dir = out_dir / "traces"
        for e in report.episodes:
            if e.trace is None:
                continue
            trace_dir.mkdir(exist_ok=True)
            f = trace_dir / f"{e.policy}__{e.path}__dev{e.init_dev:+.2f}.csv"
            write_trace_csv(e.trace, f)
            traces.append(f)
        bundle = report.to_dict()
        if gap is not None:
            bundle["gap_ratios"] = [{"policy": k[0], "path": k[1], **asdict(g)} for k, g in gap.ratios.items()]
            bundle["gap_warnings"] = list(gap.warnings)
            write_gap_table(gap, out_dir / "gap_ratios.csv")
        metrics = out_dir / "metrics.json"
        metrics.write_text(json.dumps(bundle, indent=2, allow_nan=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"failed writing report under {out_dir}: {exc}") from exc
    ok = bool(report.episodes) and all(e.completed for e in report.episodes)
    return RenderResult(summary, metrics, traces, EXIT_OK if ok else EXIT_NONCOMPLETION)


def write_gap_table(gap: GapTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "path", "ratio", "hi_mean", "lo_mean", "reliable"])
        for k, g in gap.ratios.items():
            w.writerow([k[0], k[1], f"{g.value:.4f}", f"{g.numerator:.4f}", f"{g.denominator:.4f}", int(g.reliable)])
    return path


def load_metrics(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def streaming_stats(samples):
    """Welford pass giving (mean, population std, max); an independent check on the batch statistics."""
    n, mean, m2, mx = 0, 0.0, 0.0, -math.inf
    for x in samples:
        n += 1
        d = x - mean
        mean += d / n
        m2 += d * (x - mean)
        mx = max(mx, x)
    return mean, math.sqrt(m2 / n) if n else math.nan, mx


__all__ = [
    "AgentPolicy", "CellStats", "DEFAULT_DEVIATIONS", "EvalGrid", "EvalReport", "GapRatio", "GapTable",
    "TangentOracle", "ZeroSteer", "gap_ratio", "load_metrics", "render_report", "run_episode", "run_grid",
    "streaming_stats", "write_gap_table",
]
