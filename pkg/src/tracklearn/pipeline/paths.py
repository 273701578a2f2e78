"""Synthetic 20 Hz reference paths and the scenario set that holds them.

Virtual paths come from rolling the kinematic model under scripted,
rate-limited steering, so every path is drivable by construction. Logged-data
surrogates roll the dynamic model with randomized parameters and add pose
noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import DomainError, LoadError
from ..geometry import PathBuffer, Pose2, SourceTag, read_path_csv, write_path_csv
from ..vehicle import (
    NOMINAL_PARAMS,
    ModelTier,
    RandomizationConfig,
    VehicleParams,
    VehicleState,
    randomize_params,
    step_dynamic,
    step_kinematic,
)

DT = 0.05
FAMILIES = ("straight", "arc", "s_curve", "sinusoid", "loop")
EVAL_FAMILIES = ("straight", "straight", "arc", "arc", "s_curve", "s_curve", "sinusoid", "loop")
REALLOG_EVAL_FAMILIES = ("straight", "arc", "s_curve", "sinusoid")
MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def max_curvature(params: VehicleParams) -> float:
    """Tightest CoG curvature reachable at full steering lock."""
    d = params.delta_max
    b = math.atan(params.L_r / params.L * math.tan(d))
    return math.tan(d) * math.cos(b) / params.L


def curvature_to_steer(params: VehicleParams, kappa: float) -> float:
    """Steering angle whose kinematic CoG circle has curvature ``kappa``."""
    if kappa == 0.0:
        return 0.0
    rho = params.L_r / params.L
    kl = abs(kappa) * params.L
    if rho * kl >= 1.0:
        raise DomainError(f"curvature {kappa} is not reachable by any steering angle")
    delta = math.atan(kl / math.sqrt(1.0 - (rho * kl) ** 2))
    if delta > params.delta_max:
        raise DomainError(f"curvature {kappa} needs steering {delta:.3f} rad beyond delta_max={params.delta_max}")
    return math.copysign(delta, kappa)


@dataclass(frozen=True)
class PathScript:
    """Steering program for one path: a curvature target as a function of time."""

    family: str
    speed: float
    duration: float
    curvature: float = 0.0
    lead_in: float = 2.0
    period: float = 20.0
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown path family {self.family!r}")
        if not self.speed > 0.0 or not self.duration > 0.0:
            raise DomainError("path speed and duration must be positive")

    def curvature_at(self, t: float) -> float:
        k, t0 = self.curvature, self.lead_in
        if self.family == "straight" or t < t0:
            return 0.0
        if self.family in ("arc", "loop"):
            return k
        if self.family == "s_curve":
            seg = (self.duration - t0) / 3.0
            if t < t0 + seg:
                return k
            if t < t0 + 2.0 * seg:
                return -k
            return 0.0
        return k * math.sin(2.0 * math.pi * (t - t0) / self.period)


@dataclass(frozen=True)
class PathGenSpec:
    n_train: int = 20
    n_eval: int = 8
    n_reallog_train: int = 12
    n_reallog_eval: int = 4
    speed_range: tuple = (3.0, 6.0)
    curvature_range: tuple = (0.02, 0.08)
    duration_range: tuple = (30.0, 40.0)
    lead_in: float = 2.0
    steer_rate: float = 0.1
    dt: float = DT
    reallog_tier: str = "HF"
    reallog_noise_xy: float = 0.02
    reallog_noise_theta: float = math.radians(0.5)
    reallog_randomization: RandomizationConfig = field(default_factory=lambda: RandomizationConfig.full(0.1, (0,)))

    def __post_init__(self):
        for name in ("speed_range", "curvature_range", "duration_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi:
                raise DomainError(f"{name} must satisfy 0 <= low <= high, got {(lo, hi)}")
        if self.steer_rate <= 0.0 or self.dt <= 0.0:
            raise DomainError("steer_rate and dt must be positive")
        if min(self.n_train, self.n_eval, self.n_reallog_train, self.n_reallog_eval) < 0:
            raise DomainError("path counts must be non-negative")


def roll_script(script: PathScript, tier=ModelTier.ST, params: VehicleParams = NOMINAL_PARAMS,
                dt: float = DT, steer_rate: float = 0.1, start: Pose2 = Pose2(0.0, 0.0, 0.0),
                source_tag=SourceTag.VIRTUAL, name=None) -> PathBuffer:
    """Drive a script open-loop and record the CoG poses at every sample."""
    tier = ModelTier(tier)
    n = int(round(script.duration / dt)) + 1
    t = dt * np.arange(n)
    xs, ys, ths, vs = (np.empty(n) for _ in range(4))
    state = VehicleState(start, v_x=script.speed)
    delta = 0.0
    for k in range(n):
        p = state.pose
        xs[k], ys[k], ths[k], vs[k] = p.x, p.y, p.theta, state.v_x
        if k == n - 1:
            break
        target = curvature_to_steer(params, script.curvature_at(t[k]))
        delta += min(max(target - delta, -steer_rate * dt), steer_rate * dt)
        if tier is ModelTier.ST:
            state = step_kinematic(state, params, script.speed, delta, dt)
        else:
            state = step_dynamic(state, params, 2.0 * (script.speed - state.v_x), delta, dt)
    return PathBuffer(t, xs, ys, ths, vs, source_tag, script.name if name is None else name)


def add_pose_noise(buffer: PathBuffer, rng, sigma_xy: float, sigma_theta: float, tag=None) -> PathBuffer:
    n = len(buffer)
    if sigma_xy == 0.0 and sigma_theta == 0.0:
        return buffer.with_tag(buffer.source_tag if tag is None else tag)
    return PathBuffer(buffer.t, buffer.x + rng.normal(0.0, sigma_xy, n), buffer.y + rng.normal(0.0, sigma_xy, n),
                      buffer.theta + rng.normal(0.0, sigma_theta, n), buffer.v,
                      buffer.source_tag if tag is None else tag, buffer.name)


def reallog_surrogate(script: PathScript, spec: PathGenSpec, rng, params: VehicleParams | None = None,
                      noise: bool = True) -> PathBuffer:
    """Logged-data stand-in: randomized dynamics plus dGPS-like pose noise.

    ``params`` fixes the vehicle instead of drawing one; ``noise=False``
    skips the pose noise.
    """
    if params is None:
        params = randomize_params(NOMINAL_PARAMS, spec.reallog_randomization, rng)
    clean = roll_script(script, spec.reallog_tier, params, spec.dt, spec.steer_rate,
                        source_tag=SourceTag.REAL_LOG)
    if not noise:
        return clean
    return add_pose_noise(clean, rng, spec.reallog_noise_xy, spec.reallog_noise_theta)


def _draw_script(family: str, spec: PathGenSpec, rng, name: str) -> PathScript:
    speed = float(rng.uniform(*spec.speed_range))
    kappa = float(rng.uniform(*spec.curvature_range)) * (1.0 if rng.random() < 0.5 else -1.0)
    duration = float(rng.uniform(*spec.duration_range))
    period = float(rng.uniform(12.0, 24.0))
    if family == "loop":
        duration = spec.lead_in + 2.0 * math.pi / abs(kappa) / speed + 1.0
    return PathScript(family, speed, duration, kappa if family != "straight" else 0.0, spec.lead_in, period, name)


@dataclass(frozen=True)
class Scenario:
    name: str
    buffer: PathBuffer
    split: str  # "train" or "eval"

    @property
    def tag(self) -> SourceTag:
        return self.buffer.source_tag


class ScenarioSet(list):
    """List of scenarios with helpers for filtering by tag and split."""

    def select(self, tag=None, split=None) -> list:
        out = []
        for s in self:
            if tag is not None and s.tag != SourceTag(tag):
                continue
            if split is not None and s.split != split:
                continue
            out.append(s)
        return out

    def buffers(self, tag=None, split=None) -> list:
        return [s.buffer for s in self.select(tag, split)]

    def validate(self):
        names = [s.name for s in self]
        if len(set(names)) != len(names):
            raise DomainError("scenario names must be unique")
        ids = {id(s.buffer) for s in self if s.split == "train"}
        if any(id(s.buffer) in ids for s in self if s.split == "eval"):
            raise DomainError("eval scenarios must be disjoint from train scenarios")


def generate_virtual_paths(spec: PathGenSpec, rng) -> ScenarioSet:
    """Train and eval paths for both data domains.

    The virtual eval split always holds the fixed family mix of two straights,
    two arcs, two S-curves, a sinusoid and a closed loop (cycled when
    ``n_eval`` differs from 8); the logged eval split cycles one straight, arc,
    S-curve and sinusoid.
    """
    kmax = max_curvature(NOMINAL_PARAMS)
    if spec.curvature_range[1] >= kmax:
        raise DomainError(f"curvature {spec.curvature_range[1]} exceeds the vehicle limit {kmax:.4f} 1/m "
                          f"(minimum radius {1.0 / kmax:.2f} m)")
    out = ScenarioSet()
    for k in range(spec.n_train):
        fam = FAMILIES[int(rng.integers(0, len(FAMILIES)))]
        s = _draw_script(fam, spec, rng, f"virtual_train_{k:02d}_{fam}")
        out.append(Scenario(s.name, roll_script(s, ModelTier.ST, NOMINAL_PARAMS, spec.dt, spec.steer_rate), "train"))
    for k in range(spec.n_eval):
        fam = EVAL_FAMILIES[k % len(EVAL_FAMILIES)]
        s = _draw_script(fam, spec, rng, f"virtual_eval_{k:02d}_{fam}")
        out.append(Scenario(s.name, roll_script(s, ModelTier.ST, NOMINAL_PARAMS, spec.dt, spec.steer_rate), "eval"))
    for split, count in (("train", spec.n_reallog_train), ("eval", spec.n_reallog_eval)):
        for k in range(count):
            fam = (FAMILIES[int(rng.integers(0, len(FAMILIES)))] if split == "train"
                   else REALLOG_EVAL_FAMILIES[k % len(REALLOG_EVAL_FAMILIES)])
            s = _draw_script(fam, spec, rng, f"reallog_{split}_{k:02d}_{fam}")
            out.append(Scenario(s.name, reallog_surrogate(s, spec, rng).with_tag(SourceTag.REAL_LOG, s.name), split))
    out.validate()
    return out


def write_scenarios(scenarios: ScenarioSet, out_dir, extra: dict | None = None) -> Path:
    """Write one CSV per scenario plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in scenarios:
        fname = f"{s.name}.csv"
        write_path_csv(s.buffer, out_dir / fname)
        entries.append({"file": fname, "name": s.name, "tag": s.tag.value, "split": s.split,
                        "n_points": len(s.buffer)})
    manifest = {"schema_version": MANIFEST_VERSION, "dt": DT, "scenarios": entries}
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_scenarios(manifest_path) -> ScenarioSet:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise LoadError(f"{manifest_path}: unsupported manifest schema {manifest.get('schema_version')!r}")
    out = ScenarioSet()
    for e in manifest["scenarios"]:
        buf = read_path_csv(manifest_path.parent / e["file"], SourceTag(e["tag"]), e["name"])
        out.append(Scenario(e["name"], buf, e["split"]))
    out.validate()
    return out


def spec_to_dict(spec: PathGenSpec) -> dict:
    return asdict(spec)


def spec_from_dict(d: dict) -> PathGenSpec:
    d = dict(d)
    if "reallog_randomization" in d and isinstance(d["reallog_randomization"], dict):
        d["reallog_randomization"] = RandomizationConfig(**d["reallog_randomization"])
    for k in ("speed_range", "curvature_range", "duration_range"):
        if k in d:
            d[k] = tuple(d[k])
    return replace(PathGenSpec(), **d)
