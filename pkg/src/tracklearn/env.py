"""Path-following MDP: observation assembly, reward, termination and reset."""

from __future__ import annotations

import copy
import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError
from .geometry import ErrorState, PathBuffer, Pose2, closest_next_point, error_state, wrap_angle
from .vehicle import (
    NOMINAL_PARAMS,
    STEER_RATE_LIMIT,
    ModelTier,
    SpeedGains,
    VehicleParams,
    VehicleState,
    _kinematic_rk4,
    apply_steering,
    beta,
    empty_delay_queue,
    pd_speed_controller,
    step_dynamic,
    step_kinematic,
)

DT = 0.05
PREDICTION_HORIZON = 10
EPS_D_MAX = 2.0
EPS_THETA_MAX = math.pi / 2
V_X_SCALE = 15.0
DERIVATIVE_SCALE = 2.0
OBS_LAYOUT_VERSION = 1
OBS_CHANNELS = (
    "v_x", "eps_theta", "eps_d", "d_eps_theta", "d_eps_d",
    *(f"pred_eps_d_{k}" for k in range(2, PREDICTION_HORIZON + 1)),
    "delta", "ddelta_prev",
)
OBS_DIM = len(OBS_CHANNELS)
TRACE_HEADER = ("step", "t", "x", "y", "theta", "v_x", "delta", "action", "eps_d", "eps_theta", "reward",
                "done_reason")


class DoneReason(str, enum.Enum):
    PATH_END = "PathEnd"
    DEVIATION = "DeviationExceeded"
    HEADING = "HeadingExceeded"
    MAX_STEPS = "MaxSteps"

    @property
    def is_truncation(self) -> bool:
        """Time-limit style ends that should still bootstrap."""
        return self in (DoneReason.PATH_END, DoneReason.MAX_STEPS)


@dataclass(frozen=True)
class EpisodeConfig:
    buffer: PathBuffer
    tier: ModelTier = ModelTier.ST
    init_eps_d: float = 0.0
    init_eps_theta: float = 0.0
    params: VehicleParams = NOMINAL_PARAMS
    max_steps: int = 1200
    eps_d_max: float = EPS_D_MAX
    eps_theta_max: float = EPS_THETA_MAX
    obs_noise_std: tuple | None = None
    start_index: int | None = None
    speed_gains: SpeedGains = field(default_factory=SpeedGains)
    dt: float = DT

    def __post_init__(self):
        if not self.eps_d_max > 0.0:
            raise DomainError("eps_d_max must be positive")
        if not 0.0 < self.eps_theta_max <= math.pi:
            raise DomainError("eps_theta_max must lie in (0, pi]")
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if self.obs_noise_std is not None:
            std = tuple(float(s) for s in np.broadcast_to(self.obs_noise_std, (OBS_DIM,)))
            if any(s < 0.0 for s in std):
                raise DomainError("observation noise std must be non-negative")
            object.__setattr__(self, "obs_noise_std", std if any(std) else None)
        object.__setattr__(self, "tier", ModelTier(self.tier))


@dataclass(frozen=True)
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    done_reason: DoneReason | None
    info: ErrorState


def observation_scale(cfg: EpisodeConfig) -> np.ndarray:
    """Per-channel divisors bringing raw observations into roughly [-1, 1]."""
    return np.array([V_X_SCALE, cfg.eps_theta_max, cfg.eps_d_max, DERIVATIVE_SCALE, DERIVATIVE_SCALE]
                    + [cfg.eps_d_max] * (PREDICTION_HORIZON - 1)
                    + [cfg.params.delta_max, STEER_RATE_LIMIT])


def reward(eps_theta: float, eps_d: float, action_norm: float, cfg=None) -> float:
    """Product of heading, lateral and steering-effort factors, each in [0, 1]."""
    th_max = EPS_THETA_MAX if cfg is None else cfg.eps_theta_max
    d_max = EPS_D_MAX if cfg is None else cfg.eps_d_max
    f_theta = min(max(1.0 - abs(eps_theta) / th_max, 0.0), 1.0)
    f_d = min(max(1.0 - abs(eps_d) / d_max, 0.0), 1.0)
    f_a = min(max(1.0 - abs(action_norm), 0.0), 1.0)
    return f_theta * f_d * f_a


def predict_lateral(state: VehicleState, buffer: PathBuffer, params: VehicleParams,
                    horizon: int = PREDICTION_HORIZON, dt: float = DT, hint: int | None = None) -> np.ndarray:
    """Lateral deviation over the next ``horizon`` steps at frozen speed and steering.

    Always uses the kinematic model, whatever tier drives the episode.
    """
    v, delta = max(state.v_x, 0.0), state.delta
    b = beta(params, delta)
    yaw_rate = 0.0 if delta == 0.0 else v * math.tan(delta) * math.cos(b) / params.L
    x, y, th = state.pose.x, state.pose.y, state.pose.theta
    idx = hint
    out = np.empty(horizon)
    for k in range(horizon):
        x, y, th = _kinematic_rk4(x, y, th, v, b, yaw_rate, dt)
        pose = Pose2(x, y, th)
        idx = closest_next_point(buffer, pose, idx)
        out[k] = error_state(buffer, pose, idx).eps_d
    return out


class TrackingEnv:
    """One episode of path following. Single writer: ``step`` mutates it."""

    def __init__(self, cfg: EpisodeConfig, rng: np.random.Generator, record_trace: bool = False):
        buf = cfg.buffer
        if len(buf) <= PREDICTION_HORIZON + 1:
            raise DomainError(f"path of {len(buf)} samples is shorter than the prediction horizon")
        self.cfg = cfg
        self.rng = rng
        self.scale = observation_scale(cfg)
        if cfg.start_index is None:
            start = int(rng.integers(0, max(1, int(0.5 * len(buf)))))
        else:
            start = int(cfg.start_index)
            if not 0 <= start < len(buf):
                raise DomainError(f"start index {start} out of range")
        th = float(buf.theta[start])
        d = cfg.init_eps_d
        pose = Pose2(float(buf.x[start]) - d * math.sin(th), float(buf.y[start]) + d * math.cos(th),
                     th + cfg.init_eps_theta)
        self.state = VehicleState(pose, v_x=float(buf.v[start]))
        self.queue = empty_delay_queue(cfg.params)
        self.ddelta = 0.0
        self.v_ref_prev = self.v_x_prev = float(buf.v[start])
        self.err = error_state(buf, pose, closest_next_point(buf, pose, start))
        self.d_eps_d = 0.0
        self.d_eps_theta = 0.0
        self.steps = 0
        self.done = False
        self.done_reason = None
        self.trace = [] if record_trace else None
        self.obs = self._observe()
        if self.trace is not None:
            self._record(0.0, 0.0)

    def _observe(self) -> np.ndarray:
        pred = predict_lateral(self.state, self.cfg.buffer, self.cfg.params, PREDICTION_HORIZON, self.cfg.dt,
                               self.err.ref_index)
        raw = np.empty(OBS_DIM)
        raw[0] = self.state.v_x
        raw[1] = self.err.eps_theta
        raw[2] = self.err.eps_d
        raw[3] = self.d_eps_theta
        raw[4] = self.d_eps_d
        raw[5:5 + PREDICTION_HORIZON - 1] = pred[1:]
        raw[-2] = self.state.delta
        raw[-1] = self.ddelta
        if self.cfg.obs_noise_std is not None:
            raw += self.rng.normal(0.0, self.cfg.obs_noise_std)
        return raw / self.scale

    def step(self, action_norm: float) -> StepResult:
        if self.done:
            raise UsageError("step() called on a finished episode; reset first")
        cfg, buf, dt = self.cfg, self.cfg.buffer, self.cfg.dt
        a = min(max(float(action_norm), -1.0), 1.0)
        delta, self.ddelta, self.queue = apply_steering(self.state.delta, a * STEER_RATE_LIMIT, cfg.params,
                                                        self.queue, dt)
        v_ref = float(buf.v[self.err.ref_index])
        v_x = self.state.v_x
        acc = pd_speed_controller(v_x, v_ref, self.v_ref_prev, self.v_x_prev, cfg.speed_gains, dt)
        if cfg.tier is ModelTier.ST:
            self.state = step_kinematic(self.state, cfg.params, max(v_x + acc * dt, 0.0), delta, dt)
        else:
            self.state = step_dynamic(self.state, cfg.params, acc, delta, dt)
        self.v_ref_prev, self.v_x_prev = v_ref, v_x

        prev = self.err
        idx = closest_next_point(buf, self.state.pose, prev.ref_index)
        self.err = error_state(buf, self.state.pose, idx)
        self.d_eps_d = (self.err.eps_d - prev.eps_d) / dt
        self.d_eps_theta = wrap_angle(self.err.eps_theta - prev.eps_theta) / dt
        r = reward(self.err.eps_theta, self.err.eps_d, a, cfg)
        self.steps += 1

        reason = None
        if abs(self.err.eps_d) > cfg.eps_d_max:
            reason = DoneReason.DEVIATION
        elif abs(self.err.eps_theta) > cfg.eps_theta_max:
            reason = DoneReason.HEADING
        elif idx == len(buf) - 1:
            reason = DoneReason.PATH_END
        elif self.steps >= cfg.max_steps:
            reason = DoneReason.MAX_STEPS
        self.done = reason is not None
        self.done_reason = reason
        self.obs = self._observe()
        if self.trace is not None:
            self._record(a, r)
        return StepResult(self.obs, r, self.done, reason, self.err)

    def _record(self, action, r):
        p = self.state.pose
        self.trace.append((self.steps, self.steps * self.cfg.dt, p.x, p.y, p.theta, self.state.v_x,
                           self.state.delta, action, self.err.eps_d, self.err.eps_theta, r,
                           "" if self.done_reason is None else self.done_reason.value))

    def snapshot(self) -> "TrackingEnv":
        """Independent copy of the full episode state, RNG included."""
        return copy.deepcopy(self)


def reset(cfg: EpisodeConfig, rng: np.random.Generator, record_trace: bool = False):
    """Start an episode; returns ``(env, first_observation)``."""
    env = TrackingEnv(cfg, rng, record_trace)
    return env, env.obs


def step(env: TrackingEnv, action_norm: float) -> StepResult:
    return env.step(action_norm)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in trace:
            w.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])
