"""Single-track vehicle models, steering actuation and parameter randomization.

Two fidelity tiers share one state type:

* ``ModelTier.ST``: kinematic single-track (no tire slip), pose at the CoG.
* ``ModelTier.HF``: dynamic single-track with linear tires and yaw inertia,
  the stand-in for a high-fidelity digital twin.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import DomainError
from .geometry import Pose2

STEER_RATE_LIMIT = 0.18  # rad/s
ACCEL_LIMIT = 3.0  # m/s^2
V_LOW = 0.5  # m/s, below this slip angles blend into the kinematic relations
BLEND_TAU = 0.1  # s, relaxation time toward the kinematic lateral state at low speed
MIN_SUBSTEPS = 5
MAX_DELAY_STEPS = 5


class ModelTier(str, enum.Enum):
    ST = "ST"
    HF = "HF"


@dataclass(frozen=True)
class VehicleParams:
    m: float = 630.0
    L: float = 2.54
    L_r: float = 1.27
    I_z: float = 800.0
    C_f: float = 40_000.0
    C_r: float = 40_000.0
    susp_gain: float = 1.0
    delay_steps: int = 0
    delta_max: float = 0.45
    ddelta_max: float = STEER_RATE_LIMIT

    def __post_init__(self):
        for name in ("m", "L", "I_z", "C_f", "C_r", "delta_max", "ddelta_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise DomainError(f"VehicleParams.{name} must be finite and > 0, got {v}")
        if not 0.0 < self.L_r < self.L:
            raise DomainError(f"VehicleParams.L_r must lie in (0, L={self.L}), got {self.L_r}")
        if not 0.0 < self.susp_gain <= 2.0:
            raise DomainError(f"VehicleParams.susp_gain must lie in (0, 2], got {self.susp_gain}")
        if int(self.delay_steps) != self.delay_steps or not 0 <= self.delay_steps <= MAX_DELAY_STEPS:
            raise DomainError(f"VehicleParams.delay_steps must be an integer in [0, 5], got {self.delay_steps}")
        if self.delta_max >= math.pi / 2:
            raise DomainError("VehicleParams.delta_max must be below pi/2")
        object.__setattr__(self, "delay_steps", int(self.delay_steps))

    @property
    def L_f(self) -> float:
        return self.L - self.L_r

    def digest(self) -> str:
        """Stable hash of all parameter values."""
        payload = ",".join(f"{k}={v!r}" for k, v in sorted(asdict(self).items()))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


NOMINAL_PARAMS = VehicleParams()


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2
    v_x: float = 0.0
    v_y: float = 0.0
    r_yaw: float = 0.0
    delta: float = 0.0


def beta(params: VehicleParams, delta: float) -> float:
    """Slip angle of the CoG velocity for the kinematic model."""
    if not abs(delta) < math.pi / 2:
        raise DomainError(f"steering angle {delta} outside (-pi/2, pi/2)")
    return math.atan(params.L_r / params.L * math.tan(delta))


def turn_radius(params: VehicleParams, delta: float) -> float:
    """CoG radius of rotation; infinite for straight wheels."""
    if delta == 0.0:
        return math.inf
    return params.L / (math.tan(delta) * math.cos(beta(params, delta)))


def _check_delta(params, delta):
    if abs(delta) > params.delta_max + 1e-12:
        raise DomainError(f"|delta|={abs(delta)} exceeds delta_max={params.delta_max}")


def _kinematic_rk4(x, y, th, v, b, yaw_rate, dt):
    # v, beta and yaw rate are constant over the step, only theta varies.
    h2 = 0.5 * dt
    k1x, k1y = v * math.cos(th + b), v * math.sin(th + b)
    t2 = th + h2 * yaw_rate
    k2x, k2y = v * math.cos(t2 + b), v * math.sin(t2 + b)
    t4 = th + dt * yaw_rate
    k4x, k4y = v * math.cos(t4 + b), v * math.sin(t4 + b)
    x += dt / 6.0 * (k1x + 4.0 * k2x + k4x)
    y += dt / 6.0 * (k1y + 4.0 * k2y + k4y)
    return x, y, th + dt * yaw_rate


def step_kinematic(state: VehicleState, params: VehicleParams, v_cmd: float, delta: float,
                   dt: float) -> VehicleState:
    """Advance the kinematic single-track model by one RK4 step at constant inputs."""
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    _check_delta(params, delta)
    v = max(float(v_cmd), 0.0)
    b = beta(params, delta)
    yaw_rate = 0.0 if delta == 0.0 else v * math.tan(delta) * math.cos(b) / params.L
    p = state.pose
    x, y, th = _kinematic_rk4(p.x, p.y, p.theta, v, b, yaw_rate, dt)
    return VehicleState(Pose2(x, y, th), v_x=v, v_y=0.0, r_yaw=yaw_rate, delta=float(delta))


def _dynamic_rhs(s, params, a_cmd, delta, cos_d, tan_d):
    _x, _y, th, vx, vy, r = s
    lf, lr = params.L_f, params.L_r
    vx_eff = max(vx, V_LOW)
    alpha_f = delta - math.atan2(vy + lf * r, vx_eff)
    alpha_r = -math.atan2(vy - lr * r, vx_eff)
    fyf = params.susp_gain * params.C_f * alpha_f
    fyr = params.susp_gain * params.C_r * alpha_r
    dvy = (fyf * cos_d + fyr) / params.m - vx * r
    dr = (lf * fyf * cos_d - lr * fyr) / params.I_z
    if vx < V_LOW:
        w = max(vx, 0.0) / V_LOW
        r_kin = vx * tan_d / params.L
        vy_kin = lr * r_kin
        dvy = w * dvy + (1.0 - w) * (vy_kin - vy) / BLEND_TAU
        dr = w * dr + (1.0 - w) * (r_kin - r) / BLEND_TAU
    dvx = a_cmd if (vx > 0.0 or a_cmd > 0.0) else 0.0
    c, s_ = math.cos(th), math.sin(th)
    return (vx * c - vy * s_, vx * s_ + vy * c, r, dvx, dvy, dr)


def dynamic_substeps(params: VehicleParams, v_x: float, dt: float) -> int:
    """Number of RK4 substeps keeping the lateral modes inside the stability region."""
    vx_eff = max(v_x, V_LOW)
    g = params.susp_gain
    lam = g * (params.C_f + params.C_r) / (params.m * vx_eff)
    lam += g * (params.L_f ** 2 * params.C_f + params.L_r ** 2 * params.C_r) / (params.I_z * vx_eff)
    lam = max(lam, 1.0 / BLEND_TAU)
    return max(MIN_SUBSTEPS, int(math.ceil(dt * lam / 2.0)))


def step_dynamic(state: VehicleState, params: VehicleParams, a_cmd: float, delta: float,
                 dt: float) -> VehicleState:
    """Advance the dynamic single-track model by ``dt`` with RK4 substeps."""
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    _check_delta(params, delta)
    p = state.pose
    s = (p.x, p.y, p.theta, state.v_x, state.v_y, state.r_yaw)
    n = dynamic_substeps(params, state.v_x, dt)
    h = dt / n
    cos_d, tan_d = math.cos(delta), math.tan(delta)
    rhs = _dynamic_rhs
    for _ in range(n):
        k1 = rhs(s, params, a_cmd, delta, cos_d, tan_d)
        k2 = rhs(tuple(a + 0.5 * h * b for a, b in zip(s, k1)), params, a_cmd, delta, cos_d, tan_d)
        k3 = rhs(tuple(a + 0.5 * h * b for a, b in zip(s, k2)), params, a_cmd, delta, cos_d, tan_d)
        k4 = rhs(tuple(a + h * b for a, b in zip(s, k3)), params, a_cmd, delta, cos_d, tan_d)
        s = tuple(a + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4))
        if s[3] < 0.0:
            s = s[:3] + (0.0,) + s[4:]
    x, y, th, vx, vy, r = s
    return VehicleState(Pose2(x, y, th), v_x=vx, v_y=vy, r_yaw=r, delta=float(delta))


def steady_state_yaw_rate(params: VehicleParams, v_x: float, delta: float) -> float:
    """Linear bicycle-model steady-state yaw rate, ``v delta / (L + K_us v^2)``."""
    cf = params.susp_gain * params.C_f
    cr = params.susp_gain * params.C_r
    k_us = params.m * (params.L_r * cr - params.L_f * cf) / (cf * cr * params.L)
    return v_x * delta / (params.L + k_us * v_x ** 2)


def apply_steering(prev_delta: float, ddelta_cmd: float, params: VehicleParams, delay_queue: tuple,
                   dt: float):
    """Saturate, delay and integrate a steering-rate command.

    ``delay_queue`` holds ``params.delay_steps`` pending rates, oldest first.
    Returns ``(delta, applied_rate, new_queue)``; the applied rate accounts
    for clipping at the steering-angle stop.
    """
    if abs(prev_delta) > params.delta_max + 1e-12:
        raise DomainError(f"|prev_delta|={abs(prev_delta)} exceeds delta_max")
    lim = params.ddelta_max
    cmd = min(max(float(ddelta_cmd), -lim), lim)
    queue = tuple(delay_queue) + (cmd,)
    rate, queue = queue[0], queue[1:]
    delta = min(max(prev_delta + rate * dt, -params.delta_max), params.delta_max)
    return delta, (delta - prev_delta) / dt, queue


def empty_delay_queue(params: VehicleParams) -> tuple:
    return (0.0,) * params.delay_steps


@dataclass(frozen=True)
class SpeedGains:
    k_p: float = 1.5
    k_d: float = 0.05


def pd_speed_controller(v_x: float, v_ref: float, v_ref_prev: float, v_x_prev: float,
                        gains: SpeedGains, dt: float) -> float:
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    e = v_ref - v_x
    e_prev = v_ref_prev - v_x_prev
    a = gains.k_p * e + gains.k_d * (e - e_prev) / dt
    return min(max(a, -ACCEL_LIMIT), ACCEL_LIMIT)


_RANDOMIZED = ("m", "L", "L_r_ratio", "C_f", "C_r", "susp_gain", "I_z")


@dataclass(frozen=True)
class RandomizationConfig:
    """Relative standard deviations of the physical parameters.

    Each parameter is drawn from a normal around its nominal value with
    ``std = frac * nominal`` and truncated at three standard deviations.
    """

    m: float = 0.0
    L: float = 0.0
    L_r_ratio: float = 0.0
    C_f: float = 0.0
    C_r: float = 0.0
    susp_gain: float = 0.0
    I_z: float = 0.0
    delay_choices: tuple = (0,)

    def __post_init__(self):
        for name in _RANDOMIZED:
            v = getattr(self, name)
            if not 0.0 <= v <= 0.3:
                raise DomainError(f"randomization fraction {name}={v} outside [0, 0.3]")
        object.__setattr__(self, "delay_choices", tuple(int(d) for d in self.delay_choices))
        if not self.delay_choices or any(not 0 <= d <= MAX_DELAY_STEPS for d in self.delay_choices):
            raise DomainError(f"delay choices must be a nonempty subset of 0..5, got {self.delay_choices}")

    @classmethod
    def full(cls, frac: float = 0.1, delays=(0, 1, 2)) -> "RandomizationConfig":
        return cls(*(frac,) * len(_RANDOMIZED), delay_choices=tuple(delays))

    @classmethod
    def geometry_only(cls, frac: float = 0.1, delays=(0, 1, 2)) -> "RandomizationConfig":
        """Wheelbase, CoG location and delay only, for the kinematic tier."""
        return cls(L=frac, L_r_ratio=frac, delay_choices=tuple(delays))


def _truncated_normal(rng, mean, frac, n):
    if frac == 0.0:
        return np.full(n, float(mean))
    sd = frac * mean
    out = rng.normal(mean, sd, n)
    bad = np.abs(out - mean) > 3.0 * sd
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = np.abs(out - mean) > 3.0 * sd
    return out


def sample_param_arrays(nominal: VehicleParams, cfg: RandomizationConfig, rng, n: int) -> dict:
    """Draw ``n`` randomized parameter sets as arrays keyed by field name."""
    nominal_values = {
        "m": nominal.m, "L": nominal.L, "L_r_ratio": nominal.L_r / nominal.L, "C_f": nominal.C_f,
        "C_r": nominal.C_r, "susp_gain": nominal.susp_gain, "I_z": nominal.I_z,
    }
    draws = {k: _truncated_normal(rng, nominal_values[k], getattr(cfg, k), n) for k in _RANDOMIZED}
    delays = np.asarray(cfg.delay_choices)[rng.integers(0, len(cfg.delay_choices), n)]
    ratio = np.clip(draws.pop("L_r_ratio"), 1e-3, 1.0 - 1e-3)
    draws["L_r"] = ratio * draws["L"]
    draws["susp_gain"] = np.minimum(draws["susp_gain"], 2.0)
    draws["delay_steps"] = delays
    for k in ("m", "L", "L_r", "I_z", "C_f", "C_r", "susp_gain"):
        if np.any(draws[k] <= 0.0):
            raise DomainError(f"randomized {k} became non-positive")
    return draws


def randomize_params(nominal: VehicleParams, cfg: RandomizationConfig, rng) -> VehicleParams:
    draws = sample_param_arrays(nominal, cfg, rng, 1)
    values = {k: (int(v[0]) if k == "delay_steps" else float(v[0])) for k, v in draws.items()}
    return replace(nominal, **values)


def initial_state(pose: Pose2, v_x: float = 0.0) -> VehicleState:
    return VehicleState(pose=pose, v_x=float(v_x))

