"""Poses, reference paths and the error-frame transform.

A reference path is a buffer of timestamped poses sampled at 20 Hz. The
tracking state of a vehicle is expressed relative to the closest point ahead
on that buffer, which makes the observation independent of where the path
sits in the world frame.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi
SEARCH_WINDOW = 50
AHEAD_TOL = 1e-9  # m, a point abreast of the agent counts as ahead despite roundoff
PATH_CSV_HEADER = ("t", "x", "y", "theta", "v")


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi].

    >>> wrap_angle(3 * math.pi) == math.pi
    True
    """
    if not math.isfinite(a):
        raise DomainError(f"cannot wrap non-finite angle {a!r}")
    if -math.pi < a <= math.pi:
        return float(a)
    r = math.pi - math.fmod(math.pi - a, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


def wrap_angles(a: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("cannot wrap non-finite angles")
    r = math.pi - np.mod(math.pi - a, TWO_PI)
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    r = np.where(r > math.pi, r - TWO_PI, r)
    return np.where((a > -math.pi) & (a <= math.pi), a, r)


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def transformed(self, tx: float, ty: float, phi: float) -> "Pose2":
        """Apply the rigid motion (rotate by ``phi``, then translate)."""
        c, s = math.cos(phi), math.sin(phi)
        return Pose2(c * self.x - s * self.y + tx, s * self.x + c * self.y + ty, self.theta + phi)


@dataclass(frozen=True)
class PathPoint:
    t: float
    pose: Pose2
    speed: float


class SourceTag(str, enum.Enum):
    VIRTUAL = "Virtual"
    REAL_LOG = "RealLog"


@dataclass(frozen=True)
class ErrorState:
    eps_d: float
    eps_theta: float
    dx_long: float
    ref_index: int
    ref_speed: float


class PathBuffer:
    """Ordered, immutable buffer of reference samples.

    Samples are held column-wise in numpy arrays; ``points`` gives the
    record view.
    """

    __slots__ = ("t", "x", "y", "theta", "v", "cos", "sin", "source_tag", "name")

    def __init__(self, t, x, y, theta, v, source_tag=SourceTag.VIRTUAL, name=""):
        cols = [np.array(c, dtype=float, copy=True) for c in (t, x, y, theta, v)]
        n = cols[0].shape[0]
        if any(c.ndim != 1 or c.shape[0] != n for c in cols):
            raise DomainError("path columns must be 1-D and of equal length")
        if n < 2:
            raise DomainError(f"a path needs at least 2 points, got {n}")
        if not all(np.all(np.isfinite(c)) for c in cols):
            raise DomainError("path contains non-finite values")
        t, x, y, theta, v = cols
        if np.any(np.diff(t) <= 0.0):
            raise DomainError("path timestamps must be strictly increasing")
        if np.any(v < 0.0):
            raise DomainError("path speeds must be non-negative")
        if np.any(np.hypot(np.diff(x), np.diff(y)) == 0.0):
            raise DomainError("path has zero-length segments")
        theta = wrap_angles(theta)
        for c in (t, x, y, theta, v):
            c.setflags(write=False)
        self.t, self.x, self.y, self.theta, self.v = t, x, y, theta, v
        self.cos = np.cos(theta)
        self.sin = np.sin(theta)
        self.source_tag = SourceTag(source_tag)
        self.name = name

    def __len__(self):
        return self.t.shape[0]

    def __getitem__(self, i) -> PathPoint:
        return PathPoint(float(self.t[i]), Pose2(float(self.x[i]), float(self.y[i]), float(self.theta[i])),
                         float(self.v[i]))

    @property
    def points(self) -> list[PathPoint]:
        return [self[i] for i in range(len(self))]

    @classmethod
    def from_points(cls, points, source_tag=SourceTag.VIRTUAL, name=""):
        return cls([p.t for p in points], [p.pose.x for p in points], [p.pose.y for p in points],
                   [p.pose.theta for p in points], [p.speed for p in points], source_tag, name)

    def pose(self, i: int) -> Pose2:
        return Pose2(float(self.x[i]), float(self.y[i]), float(self.theta[i]))

    def transformed(self, tx: float, ty: float, phi: float) -> "PathBuffer":
        """The same path after a rigid world motion."""
        c, s = math.cos(phi), math.sin(phi)
        return PathBuffer(self.t, c * self.x - s * self.y + tx, s * self.x + c * self.y + ty,
                          self.theta + phi, self.v, self.source_tag, self.name)

    def with_tag(self, tag, name=None) -> "PathBuffer":
        return PathBuffer(self.t, self.x, self.y, self.theta, self.v, tag,
                          self.name if name is None else name)

    def equals(self, other: "PathBuffer") -> bool:
        return (self.source_tag == other.source_tag
                and all(np.array_equal(a, b) for a, b in zip(self._cols(), other._cols())))

    def _cols(self):
        return (self.t, self.x, self.y, self.theta, self.v)

    def __repr__(self):
        return f"PathBuffer(name={self.name!r}, n={len(self)}, tag={self.source_tag.value})"


def _ahead_mask(buffer: PathBuffer, sl: slice, ax: float, ay: float) -> np.ndarray:
    # Offset of each point in front of the agent, measured along the point's own heading.
    return (buffer.x[sl] - ax) * buffer.cos[sl] + (buffer.y[sl] - ay) * buffer.sin[sl] >= -AHEAD_TOL


def _argmin_ahead(buffer: PathBuffer, lo: int, hi: int, ax: float, ay: float):
    sl = slice(lo, hi)
    ahead = _ahead_mask(buffer, sl, ax, ay)
    if not ahead.any():
        return None
    d2 = (buffer.x[sl] - ax) ** 2 + (buffer.y[sl] - ay) ** 2
    d2 = np.where(ahead, d2, np.inf)
    return lo + int(np.argmin(d2))


def closest_next_point(buffer: PathBuffer, agent: Pose2, hint: int | None = None) -> int:
    """Index of the nearest buffer point that is not behind the agent.

    A point counts as ahead when the agent's position, projected on that
    point's heading, does not lie beyond it. With ``hint`` only a window of
    +-50 samples around the hint is scanned; the global scan is the fallback
    when that window holds no point ahead.
    """
    n = len(buffer)
    if n == 0:
        raise DomainError("empty path buffer")
    if hint is not None:
        if not 0 <= hint < n:
            raise DomainError(f"hint {hint} out of range for buffer of length {n}")
        idx = _argmin_ahead(buffer, max(0, hint - SEARCH_WINDOW), min(n, hint + SEARCH_WINDOW + 1),
                            agent.x, agent.y)
        if idx is not None:
            return idx
    idx = _argmin_ahead(buffer, 0, n, agent.x, agent.y)
    return n - 1 if idx is None else idx


def error_state(buffer: PathBuffer, agent: Pose2, idx: int) -> ErrorState:
    """Agent pose expressed in the frame of reference sample ``idx``.

    Equivalent to multiplying the agent position by the inverse of the
    reference's homogeneous transform; the rotation inverse is its transpose.
    """
    if not 0 <= idx < len(buffer):
        raise DomainError(f"reference index {idx} out of range")
    c, s = buffer.cos[idx], buffer.sin[idx]
    ex, ey = agent.x - buffer.x[idx], agent.y - buffer.y[idx]
    dx = c * ex + s * ey
    dy = -s * ex + c * ey
    return ErrorState(eps_d=float(dy), eps_theta=wrap_angle(agent.theta - float(buffer.theta[idx])),
                      dx_long=float(dx), ref_index=idx, ref_speed=float(buffer.v[idx]))


def resample_path(buffer: PathBuffer, dt: float) -> PathBuffer:
    """Resample onto a uniform time grid starting at the first timestamp.

    Positions and speed are interpolated linearly, heading by averaging unit
    vectors so that the interpolation never crosses the +-pi cut the long way.
    """
    if not dt > 0.0:
        raise DomainError(f"dt must be positive, got {dt}")
    if len(buffer) < 2:
        raise DomainError("need at least two samples to resample")
    t = buffer.t
    n_out = int(math.floor((t[-1] - t[0]) / dt + 1e-9)) + 1
    grid = t[0] + dt * np.arange(n_out)
    if n_out == len(buffer) and np.allclose(grid, t, rtol=0.0, atol=1e-9 * dt):
        return PathBuffer(t, buffer.x, buffer.y, buffer.theta, buffer.v, buffer.source_tag, buffer.name)
    grid[-1] = min(grid[-1], t[-1])
    i = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 2)
    f = (grid - t[i]) / (t[i + 1] - t[i])
    exact = f == 0.0

    def lerp(col):
        return np.where(exact, col[i], col[i] + f * (col[i + 1] - col[i]))

    cx = (1.0 - f) * buffer.cos[i] + f * buffer.cos[i + 1]
    sy = (1.0 - f) * buffer.sin[i] + f * buffer.sin[i + 1]
    theta = np.where(exact, buffer.theta[i], np.arctan2(sy, cx))
    return PathBuffer(grid, lerp(buffer.x), lerp(buffer.y), theta, lerp(buffer.v), buffer.source_tag,
                      buffer.name)


def write_path_csv(buffer: PathBuffer, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATH_CSV_HEADER)
        for row in zip(*buffer._cols()):
            w.writerow([repr(float(v)) for v in row])


def read_path_csv(path, source_tag=SourceTag.VIRTUAL, name=None) -> PathBuffer:
    """Load a ``t,x,y,theta,v`` trajectory file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PATH_CSV_HEADER:
            raise DomainError(f"{path}: expected header {','.join(PATH_CSV_HEADER)}, got {header}")
        rows = [[float(v) for v in r] for r in reader if r]
    if not rows:
        raise DomainError(f"{path}: no samples")
    cols = np.array(rows, dtype=float).T
    return PathBuffer(*cols, source_tag=source_tag, name=Path(path).stem if name is None else name)
