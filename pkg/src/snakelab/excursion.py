"""Reflecting Brownian motion, conditioned Ito excursions and local-time counters.

Excursions are stored on a uniform grid together with the minimum and maximum
of the Brownian bridge inside every cell.  The piecewise-linear path through
the grid points and these cell extrema (see ``polyline``) is the contour that
every downstream construction works with, so running extrema are exact in law
rather than biased by O(sqrt(dt)).
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

DEFAULT_DT = 1e-3          # in units of h**2
DEFAULT_MAX_POINTS = 10**7
_CHUNK = 1 << 15


def default_dt(h, rel=DEFAULT_DT):
    """Absolute time step for conditioning height h."""
    return rel * h * h


@dataclass(frozen=True)
class GridPath:
    dt: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if len(self.values) < 2:
            raise ValueError("a grid path needs at least two points")

    @property
    def duration(self):
        return (len(self.values) - 1) * self.dt

    def times(self):
        return self.t0 + self.dt * np.arange(len(self.values))


@dataclass(frozen=True)
class Excursion:
    path: GridPath
    sigma: float
    h_cond: float
    t_hit: int
    cell_lo: np.ndarray = field(repr=False)
    cell_hi: np.ndarray = field(repr=False)
    truncated: bool = False
    height_cap: Optional[float] = None

    @classmethod
    def from_values(cls, values, dt=1.0, h_cond=None):
        """Deterministic excursion whose contour is the linear interpolation of `values`."""
        v = np.asarray(values, dtype=float)
        if h_cond is None:
            h_cond = float(v.max())
        above = np.nonzero(v >= h_cond)[0]
        t_hit = int(above[0]) if above.size else -1
        lo = np.minimum(v[:-1], v[1:])
        hi = np.maximum(v[:-1], v[1:])
        return cls(GridPath(dt, v), (len(v) - 1) * dt, h_cond, t_hit, lo, hi)

    @property
    def max_height(self):
        return float(self.cell_hi.max()) if self.cell_hi.size else float(self.path.values.max())


@dataclass(frozen=True)
class DowncrossReport:
    count: int
    completion_indices: np.ndarray


def sample_reflecting_bm(duration, dt, r0, rng):
    """|W| on a uniform grid, W a Brownian path started at r0."""
    if dt <= 0 or duration < dt:
        raise ValueError("need dt > 0 and duration >= dt")
    if r0 < 0:
        raise ValueError("r0 must be nonnegative")
    n = int(round(duration / dt))
    w = np.empty(n + 1)
    w[0] = r0
    np.cumsum(rng.standard_normal(n) * np.sqrt(dt), out=w[1:])
    w[1:] += r0
    return GridPath(dt, np.abs(w))


@njit(cache=True)
def _absorbed_chunk(x, dt, z, u1, u2, cap, vals, lo, hi, pos, limit):
    # Brownian steps from x with exact bridge extrema per cell; stops on hitting 0.
    sdt = np.sqrt(dt)
    for i in range(z.shape[0]):
        if pos + 1 >= limit:
            return pos, x, 2
        a = x
        b = a + sdt * z[i]
        if b > cap:
            b = cap
        d = b - a
        m = 0.5 * (a + b - np.sqrt(d * d - 2.0 * dt * np.log(u1[i])))
        if m <= 0.0:
            lo[pos] = 0.0
            hi[pos] = a
            pos += 1
            vals[pos] = 0.0
            return pos, 0.0, 1
        M = 0.5 * (a + b + np.sqrt(d * d - 2.0 * dt * np.log(u2[i])))
        if M > cap:
            M = cap
        lo[pos] = m
        hi[pos] = M
        pos += 1
        vals[pos] = b
        x = b
    return pos, x, 0


def _bessel3_until(h, dt, rng):
    """Norm of a 3d Brownian path from 0 until its first passage over h.

    The passage is also detected inside a cell: near h the radial part moves
    like a 1d Brownian motion, so the bridge-maximum law decides whether the
    level was crossed between two grid points.  Returns the grid values and
    the maximum of the crossing cell.
    """
    sdt = np.sqrt(dt)
    pieces = []
    start = np.zeros(3)
    prev = 0.0
    chunk = 256
    while True:
        steps = rng.standard_normal((chunk, 3)) * sdt
        u = 1.0 - rng.random(chunk)
        pts = start + np.cumsum(steps, axis=0)
        r = np.sqrt((pts * pts).sum(axis=1))
        a = np.concatenate([[prev], r[:-1]])
        d = r - a
        top = 0.5 * (a + r + np.sqrt(d * d - 2.0 * dt * np.log(u)))
        hit = np.nonzero(top >= h)[0]
        if hit.size:
            k = hit[0]
            pieces.append(r[: k + 1])
            return np.concatenate([[0.0]] + pieces), float(top[k])
        pieces.append(r)
        start = pts[-1]
        prev = r[-1]
        chunk = min(2 * chunk, _CHUNK)


def sample_excursion_conditioned(h, dt, rng, max_points=DEFAULT_MAX_POINTS, height_cap=None):
    """Sample an Ito excursion conditioned on reaching height h.

    Up to T_h the path is a Bessel(3) process; afterwards a Brownian motion
    absorbed at 0.  With ``height_cap`` the part of the path above the cap is
    cut out (the path is reflected below the cap), which leaves everything the
    erased tree encodes below ``height_cap - h`` unchanged in law.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if height_cap is not None and height_cap <= h:
        raise ValueError("height_cap must exceed h")
    head, top = _bessel3_until(h, dt, rng)
    t_hit = len(head) - 1
    cap = np.inf if height_cap is None else float(height_cap)
    head[-1] = min(head[-1], cap)
    top = min(top, cap)
    if len(head) >= max_points:
        head = head[:max_points]
        lo = np.minimum(head[:-1], head[1:])
        return Excursion(GridPath(dt, head), (len(head) - 1) * dt, h, t_hit, lo,
                         np.maximum(head[:-1], head[1:]), truncated=True, height_cap=height_cap)

    size = 4 * len(head) + 4096
    vals = np.empty(size)
    lo = np.empty(size)
    hi = np.empty(size)
    n0 = len(head)
    vals[:n0] = head
    lo[: n0 - 1] = np.minimum(head[:-1], head[1:])
    hi[: n0 - 1] = np.maximum(head[:-1], head[1:])
    hi[n0 - 2] = max(hi[n0 - 2], top)
    pos = n0 - 1
    x = head[-1]
    status = 0
    chunk = 1024
    while status == 0:
        if pos + chunk + 2 > size:
            size = 2 * (pos + chunk + 2)
            vals = np.resize(vals, size)
            lo = np.resize(lo, size)
            hi = np.resize(hi, size)
        z = rng.standard_normal(chunk)
        u = 1.0 - rng.random((2, chunk))
        pos, x, status = _absorbed_chunk(x, dt, z, u[0], u[1], cap, vals, lo, hi, pos, max_points)
        chunk = min(2 * chunk, _CHUNK)
    n = pos + 1
    vals = vals[:n].copy()
    return Excursion(GridPath(dt, vals), pos * dt, h, t_hit, lo[:pos].copy(), hi[:pos].copy(),
                     truncated=(status == 2), height_cap=height_cap)


@njit(cache=True)
def _polyline(v, lo, hi, dt):
    n = v.shape[0]
    t = np.empty(3 * n)
    y = np.empty(3 * n)
    t[0] = 0.0
    y[0] = v[0]
    j = 1
    for k in range(n - 1):
        a = v[k]
        b = v[k + 1]
        t0 = k * dt
        m = lo[k]
        M = hi[k]
        has_m = m < min(a, b)
        has_M = M > max(a, b)
        if a <= b:
            if has_m:
                t[j] = t0 + dt / 3.0
                y[j] = m
                j += 1
            if has_M:
                t[j] = t0 + 2.0 * dt / 3.0
                y[j] = M
                j += 1
        else:
            if has_M:
                t[j] = t0 + dt / 3.0
                y[j] = M
                j += 1
            if has_m:
                t[j] = t0 + 2.0 * dt / 3.0
                y[j] = m
                j += 1
        t[j] = t0 + dt
        y[j] = b
        j += 1
    return t[:j], y[:j]


def polyline(exc):
    """Times and heights of the refined contour (grid points plus cell extrema)."""
    return _polyline(exc.path.values, exc.cell_lo, exc.cell_hi, exc.path.dt)


def local_time_occupation(path, y, band):
    if band <= 0:
        raise ValueError("band must be positive")
    v = path.values
    return float(path.dt * np.count_nonzero((v > y) & (v < y + band)) / band)


@njit(cache=True)
def _downcross(v, level, h):
    out = np.empty(v.shape[0], dtype=np.int64)
    n = 0
    armed = False
    for k in range(v.shape[0]):
        if v[k] > level + h:
            armed = True
        elif armed and v[k] <= level:
            out[n] = k
            n += 1
            armed = False
    return out[:n]


def count_downcrossings(path, level, h):
    """Episodes where the path strictly exceeds level+h and then returns to <= level."""
    if h <= 0:
        raise ValueError("h must be positive")
    idx = _downcross(np.asarray(path.values, dtype=float), float(level), float(h))
    return DowncrossReport(int(idx.size), idx)
