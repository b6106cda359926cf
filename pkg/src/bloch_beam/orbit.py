"""Cyclotron orbits: level curves of E(k1, k2; k3) traced by the
pseudo-momentum flow ``dk/ds = mu * (-dE/dk2, dE/dk1)``."""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import DOP853
from scipy.optimize import brentq

from .bands import BandSampler
from .errors import (
    AssumptionViolation,
    BlochBeamError,
    InvalidInput,
    LevelSetNotFound,
    OrbitNotClosed,
    SimplicityViolation,
)

log = logging.getLogger(__name__)


def k3vec(k2, k3: float) -> np.ndarray:
    return np.array([k2[0], k2[1], k3], dtype=float)


def loop_integral(f: np.ndarray, g: np.ndarray) -> float:
    """``oint f dg`` for periodic samples on a uniform parameter grid.

    ``f`` and ``g`` hold one period without the repeated endpoint.  The
    derivative of ``g`` is taken spectrally, so smooth loops converge
    exponentially in the number of samples.
    """
    n = len(g)
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        freqs[n // 2] = 0.0
    dg = np.fft.ifft(1j * freqs * np.fft.fft(g)).real  # d g / d theta, theta in [0, 2pi)
    return float(np.sum(f * dg) * 2 * np.pi / n)


def spectral_derivative(values: np.ndarray, period: float) -> np.ndarray:
    """Derivative of periodic samples (one period, no endpoint) along axis 0."""
    n = values.shape[0]
    freqs = np.fft.fftfreq(n, d=period / n) * 2 * np.pi
    if n % 2 == 0:
        freqs[n // 2] = 0.0
    shape = (n,) + (1,) * (values.ndim - 1)
    return np.fft.ifft(1j * freqs.reshape(shape) * np.fft.fft(values, axis=0), axis=0).real


class _DenseTrajectory:
    """Piecewise dense output collected from an explicit RK stepper."""

    def __init__(self):
        self.t_right: list[float] = []
        self.pieces: list = []

    def append(self, t_right, piece):
        self.t_right.append(t_right)
        self.pieces.append(piece)

    def __call__(self, t: float) -> np.ndarray:
        i = min(bisect.bisect_left(self.t_right, t), len(self.pieces) - 1)
        return self.pieces[i](t)


@dataclass
class Orbit:
    """A closed level curve sampled uniformly in the flow time ``s``.

    Sample arrays include the closing point ``s = T`` as their last row.
    """

    k3: float
    E0: float
    band_index: int
    mu: float
    s: np.ndarray
    k: np.ndarray  # (N+1, 2)
    velocity: np.ndarray  # (N+1, 2) = dE/d(k1, k2)
    period: float
    orientation: int = 0
    area: float = float("nan")
    closure_error: float = 0.0
    _trajectory: Callable | None = field(default=None, repr=False, compare=False)

    @property
    def n_samples(self) -> int:
        return len(self.s) - 1

    @property
    def kdot(self) -> np.ndarray:
        return self.mu * np.column_stack([-self.velocity[:, 1], self.velocity[:, 0]])

    def resample(self, sampler: BandSampler, n_samples: int) -> "Orbit":
        """Same orbit on a different uniform grid (needs the traced trajectory)."""
        if self._trajectory is None:
            raise InvalidInput("orbit carries no trajectory to resample from")
        return _sample_orbit(sampler, self._trajectory, self.k3, self.E0, self.period, n_samples)


@dataclass(frozen=True)
class PeierlsLift:
    """Orbit expressed in Peierls phase-space coordinates ``(y, p)``."""

    p2_const: float
    c: float
    mu: float
    y: np.ndarray  # (N+1, 2)
    p: np.ndarray  # (N+1, 2)
    pdot: np.ndarray  # (N+1, 2)
    ydot: np.ndarray  # (N+1, 2)

    def k(self) -> np.ndarray:
        return np.column_stack([self.p[:, 0], self.p[:, 1] + self.mu * self.y[:, 0]])


def seed_point(
    sampler: BandSampler,
    k3: float,
    E0: float,
    direction=(1.0, 0.0),
    origin=(0.0, 0.0),
    *,
    t_max: float | None = None,
    n_scan: int = 64,
    tol_level: float = 1e-10,
) -> np.ndarray:
    """First crossing of the level ``E = E0`` along a ray in the (k1, k2) plane."""
    d = np.asarray(direction, dtype=float)
    if np.linalg.norm(d) == 0:
        raise InvalidInput("seed direction must be non-zero")
    d = d / np.linalg.norm(d)
    o = np.asarray(origin, dtype=float)
    if t_max is None:
        t_max = 0.5 * np.min(np.linalg.norm(sampler.basis.b, axis=1))

    def f(t):
        return sampler.energy(k3vec(o + t * d, k3)) - E0

    ts = np.linspace(0.0, t_max, n_scan + 1)
    prev = f(ts[0])
    if prev == 0.0:
        return o.copy()
    for t0, t1 in zip(ts[:-1], ts[1:]):
        try:
            cur = f(t1)
        except SimplicityViolation as exc:
            raise LevelSetNotFound(f"no crossing of E0={E0} before the band degenerates: {exc}") from None
        if cur == 0.0:
            return o + t1 * d
        if np.sign(cur) != np.sign(prev):
            t = brentq(f, t0, t1, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
            if abs(f(t)) > tol_level:
                raise LevelSetNotFound(f"root refinement stalled at |E - E0| = {abs(f(t)):.3e}")
            return o + t * d
        prev = cur
    raise LevelSetNotFound(f"no crossing of E0={E0} on the ray from {o.tolist()} along {d.tolist()} up to t={t_max}")


def _flow(sampler: BandSampler, k3: float, v_min: float):
    mu = sampler.mu

    def rhs(s, k):
        g = sampler.gradient(k3vec(k, k3))
        if np.hypot(g[0], g[1]) < v_min:
            raise AssumptionViolation(f"band velocity vanishes: |grad E| = {np.hypot(g[0], g[1]):.3e} at k={k.tolist()}")
        return mu * np.array([-g[1], g[0]])

    return rhs


def _project_to_level(sampler: BandSampler, k, k3, E0, iters: int = 4):
    """Newton steps along the gradient onto ``E = E0``; returns ``(k, grad)``."""
    k = np.array(k, dtype=float)
    tol = 1e-14 * max(1.0, abs(E0))
    for _ in range(iters):
        E, g = sampler.energy_gradient(k3vec(k, k3))
        g = g[:2]
        dE = E - E0
        if abs(dE) <= tol:
            break
        k = k - dE * g / (g @ g)
    else:
        g = sampler.gradient(k3vec(k, k3))[:2]
    return k, g


def _sample_orbit(sampler, trajectory, k3, E0, period, n_samples) -> Orbit:
    s = np.linspace(0.0, period, n_samples + 1)
    proj = [_project_to_level(sampler, trajectory(si), k3, E0) for si in s]
    k = np.array([p[0] for p in proj])
    vel = np.array([p[1] for p in proj])
    orbit = Orbit(k3, E0, sampler.band_index, sampler.mu, s, k, vel, period, _trajectory=trajectory)
    orbit.closure_error = float(np.linalg.norm(k[-1] - k[0]))
    orbit_area(orbit)
    return orbit


def trace_orbit(
    sampler: BandSampler,
    seed,
    k3: float,
    E0: float,
    *,
    n_samples: int = 256,
    rtol: float = 1e-12,
    atol: float = 1e-14,
    v_min: float = 1e-8,
    s_max: float = 1e4,
    tol_close: float = 1e-8,
    tol_level: float = 1e-10,
) -> Orbit:
    """Integrate the pseudo-momentum flow from ``seed`` until it closes.

    The period is the first positive crossing of the line through the seed
    orthogonal to the initial velocity, located by root finding on the
    integrator's dense output.  The closed orbit is then resampled on a
    uniform grid of ``n_samples`` intervals and projected onto ``E = E0``.

    Raises
    ------
    AssumptionViolation
        ``|grad E|`` falls below ``v_min`` on the way.
    OrbitNotClosed
        No return within ``s_max`` or the sampled curve self-intersects.
    """
    if n_samples < 8:
        raise InvalidInput("n_samples must be at least 8")
    k0 = np.asarray(seed, dtype=float).reshape(2)
    e_seed = sampler.energy(k3vec(k0, k3))
    if abs(e_seed - E0) > max(tol_level, 1e-8):
        raise InvalidInput(f"seed is off the level set: E - E0 = {e_seed - E0:.3e}")
    rhs = _flow(sampler, k3, v_min)
    u0 = rhs(0.0, k0)
    u0 = u0 / np.linalg.norm(u0)

    def section(k):
        return float((k - k0) @ u0)

    solver = DOP853(rhs, 0.0, k0, s_max, rtol=rtol, atol=atol)
    traj = _DenseTrajectory()
    g_prev = 0.0
    max_dist = 0.0
    period = None
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise OrbitNotClosed(f"integrator failed: {msg}")
        dense = solver.dense_output()
        traj.append(solver.t, dense)
        g_new = section(solver.y)
        max_dist = max(max_dist, float(np.linalg.norm(solver.y - k0)))
        if g_prev < 0.0 <= g_new:
            t_c = brentq(lambda t: section(dense(t)), solver.t_old, solver.t, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            if np.linalg.norm(dense(t_c) - k0) <= max(10 * tol_close, 0.05 * max_dist):
                period = t_c
                break
        g_prev = g_new
    if period is None:
        raise OrbitNotClosed(f"no return to the seed section within s_max={s_max}")

    orbit = _sample_orbit(sampler, traj, k3, E0, period, n_samples)
    if orbit.closure_error > tol_close:
        raise OrbitNotClosed(f"closure error {orbit.closure_error:.3e} > {tol_close:g}")
    level_err = max(abs(sampler.energy(k3vec(ki, k3)) - E0) for ki in orbit.k)
    if level_err > tol_level:
        raise BlochBeamError(f"samples leave the level set by {level_err:.3e}")
    if not polygon_is_simple(orbit.k[:-1]):
        raise OrbitNotClosed("sampled orbit self-intersects")
    return orbit


def polygon_is_simple(pts: np.ndarray, chunk: int = 256) -> bool:
    """True when the closed polygon through ``pts`` has no self-intersections."""
    p = np.asarray(pts, dtype=float)
    q = np.roll(p, -1, axis=0)
    n = len(p)

    def cross(o, a, b):
        return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0])

    idx = np.arange(n)
    for start in range(0, n, chunk):
        i = idx[start:start + chunk, None]
        j = idx[None, :]
        # non-adjacent pairs only, each pair once
        mask = (j > i + 1) & ~((i == 0) & (j == n - 1))
        if not mask.any():
            continue
        a, b = p[i[:, 0]][:, None, :], q[i[:, 0]][:, None, :]
        c, d = p[None, :, :], q[None, :, :]
        d1, d2 = cross(c, d, a), cross(c, d, b)
        d3, d4 = cross(a, b, c), cross(a, b, d)
        hit = (d1 * d2 < 0) & (d3 * d4 < 0) & mask
        if hit.any():
            return False
    return True


def orbit_area(orbit: Orbit) -> float:
    """Enclosed area ``|oint k1 dk2|``; stores area and orientation on the orbit."""
    if orbit.closure_error > 1e-6 * max(1.0, float(np.abs(orbit.k).max())):
        raise InvalidInput("orbit is not closed")
    signed = loop_integral(orbit.k[:-1, 0], orbit.k[:-1, 1])
    orbit.orientation = 1 if signed > 0 else -1
    orbit.area = abs(signed)
    return orbit.area


@dataclass
class AreaProfile:
    E0: float
    k3: np.ndarray
    area: np.ndarray
    failures: dict = field(default_factory=dict)
    extrema: list = field(default_factory=list)  # (k3, S, "max" | "min")


def find_extrema(x: np.ndarray, y: np.ndarray) -> list[tuple[float, float, str]]:
    """Local extrema of sampled ``y(x)`` refined by a three-point quadratic fit."""
    out = []
    ok = np.isfinite(y)
    for i in range(1, len(x) - 1):
        if not (ok[i - 1] and ok[i] and ok[i + 1]):
            continue
        left = y[i] - y[i - 1]
        right = y[i + 1] - y[i]
        if left * right > 0 or (left == 0 and right == 0):
            continue
        if left == 0 and i > 1 and ok[i - 2]:
            # plateau start counted once at the later index
            continue
        coef = np.polyfit(x[i - 1:i + 2], y[i - 1:i + 2], 2)
        if coef[0] == 0:
            continue
        xv = -coef[1] / (2 * coef[0])
        kind = "max" if coef[0] < 0 else "min"
        out.append((float(xv), float(np.polyval(coef, xv)), kind))
    return out


def area_profile(
    sampler: BandSampler,
    E0: float,
    k3_grid: Sequence[float],
    *,
    seed_direction=(1.0, 0.0),
    seed_origin=(0.0, 0.0),
    executor=None,
    **trace_kw,
) -> AreaProfile:
    """``S(k3)`` over a grid with its extrema; per-point failures are recorded."""
    k3_grid = np.asarray(k3_grid, dtype=float)
    jobs = [(sampler, E0, k3, seed_direction, seed_origin, trace_kw) for k3 in k3_grid]
    results = list(executor.map(_area_job, jobs)) if executor else [_area_job(j) for j in jobs]
    areas = np.full(len(k3_grid), np.nan)
    failures = {}
    for i, (S, err) in enumerate(results):
        if err is None:
            areas[i] = S
        else:
            failures[float(k3_grid[i])] = err
            log.warning("orbit at k3=%g failed: %s", k3_grid[i], err)
    return AreaProfile(E0, k3_grid, areas, failures, find_extrema(k3_grid, areas))


def _area_job(args):
    sampler, E0, k3, direction, origin, trace_kw = args
    try:
        seed = seed_point(sampler, k3, E0, direction, origin)
        return trace_orbit(sampler, seed, k3, E0, **trace_kw).area, None
    except BlochBeamError as exc:
        return None, f"{type(exc).__name__}: {exc}"


def peierls_lift(orbit: Orbit, p2_const: float = 0.0, c: float = 0.0) -> PeierlsLift:
    """Substitute ``k1 = p1, k2 = p2 + mu y1, y2 = -p1/mu + c``."""
    mu = orbit.mu
    p1 = orbit.k[:, 0]
    p = np.column_stack([p1, np.full_like(p1, p2_const)])
    y = np.column_stack([(orbit.k[:, 1] - p2_const) / mu, -p1 / mu + c])
    pdot = np.column_stack([-mu * orbit.velocity[:, 1], np.zeros_like(p1)])
    return PeierlsLift(p2_const, c, mu, y, p, pdot, orbit.velocity.copy())
