"""Leading-order quasimode data and its residual checks.

The quasimode is ``u = exp(i phi(y)/eps) f0(y) Phi(x, K(y))`` with the
complex phase ``phi`` built as a quadratic jet about the lifted orbit and
``K(y) = (dphi/dy1, dphi/dy2 + mu*y1, k3)``.  Two residual pieces are
measured in a tube of radius ``O(sqrt(eps))``:

* the eikonal defect ``G(y) = E(K(y)) - E0``, which vanishes to third order
  in the distance to the orbit;
* the transport defect ``L(y)``, the ``Phi``-projection of the first-order
  term with ``f0`` extended constantly along transverse fibres.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .bands import (
    BandSampler,
    band_derivatives,
    bloch_derivative,
    gauge_connection,
    reduced_resolvent_apply,
    wr_integrand,
)
from .errors import AccuracyError, DomainError, InvalidInput
from .frame import BandTrack, BeamFrame
from .orbit import Orbit, PeierlsLift

log = logging.getLogger(__name__)

DEFAULT_TOL_AMP = 1e-7
G_FLOOR = 1e-13


@dataclass
class AmplitudeTrace:
    """Transport amplitude at the orbit samples.

    ``f0`` is the ODE solution; ``f0_closed`` is
    ``sqrt(det Y(0) / det Y(s)) exp(-i theta(s))`` on the continuous branch.
    """

    s: np.ndarray
    f0: np.ndarray
    f0_closed: np.ndarray
    theta: np.ndarray
    rate: np.ndarray  # d theta / ds
    tau: np.ndarray  # d/ds log det Y
    mismatch: float

    @property
    def f0dot(self) -> np.ndarray:
        return -(0.5 * self.tau + 1j * self.rate) * self.f0

    def monodromy(self) -> complex:
        return complex(self.f0[-1] / self.f0[0])


def transport_amplitude(frame: BeamFrame, track: BandTrack, *, tol_amp: float = DEFAULT_TOL_AMP) -> AmplitudeTrace:
    """Solve ``f0' + (1/2)(log det Y)' f0 + i(theta_b' + theta_rw') f0 = 0``.

    The ODE solution comes from the frame integration; the closed form uses
    the sampled ``det Y`` with its argument unwrapped sample to sample.
    """
    arg = np.angle(frame.det_y)
    steps = np.diff(arg)
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    if np.abs(steps).max() >= np.pi / 2:
        raise AccuracyError("det Y phase jumps by >= pi/2 between samples; refine the orbit sampling")
    arg_c = arg[0] + np.concatenate([[0.0], np.cumsum(steps)])
    log_ratio = np.log(np.abs(frame.det_y / frame.det_y[0])) + 1j * (arg_c - arg_c[0])
    theta = frame.theta_b + frame.theta_rw
    closed = np.exp(-0.5 * log_ratio - 1j * theta)
    mismatch = float(np.abs(frame.f0 - closed).max())
    if mismatch > tol_amp:
        raise AccuracyError(f"transport ODE and closed form differ by {mismatch:.3e} > {tol_amp:g}")
    kdot = frame.mu * np.column_stack([-track.gradient[:, 1], track.gradient[:, 0]])
    rate = np.einsum("si,si->s", track.connection[:, :2], kdot) + frame.mu * track.wr
    return AmplitudeTrace(frame.s.copy(), frame.f0.copy(), closed, theta, rate, frame.tau, mismatch)


@dataclass
class JetPoint:
    phi: complex
    K: np.ndarray  # complex 3-vector
    s_star: float
    d: float
    grad_phi: np.ndarray
    grad_s: np.ndarray
    offset: np.ndarray


@dataclass
class PhaseJet:
    """Quadratic phase jet about the lifted orbit.

    Off the orbit, ``phi(y) = phi(s*) + p(s*).D + (1/2) D.M(s*).D`` with
    ``D = y - y(s*)`` and ``s*`` the foot of the normal through ``y``.
    """

    orbit: Orbit
    lift: PeierlsLift
    frame: BeamFrame
    amplitude: AmplitudeTrace
    tube_radius: float = np.inf
    transverse_floor: float = field(init=False)

    def __post_init__(self):
        s, T = self.orbit.s, self.orbit.period
        lift, fr = self.lift, self.frame
        yddot = np.einsum("sij,sj->si", fr.blocks.C, self.orbit.kdot)
        self._y = CubicHermiteSpline(s, lift.y, lift.ydot)
        self._ydot = CubicHermiteSpline(s, lift.ydot, yddot)
        self._p = CubicHermiteSpline(s, lift.p, lift.pdot)
        Mdot = fr.Mdot
        self._M = CubicHermiteSpline(s, fr.M, Mdot)
        self._Mdot = CubicSpline(s, Mdot)
        amp = self.amplitude
        self._f0 = CubicHermiteSpline(s, amp.f0, amp.f0dot)
        self._rate = CubicSpline(s, amp.rate)
        self._tau = CubicSpline(s, amp.tau)
        pv = np.einsum("si,si->s", lift.p, lift.ydot)
        self._phi = CubicSpline(s, pv).antiderivative()
        self._ys = lift.y
        self._T = T
        yd = lift.ydot
        n = np.column_stack([-yd[:, 1], yd[:, 0]]) / np.linalg.norm(yd, axis=1)[:, None]
        self.transverse_floor = float(np.einsum("si,sij,sj->s", n, fr.M.imag, n).min())

    # orbit data at arbitrary s
    def y(self, s):
        return self._y(s)

    def ydot(self, s):
        return self._ydot(s)

    def normal(self, s) -> np.ndarray:
        yd = self._ydot(s)
        return np.array([-yd[1], yd[0]]) / np.hypot(yd[0], yd[1])

    def f0(self, s) -> complex:
        return complex(self._f0(s))

    def f0dot(self, s) -> complex:
        return complex(-(0.5 * self._tau(s) + 1j * self._rate(s)) * self._f0(s))

    def M(self, s) -> np.ndarray:
        return self._M(s)

    def nearest(self, y) -> tuple[float, float]:
        """Foot point ``s*`` and distance of ``y`` to the orbit."""
        y = np.asarray(y, dtype=float)
        j = int(np.argmin(np.sum((self._ys[:-1] - y) ** 2, axis=1)))
        s = self.orbit.s[j]
        for _ in range(8):
            D = y - self._y(s)
            yd = self._ydot(s)
            F = D @ yd
            dF = -(yd @ yd) + D @ self._ydot(s, 1)
            step = F / dF
            s = (s - step) % self._T
            if abs(step) < 1e-15 * self._T:
                break
        return float(s), float(np.linalg.norm(y - self._y(s)))


def phase_jet_eval(jet: PhaseJet, y) -> JetPoint:
    """Phase value, ``K(y)``, foot point and distance for a point in the tube."""
    y = np.asarray(y, dtype=float)
    s, d = jet.nearest(y)
    if d > jet.tube_radius:
        raise DomainError(f"point {y.tolist()} lies {d:.3e} from the orbit, outside the tube {jet.tube_radius:g}")
    D = y - jet.y(s)
    yd, ydd = jet.ydot(s), jet._ydot(s, 1)
    grad_s = yd / (yd @ yd - D @ ydd)
    M = jet.M(s)
    p = jet._p(s)
    phi = complex(jet._phi(s)) + p @ D + 0.5 * D @ M @ D
    grad_phi = p + M @ D + 0.5 * (D @ jet._Mdot(s) @ D) * grad_s
    mu = jet.orbit.mu
    K = np.array([grad_phi[0], grad_phi[1] + mu * y[0], jet.orbit.k3])
    return JetPoint(phi, K, s, d, grad_phi, grad_s, D)


@dataclass
class EikonalReport:
    deltas: np.ndarray
    sup_G: np.ndarray
    slope: float
    vacuous: bool

    @property
    def passed(self) -> bool:
        return self.vacuous or self.slope >= 2.8


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def eikonal_residual(
    jet: PhaseJet,
    sampler: BandSampler,
    deltas: Sequence[float] = (1e-2, 5e-3, 2.5e-3, 1.25e-3),
    n_base: int = 8,
) -> EikonalReport:
    """Vanishing order of ``|E(K(y)) - E0|`` along transverse rays.

    Rays start at ``n_base`` evenly spaced orbit samples and are probed on
    both sides; the slope of ``log sup|G|`` against ``log delta`` is fitted.
    """
    deltas = np.asarray(deltas, dtype=float)
    if len(deltas) < 2:
        raise InvalidInput("need at least two offsets")
    idx = np.linspace(0, jet.orbit.n_samples, n_base, endpoint=False).astype(int)
    E0 = jet.orbit.E0
    sup = np.zeros(len(deltas))
    for i, dl in enumerate(deltas):
        for j in idx:
            s = jet.orbit.s[j]
            base, n = jet.y(s), jet.normal(s)
            for sign in (1.0, -1.0):
                pt = phase_jet_eval(jet, base + sign * dl * n)
                sup[i] = max(sup[i], abs(sampler.continued_energy(pt.K) - E0))
    if np.all(sup < G_FLOOR):
        return EikonalReport(deltas, sup, float("nan"), True)
    return EikonalReport(deltas, sup, loglog_slope(deltas, np.maximum(sup, G_FLOOR)), False)


@dataclass
class ResidualReport:
    eps_list: np.ndarray
    sup_residual: np.ndarray
    slope: float
    diagnostics: list = field(default_factory=list)

    def __post_init__(self):
        if not np.isfinite(self.slope):
            raise AccuracyError("residual slope is not finite")


def _tube_residual(jet: PhaseJet, sampler: BandSampler, y, eps: float, include_m1perp: bool):
    pt = phase_jet_eval(jet, y)
    # band data entering L are taken at Re K; the difference is O(d) like L itself
    st, d = sampler.derivatives(pt.K.real)
    mu = jet.orbit.mu
    f0 = jet.f0(pt.s_star)
    G = sampler.continued_energy(pt.K) - jet.orbit.E0
    v = d.gradient[:2]
    J = jet.M(pt.s_star) + mu * np.array([[0.0, 0.0], [1.0, 0.0]])
    a = gauge_connection(st, d)[:2]
    WR = wr_integrand(sampler.basis, st, d)
    H2 = d.hessian[:2, :2]
    L = (v @ pt.grad_s) * jet.f0dot(pt.s_star) + (0.5 * np.trace(H2 @ J) + 1j * (mu * WR + a @ (J @ v))) * f0
    weight = np.exp(-pt.phi.imag / eps)
    r = (abs(f0 * G) + eps * abs(L)) * weight
    out = {"G": abs(G), "L": abs(L), "im_phi": pt.phi.imag, "d": pt.d, "r": r}
    if include_m1perp:
        # m1_perp = i R_perp sum_j v_j [ (d_j f0) Phi + f0 (dPhi/dk . J)_j ]
        dphi = bloch_derivative(st, d)[:, :2] @ J
        df0 = jet.f0dot(pt.s_star) * pt.grad_s
        vel = 2.0 * (sampler.basis.g_list[:, :2] + pt.K[:2].real)
        rhs = np.sum(vel * (np.outer(st.coeffs, df0) + f0 * dphi), axis=1)
        m1 = 1j * reduced_resolvent_apply(st, rhs, window=sampler.window, tol_deriv=sampler.tol_deriv)
        out["m1perp"] = eps * float(np.linalg.norm(m1)) * weight
    return out


def tube_points(jet: PhaseJet, eps: float, tube_factor: float = 3.0, n_s: int = 32, n_t: int = 25) -> np.ndarray:
    """``y(s_j) + t sqrt(eps) n(s_j)`` for ``t`` in ``[-tube_factor, tube_factor]``."""
    idx = np.linspace(0, jet.orbit.n_samples, n_s, endpoint=False).astype(int)
    ts = np.linspace(-tube_factor, tube_factor, n_t)
    pts = []
    for j in idx:
        s = jet.orbit.s[j]
        base, n = jet.y(s), jet.normal(s)
        pts.extend(base + t * np.sqrt(eps) * n for t in ts)
    return np.array(pts)


def residual_scaling(
    jet: PhaseJet,
    sampler: BandSampler,
    eps_list: Sequence[float],
    *,
    tube_factor: float = 3.0,
    n_s: int = 32,
    n_t: int = 25,
    include_m1perp: bool = False,
) -> ResidualReport:
    """Sup of the tube residual for each ``eps`` and its log-log slope."""
    eps_arr = np.asarray(eps_list, dtype=float)
    if len(eps_arr) < 4:
        raise InvalidInput("residual scaling needs at least four eps values")
    if np.any(np.diff(eps_arr) >= 0) or np.any(eps_arr <= 0):
        raise InvalidInput("eps_list must be positive and strictly decreasing")
    sups, diags = [], []
    for eps in eps_arr:
        rows = [_tube_residual(jet, sampler, y, eps, include_m1perp) for y in tube_points(jet, eps, tube_factor, n_s, n_t)]
        r = np.array([row["r"] for row in rows])
        im_phi = np.array([row["im_phi"] for row in rows])
        dist = np.array([row["d"] for row in rows])
        diag = {
            "eps": float(eps),
            "sup_residual": float(r.max()),
            "sup_G": float(max(row["G"] for row in rows)),
            "sup_L": float(max(row["L"] for row in rows)),
            "min_im_phi_over_d2": float(np.min(im_phi[dist > 0] / dist[dist > 0] ** 2)) if np.any(dist > 0) else float("nan"),
        }
        if include_m1perp:
            diag["sup_m1perp"] = float(max(row["m1perp"] for row in rows))
        sups.append(r.max())
        diags.append(diag)
    sups = np.array(sups)
    if np.any(np.diff(sups) > 0):
        log.warning("tube residual is not monotone in eps: %s", sups)
    return ResidualReport(eps_arr, sups, loglog_slope(eps_arr, sups), diags)
