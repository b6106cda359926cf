"""Gaussian-beam frame along a cyclotron orbit.

The Peierls Hamiltonian ``H(y, p) = E(p1, p2 + mu*y1, k3)`` is linearised
along the lifted orbit.  Its Hessian blocks

    A = d2H/dy2,  B = d2H/dp dy,  C = d2H/dp2

drive the matrix system ``Y' = B Y + C N``, ``N' = -A Y - B^T N`` whose
solution gives the complex phase Hessian ``M = N Y^{-1}``.  The symplectic
form used throughout is ``sigma((y, eta), (w, zeta)) = y.zeta - w.eta``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .bands import BandDerivatives, BandSampler, BandState, gauge_connection, wr_integrand
from .errors import AccuracyError, ConsistencyError, InvalidInput
from .orbit import Orbit, PeierlsLift, k3vec, peierls_lift

log = logging.getLogger(__name__)

DEFAULT_TOL_FRAME = 1e-7
DEFAULT_TOL_SIGMA = 1e-8
DEFAULT_D_MIN = 1e-6
DEFAULT_P_MIN = 1e-6
MASLOV_DEFECT = 0.01


@dataclass
class BandTrack:
    """Band data at every orbit sample (shared by the frame and the phases)."""

    states: list[BandState] = field(repr=False)
    derivs: list[BandDerivatives] = field(repr=False)
    gradient: np.ndarray  # (N+1, 3)
    hessian: np.ndarray  # (N+1, 3, 3)
    wr: np.ndarray  # (N+1,) band-sum WR integrand
    connection: np.ndarray  # (N+1, 3) fixed-gauge Berry connection


def band_track(orbit: Orbit, sampler: BandSampler) -> BandTrack:
    states, derivs = [], []
    for kj in orbit.k:
        st, d = sampler.derivatives(k3vec(kj, orbit.k3))
        states.append(st)
        derivs.append(d)
    return BandTrack(
        states,
        derivs,
        np.array([d.gradient for d in derivs]),
        np.array([d.hessian for d in derivs]),
        np.array([wr_integrand(sampler.basis, st, d) for st, d in zip(states, derivs)]),
        np.array([gauge_connection(st, d) for st, d in zip(states, derivs)]),
    )


@dataclass(frozen=True)
class HessianBlocks:
    A: np.ndarray  # (N+1, 2, 2)
    B: np.ndarray
    C: np.ndarray


def _blocks_from_hessian(hess: np.ndarray, mu: float):
    """``A, B, C`` from the k-Hessian(s) of ``E``; works on (..., 3, 3)."""
    hess = np.asarray(hess)
    E11, E12, E22 = hess[..., 0, 0], hess[..., 0, 1], hess[..., 1, 1]
    z = np.zeros_like(E11)
    A = np.stack([np.stack([mu**2 * E22, z], -1), np.stack([z, z], -1)], -2)
    B = np.stack([np.stack([mu * E12, z], -1), np.stack([mu * E22, z], -1)], -2)
    C = np.stack([np.stack([E11, E12], -1), np.stack([E12, E22], -1)], -2)
    return A, B, C


def hessian_blocks(orbit: Orbit, lift: PeierlsLift | None, sampler: BandSampler, track: BandTrack | None = None) -> HessianBlocks:
    """Blocks ``A, B, C`` of the Peierls Hessian at every orbit sample.

    By the chain rule for ``H(y, p) = E(p1, p2 + mu*y1, k3)``:
    ``A = mu^2 E_22 e1 e1^T``, ``B = [[mu E_12, 0], [mu E_22, 0]]`` and ``C`` is
    the (k1, k2) Hessian of ``E``.  The lift constants do not enter.
    """
    if track is None:
        track = band_track(orbit, sampler)
    return HessianBlocks(*_blocks_from_hessian(track.hessian, orbit.mu))


def transverse_normal(ydot) -> np.ndarray:
    ydot = np.asarray(ydot, dtype=float)
    return np.array([-ydot[1], ydot[0]]) / np.linalg.norm(ydot)


def init_frame(orbit: Orbit, lift: PeierlsLift | None = None, *, tol: float = 1e-12):
    """Initial frame ``(Y0, N0) = (I, M0)`` with ``M0 = M_r + i n n^T``.

    ``M_r`` is the real symmetric solution of ``M_r ydot = pdot`` with no
    component along ``n``; ``n`` is the unit normal to ``ydot(0)``.
    """
    if lift is None:
        lift = peierls_lift(orbit)
    yd, pd = lift.ydot[0], lift.pdot[0]
    v2 = yd @ yd
    if v2 == 0:
        raise InvalidInput("ydot(0) vanishes")
    Mr = (np.outer(pd, yd) + np.outer(yd, pd)) / v2 - (yd @ pd) * np.outer(yd, yd) / v2**2
    n = transverse_normal(yd)
    M0 = Mr + 1j * np.outer(n, n)
    scale = max(1.0, float(np.linalg.norm(pd)))
    if np.abs(M0 - M0.T).max() > tol:
        raise ConsistencyError("M0 is not symmetric")
    if np.linalg.norm(M0 @ yd - pd) > tol * scale * max(1.0, float(np.sqrt(v2))):
        raise ConsistencyError("M0 ydot(0) != pdot(0)")
    if n @ M0.imag @ n <= 0:
        raise ConsistencyError("Im M0 is not positive transverse to ydot(0)")
    return np.eye(2, dtype=complex), M0.astype(complex)


@dataclass
class BeamFrame:
    """Frame data at the orbit samples.

    ``log_det_y`` is ``int_0^s tr(B + C M) ds'`` from the ODE, i.e. a
    continuous branch of ``log det Y(s) - log det Y(0)``.  The phase
    accumulants ``theta_b`` (``int a . dk``) and ``theta_rw``
    (``int mu * WR ds``) and the transport solution ``f0`` are integrated in
    the same pass.
    """

    s: np.ndarray
    k: np.ndarray
    Y: np.ndarray  # (N+1, 2, 2) complex
    N: np.ndarray
    M: np.ndarray
    blocks: HessianBlocks
    ydot: np.ndarray
    pdot: np.ndarray
    det_y: np.ndarray
    arg_det_y: np.ndarray  # continuous
    log_det_y: np.ndarray  # complex, continuous
    sigma12: np.ndarray
    sigma2bar: np.ndarray
    theta_b: np.ndarray
    theta_rw: np.ndarray
    f0: np.ndarray
    mu: float
    diagnostics: dict = field(default_factory=dict)
    maslov: int | None = None

    @property
    def Mdot(self) -> np.ndarray:
        A, B, C = self.blocks.A, self.blocks.B, self.blocks.C
        M = self.M
        Bt = np.swapaxes(B, -1, -2)
        return -(A + Bt @ M + M @ B + M @ C @ M)

    @property
    def tau(self) -> np.ndarray:
        """``d/ds log det Y = tr(B + C M)``."""
        return np.trace(self.blocks.B + self.blocks.C @ self.M, axis1=-2, axis2=-1)


_NZ = 2 + 16 + 2 + 2 + 2


def _pack(k, Y, N, lam, thb, thrw, f0):
    return np.concatenate([
        k, Y.real.ravel(), Y.imag.ravel(), N.real.ravel(), N.imag.ravel(),
        [lam.real, lam.imag, thb, thrw, f0.real, f0.imag],
    ])


def _unpack(z):
    k = z[0:2]
    Y = (z[2:6] + 1j * z[6:10]).reshape(2, 2)
    N = (z[10:14] + 1j * z[14:18]).reshape(2, 2)
    lam = z[18] + 1j * z[19]
    return k, Y, N, lam, z[20], z[21], z[22] + 1j * z[23]


def _frame_rhs(sampler: BandSampler, k3: float, mu: float):
    def rhs(s, z):
        k, Y, N, lam, thb, thrw, f0 = _unpack(z)
        st, d = sampler.derivatives(k3vec(k, k3))
        A, B, C = _blocks_from_hessian(d.hessian, mu)
        g = d.gradient
        kdot = mu * np.array([-g[1], g[0]])
        Ydot = B @ Y + C @ N
        Ndot = -A @ Y - B.T @ N
        M = np.linalg.solve(Y.T, N.T).T
        tau = np.trace(B + C @ M)
        rate_b = gauge_connection(st, d)[:2] @ kdot
        rate_rw = mu * wr_integrand(sampler.basis, st, d)
        f0dot = -(0.5 * tau + 1j * (rate_b + rate_rw)) * f0
        return _pack(kdot, Ydot, Ndot, tau, rate_b, rate_rw, f0dot)

    return rhs


def propagate_frame(
    orbit: Orbit,
    sampler: BandSampler,
    Y0: np.ndarray,
    N0: np.ndarray,
    *,
    lift: PeierlsLift | None = None,
    track: BandTrack | None = None,
    rtol: float = 1e-11,
    atol: float = 1e-13,
    tol_frame: float = DEFAULT_TOL_FRAME,
    tol_sigma: float = DEFAULT_TOL_SIGMA,
    d_min: float = DEFAULT_D_MIN,
    p_min: float = DEFAULT_P_MIN,
    check: bool = True,
) -> BeamFrame:
    """Integrate the frame system over one period together with the k-flow.

    The blocks are re-evaluated from the band sampler at every integrator
    stage; output is taken at the orbit samples.
    """
    if lift is None:
        lift = peierls_lift(orbit)
    if track is None:
        track = band_track(orbit, sampler)
    mu = orbit.mu
    z0 = _pack(orbit.k[0], np.asarray(Y0, complex), np.asarray(N0, complex), 0j, 0.0, 0.0, 1 + 0j)
    sol = solve_ivp(
        _frame_rhs(sampler, orbit.k3, mu), (0.0, orbit.period), z0,
        method="DOP853", t_eval=orbit.s, rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise AccuracyError(f"frame integration failed: {sol.message}")
    cols = [_unpack(zj) for zj in sol.y.T]
    Y = np.array([c[1] for c in cols])
    N = np.array([c[2] for c in cols])
    lam = np.array([c[3] for c in cols])
    M = np.linalg.solve(np.swapaxes(Y, -1, -2), np.swapaxes(N, -1, -2))
    M = np.swapaxes(M, -1, -2)
    blocks = hessian_blocks(orbit, lift, sampler, track)
    det_y = np.linalg.det(Y)
    arg_det = np.angle(det_y[0]) + lam.imag

    Y1, Y2, N1, N2 = Y[:, :, 0], Y[:, :, 1], N[:, :, 0], N[:, :, 1]
    sigma12 = np.sum(Y1 * N2, axis=1) - np.sum(Y2 * N1, axis=1)
    sigma2bar = np.sum(Y2 * N2.conj(), axis=1) - np.sum(Y2.conj() * N2, axis=1)

    frame = BeamFrame(
        s=orbit.s.copy(),
        k=np.array([c[0] for c in cols]),
        Y=Y, N=N, M=M, blocks=blocks,
        ydot=lift.ydot.copy(), pdot=lift.pdot.copy(),
        det_y=det_y, arg_det_y=arg_det, log_det_y=np.log(det_y[0]) + lam,
        sigma12=sigma12, sigma2bar=sigma2bar,
        theta_b=np.array([c[4] for c in cols]),
        theta_rw=np.array([c[5] for c in cols]),
        f0=np.array([c[6] for c in cols]),
        mu=mu,
    )
    frame.diagnostics = frame_diagnostics(frame)
    if check:
        check_frame(frame, tol_frame=tol_frame, tol_sigma=tol_sigma, d_min=d_min, p_min=p_min)
    return frame


def frame_diagnostics(frame: BeamFrame) -> dict:
    M, yd, pd = frame.M, frame.ydot, frame.pdot
    normals = np.column_stack([-yd[:, 1], yd[:, 0]]) / np.linalg.norm(yd, axis=1)[:, None]
    transverse = np.einsum("si,sij,sj->s", normals, M.imag, normals)
    # sampled det Y against the integrated log-derivative, mod 2 pi
    wrap = np.angle(np.exp(1j * (np.angle(frame.det_y) - frame.arg_det_y)))
    return {
        "sigma12_drift": float(np.abs(frame.sigma12 - frame.sigma12[0]).max()),
        "sigma2bar_drift": float(np.abs(frame.sigma2bar - frame.sigma2bar[0]).max()),
        "symmetry": float(np.abs(M - np.swapaxes(M, -1, -2)).max()),
        "tangent": float(np.linalg.norm(np.einsum("sij,sj->si", M, yd) - pd, axis=1).max()),
        "transverse_min": float(transverse.min()),
        "periodicity": float(np.abs(M[-1] - M[0]).max()),
        "det_min": float(np.abs(frame.det_y).min()),
        "log_det_mismatch": float(max(
            np.abs(wrap).max(),
            np.abs(np.log(np.abs(frame.det_y)) - frame.log_det_y.real).max(),
        )),
        "max_arg_step": float(np.abs(np.diff(frame.arg_det_y)).max()),
    }


def check_frame(frame: BeamFrame, *, tol_frame=DEFAULT_TOL_FRAME, tol_sigma=DEFAULT_TOL_SIGMA,
                d_min=DEFAULT_D_MIN, p_min=DEFAULT_P_MIN) -> None:
    """Raise if any frame invariant fails."""
    d = frame.diagnostics or frame_diagnostics(frame)
    if d["det_min"] < d_min:
        raise ConsistencyError(f"frame degenerates: |det Y| = {d['det_min']:.3e} < d_min={d_min:g}")
    if d["transverse_min"] < p_min:
        raise ConsistencyError(f"Im M lost transverse positivity: {d['transverse_min']:.3e} < p_min={p_min:g}")
    if d["max_arg_step"] >= np.pi / 2:
        raise AccuracyError("arg det Y moves by >= pi/2 between samples; increase n_samples")
    checks = [
        ("sigma12_drift", tol_sigma), ("sigma2bar_drift", tol_sigma),
        ("symmetry", tol_frame), ("tangent", tol_frame), ("periodicity", tol_frame),
        ("log_det_mismatch", tol_frame),
    ]
    for name, tol in checks:
        if not d[name] <= tol:
            raise AccuracyError(f"frame invariant {name} = {d[name]:.3e} exceeds {tol:g}")


def maslov_index(frame: BeamFrame) -> tuple[int, float]:
    """Winding number of ``det Y`` over one period and the reduced phase.

    Returns ``(N_M, theta_M)`` with ``theta_M = pi`` for odd ``N_M`` and ``0``
    otherwise.
    """
    winding = (frame.arg_det_y[-1] - frame.arg_det_y[0]) / (2 * np.pi)
    n_m = int(np.rint(winding))
    if abs(winding - n_m) > MASLOV_DEFECT:
        raise AccuracyError(f"det Y winding {winding:.4f} is not an integer; sampling too coarse")
    frame.maslov = n_m
    return n_m, float(np.pi * (n_m % 2))
