"""Geometric phases along an orbit and the magnetic quantization condition.

Conventions (echoed in every run summary):

* ``theta_b`` is the Berry phase of the closed loop,
  ``sum_j arg <Phi_j|Phi_{j+1}>`` with the physics bracket (conjugate-linear
  in the bra); this equals ``oint a . dk`` with ``<Phi|dPhi> = i a . dk``.
* ``theta_rw`` is ``+mu oint WR(k(s)) ds`` with
  ``WR = sum_{m != n} Im[<n|v1|m><m|v2|n>] / (E_n - E_m)``, which equals
  ``-Im <(H0 - E) d1 Phi | d2 Phi>``.
* ``gamma`` is 1/2 for odd Maslov winding and 0 for even.
* Levels solve ``S / (mu eps) = 2 pi (n + gamma) + theta_b + theta_rw``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bands import BandSampler, BandState, band_derivatives, wr_integrand
from .errors import AccuracyError, DomainError, InvalidInput
from .orbit import Orbit, PeierlsLift, k3vec, loop_integral

log = logging.getLogger(__name__)

CONVENTIONS = {
    "symplectic_form": "sigma((y,eta),(w,zeta)) = y.zeta - w.eta",
    "theta_b": "sum_j arg <Phi_j|Phi_j+1> over the closed loop = oint a.dk, reported in (-pi, pi]",
    "theta_rw": (
        "+mu * oint WR ds with WR = sum_{m!=n} Im[<n|v1|m><m|v2|n>]/(E_n-E_m)"
        " = -Im <(H0-E) d1 Phi|d2 Phi>, reported in (-pi, pi]"
    ),
    "gamma_rule": "gamma = 1/2 if N_M odd else 0",
    "levels": "S/(mu*eps_n) = 2*pi*(n+gamma) + theta_b + theta_rw",
    "gauge": "largest Bloch coefficient real and positive",
    "units": "hbar^2/2m = 1, e = 1, mu = e/hbar",
}

MIN_OVERLAP = 0.5


def wrap_phase(x: float) -> float:
    """Map to the branch ``(-pi, pi]``."""
    y = float(np.angle(np.exp(1j * x)))
    return np.pi if y == -np.pi else y


def wilson_loop_phase(coeffs: Sequence[np.ndarray]) -> tuple[float, float]:
    """Unwrapped phase sum and smallest overlap of the closed loop through ``coeffs``.

    The loop closes on ``coeffs[0]``; a repeated endpoint is not expected.
    """
    C = np.asarray(coeffs)
    ov = np.einsum("ij,ij->i", C.conj(), np.roll(C, -1, axis=0))
    return float(np.sum(np.angle(ov))), float(np.abs(ov).min())


def link_phases(coeffs: Sequence[np.ndarray]) -> np.ndarray:
    """``arg <Phi_j|Phi_{j+1}>`` for consecutive (open) samples."""
    C = np.asarray(coeffs)
    return np.angle(np.einsum("ij,ij->i", C[:-1].conj(), C[1:]))


def berry_phase(
    orbit: Orbit,
    sampler: BandSampler,
    *,
    states: Sequence[BandState] | None = None,
    tol_phase: float = 1e-6,
    max_refine: int = 3,
) -> float:
    """Discrete Wilson-loop Berry phase of the orbit, in ``(-pi, pi]``.

    The orbit is resampled at doubled resolution until two successive
    values agree within ``tol_phase``.
    """
    if states is None:
        states = [sampler.state(k3vec(kj, orbit.k3), full=False) for kj in orbit.k]
    theta, ov = wilson_loop_phase([st.coeffs for st in states[:-1]])
    current = orbit
    for _ in range(max_refine):
        refined = current.resample(sampler, 2 * current.n_samples)
        coeffs = [sampler.state(k3vec(kj, orbit.k3), full=False).coeffs for kj in refined.k[:-1]]
        new, ov = wilson_loop_phase(coeffs)
        done = abs(wrap_phase(new - theta)) <= tol_phase and ov >= MIN_OVERLAP
        theta, current = new, refined
        if done:
            return wrap_phase(theta)
    if ov < MIN_OVERLAP:
        raise AccuracyError(f"Bloch overlap {ov:.3f} < {MIN_OVERLAP} along the orbit; band discontinuity suspected")
    raise AccuracyError(f"Berry phase not converged to {tol_phase:g} after {max_refine} refinements")


def wr_rates(orbit: Orbit, sampler: BandSampler, states: Sequence[BandState] | None = None) -> np.ndarray:
    """``mu * WR`` at each orbit sample."""
    if states is None:
        states = [sampler.state(k3vec(kj, orbit.k3)) for kj in orbit.k]
    out = []
    for st in states:
        d = band_derivatives(sampler.basis, st, window=sampler.window, tol_deriv=sampler.tol_deriv)
        out.append(wr_integrand(sampler.basis, st, d))
    return orbit.mu * np.asarray(out)


def wr_phase(
    orbit: Orbit,
    sampler: BandSampler,
    *,
    states: Sequence[BandState] | None = None,
    rates: np.ndarray | None = None,
) -> float:
    """WR phase over one period, in ``(-pi, pi]``.

    The integrand is periodic and smooth, so the trapezoid rule on the
    uniform samples converges spectrally.
    """
    if rates is None:
        rates = wr_rates(orbit, sampler, states)
    h = orbit.period / orbit.n_samples
    return wrap_phase(float(np.sum(rates[:-1]) * h))


def action_integral(lift: PeierlsLift) -> float:
    """``oint p . dy`` over one period of the lift."""
    p, y = lift.p[:-1], lift.y[:-1]
    return loop_integral(p[:, 0], y[:, 0]) + loop_integral(p[:, 1], y[:, 1])


@dataclass
class PhaseLedger:
    theta_b: float
    theta_rw: float
    N_M: int
    theta_M: float
    action: float
    area_over_mu: float
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def gamma(self) -> float:
        return 0.5 if self.N_M % 2 else 0.0

    def check(self, tol_action: float = 1e-7) -> None:
        if abs(self.action - self.area_over_mu) > tol_action:
            from .errors import ConsistencyError

            raise ConsistencyError(
                f"action {self.action!r} differs from S/mu {self.area_over_mu!r} by more than {tol_action:g}"
            )

    def as_dict(self) -> dict:
        return {
            "theta_b": self.theta_b,
            "theta_rw": self.theta_rw,
            "N_M": self.N_M,
            "theta_M": self.theta_M,
            "gamma": self.gamma,
            "action": self.action,
            "area_over_mu": self.area_over_mu,
        }


@dataclass
class MagneticLevelTable:
    k3: float
    gamma: float
    entries: list[tuple[int, float]]
    S: float = float("nan")
    theta_b: float = 0.0
    theta_rw: float = 0.0
    mu: float = 1.0
    N_M: int | None = None

    def residuals(self) -> np.ndarray:
        """Defect of the quantization condition at each entry."""
        rhs_const = self.theta_b + self.theta_rw
        return np.array([
            self.S / (self.mu * eps) - 2 * np.pi * (n + self.gamma) - rhs_const for n, eps in self.entries
        ])


def onsager_levels(
    S: float,
    theta_b: float,
    theta_rw: float,
    theta_M: float,
    n_range: Iterable[int],
    mu: float = 1.0,
    *,
    k3: float = 0.0,
) -> MagneticLevelTable:
    """Solve ``S / (mu eps) = 2 pi (n + gamma) + theta_b + theta_rw`` for ``eps``.

    ``gamma`` follows from ``theta_M`` (``pi`` -> 1/2, ``0`` -> 0).  Values of
    ``n`` with a nonpositive right-hand side are skipped with a warning.
    """
    if not S > 0:
        raise DomainError(f"area must be positive, got {S}")
    if not mu > 0:
        raise InvalidInput(f"mu must be positive, got {mu}")
    parity = int(np.rint(theta_M / np.pi)) % 2
    if abs(theta_M - np.pi * np.rint(theta_M / np.pi)) > 1e-9:
        raise InvalidInput(f"theta_M must be 0 or pi, got {theta_M}")
    gamma = 0.5 * parity
    entries = []
    for n in sorted(set(int(n) for n in n_range)):
        if n < 0:
            raise InvalidInput(f"level index must be non-negative, got {n}")
        denom = 2 * np.pi * (n + gamma) + theta_b + theta_rw
        if denom <= 0:
            log.warning("skipping n=%d: nonpositive quantization denominator %g", n, denom)
            continue
        entries.append((n, S / (mu * denom)))
    return MagneticLevelTable(k3, gamma, entries, S, theta_b, theta_rw, mu)


@dataclass
class DensityReport:
    edges: np.ndarray
    counts: np.ndarray
    peak_bin: int | None
    peak_k3: float | None
    area_extrema: list
    failures: dict

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def level_density(
    tables: Sequence[MagneticLevelTable],
    eps_window: tuple[float, float],
    n_bins: int,
) -> tuple[np.ndarray, np.ndarray, int | None, float | None]:
    """Histogram the levels of many ``k3`` slices and locate the densest bin.

    The peak location is the centre of the ``k3`` range whose levels (of the
    dominant ``n``) fall in the densest bin.
    """
    lo, hi = eps_window
    if n_bins < 1:
        raise InvalidInput("need at least one eps bin")
    edges = np.linspace(lo, hi, n_bins + 1) if hi > lo else np.array([lo, lo])
    pts = [(t.k3, n, e) for t in tables for n, e in t.entries if lo <= e <= hi]
    if hi <= lo or not pts:
        if hi > lo:
            log.warning("no magnetic levels inside the eps window [%g, %g]", lo, hi)
        else:
            log.warning("empty eps window [%g, %g]", lo, hi)
        return edges, np.zeros(max(len(edges) - 1, 0), dtype=int), None, None
    eps = np.array([p[2] for p in pts])
    counts, _ = np.histogram(eps, bins=edges)
    peak = int(np.argmax(counts))
    bins = np.clip(np.searchsorted(edges, eps, side="right") - 1, 0, n_bins - 1)
    in_peak = [p for p, b in zip(pts, bins) if b == peak]
    ns, freq = np.unique([p[1] for p in in_peak], return_counts=True)
    n_dom = ns[np.argmax(freq)]
    k3s = [p[0] for p in in_peak if p[1] == n_dom]
    return edges, counts, peak, 0.5 * (min(k3s) + max(k3s))
