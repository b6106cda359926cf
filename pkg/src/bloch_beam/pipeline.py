"""End-to-end chain for one ``k3`` slice and the ``k3`` sweep."""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bands import BandSampler
from .config import BeamBlock, OrbitBlock, PhasesBlock, RunConfig
from .errors import BlochBeamError, InvalidInput
from .frame import BandTrack, BeamFrame, band_track, init_frame, maslov_index, propagate_frame
from .orbit import Orbit, PeierlsLift, find_extrema, peierls_lift, seed_point, trace_orbit
from .phases import (
    DensityReport,
    MagneticLevelTable,
    PhaseLedger,
    action_integral,
    berry_phase,
    level_density,
    onsager_levels,
    wr_phase,
)
from .quasimode import AmplitudeTrace, PhaseJet, transport_amplitude

log = logging.getLogger(__name__)


def make_sampler(cfg: RunConfig) -> BandSampler:
    s = cfg.solver
    return BandSampler.build(
        cfg.lattice_spec(), s.cutoff,
        band_index=s.band_index, mu=cfg.mu, delta_gap=s.delta_gap, tol_eig=s.tol_eig,
        window=s.band_window, tol_deriv=s.tol_deriv,
    )


def resolve_E0(orbit: OrbitBlock, sampler: BandSampler) -> float:
    """Absolute ``E0``; the ``gamma`` reference adds ``E_n(0, 0, 0)``."""
    if orbit.E0_reference == "gamma":
        return orbit.E0 + sampler.energy([0.0, 0.0, 0.0])
    return orbit.E0


def build_orbit(sampler: BandSampler, E0: float, k3: float, ob: OrbitBlock) -> Orbit:
    seed = seed_point(sampler, k3, E0, ob.seed_direction, ob.seed_origin, tol_level=ob.tol_level)
    return trace_orbit(
        sampler, seed, k3, E0,
        n_samples=ob.n_samples, rtol=ob.rtol, atol=ob.atol, v_min=ob.v_min,
        s_max=ob.s_max, tol_close=ob.tol_close, tol_level=ob.tol_level,
    )


@dataclass
class SliceResult:
    """Everything computed for one ``k3``."""

    k3: float
    E0: float
    orbit: Orbit
    lift: PeierlsLift
    track: BandTrack
    frame: BeamFrame
    ledger: PhaseLedger
    levels: MagneticLevelTable
    amplitude: AmplitudeTrace

    def jet(self, tube_radius: float = np.inf) -> PhaseJet:
        return PhaseJet(self.orbit, self.lift, self.frame, self.amplitude, tube_radius)

    def monodromy_defect(self) -> float:
        expected = np.exp(-1j * (self.ledger.theta_M + self.ledger.theta_b + self.ledger.theta_rw))
        return float(abs(self.amplitude.monodromy() - expected))


def run_slice(
    sampler: BandSampler,
    E0: float,
    k3: float,
    *,
    orbit: OrbitBlock | None = None,
    beam: BeamBlock | None = None,
    phases: PhasesBlock | None = None,
) -> SliceResult:
    """Orbit, frame, phases, levels and amplitude for one ``k3``."""
    ob = orbit or OrbitBlock(E0=E0)
    bb = beam or BeamBlock()
    pb = phases or PhasesBlock()
    orb = build_orbit(sampler, E0, k3, ob)
    lift = peierls_lift(orb, ob.p2_const, ob.c)
    track = band_track(orb, sampler)
    Y0, N0 = init_frame(orb, lift)
    frame = propagate_frame(
        orb, sampler, Y0, N0, lift=lift, track=track, rtol=bb.rtol, atol=bb.atol,
        tol_frame=bb.tol_frame, tol_sigma=bb.tol_sigma, d_min=bb.d_min, p_min=bb.p_min,
    )
    n_m, theta_m = maslov_index(frame)
    theta_b = berry_phase(orb, sampler, states=track.states, tol_phase=pb.tol_phase)
    theta_rw = wr_phase(orb, sampler, rates=orb.mu * track.wr)
    ledger = PhaseLedger(
        theta_b, theta_rw, n_m, theta_m,
        action=action_integral(lift),
        area_over_mu=orb.orientation * orb.area / orb.mu,
    )
    ledger.check(pb.tol_action)
    levels = onsager_levels(orb.area, theta_b, theta_rw, theta_m, pb.n_range, orb.mu, k3=k3)
    levels.N_M = n_m
    amplitude = transport_amplitude(frame, track, tol_amp=pb.tol_amp)
    return SliceResult(k3, E0, orb, lift, track, frame, ledger, levels, amplitude)


@dataclass
class SweepResult:
    tables: list[MagneticLevelTable]
    areas: dict  # k3 -> S
    density: DensityReport


def _slice_job(args):
    sampler, E0, k3, blocks = args
    try:
        res = run_slice(sampler, E0, k3, **blocks)
        return res.levels, res.orbit.area, None
    except BlochBeamError as exc:
        return None, None, f"{type(exc).__name__}: {exc}"


def level_density_sweep(
    sampler: BandSampler,
    E0: float,
    k3_grid: Sequence[float],
    *,
    eps_window: tuple[float, float] | None = None,
    eps_bins: int = 40,
    orbit: OrbitBlock | None = None,
    beam: BeamBlock | None = None,
    phases: PhasesBlock | None = None,
    executor: Executor | None = None,
) -> SweepResult:
    """Run every ``k3`` slice, histogram the levels and locate the density peak.

    Failed slices are logged and left out.  Without an explicit window the
    histogram spans all computed levels.
    """
    k3_grid = [float(k) for k in k3_grid]
    if not k3_grid:
        raise InvalidInput("k3 grid is empty")
    blocks = {"orbit": orbit, "beam": beam, "phases": phases}
    jobs = [(sampler, E0, k3, blocks) for k3 in k3_grid]
    results = list(executor.map(_slice_job, jobs)) if executor else [_slice_job(j) for j in jobs]
    tables, areas, failures = [], {}, {}
    for k3, (table, area, err) in zip(k3_grid, results):
        if err is not None:
            failures[k3] = err
            log.warning("k3=%g excluded: %s", k3, err)
            continue
        tables.append(table)
        areas[k3] = area
    if eps_window is None:
        eps = [e for t in tables for _, e in t.entries]
        eps_window = (min(eps), max(eps)) if eps else (0.0, 0.0)
    edges, counts, peak, peak_k3 = level_density(tables, eps_window, eps_bins)
    ks = np.array(k3_grid)
    S = np.array([areas.get(k, np.nan) for k in k3_grid])
    report = DensityReport(edges, counts, peak, peak_k3, find_extrema(ks, S), failures)
    return SweepResult(tables, areas, report)
