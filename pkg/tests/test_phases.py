from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bloch_beam.errors import ConsistencyError, DomainError, InvalidInput
from bloch_beam.phases import (
    MagneticLevelTable,
    PhaseLedger,
    berry_phase,
    level_density,
    onsager_levels,
    wilson_loop_phase,
    wr_phase,
    wr_rates,
    wrap_phase,
)


@given(st.floats(-1e3, 1e3))
def test_wrap_phase_branch(x):
    y = wrap_phase(x)
    assert -np.pi < y <= np.pi
    assert abs(np.exp(1j * y) - np.exp(1j * x)) < 1e-9


def test_wrap_phase_pi_end():
    assert wrap_phase(-np.pi) == np.pi
    assert wrap_phase(3 * np.pi) == pytest.approx(np.pi)


@settings(max_examples=100)
@given(
    S=st.floats(1e-3, 10.0),
    th=st.tuples(st.floats(-np.pi, np.pi), st.floats(-np.pi, np.pi)),
    odd=st.booleans(),
    mu=st.floats(0.1, 5.0),
)
def test_level_table_solves_condition(S, th, odd, mu):
    t = onsager_levels(S, th[0], th[1], np.pi if odd else 0.0, range(0, 8), mu)
    assert t.gamma == (0.5 if odd else 0.0)
    for (n, eps), r in zip(t.entries, t.residuals()):
        rhs = 2 * np.pi * (n + t.gamma) + th[0] + th[1]
        assert rhs > 0 and eps > 0
        assert abs(r) <= 1e-12 * max(1.0, rhs)


def test_landau_levels_closed_form():
    t = onsager_levels(np.pi * 0.09, 0.0, 0.0, np.pi, range(6))
    assert [n for n, _ in t.entries] == list(range(6))
    assert np.allclose([e for _, e in t.entries], [0.09 / (2 * n + 1) for n in range(6)], rtol=1e-14)


def test_nonpositive_denominator_skipped():
    t = onsager_levels(1.0, -3.0, 0.0, 0.0, range(3))
    assert [n for n, _ in t.entries] == [1, 2]


@pytest.mark.parametrize("args", [(0.0, 0, 0, 0), (-1.0, 0, 0, 0), (1.0, 0, 0, 1.0)])
def test_onsager_rejects(args):
    with pytest.raises(InvalidInput):
        onsager_levels(*args, range(3))


def test_area_must_be_positive():
    with pytest.raises(DomainError):
        onsager_levels(0.0, 0, 0, 0, range(3))
    with pytest.raises(InvalidInput):
        onsager_levels(1.0, 0, 0, 0, [-1])


@settings(max_examples=30)
@given(seed=st.integers(0, 2**32 - 1))
def test_wilson_loop_rephasing(seed):
    rng = np.random.default_rng(seed)
    C = rng.normal(size=(12, 5)) + 1j * rng.normal(size=(12, 5))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    base, ov = wilson_loop_phase(C)
    rot, ov2 = wilson_loop_phase(C * np.exp(1j * rng.uniform(-np.pi, np.pi, size=(12, 1))))
    assert abs(wrap_phase(rot - base)) < 1e-12
    assert ov2 == pytest.approx(ov)


def test_phases_gauge_invariant_on_orbit(chiral_sampler, chiral_slice):
    orb, track = chiral_slice.orbit, chiral_slice.track
    rng = np.random.default_rng(7)
    phases = np.exp(1j * rng.uniform(-np.pi, np.pi, len(track.states)))
    rotated = [replace(s, coeffs=s.coeffs * z) for s, z in zip(track.states, phases)]
    tb = berry_phase(orb, chiral_sampler, states=track.states)
    tb2 = berry_phase(orb, chiral_sampler, states=rotated)
    assert abs(tb - tb2) <= 1e-12
    trw = wr_phase(orb, chiral_sampler, states=track.states)
    trw2 = wr_phase(orb, chiral_sampler, states=rotated)
    assert abs(trw - trw2) <= 1e-12


def test_berry_phase_matches_connection_integral(chiral_slice):
    # Wilson loop against the ODE-accumulated  int a . dk
    fr = chiral_slice.frame
    assert abs(wrap_phase(fr.theta_b[-1] - chiral_slice.ledger.theta_b)) < 1e-8
    assert abs(wrap_phase(fr.theta_rw[-1] - chiral_slice.ledger.theta_rw)) < 1e-10
    assert chiral_slice.ledger.theta_b != 0.0 and chiral_slice.ledger.theta_rw != 0.0


def test_wr_rates_scale_with_mu(chiral_sampler, chiral_slice):
    r = wr_rates(chiral_slice.orbit, chiral_sampler, chiral_slice.track.states[:4])
    assert np.allclose(r, chiral_slice.orbit.mu * chiral_slice.track.wr[:4], atol=1e-15)


def test_ledger_check():
    ok = PhaseLedger(0.0, 0.0, 1, np.pi, action=1.0, area_over_mu=1.0 + 1e-9)
    ok.check(1e-7)
    assert ok.gamma == 0.5
    with pytest.raises(ConsistencyError):
        PhaseLedger(0.0, 0.0, 2, 0.0, action=1.0, area_over_mu=1.1).check(1e-7)


def test_level_density_peak():
    tables = []
    for k3 in np.linspace(-0.3, 0.5, 17):
        S = 1.0 - k3**2
        tables.append(MagneticLevelTable(k3, 0.5, [(0, S / np.pi)], S))
    edges, counts, peak, peak_k3 = level_density(tables, (0.2, 1 / np.pi + 1e-9), 20)
    assert counts.sum() == 17
    assert peak == len(counts) - 1
    assert abs(peak_k3) <= 0.05


def test_level_density_empty_window():
    t = [MagneticLevelTable(0.0, 0.0, [(0, 1.0)], 1.0)]
    _, counts, peak, k3 = level_density(t, (2.0, 3.0), 4)
    assert peak is None and k3 is None and counts.sum() == 0
    with pytest.raises(InvalidInput):
        level_density(t, (0.0, 1.0), 0)
