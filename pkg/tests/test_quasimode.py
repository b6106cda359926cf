import numpy as np
import pytest

from bloch_beam.errors import AccuracyError, DomainError, InvalidInput
from bloch_beam.quasimode import (
    _tube_residual,
    eikonal_residual,
    loglog_slope,
    phase_jet_eval,
    residual_scaling,
    transport_amplitude,
    tube_points,
)


@pytest.mark.parametrize("name", ["free_slice", "weak_slice", "chiral_slice"])
def test_transport_closed_form_and_monodromy(request, name):
    res = request.getfixturevalue(name)
    amp = res.amplitude
    assert np.abs(amp.f0 - amp.f0_closed).max() <= 1e-7
    assert res.monodromy_defect() <= 1e-6


def test_transport_rejects_tight_tolerance(weak_slice):
    with pytest.raises(AccuracyError):
        transport_amplitude(weak_slice.frame, weak_slice.track, tol_amp=1e-30)


def test_free_monodromy_is_minus_one(free_slice):
    assert free_slice.amplitude.monodromy() == pytest.approx(-1.0, abs=1e-8)


def test_jet_on_orbit(weak_slice):
    jet = weak_slice.jet()
    orb = weak_slice.orbit
    for j in (0, 50, 128, 200):
        pt = phase_jet_eval(jet, jet.y(orb.s[j]))
        assert pt.d < 1e-10
        assert np.allclose(pt.K[:2], orb.k[j], atol=1e-9)
        assert abs(pt.phi.imag) < 1e-12


def test_jet_im_phase_grows_transversally(weak_slice):
    jet = weak_slice.jet()
    s = weak_slice.orbit.s[40]
    base, n = jet.y(s), jet.normal(s)
    for t in (1e-2, -1e-2, 3e-2):
        pt = phase_jet_eval(jet, base + t * n)
        assert pt.d == pytest.approx(abs(t), rel=1e-6)
        assert pt.phi.imag >= 0.45 * jet.transverse_floor * t**2


def test_jet_tube_radius(weak_slice):
    jet = weak_slice.jet(tube_radius=0.01)
    s = weak_slice.orbit.s[0]
    with pytest.raises(DomainError):
        phase_jet_eval(jet, jet.y(s) + 0.05 * jet.normal(s))


def test_tube_points_layout(weak_slice):
    jet = weak_slice.jet()
    pts = tube_points(jet, 1e-3, tube_factor=3.0, n_s=4, n_t=5)
    assert pts.shape == (20, 2)
    d = [jet.nearest(p)[1] for p in pts[:5]]
    assert np.allclose(d, 3 * np.sqrt(1e-3) * np.array([1, 0.5, 0, 0.5, 1]), atol=1e-8)


def test_eikonal_cubic_on_weak_orbit(weak_sampler, weak_slice):
    rep = eikonal_residual(weak_slice.jet(), weak_sampler, n_base=4)
    assert rep.passed and rep.slope >= 2.8


def test_eikonal_free_is_exact_or_cubic(free_sampler, free_slice):
    rep = eikonal_residual(free_slice.jet(), free_sampler, n_base=4)
    assert rep.passed


def test_residual_input_checks(weak_sampler, weak_slice):
    jet = weak_slice.jet()
    with pytest.raises(InvalidInput):
        residual_scaling(jet, weak_sampler, [1e-2, 5e-3, 2.5e-3])
    with pytest.raises(InvalidInput):
        residual_scaling(jet, weak_sampler, [1e-2, 5e-3, 5e-3, 1e-3])


def test_loglog_slope():
    x = np.array([1e-2, 5e-3, 2.5e-3])
    assert loglog_slope(x, 7 * x**1.5) == pytest.approx(1.5)


def test_transport_operator_vanishes_on_orbit(weak_sampler, weak_slice):
    jet = weak_slice.jet()
    for j in range(0, weak_slice.orbit.n_samples, 16):
        row = _tube_residual(jet, weak_sampler, jet.y(weak_slice.orbit.s[j]), 1e-3, False)
        assert row["L"] <= 1e-8
        assert row["G"] <= 1e-10
