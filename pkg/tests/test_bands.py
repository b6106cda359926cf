from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh_tridiagonal

from bloch_beam.bands import (
    BandSampler,
    band_derivatives,
    bloch_derivative,
    fix_gauge,
    gauge_connection,
    solve_band,
    wr_integrand,
)
from bloch_beam.errors import InvalidInput, SimplicityViolation
from bloch_beam.lattice import LatticeSpec, build_basis

from conftest import CHIRAL_TERMS, WEAK_TERMS, lattice

# lowest Mathieu-type band of V = 0.2 * 2cos(x1) at k = (0.1, 0, 0)
MATHIEU_E1 = -0.06767506484663


def _mathieu_oracle(v, k1, m_max=40):
    m = np.arange(-m_max, m_max + 1)
    w = eigh_tridiagonal((m + k1) ** 2, np.full(2 * m_max, v), select="i", select_range=(0, 0))[0]
    return w[0]


def test_mathieu_oracle_frozen():
    assert _mathieu_oracle(0.2, 0.1) == pytest.approx(MATHIEU_E1, abs=1e-13)


def test_one_dimensional_potential_matches_oracle():
    sm = BandSampler.build(lattice({(1, 0, 0): 0.2}), 6.0)
    assert sm.energy([0.1, 0.0, 0.0]) == pytest.approx(MATHIEU_E1, abs=1e-12)


@pytest.mark.parametrize("cutoff, size", [(0.5, 1), (1.0, 7), (np.sqrt(2), 19), (np.sqrt(3), 27), (2.0, 33)])
def test_basis_sizes(cutoff, size):
    assert build_basis(lattice(), cutoff).size == size


def test_hermitian_partner_required():
    with pytest.raises(InvalidInput):
        LatticeSpec.cubic(potential_coeffs={(1, 0, 0): 0.1})
    with pytest.raises(InvalidInput):
        LatticeSpec.cubic(potential_coeffs={(1, 0, 0): 0.1j, (-1, 0, 0): 0.1j})


def test_coefficient_outside_cutoff_rejected():
    with pytest.raises(InvalidInput):
        BandSampler.build(lattice({(2, 0, 0): 0.1}), 1.0)


def test_band_index_range(free_sampler):
    with pytest.raises(InvalidInput):
        solve_band(free_sampler.basis, free_sampler.lattice, [0, 0, 0], 0)


def test_free_band_exact(free_sampler):
    k = np.array([0.13, -0.07, 0.05])
    st, d = free_sampler.derivatives(k)
    assert st.energy == pytest.approx(k @ k, abs=1e-14)
    assert np.allclose(d.gradient, 2 * k, atol=1e-13)
    assert np.allclose(d.hessian, 2 * np.eye(3), atol=1e-13)
    assert abs(wr_integrand(free_sampler.basis, st, d)) < 1e-14


def test_zone_boundary_degeneracy(free_sampler):
    with pytest.raises(SimplicityViolation):
        free_sampler.state([0.5, 0.0, 0.0])


def test_gauge_fix_pivot_real_positive():
    rng = np.random.default_rng(0)
    U = fix_gauge(rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3)))
    piv = U[np.argmax(np.abs(U), axis=0), np.arange(3)]
    assert np.allclose(piv.imag, 0) and np.all(piv.real > 0)


@pytest.mark.parametrize("terms", [WEAK_TERMS, CHIRAL_TERMS], ids=["weak", "chiral"])
def test_deflated_path_matches_eigenbasis(terms):
    sm = BandSampler.build(lattice(terms), 2.0)
    k = [0.21, -0.12, 0.08]
    full = sm.state(k, full=True)
    lean = sm.state(k, full=False)
    dfull = band_derivatives(sm.basis, full, window=len(full.eigvals))
    dlean = band_derivatives(sm.basis, lean)
    assert np.allclose(dfull.gradient, dlean.gradient, atol=1e-12)
    assert np.allclose(dfull.hessian, dlean.hessian, atol=1e-10)
    assert np.allclose(dfull.dphi_perp, dlean.dphi_perp, atol=1e-10)
    assert wr_integrand(sm.basis, full, dfull) == pytest.approx(wr_integrand(sm.basis, lean, dlean), abs=1e-11)
    assert np.allclose(gauge_connection(full, dfull), gauge_connection(lean, dlean), atol=1e-11)


@pytest.mark.parametrize("terms", [WEAK_TERMS, CHIRAL_TERMS], ids=["weak", "chiral"])
def test_bloch_derivative_finite_difference(terms):
    sm = BandSampler.build(lattice(terms), 2.0)
    k, h = np.array([0.17, 0.09, -0.11]), 1e-5
    st, d = sm.derivatives(k)
    dphi = bloch_derivative(st, d)
    for j in range(3):
        e = np.eye(3)[j] * h
        fd = (sm.state(k + e).coeffs - sm.state(k - e).coeffs) / (2 * h)
        assert np.abs(fd - dphi[:, j]).max() < 1e-6


def test_continued_energy_free_is_polynomial(free_sampler):
    K = np.array([0.1 + 0.02j, -0.05 + 0.01j, 0.03 - 0.015j])
    assert free_sampler.continued_energy(K) == pytest.approx(np.sum(K * K), abs=1e-13)


def test_continued_energy_taylor(weak_sampler):
    k = np.array([0.2, 0.1, 0.0])
    st, d = weak_sampler.derivatives(k)
    for t in (1e-2, 5e-3):
        q = t * np.array([0.6, -0.8, 0.0])
        pred = st.energy + 1j * d.gradient @ q - 0.5 * q @ d.hessian @ q
        err = abs(weak_sampler.continued_energy(k + 1j * q) - pred)
        assert err < 5 * t**3


@settings(max_examples=20, deadline=None)
@given(
    k=st.tuples(*[st.floats(-0.25, 0.25)] * 3),
    phase=st.floats(-np.pi, np.pi),
)
def test_band_data_gauge_invariant(chiral_sampler, k, phase):
    st_, d = chiral_sampler.derivatives(np.array(k))
    rot = replace(st_, coeffs=st_.coeffs * np.exp(1j * phase))
    d2 = band_derivatives(chiral_sampler.basis, rot)
    assert np.allclose(d.gradient, d2.gradient, atol=1e-12)
    assert np.allclose(d.hessian, d2.hessian, atol=1e-11)
    assert wr_integrand(chiral_sampler.basis, st_, d) == pytest.approx(
        wr_integrand(chiral_sampler.basis, rot, d2), abs=1e-12
    )
