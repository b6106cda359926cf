"""Plane-wave solver for the periodic Hamiltonian ``H0(k) = (D + k)^2 + V``.

Units: hbar^2/2m = 1 and e = 1, so the kinetic term of a plane wave ``G`` is
``|G + k|^2`` and ``dH0/dk_j`` is the diagonal operator ``2 (G + k)_j``.

Bra-ket notation in this module is conjugate-linear in the bra:
``<m|X|n> = vdot(phi_m, X phi_n)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import AccuracyError, InvalidInput, SimplicityViolation
from .lattice import LatticeSpec, PlaneWaveBasis

DEFAULT_DELTA_GAP = 1e-4
DEFAULT_TOL_EIG = 1e-9
DEFAULT_TOL_DERIV = 1e-6


def potential_matrix(basis: PlaneWaveBasis, lattice: LatticeSpec) -> np.ndarray:
    """Matrix of ``V(G - G')`` over the basis."""
    n = basis.size
    V = np.zeros((n, n), dtype=complex)
    for m, v in lattice.potential_coeffs.items():
        if m not in basis.index:
            raise InvalidInput(f"potential coefficient {m} lies outside the plane-wave cutoff {basis.cutoff}")
        shift = np.asarray(m)
        for i, mi in enumerate(basis.m_list):
            j = basis.index.get(tuple(int(c) for c in mi - shift))
            if j is not None:
                V[i, j] += v
    return V


def assemble_h0(basis: PlaneWaveBasis, lattice: LatticeSpec, k, *, V: np.ndarray | None = None) -> np.ndarray:
    """Hermitian matrix of H0(k) in the plane-wave basis.

    ``V`` may be passed in precomputed (see :func:`potential_matrix`).
    """
    lattice.validate()
    if V is None:
        V = potential_matrix(basis, lattice)
    kin = np.sum((basis.g_list + np.asarray(k, dtype=float)) ** 2, axis=1)
    H = V.copy()
    H[np.diag_indices_from(H)] += kin
    return H


def fix_gauge(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real and positive."""
    vecs = np.atleast_2d(vecs.T).T
    idx = np.argmax(np.abs(vecs), axis=0)
    pivot = vecs[idx, np.arange(vecs.shape[1])]
    return vecs * (np.conj(pivot) / np.abs(pivot))


@dataclass(frozen=True)
class BandState:
    """Eigenpair of one band at one k-point.

    ``coeffs`` are the Fourier coefficients of the cell-periodic Bloch
    function, gauge-fixed so the largest entry is real and positive.
    ``eigvals``/``eigvecs`` hold either every band or only the neighbours
    ``n-1 .. n+1`` (ascending, starting at 0-based band ``first_band``).
    """

    k: np.ndarray
    band_index: int
    energy: float
    coeffs: np.ndarray
    gap_below: float
    gap_above: float
    eigvals: np.ndarray = field(repr=False, compare=False)
    eigvecs: np.ndarray = field(repr=False, compare=False)
    hamiltonian: np.ndarray = field(repr=False, compare=False)
    first_band: int = field(default=0, repr=False, compare=False)

    @property
    def pos(self) -> int:
        """0-based column of this band in ``eigvecs``."""
        return self.band_index - 1 - self.first_band

    @property
    def has_full_spectrum(self) -> bool:
        return self.eigvecs.shape[1] == len(self.coeffs)


def _is_real(H: np.ndarray) -> bool:
    return not np.any(H.imag)


def solve_band(
    basis: PlaneWaveBasis,
    lattice: LatticeSpec,
    k,
    n: int,
    *,
    delta_gap: float = DEFAULT_DELTA_GAP,
    tol_eig: float = DEFAULT_TOL_EIG,
    V: np.ndarray | None = None,
    full: bool = True,
) -> BandState:
    """Solve for the ``n``-th band (1-based, ascending) at ``k``.

    With ``full=False`` only bands ``n-1 .. n+1`` are computed, which is all
    the gap check needs; band sums then go through a linear solve instead of
    the eigenbasis.
    """
    if not 1 <= n <= basis.size:
        raise InvalidInput(f"band index {n} outside 1..{basis.size}")
    k = np.asarray(k, dtype=float).reshape(3)
    H = assemble_h0(basis, lattice, k, V=V)
    Hs = H.real if _is_real(H) else H
    if full:
        w, U = np.linalg.eigh(Hs)
        lo = 0
    else:
        lo, hi = max(n - 2, 0), min(n, basis.size - 1)
        w, U = sla.eigh(Hs, subset_by_index=[lo, hi], driver="evr")
    U = fix_gauge(U.astype(complex))
    i = n - 1 - lo
    gap_below = w[i] - w[i - 1] if i > 0 else np.inf
    gap_above = w[i + 1] - w[i] if i + 1 < len(w) else np.inf
    if min(gap_below, gap_above) <= delta_gap:
        raise SimplicityViolation(
            f"band {n} is not simple at k={k.tolist()}: gaps {gap_below:.3e}, {gap_above:.3e} <= {delta_gap:g}"
        )
    c = U[:, i]
    resid = np.linalg.norm(H @ c - w[i] * c)
    if resid > tol_eig:
        raise AccuracyError(f"eigen-residual {resid:.3e} exceeds {tol_eig:g}")
    return BandState(k, n, float(w[i]), c, float(gap_below), float(gap_above), w, U, H, lo)


def continued_energy(
    basis: PlaneWaveBasis,
    lattice: LatticeSpec,
    k,
    n: int,
    *,
    delta_gap: float = DEFAULT_DELTA_GAP,
    tol_eig: float = DEFAULT_TOL_EIG,
    V: np.ndarray | None = None,
    max_iter: int = 40,
) -> complex:
    """Holomorphic continuation of ``E_n`` to a complex ``k`` near the real axis.

    ``H0(k)`` stays analytic in ``k`` but is no longer Hermitian.  The
    returned value is the eigenvalue of ``H0(k)`` closest to the
    second-order Taylor prediction about ``Re k``; it is found by inverse
    iteration at that shift, with a full eigenvalue solve as fallback when
    two eigenvalues compete.
    """
    k = np.asarray(k, dtype=complex).reshape(3)
    st = solve_band(basis, lattice, k.real, n, delta_gap=delta_gap, tol_eig=tol_eig, V=V, full=False)
    if not np.any(k.imag):
        return complex(st.energy)
    if V is None:
        V = potential_matrix(basis, lattice)
    d = band_derivatives(basis, st)
    q = k.imag
    shift = st.energy + 1j * (d.gradient @ q) - 0.5 * q @ d.hessian @ q
    H = V.astype(complex)
    H[np.diag_indices_from(H)] += np.sum((basis.g_list + k) ** 2, axis=1)
    scale = max(1.0, float(np.abs(np.diag(H)).max()))
    shifted = H - shift * np.eye(basis.size)
    x = st.coeffs.astype(complex)
    # the prediction may already be exact (e.g. a quadratic band)
    r = shifted @ x
    if np.linalg.norm(r - np.vdot(x, r) * x) <= tol_eig * scale:
        return complex(shift + np.vdot(x, r))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(shifted)
    for _ in range(max_iter):
        x = sla.lu_solve(lu, x)
        if not np.all(np.isfinite(x)):
            break
        x /= np.linalg.norm(x)
        Hx = H @ x
        lam = np.vdot(x, Hx)
        if np.linalg.norm(Hx - lam * x) <= tol_eig * scale:
            return complex(lam)
    w = np.linalg.eigvals(H)
    return complex(w[np.argmin(np.abs(w - shift))])


@dataclass(frozen=True)
class BandDerivatives:
    """k-derivatives of one band.

    ``dphi_perp[:, j]`` is the component of ``dPhi/dk_j`` orthogonal to
    ``Phi``, i.e. ``(E - H0)^{-1} Q dH0/dk_j Phi`` on the range of the
    projector ``Q = 1 - |Phi><Phi|``.  ``velocity[j, m] = <m| dH0/dk_j |n>``
    is only available when the full eigenbasis was computed.
    """

    gradient: np.ndarray
    hessian: np.ndarray
    dphi_perp: np.ndarray
    velocity: np.ndarray | None
    window: int


def _velocity_vectors(basis: PlaneWaveBasis, state: BandState) -> np.ndarray:
    """Columns ``dH0/dk_j Phi``, shape ``(nbasis, 3)``."""
    return 2.0 * (basis.g_list + state.k) * state.coeffs[:, None]


def _window(state: BandState, window: int | None) -> int:
    nb = len(state.coeffs)
    w = nb if window is None or window <= 0 else min(window, nb)
    if w <= state.pos:
        raise InvalidInput(f"band window {w} does not contain band {state.band_index}")
    return w


def _deflated_solve(state: BandState, rhs: np.ndarray) -> np.ndarray:
    """``(H0 - E)^{-1} Q rhs`` restricted to the complement of ``Phi``.

    ``H0 - E + |Phi><Phi|`` acts as ``H0 - E`` on that complement and as the
    identity on ``Phi``, so it is invertible for a simple band.
    """
    c = state.coeffs
    rhs = np.asarray(rhs, dtype=complex)
    rhs = rhs - np.outer(c, c.conj() @ rhs) if rhs.ndim == 2 else rhs - c * np.vdot(c, rhs)
    Mat = state.hamiltonian - state.energy * np.eye(len(c)) + np.outer(c, c.conj())
    x = np.linalg.solve(Mat, rhs)
    return x - (np.outer(c, c.conj() @ x) if x.ndim == 2 else c * np.vdot(c, x))


def band_derivatives(
    basis: PlaneWaveBasis,
    state: BandState,
    *,
    window: int | None = None,
    tol_deriv: float = DEFAULT_TOL_DERIV,
) -> BandDerivatives:
    """Hellmann-Feynman gradient and perturbative Hessian of ``E_n(k)``.

    ``hessian_ij = 2 delta_ij + 2 sum_{m != n} Re[<n|v_i|m><m|v_j|n>] / (E_n - E_m)``.

    With the full eigenbasis the sum runs over the lowest ``window`` bands
    (default: all); the excluded bands' contribution is evaluated and must
    stay below ``tol_deriv``.  Without it the sum over every band is
    obtained from a deflated linear solve.
    """
    w = _window(state, window)
    nb = len(state.coeffs)
    vphi = _velocity_vectors(basis, state)
    grad = np.real(state.coeffs.conj() @ vphi)

    if state.has_full_spectrum:
        n = state.pos
        vel_all = state.eigvecs.conj().T @ vphi  # (nb, 3): <m|v_j|n>
        denom = state.energy - state.eigvals
        denom[n] = np.inf
        coef = vel_all / denom[:, None]
        dphi = state.eigvecs[:, :w] @ coef[:w]
        if w < nb:
            tail_vec = state.eigvecs[:, w:] @ coef[w:]
            tail = 2.0 * np.abs(vphi.conj().T @ tail_vec).max()
            if tail > tol_deriv:
                raise AccuracyError(f"band window {w} leaves a Hessian tail of {tail:.3e} > {tol_deriv:g}")
        velocity = vel_all[:w].T.copy()
    else:
        if w < nb:
            raise InvalidInput("a truncated band window needs the full eigenbasis (solve_band(full=True))")
        dphi = -_deflated_solve(state, vphi)
        velocity = None
    hess = 2.0 * np.eye(3) + 2.0 * np.real(vphi.conj().T @ dphi)
    hess = 0.5 * (hess + hess.T)
    return BandDerivatives(grad, hess, dphi, velocity, w)


def wr_integrand(basis: PlaneWaveBasis, state: BandState, deriv: BandDerivatives) -> float:
    """``sum_{m != n} Im[<n|v1|m><m|v2|n>] / (E_n - E_m)``.

    Equal to ``-Im <(H0 - E) dPhi/dk1, dPhi/dk2>`` with the inner product
    linear in its first slot; independent of every eigenvector phase.
    """
    v1phi = 2.0 * (basis.g_list[:, 0] + state.k[0]) * state.coeffs
    return float(np.vdot(v1phi, deriv.dphi_perp[:, 1]).imag)


def gauge_connection(state: BandState, deriv: BandDerivatives) -> np.ndarray:
    """Real vector ``a`` with ``<Phi|dPhi/dk_j> = i a_j`` in the fixed gauge.

    The fixed gauge keeps the pivot (largest) coefficient of ``Phi`` real, so
    ``a`` follows from the imaginary part of that coefficient's derivative.
    """
    piv = int(np.argmax(np.abs(state.coeffs)))
    return -deriv.dphi_perp[piv, :].imag / state.coeffs[piv].real


def bloch_derivative(state: BandState, deriv: BandDerivatives) -> np.ndarray:
    """``dPhi/dk_j`` in the fixed gauge, shape ``(nbasis, 3)``."""
    return deriv.dphi_perp + 1j * state.coeffs[:, None] * gauge_connection(state, deriv)[None, :]


def reduced_resolvent_apply(
    state: BandState,
    rhs: np.ndarray,
    *,
    window: int | None = None,
    tol_deriv: float = DEFAULT_TOL_DERIV,
) -> np.ndarray:
    """Apply ``(H0 - E_n)^{-1}`` on the orthogonal complement of ``Phi_n``.

    Returns ``sum_{m != n} Phi_m <Phi_m, rhs> / (E_m - E_n)`` over the window.
    """
    w = _window(state, window)
    if not state.has_full_spectrum:
        if w < len(state.coeffs):
            raise InvalidInput("a truncated band window needs the full eigenbasis")
        return _deflated_solve(state, rhs)
    proj = state.eigvecs.conj().T @ np.asarray(rhs, dtype=complex)
    denom = state.eigvals - state.energy
    denom[state.pos] = np.inf
    coef = proj / denom
    if w < len(denom):
        tail = np.linalg.norm(coef[w:])
        if tail > tol_deriv * max(np.linalg.norm(rhs), 1.0):
            raise AccuracyError(f"band window {w} leaves a resolvent tail of {tail:.3e}")
    return state.eigvecs[:, :w] @ coef[:w]


@dataclass
class BandSampler:
    """One band of a fixed lattice problem, evaluated on demand.

    Bundles the basis, the precomputed potential matrix and the numerical
    settings every downstream module needs, plus the magnetic coupling
    ``mu = e / hbar``.
    """

    lattice: LatticeSpec
    basis: PlaneWaveBasis
    band_index: int = 1
    mu: float = 1.0
    delta_gap: float = DEFAULT_DELTA_GAP
    tol_eig: float = DEFAULT_TOL_EIG
    window: int | None = None
    tol_deriv: float = DEFAULT_TOL_DERIV
    V: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.V = potential_matrix(self.basis, self.lattice)

    @classmethod
    def build(cls, lattice: LatticeSpec, cutoff: float, **kwargs) -> "BandSampler":
        from .lattice import build_basis

        return cls(lattice, build_basis(lattice, cutoff), **kwargs)

    def state(self, k, *, full: bool | None = None) -> BandState:
        """Band state at ``k``; the full eigenbasis is computed only when a
        truncated band window needs it (or ``full=True``)."""
        if full is None:
            full = self.window is not None and self.window > 0
        return solve_band(
            self.basis, self.lattice, k, self.band_index,
            delta_gap=self.delta_gap, tol_eig=self.tol_eig, V=self.V, full=full,
        )

    def energy(self, k) -> float:
        return self.state(k, full=False).energy

    def continued_energy(self, k) -> complex:
        return continued_energy(
            self.basis, self.lattice, k, self.band_index,
            delta_gap=self.delta_gap, tol_eig=self.tol_eig, V=self.V,
        )

    def energy_gradient(self, k) -> tuple[float, np.ndarray]:
        st = self.state(k, full=False)
        vel = 2.0 * (self.basis.g_list + st.k)
        return st.energy, (np.abs(st.coeffs) ** 2) @ vel

    def derivatives(self, k, *, full: bool | None = None) -> tuple[BandState, BandDerivatives]:
        st = self.state(k, full=full)
        return st, band_derivatives(self.basis, st, window=self.window, tol_deriv=self.tol_deriv)

    def gradient(self, k) -> np.ndarray:
        return self.energy_gradient(k)[1]

    def spectrum(self, k) -> np.ndarray:
        H = assemble_h0(self.basis, self.lattice, k, V=self.V)
        return np.linalg.eigvalsh(H)
