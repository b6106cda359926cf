"""Lattice geometry and the plane-wave basis."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import AssumptionViolation, InvalidInput

Triple = tuple[int, int, int]

_HERMITIAN_TOL = 1e-13


@dataclass(frozen=True)
class LatticeSpec:
    """Direct lattice basis and Fourier coefficients of the periodic potential.

    Parameters
    ----------
    a1, a2, a3 : array_like
        Direct lattice vectors.
    potential_coeffs : mapping
        ``(m1, m2, m3) -> complex``; the key holds coordinates of the
        reciprocal vector ``G = m1*b1 + m2*b2 + m3*b3``.  The potential is
        real, so every entry needs its partner ``V(-G) = conj(V(G))``.
    """

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    potential_coeffs: Mapping[Triple, complex] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("a1", "a2", "a3"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        coeffs = {tuple(int(c) for c in m): complex(v) for m, v in dict(self.potential_coeffs).items()}
        object.__setattr__(self, "potential_coeffs", coeffs)
        self.validate()

    @property
    def basis_matrix(self) -> np.ndarray:
        return np.vstack([self.a1, self.a2, self.a3])

    def validate(self) -> None:
        A = self.basis_matrix
        scale = np.prod(np.linalg.norm(A, axis=1))
        if scale == 0 or abs(np.linalg.det(A)) <= 1e-12 * scale:
            raise AssumptionViolation("lattice basis vectors are linearly dependent")
        for m, v in self.potential_coeffs.items():
            partner = (-m[0], -m[1], -m[2])
            if partner not in self.potential_coeffs:
                raise InvalidInput(f"potential coefficient {m} has no Hermitian partner {partner}")
            if abs(self.potential_coeffs[partner] - np.conj(v)) > _HERMITIAN_TOL * max(1.0, abs(v)):
                raise InvalidInput(
                    f"potential coefficients {m} and {partner} are not complex conjugates"
                )

    @classmethod
    def cubic(cls, a: float = 2 * np.pi, potential_coeffs=None) -> "LatticeSpec":
        return cls(a * np.eye(3)[0], a * np.eye(3)[1], a * np.eye(3)[2], potential_coeffs or {})

    @classmethod
    def from_cosines(cls, a1, a2, a3, terms: Mapping[Triple, complex]) -> "LatticeSpec":
        """Build ``V(x) = sum 2 Re(v exp(i G.x))`` from one coefficient per pair.

        ``terms[m] = v`` sets ``V(G_m) = v`` and ``V(-G_m) = conj(v)``; a real
        ``v`` is the amplitude of ``2 v cos(G_m . x)``.
        """
        coeffs: dict[Triple, complex] = {}
        for m, v in terms.items():
            m = tuple(int(c) for c in m)
            neg = (-m[0], -m[1], -m[2])
            if m == neg:
                coeffs[m] = coeffs.get(m, 0) + complex(v).real
                continue
            coeffs[m] = coeffs.get(m, 0) + complex(v)
            coeffs[neg] = coeffs.get(neg, 0) + np.conj(complex(v))
        return cls(a1, a2, a3, coeffs)


@dataclass(frozen=True)
class PlaneWaveBasis:
    cutoff: float
    b: np.ndarray  # rows are b1, b2, b3
    m_list: np.ndarray  # (n, 3) integer coordinates, lexicographic
    g_list: np.ndarray  # (n, 3) cartesian reciprocal vectors
    index: Mapping[Triple, int] = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.m_list)

    def to_cartesian(self, m) -> np.ndarray:
        return np.asarray(m, dtype=float) @ self.b


def reciprocal_basis(lattice: LatticeSpec) -> np.ndarray:
    """Rows ``b_j`` with ``a_i . b_j = 2 pi delta_ij``."""
    return 2 * np.pi * np.linalg.inv(lattice.basis_matrix).T


def build_basis(lattice: LatticeSpec, cutoff: float) -> PlaneWaveBasis:
    """All reciprocal vectors with ``|G| <= cutoff``, ordered lexicographically
    on their integer coordinates."""
    if not cutoff >= 0:
        raise InvalidInput(f"cutoff must be non-negative, got {cutoff}")
    lattice.validate()
    b = reciprocal_basis(lattice)
    # |m_i| = |G . a_i| / 2pi <= cutoff |a_i| / 2pi
    bounds = [int(np.floor(cutoff * np.linalg.norm(a) / (2 * np.pi) + 1e-9)) for a in lattice.basis_matrix]
    tol = 1e-10 * max(cutoff, 1.0)
    ms = []
    for m in itertools.product(*(range(-n, n + 1) for n in bounds)):
        if np.linalg.norm(np.asarray(m, dtype=float) @ b) <= cutoff + tol:
            ms.append(m)
    m_arr = np.array(ms, dtype=int).reshape(-1, 3)
    return PlaneWaveBasis(
        cutoff=float(cutoff),
        b=b,
        m_list=m_arr,
        g_list=m_arr @ b,
        index={tuple(int(c) for c in m): i for i, m in enumerate(m_arr)},
    )
