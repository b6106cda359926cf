"""Run configuration: strict TOML/JSON parsing into validated blocks."""

from __future__ import annotations

import json
import math
import sys
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError, field_validator, model_validator

from .errors import InvalidInput
from .lattice import LatticeSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Vec3 = tuple[float, float, float]
Vec2 = tuple[float, float]

_TWO_PI = 2 * math.pi


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PotentialTerm(_Block):
    """One Fourier coefficient ``V(G_m) = re + i*im``."""

    m: tuple[int, int, int]
    re: float
    im: float = 0.0


class LatticeBlock(_Block):
    a1: Vec3 = (_TWO_PI, 0.0, 0.0)
    a2: Vec3 = (0.0, _TWO_PI, 0.0)
    a3: Vec3 = (0.0, 0.0, _TWO_PI)
    # explicit coefficients; every entry needs its conjugate partner
    potential: list[PotentialTerm] = Field(default_factory=list)
    # shorthand: each term adds 2 Re(v exp(i G_m . x)), partner filled in
    cosines: list[PotentialTerm] = Field(default_factory=list)

    def spec(self) -> LatticeSpec:
        coeffs: dict = {}
        for t in self.potential:
            if t.m in coeffs:
                raise InvalidInput(f"lattice.potential: duplicate coefficient {t.m}")
            coeffs[t.m] = complex(t.re, t.im)
        base = LatticeSpec.from_cosines(self.a1, self.a2, self.a3, {t.m: complex(t.re, t.im) for t in self.cosines})
        for m, v in base.potential_coeffs.items():
            coeffs[m] = coeffs.get(m, 0) + v
        return LatticeSpec(self.a1, self.a2, self.a3, coeffs)


class SolverBlock(_Block):
    cutoff: PositiveFloat = 3.0
    band_index: int = Field(1, ge=1)
    delta_gap: PositiveFloat = 1e-4
    tol_eig: PositiveFloat = 1e-9
    band_window: Optional[int] = Field(None, ge=1)
    tol_deriv: PositiveFloat = 1e-6


class BandsBlock(_Block):
    path: list[Vec3] = Field(
        default_factory=lambda: [(0.0, 0.0, 0.0), (0.5, 0.0, 0.0), (0.5, 0.5, 0.0), (0.0, 0.0, 0.0)],
        min_length=2,
    )
    points_per_segment: int = Field(20, ge=1)
    n_bands: int = Field(4, ge=1)


class OrbitBlock(_Block):
    E0: float
    E0_reference: Literal["absolute", "gamma"] = "absolute"
    k3: float = 0.0
    k3_grid: Optional[list[float]] = None
    seed_origin: Vec2 = (0.0, 0.0)
    seed_direction: Vec2 = (1.0, 0.0)
    n_samples: int = Field(256, ge=8)
    rtol: PositiveFloat = 1e-12
    atol: PositiveFloat = 1e-14
    tol_level: PositiveFloat = 1e-10
    tol_close: PositiveFloat = 1e-8
    v_min: PositiveFloat = 1e-8
    s_max: PositiveFloat = 1e4
    p2_const: float = 0.0
    c: float = 0.0

    @field_validator("k3_grid")
    @classmethod
    def _sorted(cls, v):
        if v is not None:
            if len(v) < 1:
                raise ValueError("k3_grid must not be empty")
            if any(b <= a for a, b in zip(v, v[1:])):
                raise ValueError("k3_grid must be strictly increasing")
        return v


class BeamBlock(_Block):
    tol_frame: PositiveFloat = 1e-7
    tol_sigma: PositiveFloat = 1e-8
    d_min: PositiveFloat = 1e-6
    p_min: PositiveFloat = 1e-6
    rtol: PositiveFloat = 1e-11
    atol: PositiveFloat = 1e-13


class PhasesBlock(_Block):
    tol_phase: PositiveFloat = 1e-6
    tol_action: PositiveFloat = 1e-7
    tol_amp: PositiveFloat = 1e-7
    n_min: int = Field(0, ge=0)
    n_max: int = Field(5, ge=0)
    eps_window: Optional[tuple[float, float]] = None
    eps_bins: int = Field(40, ge=1)

    @model_validator(mode="after")
    def _range(self):
        if self.n_max < self.n_min:
            raise ValueError("n_max must be >= n_min")
        if self.eps_window is not None and self.eps_window[0] < 0:
            raise ValueError("eps_window must be non-negative")
        return self

    @property
    def n_range(self) -> range:
        return range(self.n_min, self.n_max + 1)


class ResidualBlock(_Block):
    eps_list: list[PositiveFloat] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    tube_factor: PositiveFloat = 3.0
    n_tube_s: int = Field(32, ge=1)
    n_tube_t: int = Field(25, ge=2)
    include_m1perp: bool = False
    eikonal_deltas: list[PositiveFloat] = Field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3, 1.25e-3])
    eikonal_rays: int = Field(8, ge=1)

    @field_validator("eps_list")
    @classmethod
    def _eps(cls, v):
        if len(v) < 4:
            raise ValueError("eps_list needs at least four values")
        if any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return v

    @field_validator("eikonal_deltas")
    @classmethod
    def _deltas(cls, v):
        if len(v) < 2 or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError("eikonal_deltas must hold at least two strictly decreasing values")
        return v


class OutputBlock(_Block):
    directory: str = "out"
    formats: list[Literal["csv", "json", "dat"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(_Block):
    mu: PositiveFloat = 1.0
    workers: int = Field(1, ge=1)
    lattice: LatticeBlock = Field(default_factory=LatticeBlock)
    solver: SolverBlock = Field(default_factory=SolverBlock)
    bands: BandsBlock = Field(default_factory=BandsBlock)
    orbit: OrbitBlock
    beam: BeamBlock = Field(default_factory=BeamBlock)
    phases: PhasesBlock = Field(default_factory=PhasesBlock)
    residual: ResidualBlock = Field(default_factory=ResidualBlock)
    output: OutputBlock = Field(default_factory=OutputBlock)

    def lattice_spec(self) -> LatticeSpec:
        return self.lattice.spec()

    def k3_values(self) -> list[float]:
        return list(self.orbit.k3_grid) if self.orbit.k3_grid is not None else [self.orbit.k3]


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def load_document(path) -> dict:
    """Read a TOML or JSON document (chosen by suffix, TOML by default)."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except FileNotFoundError:
        raise InvalidInput(f"config file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise InvalidInput(f"config file is not UTF-8: {exc}") from None
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from None
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"{path}: line {exc.lineno}: {exc.msg}") from None
    else:
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidInput(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InvalidInput(f"{path}: top level must be a table/object")
    return doc


def parse_config(source) -> RunConfig:
    """Validate a config file path or an already-loaded mapping."""
    doc = source if isinstance(source, dict) else load_document(source)
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise InvalidInput(f"invalid config: {_format_errors(exc)}") from None
    cfg.lattice_spec()  # Hermitian partners and basis checks
    return cfg


def effective_config(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json")
