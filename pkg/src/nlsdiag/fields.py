"""Specifications and samplers for initial data, localized components l(t) and
potentials V(t).

All samplers are pure, deterministic functions of (spec, t, grid, seed).  The
V1/V2 split of a potential is explicit user data via ``claimed_class`` tags;
the bounds in the diagnostics are class specific and never inferred from decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DomainError
from .grids import (
    FREQUENCY,
    PHYSICAL,
    GridField,
    SpatialGrid,
    free_propagate,
    l2_norm,
    norm,
    zero_field,
)

LOCALIZED_PROFILES = ("gaussian", "sech", "exp")
POTENTIAL_PROFILES = ("gaussian-well", "inverse-power", "ball")
INITIAL_PROFILES = ("gaussian", "sech-soliton", "plane-gaussian")


@dataclass(frozen=True)
class NonlinearitySpec:
    """Power F(u) = mu |u|^p u or Hartree F(u) = mu (|x|^{-dp/2} * |u|^2) u."""

    kind: str
    p: float
    mu: complex

    def __post_init__(self):
        if self.kind not in ("power", "hartree"):
            raise ConfigError(f"kind must be 'power' or 'hartree', got {self.kind!r}")
        if not (self.p > 0):
            raise ConfigError(f"p must be positive, got {self.p}")
        if self.mu == 0:
            raise ConfigError("mu must be nonzero")

    def long_range(self, dim: int) -> bool:
        return self.p <= 2.0 / dim + 1e-12

    def theorem2_range(self, dim: int) -> bool:
        return self.p < 1.0 and self.long_range(dim)

    def theorem3_range(self, dim: int) -> bool:
        return (
            self.kind == "power"
            and abs(self.p - 1.0) < 1e-12
            and 1.0 <= 2.0 / dim + 1e-12
        )

    def solver_stable(self, dim: int) -> bool:
        """Mass-subcritical guard used before genuine evolution runs."""
        return self.p < 4.0 / dim


def _path_array(path) -> np.ndarray:
    """Polynomial path coefficients as an array of shape (n_coeffs, d):
    c(t) = sum_i path[i] * t^i."""
    arr = np.atleast_2d(np.asarray(path, dtype=float))
    return arr


def _path_eval(path: np.ndarray, t: float) -> np.ndarray:
    powers = t ** np.arange(path.shape[0])
    return powers @ path


def _path_velocity(path: np.ndarray) -> Optional[np.ndarray]:
    """Limit velocity lim c(t)/t, or None when undefined (superlinear path)."""
    if path.shape[0] > 2 and np.any(path[2:] != 0.0):
        return None
    if path.shape[0] >= 2:
        return path[1].copy()
    return np.zeros(path.shape[1])


@dataclass(frozen=True)
class LocalizedComponent:
    """One traveling localized profile l_k(t, x - c_k(t))."""

    profile: str
    amplitude: complex
    width: float
    path: tuple  # polynomial coefficients, shape (n, d)
    phase_rate: float = 0.0
    spread_beta: float = 0.0  # width(t) = width * (1 + t)^beta, beta < 1

    def __post_init__(self):
        if self.profile not in LOCALIZED_PROFILES:
            raise ConfigError(f"unknown localized profile {self.profile!r}")
        if not (self.width > 0):
            raise ConfigError("width must be positive")
        if not (self.spread_beta < 1.0):
            raise ConfigError("sublinear spread requires beta < 1")
        object.__setattr__(self, "path", tuple(map(tuple, _path_array(self.path))))

    @property
    def path_array(self) -> np.ndarray:
        return _path_array(self.path)

    @property
    def dim(self) -> int:
        return self.path_array.shape[1]

    def velocity(self) -> Optional[np.ndarray]:
        return _path_velocity(self.path_array)

    def width_at(self, t: float) -> float:
        return self.width * (1.0 + t) ** self.spread_beta

    def l2_mass(self) -> float:
        """Analytic squared L^2 norm; constant in t because spreading profiles
        are rescaled to preserve mass."""
        a2 = abs(self.amplitude) ** 2
        s, d = self.width, self.dim
        if self.profile == "gaussian":
            return a2 * math.pi ** (d / 2.0) * s**d
        if self.profile == "sech":
            if d == 1:
                return a2 * 2.0 * s
            return a2 * 2.0 * math.pi * s**2 * math.log(2.0)
        # exp profile e^{-|x|/(2 width)}
        if d == 1:
            return a2 * 2.0 * s
        return a2 * 2.0 * math.pi * s**2


@dataclass(frozen=True)
class LocalizedPathSpec:
    """Superposition of traveling localized waves, bounded in L^2 and L^q."""

    components: Tuple[LocalizedComponent, ...]
    q_exponent: float = 1.5

    def __post_init__(self):
        if not (1.0 < self.q_exponent < 2.0):
            raise ConfigError(f"q_exponent must lie in (1, 2), got {self.q_exponent}")
        object.__setattr__(self, "components", tuple(self.components))


@dataclass(frozen=True)
class PotentialComponent:
    profile: str
    amplitude: complex
    width: float
    path: tuple
    claimed_class: str  # "V1" (L^{2/p-eps}) or "V2" (L^{d/2} | L^{1+eps} | measure)
    time_modulation: Optional[str] = None  # None or "cosine"

    def __post_init__(self):
        if self.profile not in POTENTIAL_PROFILES:
            raise ConfigError(f"unknown potential profile {self.profile!r}")
        if self.claimed_class not in ("V1", "V2"):
            raise ConfigError("claimed_class must be 'V1' or 'V2'")
        if self.time_modulation not in (None, "cosine"):
            raise ConfigError("time_modulation must be None or 'cosine'")
        if not (self.width > 0):
            raise ConfigError("width must be positive")
        object.__setattr__(self, "path", tuple(map(tuple, _path_array(self.path))))

    @property
    def path_array(self) -> np.ndarray:
        return _path_array(self.path)

    def modulation(self, t: float) -> float:
        if self.time_modulation == "cosine":
            return math.cos(t)
        return 1.0

    def velocity(self) -> Optional[np.ndarray]:
        return _path_velocity(self.path_array)

    def l2_mass(self) -> float:
        a2 = abs(self.amplitude) ** 2
        w, d = self.width, self.path_array.shape[1]
        if self.profile == "gaussian-well":
            return a2 * math.pi ** (d / 2.0) * w**d
        if self.profile == "ball":
            vol = 2.0 * w if d == 1 else math.pi * w**2
            return a2 * vol
        # inverse-power a * w / max(r, w): integrable square only in d = 1
        if d == 1:
            return a2 * 4.0 * w
        raise DomainError("inverse-power profile has infinite L^2 mass in d >= 2")

    def is_static(self) -> bool:
        moving = self.path_array.shape[0] > 1 and np.any(self.path_array[1:] != 0.0)
        return (not moving) and self.time_modulation is None


@dataclass(frozen=True)
class PotentialSpec:
    """Decomposed potential V = V1 + V2 + atoms (atoms: d = 1 only)."""

    smooth_components: Tuple[PotentialComponent, ...] = ()
    atoms: Tuple[Tuple[float, complex], ...] = ()  # (position, weight)

    def __post_init__(self):
        object.__setattr__(self, "smooth_components", tuple(self.smooth_components))
        object.__setattr__(self, "atoms", tuple((float(p), complex(w)) for p, w in self.atoms))

    @property
    def is_empty(self) -> bool:
        return not self.smooth_components and not self.atoms

    def is_static(self) -> bool:
        return all(c.is_static() for c in self.smooth_components)

    def components_of_class(self, cls: str) -> Tuple[PotentialComponent, ...]:
        return tuple(c for c in self.smooth_components if c.claimed_class == cls)

    def total_variation_v2(self, grid: SpatialGrid, t: float) -> float:
        """Grid surrogate for the measure norm of the V2 part: atom weights plus
        the L^1 norms of V2-tagged smooth components."""
        total = sum(abs(w) for _, w in self.atoms)
        comps = self.components_of_class("V2")
        if comps:
            vals = _smooth_values(comps, t, grid.meshgrid())
            total += grid.cell_volume * float(np.sum(np.abs(vals)))
        return total


@dataclass(frozen=True)
class InitialDataTerm:
    profile: str
    amplitude: complex
    center: tuple
    velocity: tuple
    width: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.profile not in INITIAL_PROFILES:
            raise ConfigError(f"unknown initial profile {self.profile!r}")
        if not (self.width > 0):
            raise ConfigError("width must be positive")
        object.__setattr__(self, "center", tuple(np.atleast_1d(np.asarray(self.center, float))))
        object.__setattr__(self, "velocity", tuple(np.atleast_1d(np.asarray(self.velocity, float))))


@dataclass(frozen=True)
class RadiationSpec:
    seed: int
    amplitude: float
    band_limit: float  # modes |xi| <= band_limit populated


@dataclass(frozen=True)
class InitialDataSpec:
    terms: Tuple[InitialDataTerm, ...] = ()
    radiation: Optional[RadiationSpec] = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))


# ---------------------------------------------------------------------------
# pointwise evaluators (work on arbitrary coordinate arrays, used both for
# grid sampling and for the substitution quadrature x -> t x in diagnostics)
# ---------------------------------------------------------------------------

def localized_values(spec: LocalizedPathSpec, t: float, coords: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate l(t) = sum_k l_k(t, x - c_k(t)) at arbitrary coordinates."""
    out = np.zeros(np.broadcast(*coords).shape if len(coords) > 1 else np.shape(coords[0]),
                   dtype=np.complex128)
    for comp in spec.components:
        if comp.dim != len(coords):
            raise ConfigError("component dimension does not match coordinates")
        c = _path_eval(comp.path_array, t)
        r2 = sum((coords[i] - c[i]) ** 2 for i in range(comp.dim))
        st = comp.width_at(t)
        # rescale amplitude so the L^2 mass is independent of the spread
        amp = comp.amplitude * (comp.width / st) ** (comp.dim / 2.0)
        if comp.profile == "gaussian":
            prof = np.exp(-r2 / (2.0 * st**2))
        elif comp.profile == "sech":
            prof = 1.0 / np.cosh(np.sqrt(r2) / st)
        else:  # exp
            prof = np.exp(-np.sqrt(r2) / (2.0 * st))
        v = comp.velocity()
        vdotx = sum(v[i] * coords[i] for i in range(comp.dim)) if v is not None else 0.0
        out = out + amp * prof * np.exp(1j * (0.5 * vdotx + comp.phase_rate * t))
    return out


def _smooth_values(components, t: float, coords: Sequence[np.ndarray]) -> np.ndarray:
    out = np.zeros(np.broadcast(*coords).shape if len(coords) > 1 else np.shape(coords[0]),
                   dtype=np.complex128)
    for comp in components:
        d = comp.path_array.shape[1]
        if d != len(coords):
            raise ConfigError("potential component dimension does not match coordinates")
        c = _path_eval(comp.path_array, t)
        r = np.sqrt(sum((coords[i] - c[i]) ** 2 for i in range(d)))
        if comp.profile == "gaussian-well":
            prof = np.exp(-(r**2) / (2.0 * comp.width**2))
        elif comp.profile == "inverse-power":
            prof = comp.width / np.maximum(r, comp.width)
        else:  # ball
            prof = (r <= comp.width).astype(float)
        out = out + comp.amplitude * comp.modulation(t) * prof
    return out


def smooth_potential_values(spec: PotentialSpec, t: float, coords: Sequence[np.ndarray]) -> np.ndarray:
    """The function part of V(t) at arbitrary coordinates (atoms excluded)."""
    return _smooth_values(spec.smooth_components, t, coords)


# ---------------------------------------------------------------------------
# grid samplers
# ---------------------------------------------------------------------------

def sample_potential(spec: PotentialSpec, t: float, grid: SpatialGrid,
                     mollify_width: float) -> GridField:
    """Sample V(t) on the grid; atoms (d = 1 only) enter as weight * G_w with a
    unit-mass Gaussian mollifier of width ``mollify_width``."""
    if spec.atoms and grid.dim != 1:
        raise ConfigError("atom potentials are only supported in dimension 1")
    if spec.atoms and mollify_width < 2.0 * grid.spacing:
        raise ConfigError("mollify_width must be at least twice the grid spacing")
    vals = smooth_potential_values(spec, t, grid.meshgrid())
    if spec.atoms:
        x = grid.axis_points()
        w = mollify_width
        for pos, weight in spec.atoms:
            vals = vals + weight * np.exp(-((x - pos) ** 2) / (2.0 * w**2)) / (
                math.sqrt(2.0 * math.pi) * w
            )
    return GridField(grid, vals, PHYSICAL, t)


@dataclass(frozen=True)
class LocalizedSample:
    field: GridField
    l2: float
    lq: float
    valid: bool


def sample_localized(spec: LocalizedPathSpec, t: float, grid: SpatialGrid) -> LocalizedSample:
    """l(t) on the grid, with its L^2 and L^q norms and a support-validity flag.

    The flag goes false when a component center drifts within 5 widths of the
    box edge; the field is still returned.
    """
    if t < 0:
        raise DomainError("sample_localized requires t >= 0")
    vals = localized_values(spec, t, grid.meshgrid())
    f = GridField(grid, vals, PHYSICAL, t)
    valid = True
    half = 0.5 * grid.box_length
    for comp in spec.components:
        c = _path_eval(comp.path_array, t)
        if np.max(np.abs(c)) + 5.0 * comp.width_at(t) > half:
            valid = False
    return LocalizedSample(f, l2_norm(f), norm(f, "lp", spec.q_exponent), valid)


def make_field(spec: InitialDataSpec, grid: SpatialGrid, *, mass_check: bool = True) -> GridField:
    """Deterministic initial datum from a spec; the radiation seed is recorded
    in the spec so re-sampling reproduces it exactly."""
    coords = grid.meshgrid()
    vals = np.zeros(grid.shape, dtype=np.complex128)
    for term in spec.terms:
        center = np.asarray(term.center)
        vel = np.asarray(term.velocity)
        if center.size != grid.dim or vel.size != grid.dim:
            raise ConfigError("term center/velocity dimension does not match grid")
        if term.width > grid.box_length / 4.0:
            raise ConfigError("profile wider than a quarter of the box")
        r2 = sum((coords[i] - center[i]) ** 2 for i in range(grid.dim))
        vdotx = sum(vel[i] * coords[i] for i in range(grid.dim))
        if term.profile == "gaussian":
            prof = np.exp(-r2 / (2.0 * term.width**2))
            phase = 0.5 * vdotx + term.phase
        elif term.profile == "sech-soliton":
            if grid.dim != 1:
                raise ConfigError("sech solitons are 1-d")
            prof = 1.0 / np.cosh(np.sqrt(r2) / term.width)
            phase = 0.5 * vdotx + term.phase
        else:  # plane-gaussian: full-wavenumber plane wave on a gaussian bump
            prof = np.exp(-r2 / (2.0 * term.width**2))
            phase = vdotx + term.phase
        contrib = term.amplitude * prof * np.exp(1j * phase)
        if mass_check and term.profile == "gaussian":
            analytic = abs(term.amplitude) ** 2 * (math.pi * term.width**2) ** (grid.dim / 2.0)
            got = grid.cell_volume * float(np.sum(np.abs(contrib) ** 2))
            if abs(got - analytic) > 1e-8 * analytic:
                raise ConfigError(
                    "grid too small: gaussian term mass deviates from analytic value "
                    f"by {abs(got - analytic) / analytic:.2e} relative"
                )
        vals = vals + contrib
    if spec.radiation is not None:
        vals = vals + _radiation_values(spec.radiation, grid)
    return GridField(grid, vals, PHYSICAL, 0.0)


def _radiation_values(rad: RadiationSpec, grid: SpatialGrid) -> np.ndarray:
    rng = np.random.default_rng(rad.seed)
    coeffs = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    mask = np.sqrt(grid.frequency_radius_squared()) <= rad.band_limit
    coeffs = coeffs * mask
    vals = np.fft.ifftn(coeffs)
    nrm = math.sqrt(grid.cell_volume * float(np.sum(np.abs(vals) ** 2)))
    if nrm == 0.0:
        return np.zeros(grid.shape, dtype=np.complex128)
    return rad.amplitude / nrm * vals


def synth_state(lspec: LocalizedPathSpec, v_plus: GridField, t: float,
                grid: SpatialGrid, *, perturb_delta: Optional[float] = None,
                perturb_seed: int = 0, perturb_amplitude: float = 0.0) -> GridField:
    """Exact synthetic decomposition u(t) = l(t) + e^{it Laplacian} v_plus.

    The o(1) error is identically zero unless a decaying band-limited
    perturbation t^{-delta} * (random field) is requested.
    """
    if t < 0:
        raise DomainError("synth_state requires t >= 0")
    if v_plus.grid != grid:
        raise ConfigError("v_plus must live on the target grid")
    lpart = sample_localized(lspec, t, grid).field
    vals = lpart.values + free_propagate(v_plus, t).values
    if perturb_delta is not None and perturb_amplitude > 0.0:
        rad = RadiationSpec(seed=perturb_seed, amplitude=perturb_amplitude,
                            band_limit=0.5 * grid.max_frequency())
        decay = (max(t, 1.0)) ** (-perturb_delta)
        vals = vals + decay * _radiation_values(rad, grid)
    return GridField(grid, vals, PHYSICAL, t)
