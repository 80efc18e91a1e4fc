"""The non-scattering proof pipeline as executable diagnostics: the pairing
P(t) = <u(t), e^{it Lap} phi>, its exact derivative identity, main-term and
limit evaluation for both nonlinearities, potential-term bounds, decomposition
residuals and growth fitting.

Frame conventions
-----------------
All tilde-frame quantities are evaluated in original variables through the
exact change of variables: with the dilation D(2t),

    <F(tilde u), tilde w> = (2t)^{dp/2} <F(u), w>,

so ``main_term`` carries the exact factor 2^{dp/2} relative to the t^{-dp/2}
normalization seen in displayed identities that absorb constants.  The atomic
limit of |tilde l|^2 places mass ||l_k||_2^2 at the point v_k / 2 in the tilde
frame (tilde u samples at x / 2t); helpers report positions in both
conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import curve_fit

from .errors import (
    ConfigError,
    DomainError,
    GridMismatchError,
    ScopeError,
    TruncationLevelError,
    WindowCoverageError,
)
from .fields import (
    LocalizedPathSpec,
    NonlinearitySpec,
    PotentialSpec,
    sample_localized,
    sample_potential,
)
from .grids import (
    FREQUENCY,
    PHYSICAL,
    GridField,
    SpatialGrid,
    forward_transform,
    fourier_at,
    free_propagate,
    inner_product,
    inverse_transform,
    l2_norm,
    modulate,
    norm,
    tilde_transform,
)
from .solver import Trajectory, apply_nonlinearity, convolve_riesz, strichartz_window_norm
from .theorem3 import AtomicMeasure, nu_from_paths


# ---------------------------------------------------------------------------
# elementary pairings
# ---------------------------------------------------------------------------

def pairing(u: GridField, phi: GridField, t: float) -> complex:
    """P(t) = <u(t), e^{it Lap} phi> under the discrete inner product."""
    if u.grid != phi.grid:
        raise GridMismatchError("u and phi must share a grid")
    return inner_product(u, free_propagate(phi, t))


def main_term(u: GridField, phi: GridField, t: float, nl: NonlinearitySpec) -> complex:
    """<F(tilde u), tilde w>, evaluated without resampling as
    (2t)^{dp/2} <F(u), e^{it Lap} phi> (exact for both nonlinearities, by the
    change of variables and kernel homogeneity)."""
    if t <= 0:
        raise DomainError("main_term requires t > 0")
    d = u.grid.dim
    w = free_propagate(phi, t)
    return (2.0 * t) ** (d * nl.p / 2.0) * inner_product(apply_nonlinearity(u, nl), w)


def _frequency_as_physical(fhat: GridField) -> GridField:
    """View a frequency-lattice field as a physical field on the frequency box,
    so convolution machinery applies with the right cell measure."""
    g = fhat.grid
    freq_box = g.points_per_axis * g.frequency_spacing
    g2 = SpatialGrid(g.dim, g.points_per_axis, freq_box)
    return GridField(g2, fhat.values, PHYSICAL, fhat.time_label)


def main_term_limit(v_plus: GridField, phi: GridField, nl: NonlinearitySpec,
                    lspec: Optional[LocalizedPathSpec] = None) -> complex:
    """The t -> infinity limit of the main term.

    Power case: mu <|vhat|^p vhat, phihat>.  Hartree case:
    mu <(K * (|vhat|^2 + lam)) vhat, phihat> where lam is the atomic limit of
    |tilde l|^2: each localized component contributes its L^2 mass at the
    tilde-frame point v_k / 2.
    """
    vhat = forward_transform(v_plus)
    phihat = forward_transform(phi)
    cell = vhat.cell
    if nl.kind == "power":
        integrand = np.abs(vhat.values) ** nl.p * vhat.values * np.conj(phihat.values)
        return complex(nl.mu * cell * np.sum(integrand))

    vp = _frequency_as_physical(vhat)
    W = convolve_riesz(np.abs(vp.values) ** 2, vp.grid, nl.p)
    if lspec is not None and lspec.components:
        nu = nu_from_paths(lspec, None, (0.0,))
        coords = vhat.grid.frequency_meshgrid()
        s = vhat.grid.dim * nl.p / 2.0
        h_freq = vhat.grid.frequency_spacing
        for pos, mass in nu.atoms:
            y = np.asarray(pos) / 2.0  # tilde-frame position
            r = np.sqrt(sum((coords[i] - y[i]) ** 2 for i in range(len(coords))))
            kern = np.where(r > h_freq / 2.0, np.where(r > 0, r, 1.0) ** (-s),
                            (h_freq / 2.0) ** (-s))
            W = W + mass * kern
    integrand = W * vhat.values * np.conj(phihat.values)
    return complex(nl.mu * cell * np.sum(integrand))


# ---------------------------------------------------------------------------
# potential term and its bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialTermResult:
    value: complex
    v1_bound: Optional[float]
    v2_window_bound: Optional[float]
    v1_refused: bool = False


def potential_term(u: GridField, pot: PotentialSpec, phi: GridField, t: float,
                   p: float, *, mollify_width: float = 0.0,
                   holder_eps: float = 0.02, traj: Optional[Trajectory] = None,
                   window_T: float = 2.0) -> PotentialTermResult:
    """<V(t) u, w> plus the class-specific bounds.

    ``v1_bound`` is the discrete Hoelder chain
    ||V1||_{r1} ||u||_2 ||w||_{r2} with 1/r1 = p/2 + eps, 1/r2 = (1-p)/2 - eps
    (a true inequality on the grid); it requires p < 1 and is refused
    otherwise.  ``v2_window_bound`` is assembled from computed window
    Strichartz norms of ``traj`` over [t, t + window_T] when a trajectory is
    supplied; it estimates the window-integrated contribution
    |int_t^{t+T} <V2 u, w> ds|, not the instantaneous value.
    """
    grid = u.grid
    mollify = mollify_width if mollify_width > 0 else 3.0 * grid.spacing
    w = free_propagate(phi, t)
    if pot.is_empty:
        return PotentialTermResult(0.0 + 0.0j, 0.0, 0.0)
    V = sample_potential(pot, t, grid, mollify)
    value = complex(grid.cell_volume * np.sum(V.values * u.values * np.conj(w.values)))

    v1_comps = pot.components_of_class("V1")
    v1_bound: Optional[float] = None
    refused = False
    if v1_comps:
        if p >= 1.0:
            refused = True
        else:
            inv_r1 = p / 2.0 + holder_eps
            inv_r2 = (1.0 - p) / 2.0 - holder_eps
            if inv_r2 <= 0:
                raise DomainError("holder_eps too large for this p")
            V1 = sample_potential(
                PotentialSpec(smooth_components=v1_comps), t, grid, mollify)
            v1_bound = (
                norm(V1, "lp", 1.0 / inv_r1) * l2_norm(u) * norm(w, "lp", 1.0 / inv_r2)
            )
    elif not refused:
        v1_bound = 0.0

    v2_bound: Optional[float] = None
    has_v2 = bool(pot.atoms) or bool(pot.components_of_class("V2"))
    if not has_v2:
        v2_bound = 0.0
    elif traj is not None:
        tv = pot.total_variation_v2(grid, t)
        w_sup = norm(w, "sup")
        if grid.dim == 1:
            st = strichartz_window_norm(traj, t, window_T, (4.0, "sup"))
            v2_bound = window_T ** 0.75 * tv * st * w_sup
        else:
            # d = 2 surrogate for the (2+, infty-) pair: (4, sup) quadrature
            st = strichartz_window_norm(traj, t, window_T, (4.0, "sup"))
            v2_bound = window_T ** 0.5 * tv * st * w_sup
    return PotentialTermResult(value, v1_bound, v2_bound, refused)


# ---------------------------------------------------------------------------
# derivative identity
# ---------------------------------------------------------------------------

def derivative_check(traj: Trajectory, phi: GridField, nl: Optional[NonlinearitySpec],
                     pot: Optional[PotentialSpec], *, mollify_width: float = 0.0) -> float:
    """Max over interior snapshot times of
    | i * central-difference of P - (<F(u), w> + <V u, w>) |."""
    snaps = traj.snapshots
    if len(snaps) < 3:
        raise WindowCoverageError("need at least three snapshots")
    times = traj.times
    deltas = np.diff(times)
    if np.max(np.abs(deltas - deltas[0])) > 1e-9 * deltas[0]:
        raise WindowCoverageError("snapshots must be uniformly spaced")
    delta = float(deltas[0])
    grid = snaps[0][1].grid
    mollify = mollify_width if mollify_width > 0 else 3.0 * grid.spacing

    P = np.array([pairing(u, phi, t) for t, u in snaps])
    worst = 0.0
    for i in range(1, len(snaps) - 1):
        t, u = snaps[i]
        lhs = 1j * (P[i + 1] - P[i - 1]) / (2.0 * delta)
        w = free_propagate(phi, t)
        rhs = 0.0 + 0.0j
        if nl is not None:
            rhs += inner_product(apply_nonlinearity(u, nl), w)
        if pot is not None and not pot.is_empty:
            V = sample_potential(pot, t, grid, mollify)
            rhs += complex(grid.cell_volume * np.sum(V.values * u.values * np.conj(w.values)))
        worst = max(worst, abs(lhs - rhs))
    return worst


# ---------------------------------------------------------------------------
# growth rate alpha and growth fitting
# ---------------------------------------------------------------------------

def alpha(tau: float, p: float, d: int) -> float:
    """The divergence rate tau^{1 - dp/2} for p < 2/d, log tau at p = 2/d."""
    if tau < 2.0:
        raise DomainError("alpha is defined for tau >= 2")
    edge = 2.0 / d
    if p > edge + 1e-12:
        raise DomainError(f"p = {p} is short-range for d = {d}")
    if abs(p - edge) <= 1e-12:
        return math.log(tau)
    return tau ** (1.0 - d * p / 2.0)


@dataclass(frozen=True)
class GrowthFit:
    model: str  # "power-law" | "logarithmic" | "constant"
    exponent: Optional[float]  # power-law exponent or logarithmic coefficient
    offset: float
    scale: float
    fit_range: Tuple[float, float]
    goodness: float  # R^2 of the selected model
    goodness_all: dict
    bic_all: dict


def _r2(resid: np.ndarray, y: np.ndarray) -> float:
    tss = float(np.sum((y - y.mean()) ** 2))
    rss = float(np.sum(resid**2))
    if tss == 0.0:
        return 1.0 if rss == 0.0 else 0.0
    return 1.0 - rss / tss


MIN_POWER_EXPONENT = 0.15


def growth_fit(series: Sequence[Tuple[float, float]],
               models: Sequence[str] = ("power-law", "logarithmic", "constant")) -> GrowthFit:
    """Fit candidate growth models to a (t, value) series and select by BIC.

    The power-law model is a + b t^c with the exponent seeded from a
    log-coordinate regression and refined by nonlinear least squares; the
    additive offset is fitted because integrated quantities carry their
    lower-limit constant.  The exponent is constrained to c >= 0.15: as
    c -> 0 the model a + b t^c degenerates to an offset logarithm, so the
    classes must be kept disjoint for the selection (by BIC) to mean anything.
    """
    t = np.array([a for a, _ in series], dtype=float)
    y = np.array([b for _, b in series], dtype=float)
    keep = t > 0
    t, y = t[keep], y[keep]
    if t.size < 10:
        raise DomainError("growth_fit needs at least 10 points")
    if t.max() / t.min() < 10.0 - 1e-9:
        raise DomainError("growth_fit needs at least one decade in t")
    order = np.argsort(t)
    t, y = t[order], y[order]
    n = t.size

    fits = {}

    if "constant" in models:
        resid = y - y.mean()
        fits["constant"] = dict(params=(y.mean(), 0.0, None), resid=resid, k=1)

    if "logarithmic" in models:
        A = np.vstack([np.ones(n), np.log(t)]).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        fits["logarithmic"] = dict(params=(coef[0], coef[1], None), resid=resid, k=2)

    if "power-law" in models:
        pos = y > 0
        if not np.all(pos):
            # nonpositive values cannot enter the log-coordinate seeding
            import warnings

            warnings.warn("growth_fit: filtered nonpositive values for power-law seeding")
        tp, yp = t[pos], y[pos]
        best = None
        for c in np.linspace(MIN_POWER_EXPONENT, 3.0, 58):
            A = np.vstack([np.ones(n), t**c]).T
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            rss = float(np.sum((y - A @ coef) ** 2))
            if best is None or rss < best[0]:
                best = (rss, c, coef)
        c0 = best[1]
        if tp.size >= 2:
            slope = np.polyfit(np.log(tp), np.log(yp), 1)[0]
            if MIN_POWER_EXPONENT < slope < 5.0:
                A = np.vstack([np.ones(n), t**slope]).T
                coef, *_ = np.linalg.lstsq(A, y, rcond=None)
                rss = float(np.sum((y - A @ coef) ** 2))
                if rss < best[0]:
                    best = (rss, slope, coef)
                    c0 = slope
        try:
            popt, _ = curve_fit(
                lambda tt, a, b, c: a + b * tt**c, t, y,
                p0=[best[2][0], best[2][1], c0],
                bounds=([-np.inf, -np.inf, MIN_POWER_EXPONENT], [np.inf, np.inf, 5.0]),
                maxfev=20000,
            )
            resid = y - (popt[0] + popt[1] * t ** popt[2])
            fits["power-law"] = dict(params=(popt[0], popt[1], popt[2]), resid=resid, k=3)
        except RuntimeError:
            a, b = best[2]
            resid = y - (a + b * t**best[1])
            fits["power-law"] = dict(params=(a, b, best[1]), resid=resid, k=3)

    bics = {}
    r2s = {}
    for name, f in fits.items():
        rss = float(np.sum(f["resid"] ** 2))
        bics[name] = n * math.log(max(rss / n, 1e-300)) + f["k"] * math.log(n)
        r2s[name] = _r2(f["resid"], y)
    selected = min(bics, key=bics.get)
    a0, b0, c0 = fits[selected]["params"]
    exponent = c0 if selected == "power-law" else (b0 if selected == "logarithmic" else None)
    return GrowthFit(
        model=selected, exponent=exponent, offset=float(a0), scale=float(b0),
        fit_range=(float(t.min()), float(t.max())), goodness=r2s[selected],
        goodness_all=r2s, bic_all=bics,
    )


def loglog_slope(t: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log t."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    keep = (t > 0) & (y > 0)
    return float(np.polyfit(np.log(t[keep]), np.log(y[keep]), 1)[0])


# ---------------------------------------------------------------------------
# decomposition residuals and test-function choice
# ---------------------------------------------------------------------------

def residual_decomposition(u: GridField, lspec: Optional[LocalizedPathSpec],
                           v_plus: GridField, t: float) -> Tuple[float, float]:
    """(||u - l(t) - e^{it Lap} v_+||_2, ||(M(t) - 1) v_+||_2)."""
    if t <= 0:
        raise DomainError("residual_decomposition requires t > 0")
    grid = u.grid
    vals = u.values - free_propagate(v_plus, t).values
    if lspec is not None and lspec.components:
        vals = vals - sample_localized(lspec, t, grid).field.values
    resid = math.sqrt(grid.cell_volume * float(np.sum(np.abs(vals) ** 2)))
    mvals = (np.exp(1j * grid.radius_squared() / (4.0 * t)) - 1.0) * v_plus.values
    mod_resid = math.sqrt(grid.cell_volume * float(np.sum(np.abs(mvals) ** 2)))
    return resid, mod_resid


def _smooth_periodic(values: np.ndarray, cells: float) -> np.ndarray:
    """Cyclic Gaussian smoothing with kernel width ``cells`` grid cells; a
    convex averaging, so sup norms can only shrink."""
    if cells <= 0:
        return values
    shape = values.shape
    out = values
    for axis, n in enumerate(shape):
        k = np.fft.fftfreq(n) * n  # integer mode index
        kern = np.exp(-0.5 * (k * cells / n * 2.0 * math.pi) ** 2)
        out = np.apply_along_axis(
            lambda v: np.fft.ifft(np.fft.fft(v) * kern), axis, out
        )
    return out


def hartree_truncation(v_plus: GridField, level: float) -> GridField:
    """vhat restricted to {|vhat| <= level} (the complement set to zero)."""
    vhat = forward_transform(v_plus)
    mask = np.abs(vhat.values) <= level
    if not np.any(mask & (np.abs(vhat.values) > 0)):
        raise TruncationLevelError("truncation level left an identically zero spectrum")
    return vhat.with_values(vhat.values * mask)


def choose_test_function(v_plus: GridField, nl: NonlinearitySpec,
                         trunc_level: float, *, smooth_cells: float = 2.0) -> GridField:
    """A Schwartz-class test function phi with <F(vhat), phihat> > 0.

    Power case: phihat is a smooth mollification of vhat with its modulus
    truncated at ``trunc_level`` (phases aligned pointwise, so the pairing
    integrand is nonnegative before mollification).  Hartree case: phihat is a
    mollified copy of the hard truncation vhat' (|vhat| <= level), whose
    support is disjoint from vhat - vhat' by construction.
    """
    if float(np.max(np.abs(v_plus.values))) == 0.0:
        raise DomainError("v_plus must be nonzero")
    vhat = forward_transform(v_plus)
    if nl.kind == "power":
        mod = np.abs(vhat.values)
        cap = np.minimum(1.0, trunc_level / np.where(mod > 0, mod, 1.0))
        target = vhat.values * cap
    else:
        target = hartree_truncation(v_plus, trunc_level).values

    cells = smooth_cells
    for _ in range(6):
        phihat_vals = _smooth_periodic(target, cells)
        phihat = vhat.with_values(phihat_vals)
        check = vhat.cell * np.sum(
            np.abs(vhat.values) ** nl.p * vhat.values * np.conj(phihat_vals))
        if check.real > 0:
            return inverse_transform(phihat)
        cells /= 2.0
    raise DomainError("could not achieve positive pairing after mollification")


# ---------------------------------------------------------------------------
# series assembly and the Glassey integral
# ---------------------------------------------------------------------------

@dataclass
class PairingSeries:
    times: np.ndarray
    pairing: np.ndarray
    main: np.ndarray
    potential: np.ndarray
    resid_l2: Optional[np.ndarray]
    mod_resid: Optional[np.ndarray]
    mass: np.ndarray
    l_q_norm: Optional[np.ndarray]
    dim: int
    p: float
    mu: complex
    phi_l2: float

    def check_boundedness(self) -> bool:
        """|P(t)| <= sup_t ||u||_2 * ||phi||_2 + 1e-10 at every recorded t."""
        bound = float(np.sqrt(np.max(self.mass))) * self.phi_l2 + 1e-10
        return bool(np.all(np.abs(self.pairing) <= bound))


def compute_series(states: Sequence[Tuple[float, GridField]], phi: GridField,
                   nl: Optional[NonlinearitySpec], *,
                   pot: Optional[PotentialSpec] = None,
                   lspec: Optional[LocalizedPathSpec] = None,
                   v_plus: Optional[GridField] = None,
                   mollify_width: float = 0.0) -> PairingSeries:
    """Assemble the diagnostic series over recorded states (t, u(t))."""
    times, P, Mt, Pt, mass = [], [], [], [], []
    resid = [] if v_plus is not None else None
    modr = [] if v_plus is not None else None
    lq = [] if lspec is not None else None
    grid = phi.grid
    for t, u in states:
        times.append(t)
        P.append(pairing(u, phi, t))
        mass.append(l2_norm(u) ** 2)
        if nl is not None and t > 0:
            Mt.append(main_term(u, phi, t, nl))
        else:
            Mt.append(0.0 + 0.0j)
        if pot is not None and not pot.is_empty:
            Pt.append(potential_term(u, pot, phi, t, nl.p if nl else 1.0,
                                     mollify_width=mollify_width).value)
        else:
            Pt.append(0.0 + 0.0j)
        if v_plus is not None and t > 0:
            r, m = residual_decomposition(u, lspec, v_plus, t)
            resid.append(r)
            modr.append(m)
        elif v_plus is not None:
            resid.append(0.0)
            modr.append(0.0)
        if lspec is not None:
            lq.append(sample_localized(lspec, t, grid).lq)
    d = grid.dim
    series = PairingSeries(
        times=np.array(times), pairing=np.array(P), main=np.array(Mt),
        potential=np.array(Pt),
        resid_l2=None if resid is None else np.array(resid),
        mod_resid=None if modr is None else np.array(modr),
        mass=np.array(mass),
        l_q_norm=None if lq is None else np.array(lq),
        dim=d, p=nl.p if nl is not None else 0.0,
        mu=nl.mu if nl is not None else 0.0,
        phi_l2=l2_norm(phi),
    )
    if not series.check_boundedness():
        raise ConfigError("pairing exceeded the Cauchy-Schwarz bound; inconsistent inputs")
    return series


@dataclass(frozen=True)
class GlasseyIntegral:
    value: float
    alpha: float


def glassey_integral(series: PairingSeries, tau: float) -> GlasseyIntegral:
    """int_1^tau Re[ align * i d/dt <u, w> ] dt by trapezoid quadrature, where
    the integrand is reassembled from the recorded main and potential terms:
    i d/dt P = (2t)^{-dp/2} <F(tilde u), tilde w> + <V u, w>, and
    align = conj(mu)/|mu| strips the phase of mu before taking real parts."""
    t = series.times
    if t[0] > 1.0 + 1e-9 or t[-1] < tau - 1e-9 or np.count_nonzero(
            (t >= 1.0 - 1e-9) & (t <= tau + 1e-9)) < 3:
        raise WindowCoverageError(f"series does not cover [1, {tau}]")
    align = np.conj(series.mu) / abs(series.mu) if series.mu != 0 else 1.0
    dp2 = series.dim * series.p / 2.0
    rhs = (2.0 * t) ** (-dp2) * series.main + series.potential
    integrand = np.real(align * rhs)
    # clip the quadrature exactly to [1, tau], interpolating at the endpoints
    interior = (t > 1.0) & (t < tau)
    ts = np.concatenate(([1.0], t[interior], [tau]))
    vals = np.concatenate((
        [np.interp(1.0, t, integrand)], integrand[interior],
        [np.interp(tau, t, integrand)]))
    value = float(np.trapezoid(vals, ts))
    return GlasseyIntegral(value=value, alpha=alpha(tau, series.p, series.dim))
