"""Acceptance criteria for the full diagnostic pipeline.

Each test covers one numbered criterion and emits a single pass/fail line on
the real stdout (bypassing capture) so the run log shows the verdicts:

    criterion NN <name>: PASS -- <measured values>
"""

import math
import sys

import numpy as np
import pytest

from nlsdiag.cli import parse_config, run_scenario
from nlsdiag.fields import (
    InitialDataSpec,
    InitialDataTerm,
    LocalizedComponent,
    LocalizedPathSpec,
    NonlinearitySpec,
    PotentialComponent,
    PotentialSpec,
    make_field,
    sample_localized,
    synth_state,
)
from nlsdiag.glassey import (
    choose_test_function,
    compute_series,
    derivative_check,
    glassey_integral,
    growth_fit,
    loglog_slope,
    main_term,
    main_term_limit,
    pairing,
    potential_term,
)
from nlsdiag.grids import (
    GridField,
    SpatialGrid,
    forward_transform,
    free_propagate,
    inverse_transform,
    l2_norm,
    norm,
    tilde_transform,
    verify_factorization,
)
from nlsdiag.solver import SolverConfig, Trajectory, convolve_riesz, evolve
from nlsdiag.theorem3 import AtomicMeasure, hypothesis_check, nu_from_paths
from nlsdiag.theorem3 import test_sequence as make_test_sequence


_CAPMAN = None


@pytest.fixture(autouse=True)
def _expose_capture_manager(request):
    # the verdict lines must reach the real stdout even under fd-level capture
    global _CAPMAN
    _CAPMAN = request.config.pluginmanager.getplugin("capturemanager")
    yield


def _report(num, name, ok, detail):
    line = f"criterion {num:02d} {name}: {'PASS' if ok else 'FAIL'} -- {detail}"
    if _CAPMAN is not None:
        with _CAPMAN.global_and_fixture_disabled():
            print(line, flush=True)
    else:
        print(line, flush=True)
    assert ok, line


def _gaussian(grid, width, amp=1.0, vel=0.0, center=0.0):
    spec = InitialDataSpec((InitialDataTerm(
        "gaussian", amp, (center,) * grid.dim, (vel,) * grid.dim, width),))
    return make_field(spec, grid)


def test_criterion_01_unitarity():
    worst = 0.0
    rng = np.random.default_rng(0)
    cases = [(1, 64, 20.0)] * 40 + [(1, 256, 40.0)] * 40 + [(2, 32, 10.0)] * 20
    for dim, n, L in cases:
        g = SpatialGrid(dim, n, L)
        f = GridField(g, rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
        nf = l2_norm(f)
        fhat = forward_transform(f)
        worst = max(worst, abs(l2_norm(fhat) - nf) / nf)
        back = inverse_transform(fhat)
        worst = max(worst, abs(l2_norm(back) - nf) / nf)
        worst = max(worst, abs(l2_norm(free_propagate(f, 1.7)) - nf) / nf)
    _report(1, "unitarity and Parseval", worst <= 1e-12,
            f"max relative defect {worst:.2e} over {len(cases)} random fields")


def test_criterion_02_free_gaussian_oracle():
    g = SpatialGrid(1, 1024, 80.0)
    s = 4.0
    u0 = _gaussian(g, s)
    traj = evolve(u0, SolverConfig(dt=0.1, t_end=10.0), None, None)
    u = traj.field_at(10.0)
    x = g.meshgrid()[0]
    denom = s * s + 2j * 10.0
    exact = (1 + 2j * 10.0 / s**2) ** -0.5 * np.exp(-(x**2) / (2 * denom))
    rel = math.sqrt(g.cell_volume * float(np.sum(np.abs(u.values - exact) ** 2))) / l2_norm(u0)
    _report(2, "free Gaussian evolution oracle", rel <= 1e-8,
            f"relative L2 error {rel:.2e} at t = 10")


def test_criterion_03_factorization():
    g = SpatialGrid(1, 1024, 80.0)
    phi = _gaussian(g, 4.0)
    resids = {t: verify_factorization(phi, t) for t in (0.5, 1.0, 2.0, 5.0, 10.0)}
    worst = max(resids.values())
    _report(3, "propagator factorization", worst <= 1e-6,
            "residuals " + ", ".join(f"t={t:g}: {r:.1e}" for t, r in resids.items()))


def test_criterion_04_dispersive_rate():
    ts = np.geomspace(1.0, 50.0, 20)
    slopes = {}
    for dim, n, L in ((1, 4096, 640.0), (2, 1024, 280.0)):
        g = SpatialGrid(dim, n, L)
        f = _gaussian(g, 1.0)
        sups = [norm(free_propagate(f, t), "sup") for t in ts]
        slopes[dim] = loglog_slope(ts, sups)
    ok = all(abs(slopes[d] + d / 2.0) <= 0.05 for d in (1, 2))
    _report(4, "dispersive sup-norm rate", ok,
            f"slopes d=1: {slopes[1]:.4f} (target -0.5), d=2: {slopes[2]:.4f} (target -1.0)")


def test_criterion_05_profile_convergence_rate():
    g = SpatialGrid(1, 4096, 1280.0)
    phi = _gaussian(g, 1.0)
    ts = np.geomspace(1.0, 100.0, 25)
    errs = []
    for t in ts:
        wt, rg = tilde_transform(free_propagate(phi, t), t)
        y = rg.meshgrid()[0]
        target = np.exp(-(y**2) / 2.0)  # unit-width Gaussian transforms to itself
        errs.append(float(np.max(np.abs(wt.values - target))))
    slope = loglog_slope(ts, errs)
    _report(5, "free-profile sup convergence rate", abs(slope + 1.0) <= 0.1,
            f"slope {slope:.4f} (target -1.0 +/- 0.1)")


def test_criterion_06_derivative_identity():
    g = SpatialGrid(1, 256, 40.0)
    u0 = _gaussian(g, 1.5)
    phi = _gaussian(g, 2.0)
    nl = NonlinearitySpec("power", 0.5, -1.0)
    times = tuple(np.round(np.arange(0.10, 0.1501, 0.005), 10))
    traj = evolve(u0, SolverConfig(dt=1e-3, t_end=0.155, snapshot_times=times), nl, None)
    fine = derivative_check(traj, phi, nl, None)
    coarse_traj = Trajectory(traj.snapshots[0::2], traj.mass_log, traj.config,
                             traj.t_valid, traj.dt_effective)
    coarse = derivative_check(coarse_traj, phi, nl, None)
    scale = max(abs(pairing(u, phi, t)) for t, u in traj.snapshots)
    ratio = coarse / fine
    ok = coarse <= 1e-4 * scale and 3.0 <= ratio <= 5.0
    _report(6, "pairing derivative identity", ok,
            f"defect {coarse:.2e} <= {1e-4 * scale:.2e} at spacing 1e-2; "
            f"refinement factor {ratio:.2f} in [3, 5]")


def test_criterion_07_main_term_limit():
    # power case: fast-moving soliton keeps the localized remainder away from
    # the spectral support of v_plus
    g = SpatialGrid(1, 8192, 1280.0)
    nl = NonlinearitySpec("power", 0.5, -1j)
    lspec = LocalizedPathSpec(
        (LocalizedComponent("gaussian", 1.0, 1.0, ((0.0,), (4.0,))),))
    v_plus = _gaussian(g, 2.0)
    phi = choose_test_function(v_plus, nl, 0.5)
    u = synth_state(lspec, v_plus, 100.0, g)
    lim = main_term_limit(v_plus, phi, nl)
    rel_power = abs(main_term(u, phi, 100.0, nl) - lim) / abs(lim)

    gh = SpatialGrid(1, 2048, 640.0)
    nlh = NonlinearitySpec("hartree", 0.5, -1.0)
    lspec_h = LocalizedPathSpec(
        (LocalizedComponent("gaussian", 0.5, 1.0, ((0.0,), (2.0,))),))
    v_h = _gaussian(gh, 4.0)
    phi_h = choose_test_function(v_h, nlh, 0.5)
    uh = synth_state(lspec_h, v_h, 100.0, gh)
    lim_h = main_term_limit(v_h, phi_h, nlh, lspec_h)
    rel_hartree = abs(main_term(uh, phi_h, 100.0, nlh) - lim_h) / abs(lim_h)

    ok = rel_power <= 0.05 and rel_hartree <= 0.08
    _report(7, "main-term limit", ok,
            f"power rel err {rel_power:.4f} <= 0.05; "
            f"hartree (atomic correction) rel err {rel_hartree:.4f} <= 0.08")


def _growth_case(dim, p, grid, lspec, v_width):
    nl = NonlinearitySpec("power", p, -1j)
    v_plus = _gaussian(grid, v_width)
    phi = choose_test_function(v_plus, nl, 0.5)
    states = [(t, synth_state(lspec, v_plus, t, grid))
              for t in np.geomspace(1.0, 100.0, 100)]
    series = compute_series(states, phi, nl)
    taus = np.geomspace(10.0, 100.0, 25)
    vals = [(tau, glassey_integral(series, tau).value) for tau in taus]
    return growth_fit(vals)


def test_criterion_08_growth_dichotomy():
    g1 = SpatialGrid(1, 4096, 1280.0)
    l1 = LocalizedPathSpec(
        (LocalizedComponent("gaussian", 1.0, 1.0, ((0.0,), (4.0,))),))
    g2 = SpatialGrid(2, 512, 768.0)
    l2 = LocalizedPathSpec(
        (LocalizedComponent("gaussian", 0.5, 2.0, ((0.0, 0.0), (3.0, 0.0))),))
    cases = {
        (1, 0.5): _growth_case(1, 0.5, g1, l1, 2.0),
        (1, 1.0): _growth_case(1, 1.0, g1, l1, 2.0),
        (1, 2.0): _growth_case(1, 2.0, g1, l1, 2.0),
        (2, 0.5): _growth_case(2, 0.5, g2, l2, 4.0),
        (2, 1.0): _growth_case(2, 1.0, g2, l2, 4.0),
    }
    parts = []
    ok = True
    for (d, p), fit in cases.items():
        expected = 1.0 - d * p / 2.0
        if expected > 0:
            good = fit.model == "power-law" and abs(fit.exponent - expected) <= 0.1
            parts.append(f"d={d},p={p:g}: {fit.model} c={fit.exponent:.3f} "
                         f"(target {expected:g})")
        else:
            good = fit.model == "logarithmic"
            parts.append(f"d={d},p={p:g}: {fit.model} (target logarithmic)")
        ok = ok and good
    _report(8, "growth-rate dichotomy", ok, "; ".join(parts))


def test_criterion_09_potential_bounds():
    g = SpatialGrid(1, 2048, 640.0)
    u0 = _gaussian(g, 2.0, amp=0.5)
    phi = _gaussian(g, 2.0)
    comp = PotentialComponent("gaussian-well", -0.3, 1.5, ((0.0,),), "V1")
    pot = PotentialSpec((comp,))
    ts = np.geomspace(1.0, 50.0, 15)
    vals = []
    holder_ok = True
    for t in ts:
        u = free_propagate(u0, t)
        res = potential_term(u, pot, phi, t, 0.5)
        holder_ok = holder_ok and abs(res.value) <= res.v1_bound * (1.0 + 1e-12)
        vals.append(abs(res.value))
    decay_slope = loglog_slope(ts, vals)

    # 1-d atom potential: a non-decaying localized state at the atom pairs
    # against a dispersively decaying w, so window sums fall like t^{-1/2}
    lspec = LocalizedPathSpec((LocalizedComponent("gaussian", 1.0, 1.0, ((0.0,),)),))
    pot_atom = PotentialSpec((), ((0.0, 0.5),))
    tgrid = np.arange(1.0, 52.01, 0.25)
    pvals = np.array([
        potential_term(sample_localized(lspec, t, g).field, pot_atom, phi, t, 0.5).value
        for t in tgrid])
    # fit past the early transient: the t^{-1/2} rate is asymptotic
    t0s = np.geomspace(5.0, 50.0, 15)
    T = 2.0
    windows = []
    for t0 in t0s:
        sel = (tgrid >= t0 - 1e-9) & (tgrid <= t0 + T + 1e-9)
        windows.append(abs(np.trapezoid(pvals[sel], tgrid[sel])))
    window_slope = loglog_slope(t0s, windows)

    ok = holder_ok and decay_slope <= -0.25 and abs(window_slope + 0.5) <= 0.15
    _report(9, "potential-term bounds", ok,
            f"Hoelder inequality exact at all {len(ts)} times; "
            f"V1 decay slope {decay_slope:.3f} <= -0.25; "
            f"atom window slope {window_slope:.3f} in -0.5 +/- 0.15")


def test_criterion_10_hartree_oracle():
    g = SpatialGrid(1, 256, 40.0)
    rng = np.random.default_rng(1)
    dens = rng.random(256)
    p = 1.0
    out = convolve_riesz(dens, g, p)
    h = g.spacing
    s = 0.5
    j = np.arange(256)
    r = h * np.abs(np.where(j <= 128, j, j - 256))
    kern = np.where(r > 0, r, 1.0) ** (-s)
    kern[0] = (h / 2.0) ** (-s) / (1.0 - s)
    direct = np.array([np.sum(kern[(i - j) % 256] * dens) * h for i in range(256)])
    rel = float(np.max(np.abs(out - direct)) / np.max(np.abs(direct)))
    _report(10, "spectral convolution vs direct sum", rel <= 1e-10,
            f"max relative deviation {rel:.2e} at n = 256")


def test_criterion_11_construction():
    g = SpatialGrid(1, 512, 80.0)
    v = _gaussian(g, 2.0)
    mass = l2_norm(v) ** 2
    nu = AtomicMeasure((((1.0,), mass),))
    recs = make_test_sequence(v, nu, 20)
    budget_ok = all(r.psi_l1 <= r.psi_l1_bound + 1e-12 for r in recs)
    good = [r for r in recs
            if r.pairing_main >= 0.9 * mass and r.pairing_measure <= 0.01 * mass]
    ok = budget_ok and bool(good)
    first = good[0].index if good else None
    _report(11, "singular test-function construction", ok,
            f"first qualifying n = {first}; cutoff L1 budget held for all 20 stages; "
            f"final main pairing {recs[-1].pairing_main:.4f} vs 0.9*mass = {0.9 * mass:.4f}")


def test_criterion_12_hypothesis_check():
    g = SpatialGrid(1, 256, 40.0)
    x = g.meshgrid()[0]
    phi = GridField(g, np.exp(-(x**2) / 8.0))
    lspec = LocalizedPathSpec(
        (LocalizedComponent("gaussian", 1.0, 1.0, ((0.0,), (1.0,))),))
    nu = nu_from_paths(lspec, None, (0.0,))
    nu_phi = nu.pair(lambda p: math.exp(-p[0] ** 2 / 8.0))
    pts = hypothesis_check(lspec, None, nu, phi, (50.0, 75.0, 100.0))
    rel_slack = min(pt.slack for pt in pts) / nu_phi
    half = AtomicMeasure(tuple((pos, 0.5 * m) for pos, m in nu.atoms))
    bad = hypothesis_check(lspec, None, half, phi, (50.0, 100.0))
    flagged = bad[-1].slack / nu_phi < -0.02
    ok = rel_slack >= -0.02 and flagged
    _report(12, "concentration hypothesis check", ok,
            f"rigid-soliton relative slack {rel_slack:+.4f} >= -0.02; "
            f"50%-deficit measure flagged: {flagged}")


def test_criterion_13_shortrange_control(tmp_path):
    out = str(tmp_path / "shortrange")
    cfg = parse_config(f'''
scenario = "nls_shortrange_control"
out_dir = "{out}"

[grid]
points_per_axis = 4096
box_length = 384.0

[initial_data]
[[initial_data.terms]]
amplitude = [0.1, 0.0]
width = 2.0
'''.encode())
    result = run_scenario(cfg)
    spread = result.summary["pairing_spread"]
    bound = result.summary["cauchy_bound"]
    window = result.summary["window"]
    ok = result.ok and window == [50.0, 100.0] and spread <= bound
    _report(13, "short-range pairing control", ok,
            f"pairing spread over {window} = {spread:.4e} <= "
            f"0.05*||u||*||phi|| = {bound:.4e}")
