"""Config-driven experiment runner: TOML configuration, scenario orchestration,
CSV/JSON/binary persistence and plain-text report emission.

Outputs per run directory:
  config.toml   full effective configuration (canonical form, byte-stable)
  series.csv    fixed columns: t, pairing_re, pairing_im, main_re, main_im,
                pot_re, pot_im, resid_l2, mod_resid, mass, l_q_norm
                (missing diagnostics leave empty cells, never zeros)
  summary.json  fitted models, invariant pass/fail flags, runtime
  *.nlsf        binary field snapshots (see ``write_snapshot``)
Scenario extras (growth.csv, construction.csv, slack.csv) where applicable.

Exit codes: 0 all invariants pass, 1 diagnostics ran with failures,
2 configuration or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import struct
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, NlsdiagError, ScopeError, SolverAbortError
from .fields import (
    InitialDataSpec,
    InitialDataTerm,
    LocalizedComponent,
    LocalizedPathSpec,
    NonlinearitySpec,
    PotentialComponent,
    PotentialSpec,
    RadiationSpec,
    make_field,
    sample_localized,
    synth_state,
)
from .glassey import (
    choose_test_function,
    compute_series,
    glassey_integral,
    growth_fit,
    loglog_slope,
    main_term_limit,
    pairing,
    potential_term,
)
from .grids import (
    GridField,
    SpatialGrid,
    forward_transform,
    fourier_at,
    free_propagate,
    l2_norm,
    norm,
    tilde_transform,
    verify_factorization,
)
from .solver import SolverConfig, Trajectory, evolve
from .theorem3 import nu_from_paths, hypothesis_check, test_sequence

SCENARIOS = (
    "free_calibration",
    "linear_scatter_diag",
    "nls_longrange",
    "nls_shortrange_control",
    "delta_potential",
    "hartree_diag",
    "theorem3_demo",
)

CSV_COLUMNS = (
    "t", "pairing_re", "pairing_im", "main_re", "main_im",
    "pot_re", "pot_im", "resid_l2", "mod_resid", "mass", "l_q_norm",
)


# ---------------------------------------------------------------------------
# configuration model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridParams:
    dim: int = 1
    points_per_axis: int = 1024
    box_length: float = 160.0

    def build(self) -> SpatialGrid:
        return SpatialGrid(self.dim, self.points_per_axis, self.box_length)


@dataclass(frozen=True)
class SolverParams:
    dt: float
    t_end: float
    snapshot_start: float
    snapshot_count: int
    snapshot_spacing: str  # "linear" | "geometric"
    mollify_width: float = 0.0
    dealias: bool = False

    def snapshot_times(self) -> Tuple[float, ...]:
        if self.snapshot_spacing == "linear":
            ts = np.linspace(self.snapshot_start, self.t_end, self.snapshot_count)
        elif self.snapshot_spacing == "geometric":
            start = max(self.snapshot_start, 1e-6)
            ts = np.geomspace(start, self.t_end, self.snapshot_count)
        else:
            raise ConfigError(
                f"solver.snapshot_spacing must be 'linear' or 'geometric', "
                f"got {self.snapshot_spacing!r}")
        return tuple(float(t) for t in ts)


@dataclass(frozen=True)
class DiagnosticsParams:
    trunc_level: float = 0.5
    n_max: int = 20
    tau_min: float = 10.0
    tau_max: float = 100.0
    tau_count: int = 25
    phi_kind: str = "auto"  # "auto" | "gaussian" | "initial"
    phi_center: Tuple[float, ...] = (0.0,)
    phi_width: float = 2.0
    window_t: float = 2.0


@dataclass(frozen=True)
class DecompositionParams:
    lspec: LocalizedPathSpec
    v_plus: InitialDataTerm


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int
    out_dir: str
    grid: GridParams
    solver: SolverParams
    diagnostics: DiagnosticsParams
    nonlinearity: Optional[NonlinearitySpec]
    potential: Optional[PotentialSpec]
    initial_data: Optional[InitialDataSpec]
    decomposition: Optional[DecompositionParams]


_SOLVER_DEFAULTS = {
    # scenario: (dt, t_end, snapshot_start, snapshot_count, snapshot_spacing)
    "free_calibration": (0.005, 1.0, 0.0, 11, "linear"),
    "linear_scatter_diag": (0.01, 100.0, 1.0, 40, "geometric"),
    "nls_longrange": (0.01, 100.0, 1.0, 160, "geometric"),
    "nls_shortrange_control": (0.025, 100.0, 0.0, 51, "linear"),
    "delta_potential": (0.01, 50.0, 0.0, 201, "linear"),
    "hartree_diag": (0.01, 100.0, 1.0, 120, "geometric"),
    "theorem3_demo": (0.01, 100.0, 1.0, 40, "geometric"),
}


def _default_nonlinearity(scenario: str) -> Optional[NonlinearitySpec]:
    return {
        "nls_longrange": NonlinearitySpec("power", 0.5, -1j),
        "nls_shortrange_control": NonlinearitySpec("power", 2.5, -1.0),
        "hartree_diag": NonlinearitySpec("hartree", 0.5, -1.0),
        "theorem3_demo": NonlinearitySpec("power", 1.0, -1j),
    }.get(scenario)


def _default_decomposition(dim: int, scenario: str) -> DecompositionParams:
    # hartree needs the concentration point clear of the spectral support of
    # v_plus, so its default travels faster and v_plus is spectrally narrower
    amp, vel, v_width = (0.5, 2.0, 4.0) if scenario == "hartree_diag" else (1.0, 1.0, 2.0)
    path = ((0.0,) * dim, tuple([vel] + [0.0] * (dim - 1)))
    comp = LocalizedComponent("gaussian", amp, 1.0, path)
    v_plus = InitialDataTerm("gaussian", 1.0, (0.0,) * dim, (0.0,) * dim, v_width)
    return DecompositionParams(LocalizedPathSpec((comp,)), v_plus)


def _default_initial(dim: int) -> InitialDataSpec:
    term = InitialDataTerm("gaussian", 0.5, (0.0,) * dim, (0.0,) * dim, 2.0)
    return InitialDataSpec((term,))


def _complex(v, path: str) -> complex:
    if isinstance(v, (int, float)):
        return complex(v)
    if isinstance(v, list) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    raise ConfigError(f"{path}: expected a number or [re, im] pair, got {v!r}")


def _take(table: dict, key: str, default, path: str):
    return table.pop(key, default)


def _require_empty(table: dict, path: str) -> None:
    if table:
        k = sorted(table)[0]
        raise ConfigError(f"unknown key {path}.{k}" if path else f"unknown key {k}")


def parse_config(text: bytes) -> ScenarioConfig:
    """Parse and validate a TOML configuration, filling scenario defaults.
    Unknown keys are rejected with their dotted path."""
    try:
        raw = tomllib.loads(text.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config is not valid UTF-8 TOML: {exc}") from exc
    return _config_from_dict(raw)


def _config_from_dict(raw: dict) -> ScenarioConfig:
    raw = dict(raw)
    scenario = _take(raw, "scenario", None, "")
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"scenario must be one of {SCENARIOS}, got {scenario!r}")
    seed = int(_take(raw, "seed", 0, ""))
    out_dir = str(_take(raw, "out_dir", "out", ""))

    gt = dict(_take(raw, "grid", {}, ""))
    grid = GridParams(
        dim=int(_take(gt, "dim", 1, "grid")),
        points_per_axis=int(_take(gt, "points_per_axis", 1024, "grid")),
        box_length=float(_take(gt, "box_length", 160.0, "grid")),
    )
    _require_empty(gt, "grid")
    grid.build()  # validates

    sd = _SOLVER_DEFAULTS[scenario]
    st = dict(_take(raw, "solver", {}, ""))
    solver = SolverParams(
        dt=float(_take(st, "dt", sd[0], "solver")),
        t_end=float(_take(st, "t_end", sd[1], "solver")),
        snapshot_start=float(_take(st, "snapshot_start", sd[2], "solver")),
        snapshot_count=int(_take(st, "snapshot_count", sd[3], "solver")),
        snapshot_spacing=str(_take(st, "snapshot_spacing", sd[4], "solver")),
        mollify_width=float(_take(st, "mollify_width", 0.0, "solver")),
        dealias=bool(_take(st, "dealias", False, "solver")),
    )
    _require_empty(st, "solver")
    if solver.dt <= 0:
        raise ConfigError("solver.dt must be positive")
    if solver.t_end <= 0:
        raise ConfigError("solver.t_end must be positive")
    if solver.snapshot_count < 2:
        raise ConfigError("solver.snapshot_count must be at least 2")
    solver.snapshot_times()  # validates spacing

    dt_tab = dict(_take(raw, "diagnostics", {}, ""))
    tau_max_default = min(100.0, solver.t_end)
    diag = DiagnosticsParams(
        trunc_level=float(_take(dt_tab, "trunc_level", 0.5, "diagnostics")),
        n_max=int(_take(dt_tab, "n_max", 20, "diagnostics")),
        tau_min=float(_take(dt_tab, "tau_min", min(10.0, tau_max_default / 10.0),
                            "diagnostics")),
        tau_max=float(_take(dt_tab, "tau_max", tau_max_default, "diagnostics")),
        tau_count=int(_take(dt_tab, "tau_count", 25, "diagnostics")),
        phi_kind=str(_take(dt_tab, "phi_kind", "auto", "diagnostics")),
        phi_center=tuple(float(c) for c in _take(
            dt_tab, "phi_center", [0.0] * grid.dim, "diagnostics")),
        phi_width=float(_take(dt_tab, "phi_width", 2.0, "diagnostics")),
        window_t=float(_take(dt_tab, "window_t", 2.0, "diagnostics")),
    )
    _require_empty(dt_tab, "diagnostics")
    if diag.phi_kind not in ("auto", "gaussian", "initial"):
        raise ConfigError("diagnostics.phi_kind must be auto, gaussian or initial")
    if diag.trunc_level <= 0:
        raise ConfigError("diagnostics.trunc_level must be positive")
    if not (0 < diag.tau_min < diag.tau_max):
        raise ConfigError("diagnostics tau range must satisfy 0 < tau_min < tau_max")

    nl: Optional[NonlinearitySpec]
    if "nonlinearity" in raw:
        nt = dict(raw.pop("nonlinearity"))
        kind = str(_take(nt, "kind", "power", "nonlinearity"))
        p = float(_take(nt, "p", 0.5, "nonlinearity"))
        mu = _complex(_take(nt, "mu", [0.0, -1.0], "nonlinearity"), "nonlinearity.mu")
        _require_empty(nt, "nonlinearity")
        nl = NonlinearitySpec(kind, p, mu)
    else:
        nl = _default_nonlinearity(scenario)

    pot: Optional[PotentialSpec] = None
    if "potential" in raw:
        pt = dict(raw.pop("potential"))
        atoms = []
        for i, a in enumerate(_take(pt, "atoms", [], "potential")):
            if not isinstance(a, list) or len(a) != 3:
                raise ConfigError(
                    f"potential.atoms[{i}] must be [position, weight_re, weight_im]")
            atoms.append((float(a[0]), complex(float(a[1]), float(a[2]))))
        comps = []
        for i, c in enumerate(_take(pt, "components", [], "potential")):
            c = dict(c)
            pathkey = f"potential.components[{i}]"
            mod = str(_take(c, "time_modulation", "none", pathkey))
            comps.append(PotentialComponent(
                profile=str(_take(c, "profile", "gaussian-well", pathkey)),
                amplitude=_complex(_take(c, "amplitude", [-0.3, 0.0], pathkey),
                                   pathkey + ".amplitude"),
                width=float(_take(c, "width", 1.5, pathkey)),
                path=tuple(map(tuple, _take(c, "path", [[0.0] * grid.dim], pathkey))),
                claimed_class=str(_take(c, "claimed_class", "V1", pathkey)),
                time_modulation=None if mod == "none" else mod,
            ))
            _require_empty(c, pathkey)
        _require_empty(pt, "potential")
        pot = PotentialSpec(tuple(comps), tuple(atoms))
    elif scenario == "delta_potential":
        # attractive atom: keeps a bound, non-decaying part of u at the atom,
        # the regime where the window sums show the dispersive t^{-1/2} rate
        pot = PotentialSpec((), ((0.0, -1.0 + 0.0j),))

    initial: Optional[InitialDataSpec] = None
    if "initial_data" in raw:
        it = dict(raw.pop("initial_data"))
        terms = []
        for i, trm in enumerate(_take(it, "terms", [], "initial_data")):
            trm = dict(trm)
            pathkey = f"initial_data.terms[{i}]"
            terms.append(InitialDataTerm(
                profile=str(_take(trm, "profile", "gaussian", pathkey)),
                amplitude=_complex(_take(trm, "amplitude", [0.5, 0.0], pathkey),
                                   pathkey + ".amplitude"),
                center=tuple(_take(trm, "center", [0.0] * grid.dim, pathkey)),
                velocity=tuple(_take(trm, "velocity", [0.0] * grid.dim, pathkey)),
                width=float(_take(trm, "width", 2.0, pathkey)),
                phase=float(_take(trm, "phase", 0.0, pathkey)),
            ))
            _require_empty(trm, pathkey)
        rad = None
        if "radiation" in it:
            rt = dict(it.pop("radiation"))
            rad = RadiationSpec(
                seed=int(_take(rt, "seed", seed, "initial_data.radiation")),
                amplitude=float(_take(rt, "amplitude", 0.01, "initial_data.radiation")),
                band_limit=float(_take(rt, "band_limit", 2.0, "initial_data.radiation")),
            )
            _require_empty(rt, "initial_data.radiation")
        _require_empty(it, "initial_data")
        initial = InitialDataSpec(tuple(terms), rad)
    elif scenario in ("free_calibration", "linear_scatter_diag",
                      "nls_shortrange_control", "delta_potential"):
        initial = _default_initial(grid.dim)

    decomposition: Optional[DecompositionParams] = None
    if "decomposition" in raw:
        dc = dict(raw.pop("decomposition"))
        q = float(_take(dc, "q_exponent", 1.5, "decomposition"))
        comps = []
        for i, c in enumerate(_take(dc, "components", [], "decomposition")):
            c = dict(c)
            pathkey = f"decomposition.components[{i}]"
            comps.append(LocalizedComponent(
                profile=str(_take(c, "profile", "gaussian", pathkey)),
                amplitude=_complex(_take(c, "amplitude", [1.0, 0.0], pathkey),
                                   pathkey + ".amplitude"),
                width=float(_take(c, "width", 1.0, pathkey)),
                path=tuple(map(tuple, _take(
                    c, "path", [[0.0] * grid.dim, [1.0] + [0.0] * (grid.dim - 1)],
                    pathkey))),
                phase_rate=float(_take(c, "phase_rate", 0.0, pathkey)),
                spread_beta=float(_take(c, "spread_beta", 0.0, pathkey)),
            ))
            _require_empty(c, pathkey)
        vt = dict(_take(dc, "v_plus", {}, "decomposition"))
        v_plus = InitialDataTerm(
            profile=str(_take(vt, "profile", "gaussian", "decomposition.v_plus")),
            amplitude=_complex(_take(vt, "amplitude", [1.0, 0.0], "decomposition.v_plus"),
                               "decomposition.v_plus.amplitude"),
            center=tuple(_take(vt, "center", [0.0] * grid.dim, "decomposition.v_plus")),
            velocity=tuple(_take(vt, "velocity", [0.0] * grid.dim, "decomposition.v_plus")),
            width=float(_take(vt, "width", 2.0, "decomposition.v_plus")),
            phase=float(_take(vt, "phase", 0.0, "decomposition.v_plus")),
        )
        _require_empty(vt, "decomposition.v_plus")
        _require_empty(dc, "decomposition")
        if not comps:
            comps = list(_default_decomposition(grid.dim, scenario).lspec.components)
        decomposition = DecompositionParams(LocalizedPathSpec(tuple(comps), q), v_plus)
    elif scenario in ("nls_longrange", "hartree_diag", "theorem3_demo"):
        decomposition = _default_decomposition(grid.dim, scenario)

    _require_empty(raw, "")

    cfg = ScenarioConfig(scenario, seed, out_dir, grid, solver, diag,
                         nl, pot, initial, decomposition)
    _validate_scenario(cfg)
    return cfg


def _validate_scenario(cfg: ScenarioConfig) -> None:
    s, d = cfg.scenario, cfg.grid.dim
    nl = cfg.nonlinearity
    if s in ("free_calibration", "linear_scatter_diag"):
        if nl is not None:
            raise ConfigError(f"{s} is a linear scenario; remove [nonlinearity]")
        if cfg.initial_data is None or not cfg.initial_data.terms:
            raise ConfigError(f"{s} requires [initial_data] with at least one term")
    if s == "nls_longrange":
        if nl is None or not nl.long_range(d):
            raise ScopeError("nls_longrange requires a long-range nonlinearity (p <= 2/d)")
        if cfg.decomposition is None:
            raise ConfigError("nls_longrange requires a [decomposition]")
    if s == "nls_shortrange_control":
        if nl is None or nl.long_range(d):
            raise ScopeError("nls_shortrange_control requires p > 2/d")
        if not nl.solver_stable(d):
            raise ScopeError("nls_shortrange_control requires mass-subcritical p < 4/d")
        if cfg.initial_data is None:
            raise ConfigError("nls_shortrange_control requires [initial_data]")
    if s == "delta_potential":
        if d != 1:
            raise ScopeError("delta_potential requires grid.dim = 1")
        if cfg.potential is None or not cfg.potential.atoms:
            raise ConfigError("delta_potential requires [potential] with atoms")
    if s == "hartree_diag":
        if nl is None or nl.kind != "hartree":
            raise ScopeError("hartree_diag requires kind = 'hartree'")
        if cfg.decomposition is None:
            raise ConfigError("hartree_diag requires a [decomposition]")
    if s == "theorem3_demo":
        if nl is None or nl.kind != "power" or nl.p != 1.0:
            raise ScopeError("theorem3_demo requires the p = 1 power nonlinearity")
        if cfg.decomposition is None:
            raise ConfigError("theorem3_demo requires a [decomposition]")


# ---------------------------------------------------------------------------
# canonical serialization
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        r = repr(v)
        if "." not in r and "e" not in r and "n" not in r:
            r += ".0"
        return r
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def _pair(z: complex) -> list:
    return [float(z.real), float(z.imag)]


def serialize_config(cfg: ScenarioConfig) -> bytes:
    """Canonical TOML form of the effective configuration; byte-stable, so
    serialize(parse(serialize(cfg))) round-trips identically."""
    out = io.StringIO()

    def kv(key, val):
        out.write(f"{key} = {_fmt(val)}\n")

    kv("scenario", cfg.scenario)
    kv("seed", cfg.seed)
    kv("out_dir", cfg.out_dir)
    out.write("\n[grid]\n")
    kv("dim", cfg.grid.dim)
    kv("points_per_axis", cfg.grid.points_per_axis)
    kv("box_length", cfg.grid.box_length)
    out.write("\n[solver]\n")
    kv("dt", cfg.solver.dt)
    kv("t_end", cfg.solver.t_end)
    kv("snapshot_start", cfg.solver.snapshot_start)
    kv("snapshot_count", cfg.solver.snapshot_count)
    kv("snapshot_spacing", cfg.solver.snapshot_spacing)
    kv("mollify_width", cfg.solver.mollify_width)
    kv("dealias", cfg.solver.dealias)
    out.write("\n[diagnostics]\n")
    kv("trunc_level", cfg.diagnostics.trunc_level)
    kv("n_max", cfg.diagnostics.n_max)
    kv("tau_min", cfg.diagnostics.tau_min)
    kv("tau_max", cfg.diagnostics.tau_max)
    kv("tau_count", cfg.diagnostics.tau_count)
    kv("phi_kind", cfg.diagnostics.phi_kind)
    kv("phi_center", list(cfg.diagnostics.phi_center))
    kv("phi_width", cfg.diagnostics.phi_width)
    kv("window_t", cfg.diagnostics.window_t)
    if cfg.nonlinearity is not None:
        out.write("\n[nonlinearity]\n")
        kv("kind", cfg.nonlinearity.kind)
        kv("p", cfg.nonlinearity.p)
        kv("mu", _pair(cfg.nonlinearity.mu))
    if cfg.potential is not None:
        out.write("\n[potential]\n")
        kv("atoms", [[pos, w.real, w.imag] for pos, w in cfg.potential.atoms])
        for c in cfg.potential.smooth_components:
            out.write("\n[[potential.components]]\n")
            kv("profile", c.profile)
            kv("amplitude", _pair(c.amplitude))
            kv("width", c.width)
            kv("path", [list(row) for row in c.path])
            kv("claimed_class", c.claimed_class)
            kv("time_modulation", c.time_modulation or "none")
    if cfg.initial_data is not None:
        out.write("\n[initial_data]\n")
        for t in cfg.initial_data.terms:
            out.write("\n[[initial_data.terms]]\n")
            kv("profile", t.profile)
            kv("amplitude", _pair(t.amplitude))
            kv("center", list(t.center))
            kv("velocity", list(t.velocity))
            kv("width", t.width)
            kv("phase", t.phase)
        if cfg.initial_data.radiation is not None:
            r = cfg.initial_data.radiation
            out.write("\n[initial_data.radiation]\n")
            kv("seed", r.seed)
            kv("amplitude", r.amplitude)
            kv("band_limit", r.band_limit)
    if cfg.decomposition is not None:
        out.write("\n[decomposition]\n")
        kv("q_exponent", cfg.decomposition.lspec.q_exponent)
        for c in cfg.decomposition.lspec.components:
            out.write("\n[[decomposition.components]]\n")
            kv("profile", c.profile)
            kv("amplitude", _pair(c.amplitude))
            kv("width", c.width)
            kv("path", [list(row) for row in c.path])
            kv("phase_rate", c.phase_rate)
            kv("spread_beta", c.spread_beta)
        v = cfg.decomposition.v_plus
        out.write("\n[decomposition.v_plus]\n")
        kv("profile", v.profile)
        kv("amplitude", _pair(v.amplitude))
        kv("center", list(v.center))
        kv("velocity", list(v.velocity))
        kv("width", v.width)
        kv("phase", v.phase)
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# binary snapshots
# ---------------------------------------------------------------------------

SNAPSHOT_MAGIC = b"NLSF"
SNAPSHOT_VERSION = 1


def write_snapshot(path: str, f: GridField, t: float) -> None:
    """Bit-exact field snapshot: magic "NLSF", u32 LE version, u32 dim,
    u32 points per axis, per-axis f64 LE box length, f64 time label, then
    row-major interleaved re/im f64."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<III", SNAPSHOT_VERSION, g.dim, g.points_per_axis))
        fh.write(struct.pack("<" + "d" * g.dim, *([g.box_length] * g.dim)))
        fh.write(struct.pack("<d", t))
        inter = np.empty(g.size * 2, dtype="<f8")
        inter[0::2] = f.values.real.ravel()
        inter[1::2] = f.values.imag.ravel()
        fh.write(inter.tobytes())


def read_snapshot(path: str) -> Tuple[GridField, float]:
    with open(path, "rb") as fh:
        if fh.read(4) != SNAPSHOT_MAGIC:
            raise ConfigError(f"{path}: bad snapshot magic")
        version, dim, n = struct.unpack("<III", fh.read(12))
        if version != SNAPSHOT_VERSION:
            raise ConfigError(f"{path}: unsupported snapshot version {version}")
        box = struct.unpack("<" + "d" * dim, fh.read(8 * dim))
        (t,) = struct.unpack("<d", fh.read(8))
        grid = SpatialGrid(dim, n, box[0])
        inter = np.frombuffer(fh.read(grid.size * 16), dtype="<f8")
        vals = (inter[0::2] + 1j * inter[1::2]).reshape(grid.shape)
        return GridField(grid, vals, time_label=t), t


# ---------------------------------------------------------------------------
# run result + persistence helpers
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    scenario: str
    out_dir: str
    files: List[str]
    summary: dict
    passes: Dict[str, bool]
    runtime: float
    aborted: bool = False

    @property
    def ok(self) -> bool:
        return not self.aborted and all(self.passes.values())


def _num(x) -> str:
    return repr(float(x))


def _write_csv(path: str, rows: List[dict]) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow([_num(row[c]) if row.get(c) is not None else ""
                        for c in CSV_COLUMNS])


def _series_rows(series) -> List[dict]:
    rows = []
    for i, t in enumerate(series.times):
        row = {
            "t": t,
            "pairing_re": series.pairing[i].real,
            "pairing_im": series.pairing[i].imag,
            "main_re": series.main[i].real if np.any(series.main) else None,
            "main_im": series.main[i].imag if np.any(series.main) else None,
            "pot_re": series.potential[i].real if np.any(series.potential) else None,
            "pot_im": series.potential[i].imag if np.any(series.potential) else None,
            "resid_l2": None if series.resid_l2 is None else series.resid_l2[i],
            "mod_resid": None if series.mod_resid is None else series.mod_resid[i],
            "mass": series.mass[i],
            "l_q_norm": None if series.l_q_norm is None else series.l_q_norm[i],
        }
        rows.append(row)
    return rows


def _write_generic_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(x) if isinstance(x, (int, float, np.floating)) else str(x)
                        for x in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _finish(cfg: ScenarioConfig, files: List[str], summary: dict,
            passes: Dict[str, bool], start: float, aborted: bool = False) -> RunResult:
    summary = _jsonable(summary)
    passes = {k: bool(v) for k, v in passes.items()}
    summary["scenario"] = cfg.scenario
    summary["passes"] = dict(sorted(passes.items()))
    summary["aborted"] = aborted
    runtime = time.monotonic() - start
    summary["runtime_seconds"] = runtime
    spath = os.path.join(cfg.out_dir, "summary.json")
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(spath)
    return RunResult(cfg.scenario, cfg.out_dir, sorted(files), summary,
                     dict(passes), runtime, aborted)


def _phi_field(cfg: ScenarioConfig, grid: SpatialGrid, u0: Optional[GridField],
               v_plus: Optional[GridField]) -> GridField:
    d = cfg.diagnostics
    if d.phi_kind == "gaussian" or (d.phi_kind == "auto" and cfg.nonlinearity is None):
        coords = grid.meshgrid()
        r2 = sum((coords[i] - d.phi_center[i]) ** 2 for i in range(grid.dim))
        return GridField(grid, np.exp(-r2 / (2.0 * d.phi_width**2)))
    if d.phi_kind == "initial":
        if u0 is None:
            raise ConfigError("phi_kind = 'initial' needs initial data")
        return u0
    # auto with a nonlinearity present: positivity-aligned construction
    base = v_plus if v_plus is not None else u0
    return choose_test_function(base, cfg.nonlinearity, d.trunc_level)


def _v_plus_field(cfg: ScenarioConfig, grid: SpatialGrid) -> GridField:
    spec = InitialDataSpec((cfg.decomposition.v_plus,))
    return make_field(spec, grid)


# ---------------------------------------------------------------------------
# scenario runners
# ---------------------------------------------------------------------------

def run_scenario(cfg: ScenarioConfig) -> RunResult:
    os.makedirs(cfg.out_dir, exist_ok=True)
    start = time.monotonic()
    cpath = os.path.join(cfg.out_dir, "config.toml")
    with open(cpath, "wb") as fh:
        fh.write(serialize_config(cfg))
    files = [cpath]
    runner = {
        "free_calibration": _run_free_calibration,
        "linear_scatter_diag": _run_linear_scatter,
        "nls_longrange": _run_longrange,
        "nls_shortrange_control": _run_shortrange,
        "delta_potential": _run_delta_potential,
        "hartree_diag": _run_hartree,
        "theorem3_demo": _run_theorem3,
    }[cfg.scenario]
    return runner(cfg, files, start)


def _snapshot_states(cfg: ScenarioConfig, grid: SpatialGrid):
    """Genuine evolution; returns (states, trajectory, aborted flag)."""
    u0 = make_field(cfg.initial_data, grid)
    scfg = SolverConfig(
        dt=cfg.solver.dt, t_end=cfg.solver.t_end,
        snapshot_times=cfg.solver.snapshot_times(),
        mollify_width=cfg.solver.mollify_width, dealias=cfg.solver.dealias,
    )
    try:
        traj = evolve(u0, scfg, cfg.nonlinearity, cfg.potential)
        return u0, traj.snapshots, traj, False
    except SolverAbortError as exc:
        traj = exc.trajectory
        return u0, (traj.snapshots if traj else [(0.0, u0)]), traj, True


def _write_endpoint_snapshots(cfg: ScenarioConfig, states, files: List[str]) -> None:
    for tag, (t, u) in (("first", states[0]), ("last", states[-1])):
        path = os.path.join(cfg.out_dir, f"state_{tag}.nlsf")
        write_snapshot(path, u, t)
        files.append(path)


def _run_free_calibration(cfg, files, start):
    grid = cfg.grid.build()
    u0, states, traj, aborted = _snapshot_states(cfg, grid)
    phi = _phi_field(cfg, grid, u0, None)
    series = compute_series(states, phi, None)
    rows = _series_rows(series)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, rows)
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)
    drift = float(np.max(np.abs(series.pairing - series.pairing[0])))
    mass_drift = float(np.max(np.abs(series.mass - series.mass[0])) / series.mass[0])
    passes = {
        "pairing_constant": drift <= 1e-10,
        "mass_conserved": mass_drift <= 1e-10,
    }
    summary = {
        "pairing_drift": drift,
        "mass_drift_rel": mass_drift,
        "validity_horizon": traj.t_valid if traj else None,
    }
    return _finish(cfg, files, summary, passes, start, aborted)


def _run_linear_scatter(cfg, files, start):
    grid = cfg.grid.build()
    u0 = make_field(cfg.initial_data, grid)
    phi = _phi_field(cfg, grid, u0, None)
    times = [t for t in cfg.solver.snapshot_times() if t > 0]
    states = [(t, free_propagate(u0, t)) for t in times]
    series = compute_series(states, phi, None)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, _series_rows(series))
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)

    d = grid.dim
    # fit only the asymptotic regime: a Gaussian of width s leaves the flat
    # near-field around t ~ s^2 / 2
    width_max = max(term.width for term in cfg.initial_data.terms)
    t_fit_lo = max(1.0, 2.0 * width_max**2)
    fit_ts = [t for t in times if t_fit_lo <= t <= min(50.0, cfg.solver.t_end)]
    sups = [norm(u, "sup") for t, u in states if t in fit_ts]
    disp_slope = loglog_slope(fit_ts, sups)

    hy_ts = [t for t in times if t >= max(5.0, t_fit_lo)]
    phihat_err = []
    for t in hy_ts:
        w = free_propagate(phi, t)
        wt, rg = tilde_transform(w, t)
        target = fourier_at(phi, [rg.axis_points()] * d)
        phihat_err.append(float(np.max(np.abs(wt.values - target))))
    hy_slope = loglog_slope(hy_ts, phihat_err)

    # the factorization identity is checked on a dedicated small box where the
    # modulation chirp e^{i|x|^2/4t} is resolved down to t = 0.5
    fgrid = SpatialGrid(d, 1024, 80.0)
    fx = fgrid.meshgrid()
    fr2 = sum(c**2 for c in fx)
    fphi = GridField(fgrid, np.exp(-fr2 / (2.0 * 4.0**2)))
    fac_res = {t: verify_factorization(fphi, t) for t in (0.5, 1.0, 2.0, 5.0, 10.0)}
    _write_generic_csv(os.path.join(cfg.out_dir, "rates.csv"),
                       ("t", "sup_norm", "tilde_error"),
                       [(t, norm(free_propagate(u0, t), "sup"), e)
                        for t, e in zip(hy_ts, phihat_err)])
    files.append(os.path.join(cfg.out_dir, "rates.csv"))

    passes = {
        "dispersive_rate": abs(disp_slope + d / 2.0) <= 0.05,
        "tilde_convergence_rate": abs(hy_slope + 1.0) <= 0.1,
        "factorization": max(fac_res.values()) <= 1e-6,
    }
    summary = {
        "dispersive_slope": disp_slope,
        "dispersive_slope_expected": -d / 2.0,
        "tilde_error_slope": hy_slope,
        "factorization_residuals": {str(t): v for t, v in fac_res.items()},
    }
    return _finish(cfg, files, summary, passes, start)


def _synthetic_series(cfg, grid):
    lspec = cfg.decomposition.lspec
    v_plus = _v_plus_field(cfg, grid)
    nl = cfg.nonlinearity
    phi = _phi_field(cfg, grid, None, v_plus)
    times = [t for t in cfg.solver.snapshot_times() if t > 0]
    states = [(t, synth_state(lspec, v_plus, t, grid)) for t in times]
    series = compute_series(states, phi, nl, pot=cfg.potential, lspec=lspec,
                            v_plus=v_plus)
    return lspec, v_plus, phi, states, series


def _run_longrange(cfg, files, start):
    grid = cfg.grid.build()
    lspec, v_plus, phi, states, series = _synthetic_series(cfg, grid)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, _series_rows(series))
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)

    dg = cfg.diagnostics
    taus = np.geomspace(max(dg.tau_min, 2.0), dg.tau_max, dg.tau_count)
    values = [(float(tau), glassey_integral(series, float(tau)).value) for tau in taus]
    _write_generic_csv(os.path.join(cfg.out_dir, "growth.csv"),
                       ("tau", "integral", "alpha"),
                       [(tau, v, glassey_integral(series, tau).alpha)
                        for tau, v in values])
    files.append(os.path.join(cfg.out_dir, "growth.csv"))

    fit = growth_fit(values)
    d, p = grid.dim, cfg.nonlinearity.p
    expected = 1.0 - d * p / 2.0
    log_case = abs(p - 2.0 / d) <= 1e-12
    if log_case:
        growth_ok = fit.model == "logarithmic"
    else:
        growth_ok = fit.model == "power-law" and abs(fit.exponent - expected) <= 0.1
    passes = {
        "growth_dichotomy": growth_ok,
        "pairing_bounded": series.check_boundedness(),
    }
    summary = {
        "fit_model": fit.model,
        "fit_exponent": fit.exponent,
        "fit_goodness": fit.goodness,
        "expected_exponent": None if log_case else expected,
        "expected_model": "logarithmic" if log_case else "power-law",
    }
    return _finish(cfg, files, summary, passes, start)


def _run_shortrange(cfg, files, start):
    grid = cfg.grid.build()
    u0, states, traj, aborted = _snapshot_states(cfg, grid)
    phi = _phi_field(cfg, grid, u0, None)
    series = compute_series(states, phi, cfg.nonlinearity)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, _series_rows(series))
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)

    t_lo = cfg.solver.t_end / 2.0
    sel = series.times >= t_lo - 1e-9
    P = series.pairing[sel]
    spread = float(np.max(np.abs(P[:, None] - P[None, :]))) if P.size else math.inf
    bound = 0.05 * float(np.sqrt(np.max(series.mass))) * series.phi_l2
    passes = {"pairing_cauchy": (not aborted) and spread <= bound}
    summary = {
        "pairing_spread": spread,
        "cauchy_bound": bound,
        "window": [t_lo, cfg.solver.t_end],
        "validity_horizon": traj.t_valid if traj else None,
    }
    return _finish(cfg, files, summary, passes, start, aborted)


def _run_delta_potential(cfg, files, start):
    grid = cfg.grid.build()
    u0, states, traj, aborted = _snapshot_states(cfg, grid)
    phi = _phi_field(cfg, grid, u0, None)
    series = compute_series(states, phi, cfg.nonlinearity, pot=cfg.potential)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, _series_rows(series))
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)

    # window sums of |<V u, w>| over [t0, t0 + T]
    T = cfg.diagnostics.window_t
    ts = series.times
    pv = np.abs(series.potential)
    t0s = [t for t in ts if t >= 1.0 and t + T <= ts[-1] + 1e-9]
    sums = []
    for t0 in t0s:
        m = (ts >= t0 - 1e-9) & (ts <= t0 + T + 1e-9)
        sums.append(float(np.trapezoid(pv[m], ts[m])))
    slope = loglog_slope(t0s, sums) if len(t0s) >= 4 else None
    _write_generic_csv(os.path.join(cfg.out_dir, "windows.csv"),
                       ("t0", "window_sum"), list(zip(t0s, sums)))
    files.append(os.path.join(cfg.out_dir, "windows.csv"))
    passes = {
        "window_decay": slope is not None and abs(slope + 0.5) <= 0.15,
    }
    summary = {
        "window_sum_slope": slope,
        "expected_slope": -0.5,
        "validity_horizon": traj.t_valid if traj else None,
    }
    return _finish(cfg, files, summary, passes, start, aborted)


def _run_hartree(cfg, files, start):
    grid = cfg.grid.build()
    lspec, v_plus, phi, states, series = _synthetic_series(cfg, grid)
    spath = os.path.join(cfg.out_dir, "series.csv")
    _write_csv(spath, _series_rows(series))
    files.append(spath)
    _write_endpoint_snapshots(cfg, states, files)

    limit = main_term_limit(v_plus, phi, cfg.nonlinearity, lspec)
    final = series.main[-1]
    rel = abs(final - limit) / abs(limit)
    passes = {"main_term_limit": rel <= 0.08}
    summary = {
        "main_term_final": [final.real, final.imag],
        "main_term_limit": [limit.real, limit.imag],
        "relative_error": rel,
        "t_final": float(series.times[-1]),
    }
    return _finish(cfg, files, summary, passes, start)


def _run_theorem3(cfg, files, start):
    grid = cfg.grid.build()
    lspec = cfg.decomposition.lspec
    v_plus = _v_plus_field(cfg, grid)
    nu = nu_from_paths(lspec, cfg.potential, (cfg.solver.t_end,))
    recs = test_sequence(v_plus, nu, cfg.diagnostics.n_max)
    v2 = l2_norm(v_plus) ** 2
    _write_generic_csv(
        os.path.join(cfg.out_dir, "construction.csv"),
        ("n", "epsilon", "pairing_main", "pairing_measure", "psi_l1", "psi_l1_bound"),
        [(r.index, r.epsilon, r.pairing_main, r.pairing_measure, r.psi_l1,
          r.psi_l1_bound) for r in recs])
    files.append(os.path.join(cfg.out_dir, "construction.csv"))
    good = [r.index for r in recs
            if r.pairing_main >= 0.9 * v2 and r.pairing_measure <= 0.01 * v2]

    d = cfg.diagnostics
    coords = grid.meshgrid()
    r2 = sum((coords[i] - d.phi_center[i]) ** 2 for i in range(grid.dim))
    bump = GridField(grid, np.exp(-r2 / (2.0 * d.phi_width**2)))
    t_list = [t for t in cfg.solver.snapshot_times() if t > 0]
    slack = hypothesis_check(lspec, cfg.potential, nu, bump, t_list)
    _write_generic_csv(os.path.join(cfg.out_dir, "slack.csv"),
                       ("t", "concentration", "running_max", "slack"),
                       [(s.t, s.concentration, s.running_max, s.slack) for s in slack])
    files.append(os.path.join(cfg.out_dir, "slack.csv"))
    nu_phi = slack[-1].running_max + slack[-1].slack
    late = [s for s in slack if s.t >= min(50.0, t_list[-1])]
    tol = 0.02 * max(nu_phi, 1e-300)
    passes = {
        "construction": bool(good),
        "cutoff_l1": all(r.psi_l1 <= r.psi_l1_bound + 1e-12 for r in recs),
        "hypothesis": all(s.slack >= -tol for s in late),
    }
    summary = {
        "first_good_n": good[0] if good else None,
        "v_plus_mass": v2,
        "nu_total_mass": nu.total_mass,
        "final_slack": slack[-1].slack,
    }
    return _finish(cfg, files, summary, passes, start)


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

def load_result(out_dir: str) -> RunResult:
    """Rebuild a RunResult from a persisted summary.json (report regeneration)."""
    spath = os.path.join(out_dir, "summary.json")
    with open(spath) as fh:
        summary = json.load(fh)
    files = sorted(os.path.join(out_dir, f) for f in os.listdir(out_dir))
    return RunResult(summary["scenario"], out_dir, files, summary,
                     dict(summary.get("passes", {})),
                     summary.get("runtime_seconds", 0.0),
                     summary.get("aborted", False))


def _na(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def emit_report(results: Sequence[RunResult], path: str) -> str:
    """Single plain-text table over all results, ordered by scenario name;
    regeneration from persisted summaries is idempotent."""
    if not results:
        raise ConfigError("emit_report needs at least one result")
    header = ("scenario", "model_expected", "model_fitted", "exponent_fitted",
              "invariants", "status")
    rows = []
    for r in sorted(results, key=lambda r: (r.scenario, r.out_dir)):
        s = r.summary
        npass = sum(1 for v in r.passes.values() if v)
        rows.append((
            r.scenario,
            _na(s.get("expected_model")),
            _na(s.get("fit_model")),
            _na(s.get("fit_exponent")),
            f"{npass}/{len(r.passes)}",
            "aborted" if r.aborted else ("pass" if r.ok else "FAIL"),
        ))
    widths = [max(len(header[i]), *(len(row[i]) for row in rows))
              for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(
        prog="nlsdiag",
        description="Dispersive-equation scattering diagnostics runner")
    ap.add_argument("--config", required=True, help="TOML configuration file")
    ap.add_argument("--out-dir", default=None, help="override output directory")
    ap.add_argument("--scenario", default=None, help="override scenario name")
    ap.add_argument("--seed", type=int, default=None, help="override RNG seed")
    ap.add_argument("--deterministic", action="store_true",
                    help="force single-threaded numerics")
    ap.add_argument("--max-threads", type=int, default=None,
                    help="cap worker threads for numerics backends")
    args = ap.parse_args(argv)

    threads = 1 if args.deterministic else args.max_threads
    if threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)

    try:
        with open(args.config, "rb") as fh:
            text = fh.read()
        raw = tomllib.loads(text.decode("utf-8"))
        if args.scenario is not None:
            raw["scenario"] = args.scenario
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out_dir is not None:
            raw["out_dir"] = args.out_dir
        cfg = _config_from_dict(raw)
    except (OSError, ConfigError, ScopeError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_scenario(cfg)
    except NlsdiagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = emit_report([result], os.path.join(cfg.out_dir, "report.txt"))
    print(report, end="")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
