"""Run configuration, orchestration, CSV output and the command-line front end.

Configuration files are UTF-8 text with one ``key = value`` per line, ``#``
comments and dotted keys for blocks::

    coag.kind = power
    coag.a = 1
    coag.alpha = 0.5
    frag.kind = power
    frag.a = 1
    frag.alpha = 0.6666666666666666
    lambda = 10
    n = 1024
    scheme = rk4
    dt = 0.001
    T = 10

CSV output is comma separated with a header row; floats are written in
scientific notation with 17 significant digits so that they round-trip.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .diagnostics import bound_ledger, compare_runs, monitor_trajectory, relative_sup_error
from .equilibria import classify_regime, solve_monomer_equilibrium, truncated_monomer_equilibrium, zero_flux_profile
from .errors import BDError, ConfigError
from .kinetics import DetailedBalance, RateModel, make_rule
from .linear_stability import DEFAULT_N, build_context, check_gap_condition
from .ode_sim import CONSERVATIVE, NONCONSERVATIVE, Trajectory, TruncatedState, advisory_dt, integrate, make_error_observer, make_nodes_observer, observe_c1, observe_moments
from .rd_scheme import DEFAULT_DENSITY, DEFAULT_UNIT_SPAN, Mesh, build_log_mesh, make_scheme_state, mesh_equilibrium, simulate_rd

logger = logging.getLogger(__name__)

FLOAT_FMT = "%.16e"

# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

RULE_PARAMS = {
    "constant": ("a",),
    "power": ("a", "alpha"),
    "affine": ("c", "d", "beta"),
    "table": ("table",),
}
RULE_OPTIONAL = {"table": ("tail",)}


def _float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _str_list(text: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _int(text: str) -> int:
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


SCHEMA: Dict[str, Callable[[str], object]] = {}
for _blk in ("coag", "frag"):
    SCHEMA.update(
        {
            f"{_blk}.kind": str,
            f"{_blk}.a": float,
            f"{_blk}.alpha": float,
            f"{_blk}.c": float,
            f"{_blk}.d": float,
            f"{_blk}.beta": float,
            f"{_blk}.table": _float_list,
            f"{_blk}.tail": str,
        }
    )
SCHEMA.update(
    {
        "lambda": float,
        "n": _int,
        "scheme": str,
        "dt": float,
        "T": float,
        "stride": _int,
        "truncation": str,
        "mesh.dx_max": _int,
        "mesh.density": _int,
        "mesh.unit_span": _int,
        "observe": _str_list,
        "out": str,
        "seed": _int,
        "init.kind": str,
        "init.profile": str,
        "init.scale": float,
    }
)

MODEL_KEYS = ("coag.kind", "frag.kind", "lambda")
RUN_KEYS = MODEL_KEYS + ("n", "scheme", "dt", "T")
OBSERVABLES = ("c1", "moments", "profile", "error")


@dataclass
class RunConfig:
    """Validated run configuration.

    Attributes
    ----------
    coag, frag : tuple
        (rule kind, parameter dict).
    lam : float
        Injection rate.
    n : int
        Truncation size (0 when not needed).
    scheme : str
        ``"rk4"`` or ``"rd"``.
    dx_max, density, unit_span : int
        Mesh generator settings for the RD scheme.
    dt, T : float
    stride : int
        Observation stride in steps.
    truncation : str
    observe : tuple of str
    out : str or None
    seed : int
    init_kind : str
        ``"zero"`` (default), ``"profile"`` (CSV at ``init_profile``) or
        ``"random"`` (seeded, scaled by ``init_scale``).
    """

    coag: Tuple[str, dict]
    frag: Tuple[str, dict]
    lam: float
    n: int = 0
    scheme: str = "rk4"
    dx_max: int = 1
    density: int = DEFAULT_DENSITY
    unit_span: int = DEFAULT_UNIT_SPAN
    dt: float = 0.0
    T: float = 0.0
    stride: int = 1
    truncation: str = CONSERVATIVE
    observe: Tuple[str, ...] = ("c1",)
    out: Optional[str] = None
    seed: int = 0
    init_kind: str = "zero"
    init_profile: Optional[str] = None
    init_scale: float = 0.1
    source: Dict[str, int] = field(default_factory=dict)

    def model(self) -> RateModel:
        return RateModel(make_rule(self.coag[0], **self.coag[1]), make_rule(self.frag[0], **self.frag[1]), self.lam)

    def mesh(self) -> Mesh:
        if self.scheme == "rd" and self.dx_max > 1:
            return build_log_mesh(self.n, self.dx_max, self.density, self.unit_span)
        return Mesh.uniform(self.n)


def _scan(text: str, errors: list) -> Dict[str, Tuple[str, Optional[int]]]:
    raw: Dict[str, Tuple[str, Optional[int]]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            errors.append((lineno, f"expected 'key = value', got {body!r}"))
            continue
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            errors.append((lineno, "empty key"))
            continue
        if key in raw:
            errors.append((lineno, f"duplicate key {key!r} (first set on line {raw[key][1]}, again on line {lineno})"))
            continue
        raw[key] = (value, lineno)
    return raw


def parse_config(text: str, required: Sequence[str] = RUN_KEYS, overrides: Optional[Dict[str, object]] = None) -> RunConfig:
    """Parse and validate configuration text.

    Parameters
    ----------
    text : str
        Configuration text.
    required : sequence of str
        Keys that must be present; :data:`RUN_KEYS` for simulations and
        :data:`MODEL_KEYS` when only the rates are needed.
    overrides : dict, optional
        Values (typically from command-line flags) that replace or add keys.

    Raises
    ------
    ConfigError
        Carrying every problem found, each as (line number or None, message).
    """
    errors: List[Tuple[Optional[int], str]] = []
    raw = _scan(text, errors)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = (str(value), None)
    values: Dict[str, object] = {}
    for key, (text_value, lineno) in raw.items():
        conv = SCHEMA.get(key)
        if conv is None:
            errors.append((lineno, f"unknown key {key!r}"))
            continue
        try:
            values[key] = conv(text_value)
        except ValueError:
            errors.append((lineno, f"{key}: cannot read {text_value!r} as {getattr(conv, '__name__', 'value').lstrip('_')}"))
    required = list(required)
    if values.get("scheme") == "rd" and "mesh.dx_max" not in required:
        required.append("mesh.dx_max")
    for key in required:
        if key not in raw:
            errors.append((None, f"missing required key {key!r}"))

    def line(key):
        return raw[key][1] if key in raw else None

    rules = {}
    for blk in ("coag", "frag"):
        kind = values.get(f"{blk}.kind")
        if kind is None:
            continue
        if kind not in RULE_PARAMS:
            errors.append((line(f"{blk}.kind"), f"{blk}.kind must be one of {sorted(RULE_PARAMS)}, got {kind!r}"))
            continue
        params = {}
        for p in RULE_PARAMS[kind]:
            k = f"{blk}.{p}"
            if k not in raw:
                errors.append((None, f"missing required key {k!r} for a {kind} rule"))
            elif k in values:
                params[p] = values[k]
        for p in RULE_OPTIONAL.get(kind, ()):
            if f"{blk}.{p}" in values:
                params[p] = values[f"{blk}.{p}"]
        allowed = set(RULE_PARAMS[kind]) | set(RULE_OPTIONAL.get(kind, ())) | {"kind"}
        for k in raw:
            if k.startswith(blk + ".") and k.split(".", 1)[1] not in allowed:
                errors.append((line(k), f"{k} does not apply to a {kind} rule"))
        rules[blk] = (kind, params)

    def check(key, ok, msg):
        if key in values and not ok(values[key]):
            errors.append((line(key), f"{key} {msg}, got {values[key]!r}"))

    check("lambda", lambda v: math.isfinite(v) and v >= 0, "must be finite and >= 0")
    check("n", lambda v: v >= 3, "must be at least 3")
    check("dt", lambda v: math.isfinite(v) and v > 0, "must be positive")
    check("T", lambda v: math.isfinite(v) and v >= 0, "must be non-negative")
    check("stride", lambda v: v >= 1, "must be at least 1")
    check("scheme", lambda v: v in ("rk4", "rd"), "must be 'rk4' or 'rd'")
    check("truncation", lambda v: v in (CONSERVATIVE, NONCONSERVATIVE), "must be 'conservative' or 'nonconservative'")
    check("mesh.dx_max", lambda v: v >= 1, "must be at least 1")
    check("mesh.density", lambda v: v >= 1, "must be at least 1")
    check("mesh.unit_span", lambda v: v >= 1, "must be at least 1")
    check("observe", lambda v: all(o in OBSERVABLES for o in v) and len(v) > 0, f"entries must be among {OBSERVABLES}")
    check("init.kind", lambda v: v in ("zero", "profile", "random"), "must be 'zero', 'profile' or 'random'")
    check("init.scale", lambda v: v >= 0, "must be non-negative")
    if values.get("scheme") == "rd":
        check("truncation", lambda v: v == CONSERVATIVE, "must be 'conservative' for the rd scheme")
        if "n" in values and "mesh.dx_max" in values and values["mesh.dx_max"] >= values["n"]:
            errors.append((line("mesh.dx_max"), "mesh.dx_max must be smaller than n"))
        check("n", lambda v: v >= 4, "must be at least 4 for the rd scheme")
    if values.get("init.kind") == "profile" and "init.profile" not in values:
        errors.append((line("init.kind"), "init.kind = profile needs init.profile"))
    if errors:
        raise ConfigError(sorted(errors, key=lambda e: (e[0] is None, e[0] or 0)))
    cfg = RunConfig(
        coag=rules["coag"],
        frag=rules["frag"],
        lam=float(values["lambda"]),
        n=int(values.get("n", 0)),
        scheme=str(values.get("scheme", "rk4")),
        dx_max=int(values.get("mesh.dx_max", 1)),
        density=int(values.get("mesh.density", DEFAULT_DENSITY)),
        unit_span=int(values.get("mesh.unit_span", DEFAULT_UNIT_SPAN)),
        dt=float(values.get("dt", 0.0)),
        T=float(values.get("T", 0.0)),
        stride=int(values.get("stride", 1)),
        truncation=str(values.get("truncation", CONSERVATIVE)),
        observe=tuple(values.get("observe", ("c1",))),
        out=values.get("out"),
        seed=int(values.get("seed", 0)),
        init_kind=str(values.get("init.kind", "zero")),
        init_profile=values.get("init.profile"),
        init_scale=float(values.get("init.scale", 0.1)),
        source={k: v[1] for k, v in raw.items()},
    )
    try:
        cfg.model()
    except BDError as exc:
        raise ConfigError([(None, str(exc))]) from exc
    return cfg


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

PRESET_NAMES = ("pow_frag", "affine_frag", "weak_frag")


def preset_text(name: str) -> str:
    """Text of a bundled preset configuration."""
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    return resources.files("bdkit").joinpath("presets", f"{name}.cfg").read_text(encoding="utf-8")


def load_presets(config_dir: Optional[Path] = None) -> Dict[str, str]:
    """Preset texts by name, from ``config_dir/*.cfg`` or the bundled set."""
    if config_dir is None:
        return {name: preset_text(name) for name in PRESET_NAMES}
    out = {p.stem: p.read_text(encoding="utf-8") for p in sorted(Path(config_dir).glob("*.cfg"))}
    if not out:
        raise FileNotFoundError(f"no .cfg presets in {config_dir}")
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return FLOAT_FMT % v
    if v is None:
        return ""
    return str(v)


def write_csv(path_or_buf, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a header row and data rows with 17-significant-digit floats."""
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    finally:
        if own:
            fh.close()


def read_csv(path) -> Tuple[List[str], np.ndarray]:
    """Read a numeric CSV written by :func:`write_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(x) if x not in ("", "true", "false") else {"true": 1.0, "false": 0.0}.get(x, math.nan) for x in r] for r in reader]
    return header, np.asarray(rows, dtype=float).reshape(len(rows), len(header))


def trajectory_rows(traj: Trajectory):
    """Header and rows for a trajectory: t, scalars, then C_<size> columns."""
    scalars = [k for k in traj.data if k != "profile"]
    header = ["t"] + scalars
    sizes = None
    if "profile" in traj.data:
        sizes = np.asarray(traj.meta.get("sizes", np.arange(1, len(traj.data["profile"][0]) + 1)))
        header += [f"C_{int(s)}" for s in sizes]
    rows = []
    for k, t in enumerate(traj.times):
        row = [t] + [traj.data[s][k] for s in scalars]
        if sizes is not None:
            row += list(np.asarray(traj.data["profile"][k], dtype=float))
        rows.append(row)
    return header, rows


def trajectory_from_csv(path) -> Trajectory:
    """Rebuild a :class:`Trajectory` from a CSV written by :func:`run`."""
    header, data = read_csv(path)
    traj = Trajectory()
    prof_cols = [j for j, h in enumerate(header) if h.startswith("C_")]
    scal_cols = [j for j, h in enumerate(header) if j > 0 and not h.startswith("C_")]
    if prof_cols:
        traj.meta["sizes"] = np.array([int(header[j][2:]) for j in prof_cols])
    for r in data:
        vals = {header[j]: float(r[j]) for j in scal_cols}
        if prof_cols:
            vals["profile"] = r[prof_cols].copy()
        traj.record(float(r[0]), vals)
    return traj


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    """Summary of one run; ``wall_seconds`` covers assembly and stepping only."""

    scheme: str
    n: int
    K: int
    dt: float
    steps: int
    wall_seconds: float
    out: Optional[str]
    trajectory: Trajectory

    def timing_row(self):
        return (self.scheme, self.n, self.K, self.dt, self.wall_seconds)


TIMING_HEADER = ("scheme", "n", "K", "dt", "wall_seconds")


def initial_state(config: RunConfig, sizes: np.ndarray) -> np.ndarray:
    """Initial concentrations at ``sizes`` (all sizes 1..n for RK4)."""
    if config.init_kind == "zero":
        return np.zeros(sizes.size)
    if config.init_kind == "random":
        rng = np.random.default_rng(config.seed)
        return config.init_scale * rng.random(sizes.size) * np.exp(-0.5 * (sizes - 1))
    header, data = read_csv(config.init_profile)
    col_i = header.index("i")
    col_c = header.index("C_i")
    table = dict(zip(data[:, col_i].astype(np.int64), data[:, col_c]))
    return np.array([float(table.get(int(s), 0.0)) for s in sizes])


def _observers(config: RunConfig, db: DetailedBalance, mesh: Mesh):
    obs = []
    for name in config.observe:
        if name == "c1":
            obs.append(observe_c1)
        elif name == "moments":
            obs.append(observe_moments)
        elif name == "profile":
            obs.append("profile")
        elif name == "error":
            z = truncated_monomer_equilibrium(db, config.lam, mesh)
            obs.append(make_error_observer(mesh_equilibrium(db, mesh, z)))
    return obs


def run(config: RunConfig, out=None) -> RunReport:
    """Run the configured scheme, write the trajectory CSV and time the stepping.

    ``out`` (a path or a writable text buffer) overrides ``config.out``.
    """
    model = config.model()
    db = DetailedBalance(model)
    mesh = config.mesh()
    obs = _observers(config, db, mesh)
    t0 = time.perf_counter()
    if config.scheme == "rk4":
        C0 = initial_state(config, np.arange(1, config.n + 1))
        logger.info("advisory dt %.3g (requested %.3g)", advisory_dt(model, config.n, C0[0]), config.dt)
        traj = integrate(TruncatedState(C0), model, config.dt, config.T, observers=obs, stride=config.stride, which_rhs=config.truncation)
        K = config.n
    else:
        C0 = initial_state(config, mesh.nodes)
        state = make_scheme_state(C0, db, mesh)
        traj = simulate_rd(state, model, db, mesh, config.dt, config.T, observers=obs, stride=config.stride)
        K = mesh.K
    wall = time.perf_counter() - t0
    target = out if out is not None else config.out
    if target is not None:
        header, rows = trajectory_rows(traj)
        write_csv(target, header, rows)
    return RunReport(config.scheme, config.n, K, config.dt, int(traj.meta["steps"]), wall, target if isinstance(target, str) else None, traj)


# ---------------------------------------------------------------------------
# figure datasets
# ---------------------------------------------------------------------------


def coarse_dx_max(n: int, fraction: float = 0.0005) -> int:
    """Largest half-step allowed by the rule dx_max <= fraction * n (at least 1)."""
    return max(1, int(math.floor(fraction * n)))


def convergence_dataset(model: RateModel, n: int, dx_max: int, T: float, dt_rk4: float, dt_factor: int = 10, samples: int = 200):
    """Error-versus-time data for RK4 (uniform sizes) and RD (coarse mesh).

    Both runs start from the empty state. RD uses ``dt_factor * dt_rk4``;
    the sample grids coincide. Returns (header, rows, info) where the rows
    hold t, the sup error of RK4 against its truncated equilibrium, the sup
    error of RD against the coarse equilibrium, the RK4-vs-RD relative error
    on the mesh nodes and the relative gap between the two equilibria.
    """
    db = DetailedBalance(model)
    uni = Mesh.uniform(n)
    mesh = build_log_mesh(n, dx_max) if dx_max > 1 else uni
    zu = truncated_monomer_equilibrium(db, model.lam, uni)
    zc = truncated_monomer_equilibrium(db, model.lam, mesh)
    eq_u = mesh_equilibrium(db, uni, zu)
    eq_c = mesh_equilibrium(db, mesh, zc)
    gap = relative_sup_error(eq_u[mesh.nodes - 1], eq_c)
    dt_rd = dt_factor * dt_rk4
    rd_steps = max(1, int(round(T / dt_rd)))
    stride_rd = max(1, rd_steps // samples)
    stride_rk = stride_rd * dt_factor
    T = rd_steps * dt_rd
    err_u = make_error_observer(eq_u)
    nodes_obs = make_nodes_observer(mesh.nodes)

    def rk_obs(t, C):
        out = err_u(t, C)
        out.update(nodes_obs(t, C))
        return out

    rk_obs.sizes = nodes_obs.sizes

    t0 = time.perf_counter()
    tr_rk = integrate(TruncatedState.empty(n), model, dt_rk4, T, observers=[rk_obs], stride=stride_rk)
    w_rk = time.perf_counter() - t0
    t0 = time.perf_counter()
    tr_rd = simulate_rd(np.zeros(mesh.K), model, db, mesh, dt_rd, T, observers=[make_error_observer(eq_c), "profile"], stride=stride_rd)
    w_rd = time.perf_counter() - t0
    # the final sample of each run is forced; keep the common grid only
    keep_rk = [k for k, t in enumerate(tr_rk.times) if any(abs(t - s) <= 1e-9 * max(1.0, t) for s in tr_rd.times)]
    keep_rd = [k for k, t in enumerate(tr_rd.times) if any(abs(t - s) <= 1e-9 * max(1.0, t) for s in tr_rk.times)]
    a = _subset(tr_rk, keep_rk)
    b = _subset(tr_rd, keep_rd)
    cmp = compare_runs(a, b)
    rows = [(t, e1, e2, r, gap) for t, e1, e2, r in zip(cmp.times, a.series("error"), b.series("error"), cmp.rel_error)]
    header = ("t", "rk4_abs_error", "rd_abs_error", "rk4_rd_rel_error", "equilibria_rel_gap")
    info = {"z_uniform": zu, "z_coarse": zc, "K": mesh.K, "gap": gap, "wall_rk4": w_rk, "wall_rd": w_rd, "dt_rd": dt_rd}
    return header, rows, info


def _subset(traj: Trajectory, keep: Sequence[int]) -> Trajectory:
    out = Trajectory(meta=dict(traj.meta))
    for k in keep:
        out.record(traj.times[k], {name: vals[k] for name, vals in traj.data.items()})
    return out


def timing_dataset(model: RateModel, ns: Sequence[int], T: float, dt_rk4: float, dt_factor: int = 10, fraction: float = 0.0005):
    """Wall time of both schemes over an n-sweep, runs executed one at a time."""
    rows = []
    db = DetailedBalance(model)
    for n in ns:
        t0 = time.perf_counter()
        tr = integrate(TruncatedState.empty(n), model, dt_rk4, T, observers=(), stride=10**9)
        rows.append(("rk4", n, n, dt_rk4, time.perf_counter() - t0))
        dxm = coarse_dx_max(n, fraction)
        mesh = build_log_mesh(n, dxm) if dxm > 1 else Mesh.uniform(n)
        t0 = time.perf_counter()
        simulate_rd(np.zeros(mesh.K), model, db, mesh, dt_factor * dt_rk4, T, observers=(), stride=10**9)
        rows.append(("rd", n, mesh.K, dt_factor * dt_rk4, time.perf_counter() - t0))
    return TIMING_HEADER, rows


def monomer_dataset(presets: Dict[str, str], n: int, dx_max: int, T: float, dt_rk4: float, dt_factor: int = 10, samples: int = 200):
    """C_1(t) of both schemes for each preset (long format)."""
    rows = []
    for name, text in presets.items():
        cfg = parse_config(text, required=MODEL_KEYS)
        model = cfg.model()
        db = DetailedBalance(model)
        mesh = build_log_mesh(n, dx_max) if dx_max > 1 else Mesh.uniform(n)
        dt_rd = dt_factor * dt_rk4
        steps = max(1, int(round(T / dt_rd)))
        stride = max(1, steps // samples)
        tr = integrate(TruncatedState.empty(n), model, dt_rk4, steps * dt_rd, observers=("c1",), stride=stride * dt_factor)
        rows += [(name, "rk4", t, c) for t, c in zip(tr.times, tr.data["C1"])]
        tr = simulate_rd(np.zeros(mesh.K), model, db, mesh, dt_rd, steps * dt_rd, observers=("c1",), stride=stride)
        rows += [(name, "rd", t, c) for t, c in zip(tr.times, tr.data["C1"])]
    return ("preset", "scheme", "t", "C1"), rows


@dataclass
class FigureScale:
    """Sizes and times of the figure datasets."""

    n: int = 30000
    dx_max: int = 50
    T: float = 60.0
    dt_rk4: float = 5e-4
    sweep: Tuple[int, ...] = (2000, 5000, 10000, 20000, 30000)
    sweep_T: float = 1.0
    monomer_T: float = 50.0

    @classmethod
    def quick(cls) -> "FigureScale":
        return cls(n=4096, dx_max=16, T=60.0, dt_rk4=1e-3, sweep=(1024, 2048, 4096), sweep_T=1.0, monomer_T=20.0)


def reproduce_figures(config_dir: Optional[Path], out_dir: Path, scale: Optional[FigureScale] = None, primary: str = "pow_frag") -> Dict[str, Path]:
    """Write the datasets behind the convergence, timing and C_1 figures.

    Returns the paths of ``convergence.csv``, ``timing.csv`` and ``monomer.csv``.
    """
    scale = scale or FigureScale()
    presets = load_presets(config_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    main_cfg = parse_config(presets[primary] if primary in presets else next(iter(presets.values())), required=MODEL_KEYS)
    model = main_cfg.model()
    paths = {}
    header, rows, info = convergence_dataset(model, scale.n, scale.dx_max, scale.T, scale.dt_rk4)
    paths["convergence"] = out_dir / "convergence.csv"
    write_csv(paths["convergence"], header, rows)
    logger.info("convergence: K=%d z_uniform=%.17g z_coarse=%.17g", info["K"], info["z_uniform"], info["z_coarse"])
    header, rows = timing_dataset(model, scale.sweep, scale.sweep_T, scale.dt_rk4)
    paths["timing"] = out_dir / "timing.csv"
    write_csv(paths["timing"], header, rows)
    header, rows = monomer_dataset(presets, min(scale.n, 4096), min(scale.dx_max, 16), scale.monomer_T, scale.dt_rk4)
    paths["monomer"] = out_dir / "monomer.csv"
    write_csv(paths["monomer"], header, rows)
    return paths


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

HELP_EPILOG = """CSV columns
  simulate-ode / simulate-rd : t, then C1 | M0,M1 | error | C_<size>... per --observe
  equilibrium                : lambda,z,z_s,lambda_s,regime,uniqueness  (--profile: i,C_i)
  mesh                       : j,n_j,dx_half (empty for the last node)
  spectral-check             : z,D,p_norm,condition_lhs,satisfied,mu_est
  check-bounds               : bound,value,max_violation,verdict
  compare                    : t,abs_error,rel_error
  reproduce-figures          : convergence.csv, timing.csv, monomer.csv in --out
Errors are reported on stderr as one JSON line {"error": type, "message": ...}."""


def _common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", type=Path, default=d, help="run configuration file")
    p.add_argument("--preset", choices=PRESET_NAMES, default=d, help="use a bundled preset as configuration")
    p.add_argument("--out", default=d, help="output CSV path (directory for reproduce-figures); default stdout")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False, help="only report errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdkit", description="Becker-Doring kinetics with monomer injection", epilog=HELP_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, epilog=HELP_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p, suppress=True)
        return p

    p = add("equilibrium", "monomer equilibrium and regime")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--profile", type=int, metavar="N", help="also write C_1..C_N")
    p.add_argument("--profile-out", help="path of the profile CSV")

    for name, help_ in (("simulate-ode", "RK4 on the truncated system"), ("simulate-rd", "well-balanced implicit scheme")):
        p = add(name, help_)
        p.add_argument("--n", type=int)
        p.add_argument("--dt", type=float)
        p.add_argument("--T", type=float)
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--stride", type=int)
        p.add_argument("--observe", help="comma list of c1,moments,profile,error")
        p.add_argument("--timing", help="append (scheme,n,K,dt,wall_seconds) to this CSV")
        if name == "simulate-ode":
            p.add_argument("--truncation", choices=(CONSERVATIVE, NONCONSERVATIVE))
        else:
            p.add_argument("--truncation", choices=(CONSERVATIVE,))
            p.add_argument("--dx-max", type=int)
            p.add_argument("--density", type=int)

    p = add("mesh", "dump a log mesh")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dx-max", type=int, required=True)
    p.add_argument("--density", type=int, default=DEFAULT_DENSITY)

    p = add("spectral-check", "spectral-gap sufficient condition")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--z", type=float)
    p.add_argument("--N", type=int, default=DEFAULT_N)
    p.add_argument("--b", type=float)
    p.add_argument("--beta", type=float)

    p = add("check-bounds", "check a priori bounds on a trajectory CSV")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--nu", type=float)

    p = add("compare", "sup and relative errors of two trajectory CSVs")
    p.add_argument("run_a", type=Path)
    p.add_argument("run_b", type=Path)

    p = add("reproduce-figures", "write the figure datasets")
    p.add_argument("--config-dir", type=Path, help="directory of *.cfg presets (default: bundled)")
    p.add_argument("--quick", action="store_true", help="reduced sizes (n = 4096)")
    return parser


def _config_text(args) -> str:
    if getattr(args, "config", None) is not None:
        return Path(args.config).read_text(encoding="utf-8")
    if getattr(args, "preset", None) is not None:
        return preset_text(args.preset)
    return ""


def _emit(args, header, rows, default=None):
    target = args.out if args.out is not None else default
    if target is None:
        write_csv(sys.stdout, header, rows)
    else:
        write_csv(target, header, rows)


def _cmd_equilibrium(args):
    cfg = parse_config(_config_text(args), required=MODEL_KEYS, overrides={"lambda": args.lam})
    db = DetailedBalance(cfg.model())
    rep = classify_regime(db, cfg.lam)
    z = solve_monomer_equilibrium(db, cfg.lam) if rep.comparison != "supercritical" else math.nan
    _emit(args, ("lambda", "z", "z_s", "lambda_s", "regime", "uniqueness"), [(cfg.lam, z, db.z_s, db.lambda_s, rep.comparison, rep.uniqueness)])
    if args.profile:
        st = zero_flux_profile(db, z, args.profile)
        target = args.profile_out or (sys.stdout if args.out is None else None)
        if target is None:
            raise ValueError("--profile with --out needs --profile-out")
        write_csv(target, ("i", "C_i"), [(i + 1, c) for i, c in enumerate(st.profile)])


def _cmd_simulate(args, scheme):
    over = {"scheme": scheme, "n": args.n, "dt": args.dt, "T": args.T, "lambda": args.lam, "stride": args.stride, "observe": args.observe, "truncation": args.truncation}
    if scheme == "rd":
        over.update({"mesh.dx_max": args.dx_max, "mesh.density": args.density})
    cfg = parse_config(_config_text(args), overrides=over)
    buf = io.StringIO() if args.out is None else None
    rep = run(cfg, out=args.out if args.out is not None else buf)
    if buf is not None:
        sys.stdout.write(buf.getvalue())
    if args.timing:
        exists = Path(args.timing).exists()
        with open(args.timing, "a", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not exists:
                w.writerow(TIMING_HEADER)
            w.writerow([format_value(v) for v in rep.timing_row()])
    if not args.quiet:
        print(f"{scheme}: n={rep.n} K={rep.K} dt={rep.dt:g} steps={rep.steps} wall={rep.wall_seconds:.3f}s", file=sys.stderr)


def _cmd_mesh(args):
    mesh = build_log_mesh(args.n, args.dx_max, args.density) if args.dx_max > 1 else Mesh.uniform(args.n)
    rows = [(j + 1, int(nj), int(mesh.half_steps[j]) if j < mesh.K - 1 else None) for j, nj in enumerate(mesh.nodes)]
    _emit(args, ("j", "n_j", "dx_half"), rows)
    if not args.quiet:
        print(f"K = {mesh.K}", file=sys.stderr)


def _cmd_spectral(args):
    cfg = parse_config(_config_text(args), required=MODEL_KEYS, overrides={"lambda": args.lam})
    db = DetailedBalance(cfg.model())
    ctx = build_context(db, z=args.z, lam=cfg.lam if args.z is None else None, N=args.N)
    rep = check_gap_condition(ctx, b=args.b, beta=args.beta)
    _emit(args, ("z", "D", "p_norm", "condition_lhs", "satisfied", "mu_est"), [(rep.z, rep.D, rep.p_norm, rep.lhs, rep.satisfied, rep.mu_est)])


def _cmd_check_bounds(args):
    cfg = parse_config(_config_text(args), required=MODEL_KEYS)
    model = cfg.model()
    traj = trajectory_from_csv(args.trajectory)
    if "profile" in traj.data:
        sizes = traj.meta["sizes"]
        if not np.array_equal(sizes, np.arange(1, sizes.size + 1)):
            raise ValueError("check-bounds needs the full profile C_1..C_n")
        C0 = np.asarray(traj.data["profile"][0])
    else:
        C0 = np.array([traj.data["C1"][0]])
    ledger = monitor_trajectory(traj, model, C0, nu=args.nu)
    _emit(args, ("bound", "value", "max_violation", "verdict"), ledger.rows())


def _cmd_compare(args):
    res = compare_runs(trajectory_from_csv(args.run_a), trajectory_from_csv(args.run_b))
    _emit(args, ("t", "abs_error", "rel_error"), zip(res.times, res.abs_error, res.rel_error))


def _cmd_figures(args):
    out = Path(args.out or "figures")
    scale = FigureScale.quick() if args.quick else FigureScale()
    paths = reproduce_figures(args.config_dir, out, scale)
    if not args.quiet:
        for k, p in paths.items():
            print(f"{k}: {p}", file=sys.stderr)


COMMANDS = {
    "equilibrium": _cmd_equilibrium,
    "simulate-ode": lambda a: _cmd_simulate(a, "rk4"),
    "simulate-rd": lambda a: _cmd_simulate(a, "rd"),
    "mesh": _cmd_mesh,
    "spectral-check": _cmd_spectral,
    "check-bounds": _cmd_check_bounds,
    "compare": _cmd_compare,
    "reproduce-figures": _cmd_figures,
}


def error_line(exc: BaseException) -> str:
    """One-line JSON description of an error for standard error."""
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        payload["problems"] = [{"line": ln, "message": msg} for ln, msg in exc.errors]
    return json.dumps(payload, sort_keys=True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(error_line(exc), file=sys.stderr)
        return 2
    except (BDError, ValueError, OSError, KeyError) as exc:
        print(error_line(exc), file=sys.stderr)
        return 1
    return 0
