"""Experiment drivers: time loops, region-restricted L2 errors, convergence
studies, and CSV/VTK output."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import logdensity as ld
from . import mixed as mx
from .mesh import (
    INTERVAL,
    QUAD,
    TRIANGLE,
    Mesh,
    build_structured_mesh,
    compute_edge_geometry,
)
from .problems import PROBLEM_NAMES, ProblemSpec, get_problem

SCHEMES = ("logdensity", "mixed")


class ConfigError(ValueError):
    """Bad run configuration."""


@dataclass
class RunConfig:
    scheme: str
    problem: str
    m: float
    dt: float
    T: float
    mesh_kind: str = ""
    counts: tuple = ()
    domain: tuple = ()
    variant: str = "vertex"          # log-density stiffness variant
    newton_tol: float = 1e-11
    newton_maxiter: int = 50
    cutoff: float = 1e-14
    cfl_autohalve: bool = False      # mixed only
    s0: Optional[float] = None
    theta: float = 0.0
    levels: int = 4
    cadence: int = 1
    quad_degree: int = 4
    u_floor: float = ld.LOG_FLOOR
    output: str = ""


@dataclass
class TimeSeriesRecord:
    step: int
    time: float
    mass: float
    energy: float
    min_density: float
    max_density: float
    tracked_density: Optional[float] = None
    cfl_bound: Optional[float] = None


@dataclass
class ConvergenceRow:
    level: int
    N: str
    dt: float
    error_inner: float
    order_inner: Optional[float]
    error_full: float
    order_full: Optional[float]


# ---------------------------------------------------------------------------
# configuration parsing

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_counts(text):
    parts = text.lower().replace("x", " ").split()
    return tuple(int(p) for p in parts)


def _parse_domain(text):
    vals = [float(v) for v in text.split()]
    if len(vals) == 2:
        return (vals[0], vals[1])
    if len(vals) == 4:
        return ((vals[0], vals[1]), (vals[2], vals[3]))
    raise ConfigError("domain needs 2 (1D) or 4 (2D) numbers")


_KEY_PARSERS = {
    "scheme": str,
    "problem": str,
    "m": float,
    "dt": float,
    "T": float,
    "mesh": str,
    "n": _parse_counts,
    "domain": _parse_domain,
    "variant": str,
    "newton_tol": float,
    "newton_maxiter": int,
    "cutoff": float,
    "cfl_autohalve": lambda s: _BOOL[s.lower()],
    "s0": float,
    "theta": float,
    "levels": int,
    "cadence": int,
    "quad_degree": int,
    "u_floor": float,
    "output": str,
}

_REQUIRED = ("scheme", "problem", "m", "dt", "T")


def parse_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Read a line-oriented `key = value` file (``#`` comments) and return a
    fully validated configuration with defaults applied.  ``overrides`` maps
    key strings to value strings and wins over file entries."""
    raw: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
    raw.update(overrides or {})
    return config_from_strings(raw)


def config_from_strings(raw: dict) -> RunConfig:
    values = {}
    for key, text in raw.items():
        parser = _KEY_PARSERS.get(key)
        if parser is None:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = parser(str(text))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
    missing = [k for k in _REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")

    cfg = RunConfig(
        scheme=values.pop("scheme"),
        problem=values.pop("problem"),
        m=values.pop("m"),
        dt=values.pop("dt"),
        T=values.pop("T"),
    )
    rename = {"mesh": "mesh_kind", "n": "counts"}
    explicit_variant = "variant" in values
    explicit_autohalve = "cfl_autohalve" in values
    for key, val in values.items():
        setattr(cfg, rename.get(key, key), val)
    return validate_config(cfg, explicit_variant, explicit_autohalve)


def validate_config(cfg: RunConfig, explicit_variant=False, explicit_autohalve=False) -> RunConfig:
    if cfg.scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {cfg.scheme!r}; choose from {SCHEMES}")
    if cfg.problem not in PROBLEM_NAMES:
        raise ConfigError(f"unknown problem {cfg.problem!r}; choose from {PROBLEM_NAMES}")
    if cfg.m <= 1:
        raise ConfigError("m must be > 1 (m = 1 is the heat equation, not supported)")
    if cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.T < cfg.dt:
        raise ConfigError("final time must be at least dt")
    if cfg.variant not in ld.VARIANTS:
        raise ConfigError(f"unknown stiffness variant {cfg.variant!r}")
    if cfg.scheme == "mixed" and explicit_variant:
        raise ConfigError("'variant' applies to the log-density scheme only")
    if cfg.scheme == "logdensity" and explicit_autohalve:
        raise ConfigError("'cfl_autohalve' applies to the mixed scheme only")
    if cfg.cadence < 1 or cfg.levels < 1:
        raise ConfigError("cadence and levels must be >= 1")

    problem = get_problem(cfg.problem, cfg.m, cfg.s0, cfg.theta)
    if not cfg.mesh_kind:
        cfg.mesh_kind = problem.default_mesh
    if not cfg.counts:
        cfg.counts = problem.default_counts
    if not cfg.domain:
        cfg.domain = problem.domain
    kind_dim = 1 if cfg.mesh_kind == INTERVAL else 2
    if kind_dim != problem.dim:
        raise ConfigError(f"mesh kind {cfg.mesh_kind!r} has dimension {kind_dim}, "
                          f"problem {cfg.problem!r} needs {problem.dim}")
    if len(cfg.counts) != problem.dim:
        raise ConfigError(f"need {problem.dim} cell counts, got {cfg.counts}")
    return cfg


# ---------------------------------------------------------------------------
# region-restricted L2 errors

_TRI_A1, _TRI_W1 = 0.445948490915965, 0.223381589678011
_TRI_A2, _TRI_W2 = 0.091576213509771, 0.109951743655322


def _cell_quadrature(mesh: Mesh, degree: int):
    """Quadrature points (ncells, q, dim) and weights (ncells, q) integrating
    polynomials of the requested degree on every cell."""
    pts = mesh.vertices[mesh.cells]
    if mesh.cell_kind == TRIANGLE:
        if degree > 4:
            raise ValueError("triangle quadrature supports degree <= 4")
        bary = []
        for a, w in ((_TRI_A1, _TRI_W1), (_TRI_A2, _TRI_W2)):
            b = 1.0 - 2.0 * a
            bary += [((a, a, b), w), ((a, b, a), w), ((b, a, a), w)]
        lam = np.array([b for b, _ in bary])
        w = np.array([wt for _, wt in bary])
        qp = np.einsum("qk,ckd->cqd", lam, pts)
        qw = np.multiply.outer(mesh.cell_volumes, w)
        return qp, qw
    npts = max(2, (degree + 2) // 2)
    gx, gw = np.polynomial.legendre.leggauss(npts)
    if mesh.cell_kind == INTERVAL:
        mid = 0.5 * (pts[:, 0, 0] + pts[:, 1, 0])
        half = 0.5 * (pts[:, 1, 0] - pts[:, 0, 0])
        qp = (mid[:, None] + np.multiply.outer(half, gx))[:, :, None]
        qw = np.multiply.outer(half, gw)
        return qp, qw
    # tensor rule on axis-aligned quads
    X, Y = np.meshgrid(gx, gx, indexing="ij")
    WX, WY = np.meshgrid(gw, gw, indexing="ij")
    xr, yr, wr = X.ravel(), Y.ravel(), (WX * WY).ravel()
    midx = 0.5 * (pts[:, 0, 0] + pts[:, 1, 0])
    halfx = 0.5 * (pts[:, 1, 0] - pts[:, 0, 0])
    midy = 0.5 * (pts[:, 0, 1] + pts[:, 3, 1])
    halfy = 0.5 * (pts[:, 3, 1] - pts[:, 0, 1])
    qx = midx[:, None] + np.multiply.outer(halfx, xr)
    qy = midy[:, None] + np.multiply.outer(halfy, yr)
    qp = np.stack([qx, qy], axis=-1)
    qw = np.multiply.outer(halfx * halfy, wr)
    return qp, qw


def _region_mask(mesh: Mesh, region):
    """Cells whose barycenter lies in the closed box."""
    box = np.asarray(region, dtype=float).reshape(-1, 2)
    if box.shape[0] != mesh.dim:
        raise ValueError("region dimension does not match the mesh")
    if np.any(box[:, 1] < box[:, 0]):
        raise ValueError("empty region")
    bary = mesh.cell_barycenters()
    mask = np.ones(mesh.n_cells, dtype=bool)
    for d in range(mesh.dim):
        mask &= (bary[:, d] >= box[d, 0]) & (bary[:, d] <= box[d, 1])
    return mask


def _density_at_quadrature(state, qp):
    """Discrete density at quadrature points, (ncells, q)."""
    mesh = state.mesh
    if isinstance(state, mx.MixedState):
        return np.broadcast_to(state.rho[:, None], qp.shape[:2]).copy()
    # log-density: interpolate u linearly, exponentiate; cells touching an
    # inactive vertex are zero in the exp(-inf) limit
    cells = mesh.cells
    pts = mesh.vertices[cells]
    full = state.active[cells].all(axis=1)
    dens = np.zeros(qp.shape[:2])
    if not full.any():
        return dens
    uc = state.u[cells[full]]
    if mesh.cell_kind == TRIANGLE:
        p0 = pts[full, 0]
        T = np.stack([pts[full, 1] - p0, pts[full, 2] - p0], axis=-1)
        Ti = np.linalg.inv(T)
        loc = np.einsum("cde,cqe->cqd", Ti, qp[full] - p0[:, None, :])
        lam = np.concatenate([1.0 - loc.sum(axis=-1, keepdims=True), loc], axis=-1)
        uq = np.einsum("cqk,ck->cq", lam, uc)
    elif mesh.cell_kind == INTERVAL:
        x0 = pts[full, 0, 0][:, None]
        x1 = pts[full, 1, 0][:, None]
        s = (qp[full, :, 0] - x0) / (x1 - x0)
        uq = uc[:, [0]] * (1 - s) + uc[:, [1]] * s
    else:  # bilinear on axis-aligned quads
        x0 = pts[full, 0, 0][:, None]
        x1 = pts[full, 1, 0][:, None]
        y0 = pts[full, 0, 1][:, None]
        y1 = pts[full, 3, 1][:, None]
        s = (qp[full, :, 0] - x0) / (x1 - x0)
        t = (qp[full, :, 1] - y0) / (y1 - y0)
        uq = (uc[:, [0]] * (1 - s) * (1 - t) + uc[:, [1]] * s * (1 - t)
              + uc[:, [2]] * s * t + uc[:, [3]] * (1 - s) * t)
    dens[full] = np.exp(uq)
    return dens


def l2_error(state, exact, region, degree: int = 4) -> float:
    """L2 distance between the discrete density and ``exact`` over the cells
    whose barycenter lies in the closed box ``region``."""
    mesh = state.mesh
    mask = _region_mask(mesh, region)
    if not mask.any():
        raise ValueError("empty region")
    qp, qw = _cell_quadrature(mesh, degree)
    vals = _density_at_quadrature(state, qp)
    flat = qp[mask].reshape(-1, mesh.dim)
    ex = np.asarray(exact(flat), dtype=float).reshape(vals[mask].shape)
    return float(np.sqrt(np.sum(qw[mask] * (vals[mask] - ex) ** 2)))


def convergence_order(errors, ratio: float = 2.0):
    """Per-level orders log(e_{l-1}/e_l)/log(ratio); None for the first level
    and for levels following an exactly zero error."""
    errors = list(errors)
    if len(errors) < 1:
        raise ValueError("need at least one error")
    orders = [None]
    for prev, cur in zip(errors, errors[1:]):
        if prev <= 0 or cur <= 0:
            orders.append(None)
        else:
            orders.append(math.log(prev / cur) / math.log(ratio))
    return orders


# ---------------------------------------------------------------------------
# simulation driver

def _build_mesh(cfg: RunConfig) -> Mesh:
    return build_structured_mesh(cfg.mesh_kind, cfg.domain, cfg.counts)


def tracked_index(problem: ProblemSpec, mesh: Mesh, scheme: str):
    """Vertex (log-density) or cell (mixed) used to monitor the interface in
    waiting-time runs; ties between two cells break toward the outside."""
    if problem.waiting is None or problem.front is None:
        return None
    x0 = problem.front(0.0)
    if scheme == "logdensity":
        return int(np.argmin(np.abs(mesh.vertices[:, 0] - x0)))
    bary = mesh.cell_barycenters()[:, 0]
    dist = np.abs(bary - x0)
    best = dist.min()
    candidates = np.flatnonzero(dist <= best * (1 + 1e-12) + 1e-300)
    return int(candidates[np.argmax(bary[candidates])])


def _init_state(cfg: RunConfig, problem: ProblemSpec, mesh: Mesh):
    geom = compute_edge_geometry(mesh)
    if cfg.scheme == "logdensity":
        return ld.init_log_state(mesh, problem.rho0, cfg.m, geom=geom, cutoff=cfg.cutoff)
    return mx.init_mixed_state(mesh, problem.rho0, cfg.m, geom=geom)


def _record(cfg, state, step, tracked):
    if cfg.scheme == "logdensity":
        act = state.active
        dens = np.exp(state.u[act]) if act.any() else np.zeros(1)
        return TimeSeriesRecord(
            step=step,
            time=state.time,
            mass=state.total_mass(),
            energy=ld.entropy_energy(state),
            min_density=float(dens.min()) if act.any() else 0.0,
            max_density=float(dens.max()) if act.any() else 0.0,
            tracked_density=None if tracked is None else float(state.density()[tracked]),
        )
    per_cell, bound = mx.cfl_max_dt(state)
    return TimeSeriesRecord(
        step=step,
        time=state.time,
        mass=state.total_mass(),
        energy=mx.physical_energy(state),
        min_density=float(state.rho.min()),
        max_density=float(state.rho.max()),
        tracked_density=None if tracked is None else float(state.rho[tracked]),
        cfl_bound=bound,
    )


def run_simulation(cfg: RunConfig):
    """March the configured scheme to the final time with uniform steps (one
    shortened final step hits T exactly).  Returns the final state and the
    per-step records."""
    cfg = validate_config(cfg)
    problem = get_problem(cfg.problem, cfg.m, cfg.s0, cfg.theta)
    mesh = _build_mesh(cfg)
    state = _init_state(cfg, problem, mesh)
    tracked = tracked_index(problem, mesh, cfg.scheme)

    ld_newton = ld.NewtonParams(tol=cfg.newton_tol, max_iter=cfg.newton_maxiter)
    mx_newton = mx.NewtonParams(tol=cfg.newton_tol, max_iter=cfg.newton_maxiter)

    records = []
    eps = 1e-12 * max(cfg.T, 1.0)
    step = 0
    while cfg.T - state.time > eps:
        dt = min(cfg.dt, cfg.T - state.time)
        try:
            if cfg.scheme == "logdensity":
                state = ld.step_logdensity(state, dt, cfg.variant, ld_newton)
            else:
                state = _mixed_step_with_cfl(state, dt, mx_newton, cfg.cfl_autohalve)
        except Exception as exc:
            raise RuntimeError(f"step {step + 1} (t={state.time + dt:g}) failed: {exc}") from exc
        step += 1
        if step % cfg.cadence == 0 or cfg.T - state.time <= eps:
            records.append(_record(cfg, state, step, tracked))
    return state, records


def _mixed_step_with_cfl(state, dt, newton, autohalve):
    """Optionally recompute a step at dt/2 while the post hoc CFL bound from
    the new flux is violated (at most 20 halvings)."""
    new = mx.step_mixed(state, dt, newton)
    if not autohalve:
        return new
    for _ in range(20):
        _, bound = mx.cfl_max_dt(new)
        if dt <= bound:
            return new
        dt *= 0.5
        new = mx.step_mixed(state, dt, newton)
    return new


# ---------------------------------------------------------------------------
# convergence studies

def _level_config(cfg: RunConfig, level: int) -> RunConfig:
    counts = tuple(c * 2**level for c in cfg.counts)
    refine = 4.0 if cfg.scheme == "logdensity" else 2.0
    return replace(cfg, counts=counts, dt=cfg.dt / refine**level, output="")


def run_convergence(cfg: RunConfig, levels: Optional[int] = None):
    """Refinement study: counts double per level; dt shrinks by 4 per level
    for the log-density scheme and by 2 for the mixed scheme.  Errors are
    measured at the final time in the problem's inner region and over the
    full domain."""
    cfg = validate_config(cfg)
    levels = cfg.levels if levels is None else levels
    if levels < 1:
        raise ConfigError("levels must be >= 1")
    problem = get_problem(cfg.problem, cfg.m, cfg.s0, cfg.theta)
    if problem.exact is None:
        raise ConfigError(f"problem {cfg.problem!r} has no exact solution for error studies")
    inner = problem.inner_region or problem.domain

    def one_level(level):
        lcfg = _level_config(cfg, level)
        state, _ = run_simulation(lcfg)
        exact = lambda pts: problem.exact(pts, cfg.T)
        return (
            l2_error(state, exact, inner, cfg.quad_degree),
            l2_error(state, exact, problem.domain, cfg.quad_degree),
            lcfg,
        )

    with ThreadPoolExecutor(max_workers=min(4, levels)) as pool:
        results = list(pool.map(one_level, range(levels)))

    e_inner = [r[0] for r in results]
    e_full = [r[1] for r in results]
    o_inner = convergence_order(e_inner)
    o_full = convergence_order(e_full)
    rows = []
    for lvl, (ei, ef, lcfg) in enumerate(zip(e_inner, e_full, (r[2] for r in results))):
        label = "x".join(str(c) for c in lcfg.counts) if len(lcfg.counts) > 1 else str(lcfg.counts[0])
        rows.append(ConvergenceRow(
            level=lvl, N=label, dt=lcfg.dt,
            error_inner=ei, order_inner=o_inner[lvl],
            error_full=ef, order_full=o_full[lvl],
        ))
    return rows


# ---------------------------------------------------------------------------
# output writers

def _fmt(x):
    if x is None:
        return ""
    return "%.17g" % x


TIMESERIES_HEADER = "step,time,mass,energy,min_density,max_density,tracked_density,cfl_bound"
CONVERGENCE_HEADER = "level,N,dt,error_inner,order_inner,error_full,order_full"


def write_timeseries_csv(records, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(TIMESERIES_HEADER + "\n")
        for r in records:
            f.write(",".join([
                str(r.step), _fmt(r.time), _fmt(r.mass), _fmt(r.energy),
                _fmt(r.min_density), _fmt(r.max_density),
                _fmt(r.tracked_density), _fmt(r.cfl_bound),
            ]) + "\n")


def write_convergence_csv(rows, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CONVERGENCE_HEADER + "\n")
        for r in rows:
            f.write(",".join([
                str(r.level), r.N, _fmt(r.dt),
                _fmt(r.error_inner), _fmt(r.order_inner),
                _fmt(r.error_full), _fmt(r.order_full),
            ]) + "\n")


_VTK_CELL_TYPES = {INTERVAL: 3, TRIANGLE: 5, QUAD: 9}


def write_vtk(state, path, title="pmefem output", u_floor=ld.LOG_FLOOR):
    """Legacy ASCII VTK unstructured grid.  Log-density states write nodal
    density (and floored log-density); mixed states write cell density and
    potential."""
    mesh = state.mesh
    with open(path, "w", encoding="utf-8") as f:
        f.write("# vtk DataFile Version 2.0\n")
        f.write(title + "\n")
        f.write("ASCII\n")
        f.write("DATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {mesh.n_vertices} double\n")
        for v in mesh.vertices:
            coords = list(v) + [0.0] * (3 - mesh.dim)
            f.write(" ".join("%.17g" % c for c in coords) + "\n")
        nloc = mesh.cells.shape[1]
        f.write(f"CELLS {mesh.n_cells} {mesh.n_cells * (nloc + 1)}\n")
        for c in mesh.cells:
            f.write(str(nloc) + " " + " ".join(str(int(i)) for i in c) + "\n")
        f.write(f"CELL_TYPES {mesh.n_cells}\n")
        ctype = _VTK_CELL_TYPES[mesh.cell_kind]
        for _ in range(mesh.n_cells):
            f.write(f"{ctype}\n")
        if isinstance(state, mx.MixedState):
            f.write(f"CELL_DATA {mesh.n_cells}\n")
            _write_scalars(f, "density", state.rho)
            _write_scalars(f, "potential", state.mu)
        else:
            f.write(f"POINT_DATA {mesh.n_vertices}\n")
            _write_scalars(f, "density", state.density())
            _write_scalars(f, "log_density", np.where(state.active, np.maximum(state.u, u_floor), u_floor))


def _write_scalars(f, name, values):
    f.write(f"SCALARS {name} double\n")
    f.write("LOOKUP_TABLE default\n")
    for v in values:
        f.write("%.17g\n" % v)
