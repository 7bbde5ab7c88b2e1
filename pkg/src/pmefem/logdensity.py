"""Semi-implicit log-density scheme with per-step Newton on a convex system.

The unknown is u = log(density) at mesh vertices.  Vertices where the
density vanishes are tracked with an explicit active mask instead of storing
-inf; their density contribution is exactly zero.  Each time step solves

    M (exp(u^n) - exp(u^{n-1})) + dt * A^{n-1} u^n = 0

on the active set, where M is the lumped mass and A^{n-1} the nonlinear
stiffness assembled from the previous iterate.  Degrees of freedom are
(de)activated inside every Newton iteration by a diagonal cutoff test, which
is how the free boundary advances through previously empty vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (
    SolverError,
    lumped_mass,
    spd_solve,
    stiffness_edge_based,
    stiffness_vertex_quadrature,
)
from .mesh import EdgeGeometry, Mesh, compute_edge_geometry

#: log value stored at inactive vertices (also the default export floor)
LOG_FLOOR = -50.0

VARIANTS = ("vertex", "edge")


@dataclass
class NewtonParams:
    tol: float = 1e-11          # residual inf-norm, in lumped-mass units
    max_iter: int = 50
    max_halvings: int = 50      # line-search budget


@dataclass(frozen=True)
class LogDensityState:
    """Nodal log-density with its active mask; density is exp(u) where
    active and exactly 0 elsewhere."""

    mesh: Mesh
    geom: EdgeGeometry
    m: float
    u: np.ndarray
    active: np.ndarray
    time: float = 0.0
    cutoff: float = 1e-14
    lumped: np.ndarray = field(default=None, repr=False)

    def density(self) -> np.ndarray:
        return np.where(self.active, np.exp(self.u), 0.0)

    def total_mass(self) -> float:
        return float(self.lumped @ self.density())


def init_log_state(mesh: Mesh, rho0, m, geom: EdgeGeometry | None = None,
                   cutoff: float = 1e-14) -> LogDensityState:
    """Interpolate pointwise initial density at the vertices.  Vertices with
    exactly zero density start inactive; any positive value, however small,
    stays active (no premature cutoff at initialization)."""
    rho = np.asarray(rho0(mesh.vertices), dtype=float)
    if rho.shape != (mesh.n_vertices,):
        raise ValueError("initial density must return one value per vertex")
    if np.any(rho < 0):
        raise ValueError("initial density must be nonnegative")
    active = rho > 0
    u = np.full(mesh.n_vertices, LOG_FLOOR)
    u[active] = np.log(rho[active])
    if geom is None:
        geom = compute_edge_geometry(mesh)
    return LogDensityState(
        mesh=mesh, geom=geom, m=float(m), u=u, active=active,
        cutoff=float(cutoff), lumped=lumped_mass(mesh),
    )


class StepSystem:
    """Frozen data of one implicit step: lumped mass, the stiffness assembled
    from the previous solution, and the previous density."""

    def __init__(self, state: LogDensityState, dt: float, variant: str = "vertex"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown stiffness variant {variant!r}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.state = state
        self.dt = float(dt)
        self.variant = variant
        self.M = state.lumped
        if variant == "edge":
            self.A = stiffness_edge_based(state.mesh, state.geom, state.u, state.m, state.active)
        else:
            self.A = stiffness_vertex_quadrature(state.mesh, state.u, state.m, state.active)
        self.exp_prev = state.density()
        self.b = self.M * self.exp_prev
        self.diag = self.dt * self.A.diagonal()
        self.cutoff = state.cutoff

    def activation_mask(self, u, active):
        """Per-iteration cutoff test on the Newton system diagonal."""
        dens = np.where(active, np.exp(u), 0.0)
        return (self.M * dens + self.diag) > self.cutoff

    def residual(self, u, active):
        """Nonlinear residual restricted to the active set (u must carry
        values on every active vertex)."""
        dens = np.where(active, np.exp(u), 0.0)
        uz = np.where(active, u, 0.0)
        r = self.M * (dens - self.exp_prev) + self.dt * (self.A @ uz)
        return r[active]

    def functional(self, u, active):
        """Convex step functional whose stationary point is the step solution."""
        dens = np.where(active, np.exp(u), 0.0)
        uz = np.where(active, u, 0.0)
        return float(self.M @ dens - uz @ self.b + 0.5 * self.dt * self.A.quad_form(uz))


def newton_update(system: StepSystem, u, active):
    """One Newton iteration with activation bookkeeping and a backtracking
    line search on the step functional.  Returns (u_next, active_next)."""
    u = np.asarray(u, dtype=float)
    active = np.asarray(active, dtype=bool)
    act = system.activation_mask(u, active)
    if not act.any():
        raise SolverError("all degrees of freedom inactive")
    fresh = act & ~active

    dens = np.where(active, np.exp(u), 0.0)
    shift = (system.M * dens)[act]
    rhs = (system.M * (dens * np.where(active, u, 0.0) - dens + system.exp_prev))[act]
    x = spd_solve(system.A.submatrix(act).scaled(system.dt), shift, rhs)

    u_full = np.full_like(u, LOG_FLOOR)
    u_full[act] = x
    if fresh.any():
        # freshly activated vertices have no previous value: the functional at
        # the incoming iterate is +inf there, so the full step always decreases
        return u_full, act

    f0 = system.functional(u, act)
    step = u_full[act] - u[act]
    lam = 1.0
    for _ in range(50):
        cand = np.full_like(u, LOG_FLOOR)
        cand[act] = u[act] + lam * step
        if system.functional(cand, act) <= f0 + 1e-12 * max(1.0, abs(f0)):
            return cand, act
        lam *= 0.5
    raise SolverError("line search exhausted 50 halvings")


def step_logdensity(state: LogDensityState, dt, variant: str = "vertex",
                    newton: NewtonParams | None = None) -> LogDensityState:
    """Advance one implicit step.  The lumped mass of the density is
    conserved up to the Newton tolerance; uniform states are returned
    unchanged."""
    newton = newton or NewtonParams()
    system = StepSystem(state, dt, variant)
    u, active = state.u.copy(), state.active.copy()
    last = np.inf
    polish = False
    for k in range(newton.max_iter + 2):
        act_now = system.activation_mask(u, active)
        if np.array_equal(act_now, active):
            if polish:
                return replace(state, u=u, active=active, time=state.time + float(dt))
            r = system.residual(u, active)
            last = float(np.max(np.abs(r))) if r.size else 0.0
            if last <= newton.tol:
                if k == 0:
                    # already a solution (e.g. a uniform state): leave untouched
                    return replace(state, u=u, active=active, time=state.time + float(dt))
                # one more iteration drives the residual far below the
                # tolerance, keeping the per-run mass drift negligible
                polish = True
        if k > newton.max_iter:
            break
        u, active = newton_update(system, u, active)
    raise SolverError(f"Newton did not converge: residual {last:.3e} after {newton.max_iter} iterations")


def entropy_energy(state: LogDensityState) -> float:
    """Lumped integral of density*(log(density)-1); inactive vertices
    contribute the x*log(x) -> 0 limit."""
    act = state.active
    return float(np.sum(state.lumped[act] * np.exp(state.u[act]) * (state.u[act] - 1.0)))


def bounds(state: LogDensityState):
    """(min, max) of the density over active vertices."""
    if not state.active.any():
        raise ValueError("bounds undefined: no active degrees of freedom")
    dens = np.exp(state.u[state.active])
    return float(dens.min()), float(dens.max())
