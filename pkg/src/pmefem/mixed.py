"""Mixed scheme: piecewise-constant density/potential with face-normal fluxes.

Static condensation with a lumped velocity mass turns the velocity equation
into a per-face two-point formula, so each time step reduces to a nonlinear
system for the cell densities alone:

    |K| (rho_K^n - rho_K^{n-1}) + dt * sum_E rhohat_E u_E^n (n_E . n_K) |E| = 0

with u_E = |E| (mu_K1 - mu_K2) / omega_E, mu = m/(m-1) rho^{m-1}, and
rhohat the previous density upwinded by the sign of u_E.  The sign
dependence makes the system semismooth: Newton steps are taken with frozen
upwind directions, and convergence requires both a small residual and a
stable sign pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .assembly import SolverError, velocity_lumped_weights
from .mesh import EdgeGeometry, Mesh, MeshError, compute_edge_geometry


@dataclass
class NewtonParams:
    tol: float = 1e-11
    max_iter: int = 50      # plain iterations before damping kicks in
    max_damped: int = 50    # additional 0.5-damped iterations


@dataclass(frozen=True)
class MixedState:
    """Cell densities/potentials and signed normal face fluxes.

    rho >= 0 per cell (to solver slack), mu = m/(m-1) rho^{m-1}, u is the
    normal velocity component along each face normal; boundary faces carry
    u = 0 (no-flux condition built into the velocity space).
    """

    mesh: Mesh
    geom: EdgeGeometry
    m: float
    rho: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    time: float = 0.0

    def total_mass(self) -> float:
        return float(self.mesh.cell_volumes @ self.rho)


def potential_from_density(rho, m):
    """mu = m/(m-1) * rho^(m-1); negative solver slack is clamped to zero
    before the power."""
    return m / (m - 1.0) * np.maximum(np.asarray(rho, dtype=float), 0.0) ** (m - 1.0)


def condense_velocity(mu, geom: EdgeGeometry, min_weight: float = 1e-12) -> np.ndarray:
    """Per-face normal velocity from the cell potentials:
    u_E = |E| (mu_first - mu_second) / w_E on interior faces, 0 on the
    boundary, with w_E the lumped velocity mass weight.  Rejects meshes whose
    interior face weights are not strictly positive (non-Delaunay
    triangulations)."""
    mesh = geom.mesh
    mu = np.asarray(mu, dtype=float)
    interior = mesh.interior_faces
    if np.any(geom.omega[interior] <= min_weight):
        raise MeshError("interior face weight below threshold; mesh is not strictly Delaunay")
    w = velocity_lumped_weights(mesh, geom)
    u = np.zeros(mesh.n_faces)
    k1 = mesh.face_cells[interior, 0]
    k2 = mesh.face_cells[interior, 1]
    u[interior] = mesh.face_measures[interior] * (mu[k1] - mu[k2]) / w[interior]
    return u


def upwind_value(rho_prev, u_face, face_index, mesh: Mesh):
    """Density seen by a face: from the first incident cell when the flux
    runs along the face normal (u >= 0), from the second otherwise."""
    k1, k2 = mesh.face_cells[face_index]
    if u_face >= 0 or k2 < 0:
        return rho_prev[k1]
    return rho_prev[k2]


def init_mixed_state(mesh: Mesh, rho0, m, geom: EdgeGeometry | None = None) -> MixedState:
    """Sample the pointwise initial density at cell barycenters; potential
    and flux follow from the closure and condensation."""
    if geom is None:
        geom = compute_edge_geometry(mesh)
    rho = np.asarray(rho0(mesh.cell_barycenters()), dtype=float)
    if rho.shape != (mesh.n_cells,):
        raise ValueError("initial density must return one value per cell")
    if np.any(rho < 0):
        raise ValueError("initial density must be nonnegative")
    mu = potential_from_density(rho, m)
    u = condense_velocity(mu, geom)
    return MixedState(mesh=mesh, geom=geom, m=float(m), rho=rho, mu=mu, u=u)


class _FaceData:
    """Interior-face index arrays used by the per-step residual/Jacobian."""

    def __init__(self, mesh: Mesh, geom: EdgeGeometry):
        interior = mesh.interior_faces
        if np.any(geom.omega[interior] <= 1e-12):
            raise MeshError("interior face weight below threshold; mesh is not strictly Delaunay")
        self.k1 = mesh.face_cells[interior, 0]
        self.k2 = mesh.face_cells[interior, 1]
        self.measure = mesh.face_measures[interior]
        self.weight = velocity_lumped_weights(mesh, geom)[interior]
        self.interior = interior


def _dmu(rho, m):
    """d(mu)/d(rho) = m * rho^{m-2}, clamped for the degenerate origin."""
    rho = np.maximum(np.asarray(rho, dtype=float), 0.0)
    if m >= 2.0:
        return m * rho ** (m - 2.0)
    return m * np.maximum(rho, 1e-12) ** (m - 2.0)


def step_mixed(state: MixedState, dt, newton: NewtonParams | None = None) -> MixedState:
    """Advance one implicit step.  Cell mass balances hold to the Newton
    tolerance and the total mass is conserved exactly up to it; uniform
    states are returned unchanged."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    newton = newton or NewtonParams()
    mesh, geom, m = state.mesh, state.geom, state.m
    fd = _FaceData(mesh, geom)
    vol = mesh.cell_volumes
    rho_prev = state.rho
    dt = float(dt)

    def flux_parts(rho):
        mu = potential_from_density(rho, m)
        u_int = fd.measure * (mu[fd.k1] - mu[fd.k2]) / fd.weight
        signs = u_int >= 0
        rhat = np.where(signs, rho_prev[fd.k1], rho_prev[fd.k2])
        return u_int, signs, rhat

    def residual(rho, u_int, rhat):
        r = vol * (rho - rho_prev)
        f = rhat * u_int * fd.measure
        np.add.at(r, fd.k1, dt * f)
        np.subtract.at(r, fd.k2, dt * f)
        return r

    rho = rho_prev.copy()
    signs_last = None
    total = newton.max_iter + newton.max_damped
    for it in range(total + 1):
        u_int, signs, rhat = flux_parts(rho)
        r = residual(rho, u_int, rhat)
        res = float(np.max(np.abs(r)))
        if res <= newton.tol and (signs_last is None or np.array_equal(signs, signs_last)):
            if it == 0:
                return replace(state, time=state.time + dt)
            mu = potential_from_density(rho, m)
            u = np.zeros(mesh.n_faces)
            u[fd.interior] = u_int
            return replace(state, rho=rho, mu=mu, u=u, time=state.time + dt)
        if it == total:
            raise SolverError(f"mixed Newton did not converge: residual {res:.3e}")

        # Newton step with frozen upwind directions
        g = dt * rhat * fd.measure**2 / fd.weight
        d1 = g * _dmu(rho[fd.k1], m)
        d2 = g * _dmu(rho[fd.k2], m)
        rows = np.concatenate([fd.k1, fd.k1, fd.k2, fd.k2])
        cols = np.concatenate([fd.k1, fd.k2, fd.k1, fd.k2])
        vals = np.concatenate([d1, -d2, -d1, d2])
        jac = sparse.coo_matrix((vals, (rows, cols)), shape=(mesh.n_cells, mesh.n_cells))
        jac = (jac + sparse.diags(vol)).tocsc()
        delta = spsolve(jac, -r)
        if not np.all(np.isfinite(delta)):
            raise SolverError("mixed Newton produced a non-finite update")
        if it >= newton.max_iter:
            delta = 0.5 * delta  # damped fallback for oscillating sign patterns
        rho = rho + delta
        signs_last = signs
    raise SolverError("unreachable")


def cfl_max_dt(state: MixedState):
    """Largest positivity-preserving step per cell, 1 / sum over outflow
    faces of |u . n_K| |E| / |K|, and its global minimum.  Cells without
    outflow report +inf."""
    mesh = state.mesh
    outflow = np.zeros(mesh.n_cells)
    interior = mesh.interior_faces
    k1 = mesh.face_cells[interior, 0]
    k2 = mesh.face_cells[interior, 1]
    u = state.u[interior]
    meas = mesh.face_measures[interior]
    np.add.at(outflow, k1, np.maximum(u, 0.0) * meas)
    np.add.at(outflow, k2, np.maximum(-u, 0.0) * meas)
    per_cell = np.full(mesh.n_cells, np.inf)
    with np.errstate(over="ignore"):
        np.divide(mesh.cell_volumes, outflow, out=per_cell, where=outflow > 0)
    return per_cell, float(per_cell.min())


def physical_energy(state: MixedState, m: float | None = None) -> float:
    """Integral of rho^m/(m-1) over the mesh."""
    m = state.m if m is None else m
    if m <= 1:
        raise ValueError("physical energy requires m > 1")
    return float(state.mesh.cell_volumes @ (np.maximum(state.rho, 0.0) ** m)) / (m - 1.0)
