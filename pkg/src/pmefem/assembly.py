"""Quadrature and matrix assembly shared by both schemes.

Provides the lumped P1 mass vector, the two nonlinear-coefficient stiffness
variants (edge-based with harmonic coefficient averages, and vertex
quadrature), the lumped face weights for the mixed velocity mass, and a
direct sparse SPD solve.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .mesh import INTERVAL, QUAD, TRIANGLE, EdgeGeometry, Mesh


class SolverError(RuntimeError):
    """Linear or nonlinear solve failed."""


class SparseSymMatrix:
    """Symmetric sparse matrix with each unordered index pair stored once.

    Contributions are accumulated pair-keyed, so A[i, j] == A[j, i] holds
    exactly, not just to roundoff.
    """

    def __init__(self, n, upper):
        self.n = int(n)
        upper = upper.tocsr()
        upper.sum_duplicates()
        self._upper = upper
        self._full = None

    @classmethod
    def from_pairs(cls, n, rows, cols, values):
        """Build from entries given once per unordered pair (any index order)."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        i = np.minimum(rows, cols)
        j = np.maximum(rows, cols)
        upper = sparse.coo_matrix((np.asarray(values, dtype=float), (i, j)), shape=(n, n))
        return cls(n, upper)

    def tocsr(self):
        """Full symmetric CSR (upper triangle mirrored)."""
        if self._full is None:
            u = self._upper
            self._full = (u + u.T - sparse.diags(u.diagonal())).tocsr()
        return self._full

    def diagonal(self):
        return self._upper.diagonal()

    def __matmul__(self, x):
        return self.tocsr() @ x

    def quad_form(self, x):
        """x . A x"""
        return float(x @ (self.tocsr() @ x))

    def row_sums(self):
        return np.asarray(self.tocsr().sum(axis=1)).ravel()

    def scaled(self, factor):
        return SparseSymMatrix(self.n, self._upper * factor)

    def submatrix(self, index):
        """Principal submatrix for an index array or boolean mask."""
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        sub = self.tocsr()[index][:, index]
        return SparseSymMatrix(len(index), sparse.triu(sub))

    def toarray(self):
        return self.tocsr().toarray()

    @property
    def nnz(self):
        return self._upper.nnz


def lumped_mass(mesh: Mesh) -> np.ndarray:
    """Diagonal mass weights: |S_i|/(d+1) on simplices and intervals, the
    tensor trapezoidal weight sum(|K|/4) on quads.  Entries sum to |domain|."""
    w = np.zeros(mesh.n_vertices)
    nloc = mesh.cells.shape[1]
    share = mesh.dim + 1 if mesh.cell_kind != QUAD else 4
    np.add.at(w, mesh.cells.ravel(), np.repeat(mesh.cell_volumes / share, nloc))
    return w


def harmonic_edge_average(u_i, u_j, m, branch_eps=1e-10):
    """Harmonic average of the coefficient m*exp(m*u) along an edge on which
    u varies linearly between u_i and u_j.

    Evaluated in the cancellation-free form
        m * exp(m*(u_i+u_j)/2) * z / sinh(z),   z = m*(u_j-u_i)/2,
    which equals m^2 (u_j-u_i) / (exp(-m u_i) - exp(-m u_j)) exactly and
    falls back to the midpoint value m*exp(m*(u_i+u_j)/2) for |u_i-u_j|
    below branch_eps.
    """
    ui = np.asarray(u_i, dtype=float)
    uj = np.asarray(u_j, dtype=float)
    mid = np.exp(0.5 * m * (ui + uj)) * m
    z = 0.5 * m * (uj - ui)
    small = np.abs(uj - ui) <= branch_eps
    zsafe = np.where(small, 1.0, z)
    ratio = np.where(small, 1.0, zsafe / np.sinh(zsafe))
    out = mid * ratio
    return float(out) if out.ndim == 0 else out


def _edge_arrays(mesh: Mesh, geom: EdgeGeometry):
    """Vertex-pair edges with stiffness weights for the edge-based operator.

    In 2D these are the mesh faces weighted by aggregated cotangents; in 1D
    the vertex pairs are the cells themselves, weighted by 1/h.
    """
    if mesh.cell_kind == TRIANGLE:
        return mesh.faces[:, 0], mesh.faces[:, 1], geom.omega
    # interval mesh
    return mesh.cells[:, 0], mesh.cells[:, 1], 1.0 / mesh.cell_volumes


def stiffness_edge_based(mesh: Mesh, geom: EdgeGeometry, u_prev, m, active=None) -> SparseSymMatrix:
    """Edge-based diffusion operator sum_E omega_E * gamma_E * (e_i - e_j)(e_i - e_j)^T
    with gamma_E the harmonic coefficient average.  Edges with an inactive
    endpoint contribute nothing (their harmonic average vanishes)."""
    if mesh.cell_kind == QUAD:
        raise ValueError("edge-based stiffness is simplex-specific; quads unsupported")
    u_prev = np.asarray(u_prev, dtype=float)
    vi, vj, w = _edge_arrays(mesh, geom)
    if active is not None:
        keep = np.asarray(active, dtype=bool)
        live = keep[vi] & keep[vj]
        vi, vj, w = vi[live], vj[live], w[live]
    gamma = harmonic_edge_average(u_prev[vi], u_prev[vj], m)
    vals = w * gamma
    rows = np.concatenate([vi, vj, vi])
    cols = np.concatenate([vi, vj, vj])
    data = np.concatenate([vals, vals, -vals])
    return SparseSymMatrix.from_pairs(mesh.n_vertices, rows, cols, data)


def element_stiffness(mesh: Mesh) -> np.ndarray:
    """Exact constant-coefficient element stiffness blocks, one per cell."""
    pts = mesh.vertices[mesh.cells]
    if mesh.cell_kind == INTERVAL:
        h = mesh.cell_volumes
        blk = np.empty((mesh.n_cells, 2, 2))
        blk[:, 0, 0] = blk[:, 1, 1] = 1.0 / h
        blk[:, 0, 1] = blk[:, 1, 0] = -1.0 / h
        return blk
    if mesh.cell_kind == TRIANGLE:
        # grad(phi_i) = perp(edge opposite i)/(2|K|); the Gram matrix of the
        # opposite edges divided by 4|K| is the P1 stiffness
        e = np.stack(
            [pts[:, 2] - pts[:, 1], pts[:, 0] - pts[:, 2], pts[:, 1] - pts[:, 0]],
            axis=1,
        )
        return np.einsum("cid,cjd->cij", e, e) / (4.0 * mesh.cell_volumes)[:, None, None]
    # axis-aligned Q1 quad: 2x2 Gauss integrates the bilinear gradients exactly
    hx = pts[:, 1, 0] - pts[:, 0, 0]
    hy = pts[:, 3, 1] - pts[:, 0, 1]
    g = 1.0 / np.sqrt(3.0)
    blk = np.zeros((mesh.n_cells, 4, 4))
    signs = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    for gx in (-g, g):
        for gy in (-g, g):
            # d(phi_k)/dxi, d(phi_k)/deta at the Gauss point, reference [-1,1]^2
            dxi = signs[:, 0] * (1 + signs[:, 1] * gy) / 4.0
            deta = signs[:, 1] * (1 + signs[:, 0] * gx) / 4.0
            gradx = np.multiply.outer(2.0 / hx, dxi)
            grady = np.multiply.outer(2.0 / hy, deta)
            jac = hx * hy / 4.0
            blk += (
                np.einsum("ci,cj->cij", gradx, gradx)
                + np.einsum("ci,cj->cij", grady, grady)
            ) * jac[:, None, None]
    return blk


def stiffness_vertex_quadrature(mesh: Mesh, u_prev, m, active=None) -> SparseSymMatrix:
    """Stiffness with the coefficient m*exp(m*u_prev) averaged over each
    cell's vertices (nodal quadrature), times the exact constant-coefficient
    element stiffness.  Inactive vertices contribute zero coefficient."""
    u_prev = np.asarray(u_prev, dtype=float)
    gamma = m * np.exp(m * u_prev)
    if active is not None:
        gamma = np.where(np.asarray(active, dtype=bool), gamma, 0.0)
    coeff = gamma[mesh.cells].mean(axis=1)
    blocks = element_stiffness(mesh) * coeff[:, None, None]

    nloc = mesh.cells.shape[1]
    iu, ju = np.triu_indices(nloc)
    rows = mesh.cells[:, iu].ravel()
    cols = mesh.cells[:, ju].ravel()
    vals = blocks[:, iu, ju].ravel()
    return SparseSymMatrix.from_pairs(mesh.n_vertices, rows, cols, vals)


def velocity_lumped_weights(mesh: Mesh, geom: EdgeGeometry) -> np.ndarray:
    """Diagonal weights of the lumped velocity mass matrix, per face, in the
    normal-component convention: the lumped rule reads sum_E w_E (u.n_E)^2.

    The cotangent weights lump the integrated face flux |E| u.n_E (they are
    dimensionless, and the constant-field identity
    int_K |u|^2 = sum_E (1/2) cot(theta) (|E| u.n_E)^2 holds exactly), so on
    triangles they convert to component weights by a factor |E|^2.  Quad and
    interval weights |K|/2 are already component weights."""
    if geom.mesh is not mesh:
        raise ValueError("geometry belongs to a different mesh")
    if mesh.cell_kind == TRIANGLE:
        return geom.omega * mesh.face_measures**2
    return geom.omega.copy()


def spd_solve(A: SparseSymMatrix, shift, rhs):
    """Solve (diag(shift) + A) x = rhs by sparse LU, with the contract
    ||residual|| <= 1e-12 ||rhs||.  Raises SolverError on singular systems."""
    shift = np.asarray(shift, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if A.n == 0:
        raise SolverError("empty system")
    if np.any(shift < 0):
        raise ValueError("shift entries must be nonnegative")
    K = (A.tocsr() + sparse.diags(shift)).tocsc()
    try:
        lu = splu(K)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("singular system: non-finite solution")
    bnorm = np.linalg.norm(rhs)
    res = K @ x - rhs
    if np.linalg.norm(res) > 1e-12 * bnorm:
        x = x - lu.solve(res)  # one step of iterative refinement
        res = K @ x - rhs
        if np.linalg.norm(res) > 1e-12 * bnorm:
            raise SolverError("linear solve did not reach the residual bound")
    return x
