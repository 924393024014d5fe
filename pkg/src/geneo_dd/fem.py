"""Element kernels and global assembly for anisotropic elasticity and scalar diffusion.

Dofs are blocked per node: dof ``ncomp * node + component``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .elements import default_rule, gauss_rule, shape_basis, HEX8
from .materials import PermeabilityField

log = logging.getLogger(__name__)

CHUNK = 256


@dataclass
class BoundarySpec:
    """Boundary data; every callable is vectorised over points of shape (m, 3).

    ``is_dirichlet(x, i)`` -> bool (m,), ``dirichlet_value(x, i)`` -> (m,),
    ``neumann_traction(x, n)`` -> (m, ncomp), ``body_force(x)`` -> (m, ncomp).
    """

    is_dirichlet: Callable = None
    dirichlet_value: Optional[Callable] = None
    neumann_traction: Optional[Callable] = None
    body_force: Optional[Callable] = None


@dataclass(eq=False)
class SparseSystem:
    A: sp.csr_matrix
    b: np.ndarray
    ncomp: int
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray
    element_matrices: np.ndarray = field(repr=False)
    cell_dofs: np.ndarray = field(repr=False)
    singular: bool = False

    @property
    def dof_count(self):
        return self.A.shape[0]


def cell_dofs(grid, ncomp):
    conn = grid.cell_connectivity
    return (conn[:, :, None] * ncomp + np.arange(ncomp)).reshape(len(conn), -1)


def physical_gradients(X, element_type, rule):
    """Shape gradients in physical coordinates and weighted Jacobians.

    ``X`` has shape (c, n, 3). Returns ``(G, wdet)`` with shapes (c, q, n, 3) and (c, q).
    """
    _, dN = shape_basis(element_type, rule.points)
    J = np.einsum("cna,qnb->cqab", X, dN)
    det = np.linalg.det(J)
    if (det <= 0).any():
        raise ValueError("degenerate or inverted element: non-positive Jacobian")
    Jinv = np.linalg.inv(J)
    G = np.einsum("qnb,cqba->cqna", dN, Jinv)
    return G, det * rule.weights


def strain_displacement(G):
    """Voigt B matrices (c, q, 6, 3n) from physical gradients (c, q, n, 3)."""
    c, q, n, _ = G.shape
    B = np.zeros((c, q, 6, n, 3))
    B[..., 0, :, 0] = G[..., 0]
    B[..., 1, :, 1] = G[..., 1]
    B[..., 2, :, 2] = G[..., 2]
    B[..., 3, :, 1] = G[..., 2]
    B[..., 3, :, 2] = G[..., 1]
    B[..., 4, :, 0] = G[..., 2]
    B[..., 4, :, 2] = G[..., 0]
    B[..., 5, :, 0] = G[..., 1]
    B[..., 5, :, 1] = G[..., 0]
    return B.reshape(c, q, 6, 3 * n)


def element_stiffness_elasticity(X, C, element_type=HEX8, rule=None):
    """Element stiffness for one cell (X: (n, 3)) or a batch (X: (c, n, 3)).

    ``C`` is a 6x6 Voigt matrix or one per cell.
    """
    rule = rule or default_rule(element_type)
    single = X.ndim == 2
    X = X[None] if single else X
    C = np.broadcast_to(C, (len(X), 6, 6))
    G, wdet = physical_gradients(X, element_type, rule)
    B = strain_displacement(G)
    CB = np.einsum("ckl,cqlj->cqkj", C, B)
    K = np.einsum("cqki,cqkj,cq->cij", B, CB, wdet, optimize=True)
    K = 0.5 * (K + K.transpose(0, 2, 1))
    return K[0] if single else K


def element_stiffness_diffusion(X, K, element_type=HEX8, rule=None):
    """Element diffusion matrix for a diagonal permeability ``K`` (3,) or (c, 3)."""
    rule = rule or default_rule(element_type)
    single = X.ndim == 2
    X = X[None] if single else X
    K = np.broadcast_to(np.asarray(K, dtype=float), (len(X), 3))
    G, wdet = physical_gradients(X, element_type, rule)
    Ke = np.einsum("cqna,ca,cqma,cq->cnm", G, K, G, wdet, optimize=True)
    Ke = 0.5 * (Ke + Ke.transpose(0, 2, 1))
    return Ke[0] if single else Ke


def element_matrices(grid, coefficients, rule=None):
    """Element matrices for every cell; returns (matrices, ncomp)."""
    if isinstance(coefficients, PermeabilityField):
        coefficients = coefficients.diag()
    out = []
    if isinstance(coefficients, dict):
        missing = set(np.unique(grid.cell_region)) - set(coefficients)
        if missing:
            raise KeyError(f"unresolved region ids {sorted(missing)}")
        for start in range(0, grid.n_cells, CHUNK):
            cells = np.arange(start, min(start + CHUNK, grid.n_cells))
            C = np.stack([coefficients[r] for r in grid.cell_region[cells]])
            out.append(element_stiffness_elasticity(grid.cell_nodes_xyz(cells), C, grid.element_type, rule))
        return np.concatenate(out), 3
    K = np.asarray(coefficients, dtype=float)
    if K.shape != (grid.n_cells, 3):
        raise ValueError(f"permeability must have shape ({grid.n_cells}, 3), got {K.shape}")
    for start in range(0, grid.n_cells, 4 * CHUNK):
        cells = np.arange(start, min(start + 4 * CHUNK, grid.n_cells))
        out.append(element_stiffness_diffusion(grid.cell_nodes_xyz(cells), K[cells], grid.element_type, rule))
    return np.concatenate(out), 1


def assemble_cells(Ke, cdofs, cells, dofs=None, ndof=None):
    """Sum element matrices of ``cells`` into a CSR matrix.

    With ``dofs`` (sorted global dof indices) the result uses local numbering.
    """
    cells = np.asarray(cells)
    d = cdofs[cells]
    if dofs is not None:
        d = np.searchsorted(dofs, d)
        ndof = len(dofs)
    nd = d.shape[1]
    rows = np.repeat(d, nd, axis=1).ravel()
    cols = np.tile(d, (1, nd)).ravel()
    A = sp.coo_matrix((Ke[cells].ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    A.sum_duplicates()
    return A


def eliminate(A, mask, diag=1.0):
    """Zero rows/columns flagged in ``mask`` and put ``diag`` on their diagonal."""
    keep = sp.diags((~mask).astype(float))
    out = (keep @ A @ keep).tocsr()
    if diag:
        out = out + sp.diags(mask.astype(float) * diag)
    out = out.tocsr()
    out.eliminate_zeros()
    return out


def dirichlet_dofs(grid, bcs, ncomp):
    mask = np.zeros(grid.n_nodes * ncomp, dtype=bool)
    values = np.zeros(grid.n_nodes * ncomp)
    if bcs.is_dirichlet is None:
        return mask, values
    x = grid.node_coordinates
    for i in range(ncomp):
        flag = np.asarray(bcs.is_dirichlet(x, i), dtype=bool)
        mask[i::ncomp] = flag
        if bcs.dirichlet_value is not None and flag.any():
            values[i::ncomp][flag] = bcs.dirichlet_value(x[flag], i)
    return mask, values


def body_load(grid, body_force, ncomp, rule=None):
    rule = rule or default_rule(grid.element_type)
    N, _ = shape_basis(grid.element_type, rule.points)
    cd = cell_dofs(grid, ncomp)
    b = np.zeros(grid.n_nodes * ncomp)
    for start in range(0, grid.n_cells, 4 * CHUNK):
        cells = np.arange(start, min(start + 4 * CHUNK, grid.n_cells))
        X = grid.cell_nodes_xyz(cells)
        _, wdet = physical_gradients(X, grid.element_type, rule)
        xq = np.einsum("qn,cna->cqa", N, X)
        f = np.asarray(body_force(xq.reshape(-1, 3)), dtype=float).reshape(len(cells), len(rule.weights), ncomp)
        fe = np.einsum("cq,qn,cqi->cni", wdet, N, f).reshape(len(cells), -1)
        np.add.at(b, cd[cells], fe)
    return b


def boundary_faces(grid):
    """Yield (axis, side, cells) for the six sides of the structured block."""
    ijk = grid.cell_ijk()
    for axis in range(3):
        for side, idx in ((-1, 0), (1, grid.cell_shape[axis] - 1)):
            yield axis, side, np.flatnonzero(ijk[:, axis] == idx)


def face_quadrature(element_type, axis, side):
    rule2 = gauss_rule(2 if element_type == HEX8 else 3, dim=2)
    others = [a for a in range(3) if a != axis]
    pts = np.zeros((len(rule2.weights), 3))
    pts[:, axis] = side
    pts[:, others[0]] = rule2.points[:, 0]
    pts[:, others[1]] = rule2.points[:, 1]
    return pts, rule2.weights


def neumann_load(grid, traction, ncomp):
    """Integrate ``traction(x, outward_normal)`` over boundary faces whose centroid value is non-zero."""
    cd = cell_dofs(grid, ncomp)
    b = np.zeros(grid.n_nodes * ncomp)
    for axis, side, cells in boundary_faces(grid):
        ctr = np.zeros((1, 3))
        ctr[0, axis] = side
        pts, w = face_quadrature(grid.element_type, axis, side)
        pts = np.vstack([ctr, pts])
        N, dN = shape_basis(grid.element_type, pts)
        X = grid.cell_nodes_xyz(cells)
        xq = np.einsum("qn,cna->cqa", N, X)
        J = np.einsum("cna,qnb->cqab", X, dN)
        t1 = J[..., (axis + 1) % 3]
        t2 = J[..., (axis + 2) % 3]
        nvec = side * np.cross(t1, t2)
        dS = np.linalg.norm(nvec, axis=-1)
        normal = nvec / dS[..., None]
        m = len(cells) * len(pts)
        t = np.asarray(traction(xq.reshape(m, 3), normal.reshape(m, 3)), dtype=float).reshape(len(cells), len(pts), ncomp)
        loaded = np.abs(t[:, 0]).max(axis=1) > 0
        if not loaded.any():
            continue
        t, dS = t[loaded, 1:], dS[loaded, 1:]
        fe = np.einsum("cq,q,qn,cqi->cni", dS, w, N[1:], t).reshape(loaded.sum(), -1)
        np.add.at(b, cd[cells[loaded]], fe)
    return b


def assemble(grid, coefficients, bcs, rule=None):
    """Global system with symmetric Dirichlet elimination (unit diagonal on constrained dofs).

    ``coefficients`` is a region->6x6 stiffness dict (elasticity), a PermeabilityField
    or an (n_cells, 3) permeability array (diffusion).
    """
    Ke, ncomp = element_matrices(grid, coefficients, rule)
    cd = cell_dofs(grid, ncomp)
    ndof = grid.n_nodes * ncomp
    A = assemble_cells(Ke, cd, np.arange(grid.n_cells), ndof=ndof)
    b = np.zeros(ndof)
    if bcs.body_force is not None:
        b += body_load(grid, bcs.body_force, ncomp, rule)
    if bcs.neumann_traction is not None:
        b += neumann_load(grid, bcs.neumann_traction, ncomp)
    mask, values = dirichlet_dofs(grid, bcs, ncomp)
    singular = False
    for i in range(ncomp):
        if not mask[i::ncomp].any():
            singular = True
    if singular:
        log.warning("no Dirichlet dofs in some component: the system is singular (pure Neumann)")
    if mask.any():
        b = b - A @ np.where(mask, values, 0.0)
        b[mask] = values[mask]
    A = eliminate(A, mask)
    return SparseSystem(A, b, ncomp, mask, values, Ke, cd, singular)


def l2_error(grid, u, exact, rule=None):
    """L2 norm of (u_h - exact) for a scalar field ``u`` on nodes."""
    rule = rule or gauss_rule(4)
    N, _ = shape_basis(grid.element_type, rule.points)
    X = grid.cell_nodes_xyz()
    _, wdet = physical_gradients(X, grid.element_type, rule)
    xq = np.einsum("qn,cna->cqa", N, X)
    uh = np.einsum("qn,cn->cq", N, u[grid.cell_connectivity])
    ue = exact(xq.reshape(-1, 3)).reshape(uh.shape)
    return float(np.sqrt(np.sum(wdet * (uh - ue) ** 2)))


def write_matrix_market(path, A=None, b=None):
    """Write ``A`` in coordinate format or ``b`` in array format."""
    if A is not None:
        scipy.io.mmwrite(path, sp.coo_matrix(A), symmetry="general")
    else:
        scipy.io.mmwrite(path, np.asarray(b).reshape(-1, 1))
