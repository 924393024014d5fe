"""Spectral coarse spaces from generalized eigenproblems in the subdomain overlaps.

For each subdomain the pencil (A_neumann, X A_overlap X) is solved for its smallest
eigenvalues; eigenvectors below a geometric threshold, weighted by the partition of
unity, span the coarse space. The coarse matrix is assembled from local products and
neighbor exchanges, replicated on every subdomain and factorized once.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .decomposition import SchwarzLayout
from .krylov import DenseCholesky, SingularMatrixError, factorize

log = logging.getLogger(__name__)

DENSE_LIMIT = 3000


@dataclass
class EigenSelection:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    m: int = 0
    threshold: float = float("nan")
    next_eigenvalue: float = float("inf")
    cap_binding: bool = False

    @property
    def selected(self):
        return self.eigenvectors[:, : self.m]


def assemble_eigen_pencil(op):
    """(A_neumann, X A_overlap_neumann X) for one subdomain."""
    X = sp.diags(op.pou)
    B = (X @ op.A_overlap_neumann @ X).tocsr()
    B.eliminate_zeros()
    return op.A_neumann, B


def default_shift(A):
    n = A.shape[0]
    return -1e-6 * float(A.diagonal().sum()) / max(n, 1)


def _norm(M):
    return float(spla.norm(M, 1)) if sp.issparse(M) else float(np.abs(M).sum(axis=0).max())


def _s_orthonormalize(W, SW, drop_tol=1e-10):
    """Orthonormalize the columns of W in the inner product <x, y> = x' S y."""
    G = W.T @ SW
    G = 0.5 * (G + G.T)
    d, U = np.linalg.eigh(G)
    keep = d > drop_tol * max(d.max(), 0.0) if d.size and d.max() > 0 else np.zeros(d.size, bool)
    scale = U[:, keep] / np.sqrt(d[keep])
    return W @ scale, SW @ scale


def block_shift_invert(A, B, sigma, k, block=8, ncv=None, max_restarts=60, tol=1e-10, seed=0):
    """Largest eigenvalues mu of T = (A - sigma B)^{-1} B by restarted block Krylov.

    T is self-adjoint in the inner product of S = A - sigma B, so the Krylov basis is
    kept S-orthonormal (two Gram-Schmidt passes) and Ritz values come from Q' B Q.
    Blocks keep repeated eigenvalues such as rigid modes from collapsing.
    """
    n = A.shape[0]
    S = (A - sigma * B).tocsc()
    F = factorize(S)
    rng = np.random.default_rng(seed)
    nA, nB = _norm(A), _norm(B)
    b = max(block, 1)
    ncv = min(n, ncv or max(7 * k, k + 15 * b))
    X = rng.standard_normal((n, k + b))
    lam = V = res = None
    for _ in range(max_restarts):
        X = F.solve(B @ X)
        Q, SQ = _s_orthonormalize(X, S @ X)
        blocks, sblocks = [Q], [SQ]
        last = Q
        while sum(q.shape[1] for q in blocks) < ncv and last.shape[1]:
            W = F.solve(B @ last)
            for _pass in range(2):
                for q, sq in zip(blocks, sblocks):
                    W -= q @ (sq.T @ W)
            last, slast = _s_orthonormalize(W, S @ W)
            if last.shape[1]:
                blocks.append(last)
                sblocks.append(slast)
        Q = np.hstack(blocks)
        H = Q.T @ (B @ Q)
        mu, W = np.linalg.eigh(0.5 * (H + H.T))
        W = W[:, ::-1]
        mu, Y = mu[::-1][:k], W[:, :k]
        V = Q @ Y
        good = mu > 0
        lam = np.full(k, np.inf)
        lam[good] = 1.0 / mu[good] + sigma
        V = V / np.linalg.norm(V, axis=0)
        lam_f = np.where(np.isfinite(lam), lam, 0.0)
        res = np.linalg.norm(A @ V - (B @ V) * lam_f, axis=0) / (nA + np.abs(lam_f) * nB)
        if good.all() and res.max() <= tol:
            break
        # restart from the current Ritz vectors plus a fresh random block
        X = np.hstack([V, Q @ W[:, k : k + b]])
    else:
        log.warning("eigensolver stopped at scaled residual %.2e", res.max())
    return lam, V


def solve_geneo(A, B, sigma=None, k_max=20, dense_limit=DENSE_LIMIT, seed=0):
    """Smallest ``k_max`` eigenpairs of ``A p = lambda B p`` by shift-and-invert.

    Pencils with fewer than ``dense_limit`` rows go through a dense solve of
    ``B p = mu (A - sigma B) p``; larger ones through a restarted block Krylov
    iteration. Eigenvectors have unit 2-norm; ``residuals`` are scaled by
    ``||A|| + lambda ||B||``. A zero ``B`` yields no pairs.
    """
    n = A.shape[0]
    empty = EigenSelection(np.zeros(0), np.zeros((n, 0)), np.zeros(0))
    if B.nnz == 0 or _norm(B) == 0.0 or k_max <= 0:
        return empty
    sigma = default_shift(A) if sigma is None else float(sigma)
    if sigma >= 0:
        raise ValueError("shift must be negative")
    rank_b = np.unique(B.tocoo().row).size
    k = min(k_max, rank_b, n if n < dense_limit else n - 1)
    if k <= 0:
        return empty

    if n < dense_limit:
        Ad, Bd = A.toarray(), B.toarray()
        try:
            mu, V = sla.eigh(Bd, Ad - sigma * Bd, subset_by_index=[n - k, n - 1])
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"shifted matrix not positive definite: {exc}") from exc
        mu, V = mu[::-1], V[:, ::-1]
        good = mu > 1e-14 * mu.max() if mu.size and mu.max() > 0 else np.zeros(mu.size, bool)
        lam = 1.0 / mu[good] + sigma
        V = V[:, good]
    else:
        lam, V = block_shift_invert(A, B, sigma, k, seed=seed)
        finite = np.isfinite(lam)
        lam, V = lam[finite], V[:, finite]

    order = np.argsort(lam, kind="stable")
    lam, V = lam[order], V[:, order]
    nA, nB = _norm(A), _norm(B)
    if (lam < -1e-10 * nA).any():
        log.warning("negative eigenvalue %.3e below clamp tolerance", lam.min())
    lam = np.maximum(lam, 0.0)
    V = V / np.linalg.norm(V, axis=0)
    res = np.linalg.norm(A @ V - (B @ V) * lam, axis=0) / (nA + lam * nB)
    return EigenSelection(lam, V, res)


def subdomain_diameter(grid, decomp, j):
    """Half the bounding-box diagonal of the subdomain."""
    x = grid.node_coordinates[decomp.subdomain_nodes[j]]
    return 0.5 * float(np.linalg.norm(x.max(axis=0) - x.min(axis=0)))


def overlap_width(grid, decomp, j):
    """Overlap layers times the smallest cell extent across the overlap directions."""
    axes = decomp.overlap_axes(j)
    cells = decomp.overlap_cells[j]
    if not axes or len(cells) == 0:
        return 0.0
    X = grid.cell_nodes_xyz(cells)
    extent = X.max(axis=1) - X.min(axis=1)
    return decomp.overlap_layers * float(min(extent[:, a].min() for a in axes))


def geneo_threshold(grid, decomp, j, rho=1.0):
    width = overlap_width(grid, decomp, j)
    if width == 0.0:
        return 0.0
    return rho * subdomain_diameter(grid, decomp, j) / width


def select_modes(eigs, threshold, k_max=20):
    """Keep eigenpairs with lambda <= threshold, at most ``k_max`` of them."""
    lam = eigs.eigenvalues
    below = int(np.searchsorted(lam, threshold, side="right"))
    m = min(below, k_max)
    cap = below > k_max or (below == len(lam) == k_max and len(lam) > 0)
    if cap:
        log.info("eigenvector cap %d binds (threshold %.3g)", k_max, threshold)
    nxt = float(lam[m]) if m < len(lam) else float("inf")
    return EigenSelection(lam, eigs.eigenvectors, eigs.residuals, m, float(threshold), nxt, cap)


# -- coarse space ----------------------------------------------------------------------


@dataclass(eq=False)
class CoarseSpace:
    # per subdomain a local (n_j, m_j) block of basis vectors
    basis: list
    offsets: np.ndarray
    A_H: np.ndarray = None
    factor: DenseCholesky = None
    dropped: list = field(default_factory=list)

    @property
    def dim(self):
        return int(self.offsets[-1])

    @property
    def sizes(self):
        return np.diff(self.offsets)

    def owner(self, i):
        return int(np.searchsorted(self.offsets, i, side="right") - 1)

    def global_basis(self, layout):
        """Sparse (N_H, ndof) matrix whose rows are the padded basis vectors."""
        rows, cols, vals = [], [], []
        for j, Phi in enumerate(self.basis):
            for k in range(Phi.shape[1]):
                nz = np.flatnonzero(Phi[:, k])
                rows.append(np.full(nz.size, self.offsets[j] + k))
                cols.append(layout.dofs[j][nz])
                vals.append(Phi[nz, k])
        if not rows:
            return sp.csr_matrix((0, layout.ndof))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(self.dim, layout.ndof)
        )


def _clean(Phi, op):
    Phi = np.array(Phi, dtype=float)
    Phi[op.dirichlet] = 0.0
    Phi[op.interior_boundary] = 0.0
    return Phi


def build_coarse_basis(selections, ops):
    """Phi_{i(j,k)} = X_j p_k^j, numbered contiguously subdomain by subdomain."""
    basis = []
    for sel, op in zip(selections, ops):
        basis.append(_clean(op.pou[:, None] * sel.selected, op))
    sizes = [b.shape[1] for b in basis]
    return CoarseSpace(basis, np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64))


def rigid_body_modes(x):
    """Six rigid modes of points ``x`` (n, 3), rotations about their centroid; shape (3n, 6)."""
    c = x - x.mean(axis=0)
    n = len(x)
    R = np.zeros((n, 3, 6))
    R[:, 0, 0] = R[:, 1, 1] = R[:, 2, 2] = 1.0
    # rotation about x: (0, -z, y); about y: (z, 0, -x); about z: (-y, x, 0)
    R[:, 1, 3], R[:, 2, 3] = -c[:, 2], c[:, 1]
    R[:, 0, 4], R[:, 2, 4] = c[:, 2], -c[:, 0]
    R[:, 0, 5], R[:, 1, 5] = -c[:, 1], c[:, 0]
    return R.reshape(3 * n, 6)


def zem_basis(grid, decomp, ops):
    """Zero-energy modes weighted by the partition of unity: 6 per subdomain
    (elasticity) or the constant (diffusion)."""
    basis = []
    for j, op in enumerate(ops):
        nodes = decomp.subdomain_nodes[j]
        if decomp.ncomp == 3:
            Z = rigid_body_modes(grid.node_coordinates[nodes])
        else:
            Z = np.ones((len(nodes), 1))
        Z = _clean(op.pou[:, None] * Z, op)
        norms = np.linalg.norm(Z, axis=0)
        Z = Z[:, norms > 0] / norms[norms > 0]
        basis.append(Z)
    sizes = [b.shape[1] for b in basis]
    return CoarseSpace(basis, np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64))


def assemble_coarse_matrix(coarse, ops, layout, comm):
    """(A_H)_{il} = (Phi_i^T A~_{j(i)}) Phi_l from local products.

    Basis slices travel only between overlapping subdomains; the assembled rows are
    then all-gathered so every subdomain holds the same A_H.
    """
    N = len(ops)
    payloads = {}
    for (j, k), (ij, _) in layout.shared.items():
        if coarse.basis[j].shape[1]:
            payloads[(j, k)] = coarse.basis[j][ij, :]
    inbox = comm.neighbor_exchange(payloads)

    rows = []
    for k in range(N):
        Phi_k = coarse.basis[k]
        block = np.zeros((Phi_k.shape[1], coarse.dim))
        if Phi_k.shape[1]:
            W = ops[k].A_submatrix @ Phi_k
            sl = slice(coarse.offsets[k], coarse.offsets[k + 1])
            block[:, sl] = W.T @ Phi_k
            for j, data in sorted(inbox.get(k, {}).items()):
                _, ik = layout.shared[(j, k)]
                block[:, coarse.offsets[j] : coarse.offsets[j + 1]] = W[ik].T @ data
        rows.append(block)
    A_H = comm.allgather("coarse_assembly", rows).reshape(coarse.dim, coarse.dim)
    coarse.A_H = 0.5 * (A_H + A_H.T)
    coarse.factor = DenseCholesky(coarse.A_H)
    coarse.dropped = list(coarse.factor.dropped)
    if coarse.dropped:
        log.warning("dropped %d dependent coarse basis vectors: %s", len(coarse.dropped), coarse.dropped)
    return coarse.A_H


def coarse_restrict(coarse, layout, comm, v_local):
    """(R_H v)_i = Phi_i^T v, computed by the owner of Phi_i and all-gathered."""
    parts = [Phi.T @ v for Phi, v in zip(coarse.basis, v_local)]
    return comm.allgather("coarse_restrict", parts)


def coarse_prolong_local(coarse, v_H):
    return [Phi @ v_H[coarse.offsets[j] : coarse.offsets[j + 1]] for j, Phi in enumerate(coarse.basis)]


def coarse_prolong(coarse, layout, comm, v_H):
    """R_H^T v_H as a global vector: local products plus neighbor consistency exchange."""
    return layout.gather(comm, coarse_prolong_local(coarse, v_H))


class TwoLevelSchwarz:
    """M^{-1} = R_H^T A_H^{-1} R_H + sum_j R_j^T A_j^{-1} R_j."""

    def __init__(self, one_level, coarse):
        self.one = one_level
        self.coarse = coarse
        self.layout = one_level.layout
        self.comm = one_level.comm
        self.shape = one_level.shape
        if coarse.dim and coarse.factor is None:
            assemble_coarse_matrix(coarse, one_level.ops, self.layout, self.comm)

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        r_local = self.layout.restrict(r)
        if self.coarse.dim == 0:
            return self.one.apply(r)
        r_H = coarse_restrict(self.coarse, self.layout, self.comm, r_local)
        # coarse solve duplicated on every subdomain; evaluated once here
        y_H = self.coarse.factor.solve(r_H)
        local = self.one.local_corrections(r_local)
        for j, w in enumerate(coarse_prolong_local(self.coarse, y_H)):
            local[j] = local[j] + w
        return self.layout.gather(self.comm, local)

    __call__ = apply

    def dense(self):
        P = self.coarse.global_basis(self.layout).toarray()
        M = self.one.dense()
        if self.coarse.dim:
            M += P.T @ np.linalg.solve(self.coarse.A_H, P)
        return M


def apply_two_level(preconditioner, r):
    return preconditioner.apply(r)


def compute_geneo_selections(grid, decomp, ops, rho=1.0, k_max=20, pool=None, sigma=None):
    def work(j):
        A, B = assemble_eigen_pencil(ops[j])
        eigs = solve_geneo(A, B, sigma=sigma, k_max=k_max, seed=j)
        return select_modes(eigs, geneo_threshold(grid, decomp, j, rho), k_max)

    if pool is None:
        return [work(j) for j in range(len(ops))]
    return pool.map(work, range(len(ops)))


def write_eigen_report(path, selections):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subdomain", "k", "lambda", "selected", "threshold"])
        for j, sel in enumerate(selections):
            for k, lam in enumerate(sel.eigenvalues):
                w.writerow([j, k, f"{lam:.10e}", int(k < sel.m), f"{sel.threshold:.10e}"])
