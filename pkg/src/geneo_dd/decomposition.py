"""Subdomain operators, partition of unity, and one-level additive Schwarz.

Subdomains are simulated in-process. Each subdomain's data is touched only by the
worker handling it; data moves between subdomains through :class:`Communicator`,
which delivers payloads and records every message in an :class:`ExchangeLedger`.
"""

import csv
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import assemble_cells, eliminate
from .krylov import factorize

log = logging.getLogger(__name__)


class ContractViolation(RuntimeError):
    """A subdomain addressed data to a subdomain it does not overlap."""


@dataclass
class ExchangeLedger:
    messages: dict = field(default_factory=lambda: defaultdict(int))
    doubles: dict = field(default_factory=lambda: defaultdict(int))
    # (tag, per-subdomain contribution sizes)
    allgathers: list = field(default_factory=list)
    reductions: int = 0

    def record(self, sender, receiver, size):
        self.messages[(sender, receiver)] += 1
        self.doubles[(sender, receiver)] += int(size)

    def pairs(self):
        return sorted(self.messages)

    def allgather_count(self, tag=None):
        return sum(1 for t, _ in self.allgathers if tag is None or t == tag)

    def rows(self):
        out = [(s, r, self.messages[(s, r)], self.doubles[(s, r)]) for s, r in self.pairs()]
        per_sender = defaultdict(lambda: [0, 0])
        for _, sizes in self.allgathers:
            for j, n in enumerate(sizes):
                per_sender[j][0] += 1
                per_sender[j][1] += int(n)
        out += [(j, "all", m, d) for j, (m, d) in sorted(per_sender.items())]
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sender", "receiver", "messages", "doubles_sent"])
            w.writerows(self.rows())


class Communicator:
    """Message passing between simulated subdomain workers."""

    def __init__(self, neighbor_lists):
        self.neighbors = [set(nb) for nb in neighbor_lists]
        self.ledger = ExchangeLedger()

    @property
    def size(self):
        return len(self.neighbors)

    def neighbor_exchange(self, payloads):
        """Deliver ``{(sender, receiver): array}``; returns ``{receiver: {sender: array}}``."""
        inbox = defaultdict(dict)
        for (src, dst), data in sorted(payloads.items(), key=lambda kv: kv[0]):
            if dst not in self.neighbors[src]:
                raise ContractViolation(f"subdomain {src} addressed non-neighbor {dst}")
            data = np.array(data, copy=True)
            self.ledger.record(src, dst, data.size)
            inbox[dst][src] = data
        return inbox

    def allgather(self, tag, contributions):
        """Concatenate one array per subdomain; every subdomain receives the result."""
        contributions = [np.asarray(c) for c in contributions]
        if len(contributions) != self.size:
            raise ValueError("one contribution per subdomain required")
        self.ledger.allgathers.append((tag, [c.size for c in contributions]))
        if not contributions:
            return np.zeros(0)
        return np.concatenate([c.reshape(-1) if c.ndim <= 1 else c for c in contributions], axis=0)

    def allreduce(self):
        self.ledger.reductions += 1


def neighbor_exchange(comm, payloads):
    return comm.neighbor_exchange(payloads)


class WorkerPool:
    """Order-preserving map over subdomains on a fixed number of threads."""

    def __init__(self, workers=1):
        self.workers = max(1, int(workers))

    def map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ThreadPoolExecutor(self.workers) as ex:
            return list(ex.map(fn, items))


# -- partition of unity ---------------------------------------------------------------


def build_pou(decomp):
    """Per-subdomain diagonal weights, in the ordering of ``decomp.subdomain_dofs(j)``.

    Each dof gets one over the number of subdomains in which it is not on the artificial
    boundary; dofs on a subdomain's interior boundary get zero there.
    """
    N = decomp.num_subdomains
    nn = len(decomp.node_multiplicity)
    count = np.zeros(nn, dtype=np.int64)
    interior = []
    for j in range(N):
        nodes = decomp.subdomain_nodes[j]
        inside = ~np.isin(nodes, decomp.interior_boundary_nodes[j], assume_unique=True)
        interior.append(inside)
        count[nodes[inside]] += 1
    if (count == 0).any():
        raise ValueError("some dofs lie on the artificial boundary of every subdomain")
    out = []
    for j in range(N):
        nodes = decomp.subdomain_nodes[j]
        w = np.where(interior[j], 1.0 / count[nodes], 0.0)
        out.append(np.repeat(w, decomp.ncomp))
    return out


def pou_sum(decomp, pou, v):
    """sum_j R_j^T X_j R_j v, evaluated directly."""
    out = np.zeros_like(v, dtype=float)
    for j in range(decomp.num_subdomains):
        d = decomp.subdomain_dofs(j)
        out[d] += pou[j] * v[d]
    return out


# -- subdomain operators --------------------------------------------------------------


@dataclass(eq=False)
class SubdomainOperators:
    index: int
    dofs: np.ndarray
    interior_boundary: np.ndarray
    dirichlet: np.ndarray
    A_dirichlet: sp.csr_matrix
    A_submatrix: sp.csr_matrix
    A_neumann: sp.csr_matrix
    A_overlap_neumann: sp.csr_matrix
    pou: np.ndarray

    @property
    def n(self):
        return len(self.dofs)


def build_subdomain_operators(system, decomp, pou, j):
    """The four local matrices of subdomain ``j``.

    Global Dirichlet dofs keep a unit diagonal in ``A_neumann`` and are zeroed in
    ``A_overlap_neumann``; interior-boundary dofs are eliminated in ``A_dirichlet``.
    """
    cells = decomp.subdomain_cells[j]
    if len(cells) == 0:
        raise ValueError(f"subdomain {j} is empty")
    dofs = decomp.subdomain_dofs(j)
    boundary = np.isin(dofs, decomp.interior_boundary_dofs[j], assume_unique=True)
    dirichlet = system.dirichlet_mask[dofs]

    A_sub = system.A[dofs][:, dofs].tocsr()
    A_dir = eliminate(A_sub, boundary)
    A_neu = eliminate(assemble_cells(system.element_matrices, system.cell_dofs, cells, dofs), dirichlet)
    ov = decomp.overlap_cells[j]
    if len(ov):
        A_ov = eliminate(assemble_cells(system.element_matrices, system.cell_dofs, ov, dofs), dirichlet, diag=0.0)
    else:
        A_ov = sp.csr_matrix((len(dofs), len(dofs)))
    return SubdomainOperators(j, dofs, boundary, dirichlet, A_dir, A_sub, A_neu, A_ov, pou[j])


# -- one-level Schwarz ----------------------------------------------------------------


class SchwarzLayout:
    """Index bookkeeping shared by the one- and two-level preconditioners."""

    def __init__(self, decomp, ops):
        self.N = decomp.num_subdomains
        self.ndof = len(decomp.node_multiplicity) * decomp.ncomp
        self.dofs = [op.dofs for op in ops]
        self.masks = [~op.interior_boundary for op in ops]
        # every dof is written back by the lowest-numbered subdomain containing it
        owner = np.full(self.ndof, self.N, dtype=np.int64)
        for j in range(self.N - 1, -1, -1):
            owner[self.dofs[j]] = j
        self.owned = [owner[d] == j for j, d in enumerate(self.dofs)]
        self.shared = {}
        for j in range(self.N):
            for k in decomp.neighbor_lists[j]:
                common, ij, ik = np.intersect1d(self.dofs[j], self.dofs[k], assume_unique=True, return_indices=True)
                if len(common):
                    self.shared[(j, k)] = (ij, ik)

    def restrict(self, r):
        return [r[d] for d in self.dofs]

    def gather(self, comm, local):
        """Sum overlapping local vectors via neighbor exchange and write owned entries back."""
        payloads = {(j, k): local[j][ij] for (j, k), (ij, _) in self.shared.items()}
        inbox = comm.neighbor_exchange(payloads)
        out = np.zeros(self.ndof)
        for k in range(self.N):
            z = local[k].copy()
            for j, data in sorted(inbox.get(k, {}).items()):
                _, ik = self.shared[(j, k)]
                z[ik] += data
            out[self.dofs[k][self.owned[k]]] = z[self.owned[k]]
        return out


class OneLevelSchwarz:
    """M^{-1} r = sum_j R_j^T A_j^{-1} R_j r with R_j restricting to dofs interior to subdomain j."""

    def __init__(self, decomp, ops, comm=None, pool=None):
        self.decomp = decomp
        self.ops = ops
        self.comm = comm or Communicator(decomp.neighbor_lists)
        self.pool = pool or WorkerPool(1)
        self.layout = SchwarzLayout(decomp, ops)
        self.factors = self.pool.map(lambda op: factorize(op.A_dirichlet), ops)
        self.shape = (self.layout.ndof, self.layout.ndof)

    def local_corrections(self, r_local):
        def work(j):
            rj = np.where(self.layout.masks[j], r_local[j], 0.0)
            return self.factors[j].solve(rj) * self.layout.masks[j]

        return self.pool.map(work, range(len(self.ops)))

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        local = self.local_corrections(self.layout.restrict(r))
        return self.layout.gather(self.comm, local)

    __call__ = apply

    def dense(self):
        """Explicit sum of R_j^T A_j^{-1} R_j (small problems only)."""
        n = self.layout.ndof
        M = np.zeros((n, n))
        for j, op in enumerate(self.ops):
            keep = self.layout.masks[j]
            idx = op.dofs[keep]
            Aj = op.A_dirichlet.toarray()[np.ix_(keep, keep)]
            M[np.ix_(idx, idx)] += np.linalg.inv(Aj)
        return M


def apply_one_level(preconditioner, r):
    return preconditioner.apply(r)


def setup_subdomains(system, decomp, pool=None):
    pool = pool or WorkerPool(1)
    pou = build_pou(decomp)
    ops = pool.map(lambda j: build_subdomain_operators(system, decomp, pou, j), range(decomp.num_subdomains))
    return pou, ops
