"""Krylov solvers (PCG with Lanczos condition estimate, flexible GMRES) and sparse factorization."""

import csv
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class IndefiniteError(ArithmeticError):
    """Operator or preconditioner is not positive definite."""


class BreakdownError(ArithmeticError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    residual_2norm_history: list = field(default_factory=list)
    condition_estimate: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "rel_residual"])
            for k, r in enumerate(self.residual_history):
                w.writerow([k, f"{r:.16e}"])


def as_operator(A, n=None):
    """Wrap a matrix, LinearOperator or callable as a scipy LinearOperator."""
    if isinstance(A, spla.LinearOperator):
        return A
    if hasattr(A, "apply") and hasattr(A, "shape"):
        return spla.LinearOperator(A.shape, matvec=A.apply, dtype=float)
    if callable(A) and not hasattr(A, "shape"):
        return spla.LinearOperator((n, n), matvec=A, dtype=float)
    return spla.aslinearoperator(A)


def identity(n):
    return spla.LinearOperator((n, n), matvec=lambda v: np.array(v, dtype=float).ravel(), dtype=float)


def lanczos_condition(alphas, betas):
    """Extreme-eigenvalue ratio of the CG Lanczos tridiagonal matrix."""
    k = len(alphas)
    if k == 0:
        return float("nan")
    a = np.asarray(alphas)
    b = np.asarray(betas[: k - 1])
    diag = 1.0 / a
    diag[1:] += b / a[:-1]
    off = np.sqrt(b) / a[:-1]
    ev = sla.eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    return float(ev.max() / ev.min())


def pcg(A, M_inv, b, tol=1e-5, max_it=1000, callback=None, reduce=None):
    """Preconditioned CG from a zero initial guess.

    Stops once ``sqrt(r'M r / r0'M r0) <= tol``. ``reduce`` is called once per global
    dot product (used for communication accounting).
    """
    t0 = time.perf_counter()
    n = len(b)
    A = as_operator(A, n)
    M_inv = as_operator(M_inv, n) if M_inv is not None else identity(n)

    def dot(x, y):
        if reduce is not None:
            reduce()
        return float(x @ y)

    x = np.zeros(n)
    r = np.array(b, dtype=float)
    z = M_inv.matvec(r)
    rz = dot(r, z)
    report = SolveReport()
    b_norm = np.linalg.norm(b)
    if rz < 0:
        raise IndefiniteError("preconditioner is not positive definite (r'Mr < 0)")
    if rz == 0:
        report.converged = True
        report.residual_history = [0.0] if b_norm == 0 else [1.0]
        report.wall_time = time.perf_counter() - t0
        return x, report
    rz0 = rz
    report.residual_history.append(1.0)
    report.residual_2norm_history.append(1.0)
    p = z.copy()
    alphas, betas = [], []
    for _ in range(max_it):
        q = A.matvec(p)
        pAp = dot(p, q)
        if pAp <= 0:
            raise IndefiniteError("operator is not positive definite (p'Ap <= 0)")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * q
        z = M_inv.matvec(r)
        rz_new = dot(r, z)
        if rz_new < 0:
            raise IndefiniteError("preconditioner is not positive definite (r'Mr < 0)")
        alphas.append(alpha)
        report.iterations += 1
        rel = np.sqrt(rz_new / rz0)
        # keep the history strictly positive even after an exact solve
        report.residual_history.append(max(rel, np.finfo(float).tiny))
        report.residual_2norm_history.append(np.linalg.norm(r) / b_norm)
        if callback is not None:
            callback(x)
        if rel <= tol:
            report.converged = True
            break
        beta = rz_new / rz
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    report.condition_estimate = lanczos_condition(alphas, betas)
    report.wall_time = time.perf_counter() - t0
    return x, report


def fgmres(A, M_inv, b, tol=1e-5, restart=50, max_it=1000, callback=None):
    """Right-preconditioned flexible GMRES; ``M_inv`` may change between applications.

    ``M_inv`` is an operator or a callable ``(v, k) -> z`` taking the iteration index.
    Stops on ``||r||_2 / ||b||_2 <= tol``.
    """
    t0 = time.perf_counter()
    n = len(b)
    A = as_operator(A, n)
    if M_inv is None:
        precond = lambda v, k: v.copy()
    elif isinstance(M_inv, spla.LinearOperator) or hasattr(M_inv, "shape"):
        op = as_operator(M_inv)
        precond = lambda v, k: op.matvec(v)
    else:
        precond = M_inv

    x = np.zeros(n)
    report = SolveReport()
    b_norm = np.linalg.norm(b)
    if b_norm == 0:
        report.converged = True
        report.residual_history = [0.0]
        return x, report
    report.residual_history.append(1.0)
    r = np.array(b, dtype=float)
    k_total = 0
    while k_total < max_it:
        beta = np.linalg.norm(r)
        m = min(restart, max_it - k_total)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        V[0] = r / beta
        g = np.zeros(m + 1)
        g[0] = beta
        cs, sn = np.zeros(m), np.zeros(m)
        j_done = 0
        rel = beta / b_norm
        breakdown = False
        for j in range(m):
            Z[j] = precond(V[j], k_total)
            w = A.matvec(Z[j])
            w_norm = np.linalg.norm(w)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            # second Gram-Schmidt pass
            for i in range(j + 1):
                h = V[i] @ w
                H[i, j] += h
                w -= h * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = H[j + 1, j] < 1e-14 * max(w_norm, 1.0)
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k_total += 1
            j_done = j + 1
            rel = abs(g[j + 1]) / b_norm
            report.residual_history.append(max(rel, np.finfo(float).tiny))
            if rel <= tol or breakdown or k_total >= max_it:
                break
        y = sla.solve_triangular(H[:j_done, :j_done], g[:j_done])
        x += Z[:j_done].T @ y
        r = b - A.matvec(x)
        report.iterations = k_total
        if callback is not None:
            callback(x)
        true_rel = np.linalg.norm(r) / b_norm
        if rel <= tol:
            report.converged = true_rel <= 10 * tol
            if report.converged:
                break
        if breakdown:
            if true_rel <= tol:
                report.converged = True
                break
            raise BreakdownError(f"FGMRES breakdown at iteration {k_total} (residual {true_rel:.3e})")
    report.wall_time = time.perf_counter() - t0
    return x, report


class Factorization:
    """Sparse LU of a symmetric positive definite matrix with a fixed fill-reducing ordering."""

    def __init__(self, A, pivot_tol=1e-12):
        A = sp.csc_matrix(A)
        if A.shape[0] == 0:
            self.n = 0
            self.lu = None
            return
        self.n = A.shape[0]
        try:
            self.lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
        except RuntimeError as exc:
            raise SingularMatrixError(str(exc)) from exc
        piv = self.lu.U.diagonal()
        big = np.abs(piv).max()
        if piv.min() <= pivot_tol * big:
            raise SingularMatrixError(f"pivot {piv.min():.3e} below {pivot_tol:g} * {big:.3e}")

    def solve(self, b):
        if self.n == 0:
            return np.zeros_like(b)
        return self.lu.solve(np.asarray(b, dtype=float))


def factorize(A):
    return Factorization(A)


def solve(F, b):
    return F.solve(b)


class DenseCholesky:
    """Cholesky of a small dense SPD matrix that drops near-dependent rows.

    A pivot below ``pivot_tol`` times the largest pivot seen marks the row as
    dependent on earlier ones; it is excluded and listed in ``dropped``.
    """

    def __init__(self, A, pivot_tol=1e-12):
        A = np.array(A, dtype=float)
        n = len(A)
        L = np.zeros((n, n))
        keep = []
        dropped = []
        max_pivot = 0.0
        for k in range(n):
            idx = np.array(keep, dtype=int)
            lk = L[k, idx] if keep else np.zeros(0)
            # row k of L restricted to kept columns solves L_kept lk = A[kept, k]
            if keep:
                lk = sla.solve_triangular(L[np.ix_(idx, idx)], A[idx, k], lower=True)
            d = A[k, k] - lk @ lk
            max_pivot = max(max_pivot, A[k, k])
            if d <= pivot_tol * max_pivot:
                dropped.append(k)
                continue
            L[k, idx] = lk
            L[k, k] = np.sqrt(d)
            keep.append(k)
        self.keep = np.array(keep, dtype=int)
        self.dropped = dropped
        self.L = L[np.ix_(self.keep, self.keep)]
        self.n = n

    def solve(self, b):
        out = np.zeros(self.n)
        if len(self.keep):
            y = sla.solve_triangular(self.L, b[self.keep], lower=True)
            out[self.keep] = sla.solve_triangular(self.L.T, y, lower=False)
        return out
