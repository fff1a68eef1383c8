"""Preconditioned conjugate gradients with warm starts and reusable
preconditioners.

The iteration is the textbook PCG loop, run strictly sequentially so a
rerun on identical inputs reproduces every float. Preconditioners are
handles that outlive one solve: the motion driver builds one on an early
step and keeps applying it while the matrix drifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    BreakdownIC,
    MaxIterExceeded,
    NotPositiveDefinite,
    ZeroDiagonal,
)


@dataclass(frozen=True)
class SolverConfig:
    """tol is the relative residual target ||b - Ax|| <= tol * ||b||.
    max_iter defaults to 10 * dof count. warm_start is a full-length
    initial guess (a previous step's solution)."""

    tol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"
    warm_start: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tol must lie strictly between 0 and 1")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.preconditioner not in ("none", "jacobi", "ic0"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


@dataclass
class SolveResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    preconditioner: "Preconditioner"


class Preconditioner:
    """Reusable application handle M^-1 r.

    kind records what was actually built; fallback marks an IC(0) request
    that broke down and was silently downgraded to jacobi.
    """

    def __init__(self, kind, apply_fn, fallback=False, note=""):
        self.kind = kind
        self._apply = apply_fn
        self.fallback = fallback
        self.note = note

    def apply(self, r):
        return self._apply(r)

    def __repr__(self):
        tail = ", fallback from ic0" if self.fallback else ""
        return f"Preconditioner({self.kind}{tail})"


def ic0_factor(A):
    """Zero-fill incomplete Cholesky: L with the lower-triangle pattern of
    A and A ~ L L^T on that pattern. Raises BreakdownIC on a nonpositive
    pivot, which happens for some SPD matrices; callers fall back."""
    A = sp.csr_matrix(A)
    A.sort_indices()
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    rows = []                      # per-row dict: col -> L value
    diag = np.zeros(n)
    for i in range(n):
        sl = slice(indptr[i], indptr[i + 1])
        cols = indices[sl]
        vals = data[sl]
        a_ii = None
        row_i = {}
        for c, a in zip(cols, vals):
            if c > i:
                continue
            if c == i:
                a_ii = a
                continue
            s = a
            row_c = rows[c]
            for j, lij in row_i.items():
                lcj = row_c.get(j)
                if lcj is not None:
                    s -= lij * lcj
            row_i[c] = s / diag[c]
        if a_ii is None:
            raise ZeroDiagonal(f"row {i} has no diagonal entry")
        d = a_ii - sum(v * v for v in row_i.values())
        if d <= 0.0:
            raise BreakdownIC(
                f"incomplete Cholesky pivot {d:.3e} at row {i}; the factor "
                "does not exist on this sparsity pattern")
        diag[i] = np.sqrt(d)
        rows.append(row_i)

    cols_out, rows_out, vals_out = [], [], []
    for i, row_i in enumerate(rows):
        for j, v in row_i.items():
            rows_out.append(i)
            cols_out.append(j)
            vals_out.append(v)
        rows_out.append(i)
        cols_out.append(i)
        vals_out.append(diag[i])
    return sp.csc_matrix((vals_out, (rows_out, cols_out)), shape=(n, n))


def build_preconditioner(A, kind="jacobi"):
    """none (identity), jacobi (inverse diagonal), or ic0. An ic0 that
    breaks down degrades to jacobi and flags itself."""
    if kind == "none":
        return Preconditioner("none", lambda r: r)
    if kind == "jacobi":
        d = A.diagonal().copy()
        bad = np.flatnonzero(d == 0.0)
        if bad.size:
            raise ZeroDiagonal(f"zero diagonal at dof {int(bad[0])}")
        inv = 1.0 / d
        return Preconditioner("jacobi", lambda r: inv * r)
    if kind == "ic0":
        try:
            L = ic0_factor(A)
        except BreakdownIC as e:
            repl = build_preconditioner(A, "jacobi")
            return Preconditioner("jacobi", repl._apply, fallback=True,
                                  note=str(e))
        lu = splu((L @ L.T).tocsc())
        return Preconditioner("ic0", lu.solve)
    raise ValueError(f"unknown preconditioner kind {kind!r}")


def solve(A, b, config=None, x0=None, preconditioner=None):
    """PCG on an SPD system. Returns a SolveResult whose x satisfies
    ||b - A x|| <= tol * ||b||; convergence is confirmed against the true
    residual, not just the recurrence."""
    config = config or SolverConfig()
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    max_iter = config.max_iter if config.max_iter is not None else 10 * max(n, 1)
    prec = preconditioner
    if prec is None:
        prec = build_preconditioner(A, config.preconditioner)

    if x0 is None:
        x0 = config.warm_start
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return SolveResult(x=np.zeros(n), iterations=0, residual=0.0,
                           converged=True, preconditioner=prec)
    target = config.tol * norm_b

    r = b - A @ x
    res = float(np.linalg.norm(r))
    if res <= target:
        return SolveResult(x=x, iterations=0, residual=res,
                           converged=True, preconditioner=prec)

    z = prec.apply(r)
    p = z.copy()
    rz = float(np.dot(r, z))
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(np.dot(p, Ap))
        if pAp <= 0.0:
            raise NotPositiveDefinite(
                f"p^T A p = {pAp:.3e} at iteration {it}; the reduced system "
                "is not positive definite")
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        res = float(np.linalg.norm(r))
        if res <= target:
            true_r = b - A @ x
            true_res = float(np.linalg.norm(true_r))
            if true_res <= target:
                return SolveResult(x=x, iterations=it, residual=true_res,
                                   converged=True, preconditioner=prec)
            # recurrence drifted: continue from the true residual
            r = true_r
            res = true_res
            z = prec.apply(r)
            p = z.copy()
            rz = float(np.dot(r, z))
            continue
        z = prec.apply(r)
        rz_new = float(np.dot(r, z))
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    raise MaxIterExceeded(
        f"no convergence within {max_iter} iterations "
        f"(residual {res:.3e}, target {target:.3e})",
        best=x, residual=res, iterations=max_iter)
