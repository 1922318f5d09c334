"""Sparse matrices, block systems and checked linear solvers.

Storage and factorisation are delegated to :mod:`scipy.sparse`; every
solve re-computes its residual independently and raises
:class:`SolverFailure` instead of returning an unverified vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

DIRECT_RTOL = 1e-10
ITERATIVE_RTOL = 1e-10


class SolverFailure(RuntimeError):
    """A linear solve that did not reach its residual target."""

    def __init__(self, message, *, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


def from_triplets(rows: int, cols: int, entries) -> sp.csr_matrix:
    """CSR matrix from ``(i, j, v)`` triplets, summing duplicates."""
    entries = list(entries)
    if entries:
        i, j, v = (np.asarray(a) for a in zip(*entries))
    else:
        i = j = np.zeros(0, dtype=np.int64)
        v = np.zeros(0)
    i = i.astype(np.int64)
    j = j.astype(np.int64)
    if i.size and (i.min() < 0 or i.max() >= rows or j.min() < 0 or j.max() >= cols):
        raise ValueError(f"triplet index out of range for shape ({rows}, {cols})")
    A = sp.coo_matrix((v.astype(float), (i, j)), shape=(rows, cols)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def relative_residual(A, x, b) -> float:
    r = A @ x - b
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def _check(A, x, b, tol, what, iterations=None):
    if not np.all(np.isfinite(x)):
        raise SolverFailure(f"{what}: non-finite solution", iterations=iterations)
    res = relative_residual(A, x, b)
    if res > tol:
        raise SolverFailure(
            f"{what}: relative residual {res:.3e} exceeds {tol:.1e}"
            + (f" after {iterations} iterations" if iterations is not None else ""),
            iterations=iterations,
            residual=res,
        )
    return res


class LUFactor:
    """Sparse LU factorisation reusable across right-hand sides."""

    def __init__(self, A, tol: float = DIRECT_RTOL):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"LU needs a square matrix, got {A.shape}")
        self.A = A
        self.tol = tol
        try:
            self._lu = spla.splu(A)
        except RuntimeError as exc:
            # SuperLU reports "Factor is exactly singular" with the pivot column
            raise SolverFailure(f"sparse LU failed: {exc}") from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = self._lu.solve(b)
        _check(self.A, x, b, self.tol, "sparse LU")
        return x


def lu_solve(A, b, tol: float = DIRECT_RTOL) -> np.ndarray:
    return LUFactor(A, tol).solve(b)


class _Counter:
    def __init__(self):
        self.n = 0

    def __call__(self, *_):
        self.n += 1


def cg_solve(A, b, tol: float = ITERATIVE_RTOL, maxit: int | None = None, M=None):
    """Conjugate gradients for SPD ``A``; returns ``(x, iterations)``."""
    b = np.asarray(b, dtype=float)
    maxit = 10 * A.shape[0] if maxit is None else maxit
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b), 0
    count = _Counter()
    # scipy judges convergence on the recursively updated residual
    x, info = spla.cg(A, b, rtol=0.5 * tol, atol=0.0, maxiter=maxit, M=M, callback=count)
    if info != 0:
        res = relative_residual(A, x, b)
        raise SolverFailure(
            f"CG did not converge in {count.n} iterations (relative residual {res:.3e})",
            iterations=count.n,
            residual=res,
        )
    _check(A, x, b, tol, "CG", count.n)
    return x, count.n


def gmres_solve(
    A, b, tol: float = ITERATIVE_RTOL, restart: int = 50, maxit: int | None = None
):
    """Jacobi-preconditioned restarted GMRES; returns ``(x, iterations)``."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    maxit = 10 * n if maxit is None else maxit
    if np.linalg.norm(b) == 0.0:
        return np.zeros_like(b), 0
    d = A.diagonal()
    d = np.where(d != 0.0, d, 1.0)
    M = spla.LinearOperator((n, n), matvec=lambda v: v / d)
    count = _Counter()
    x, info = spla.gmres(
        A,
        b,
        rtol=0.5 * tol,
        atol=0.0,
        restart=min(restart, n),
        maxiter=max(1, -(-maxit // min(restart, n))),
        M=M,
        callback=count,
        callback_type="pr_norm",
    )
    res = relative_residual(A, x, b)
    if info != 0 or res > tol:
        raise SolverFailure(
            f"GMRES did not converge in {count.n} iterations (relative residual {res:.3e})",
            iterations=count.n,
            residual=res,
        )
    return x, count.n


class ScatterPattern:
    """Fixed CSR sparsity for element-local matrices with given dof maps.

    The pattern is computed once; :meth:`assemble` only sums values.
    """

    def __init__(self, row_dofs: np.ndarray, col_dofs: np.ndarray, shape):
        nr, nc = row_dofs.shape[1], col_dofs.shape[1]
        I = np.repeat(row_dofs, nc, axis=1).ravel()
        J = np.tile(col_dofs, (1, nr)).ravel()
        key = I * shape[1] + J
        uniq, inv = np.unique(key, return_inverse=True)
        self.shape = tuple(shape)
        self._inv = inv
        self.indices = (uniq % shape[1]).astype(np.int32)
        rows = uniq // shape[1]
        self.indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=shape[0]))]).astype(
            np.int32
        )
        self.nnz = len(uniq)

    def assemble(self, local: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self._inv, weights=local.ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


@dataclass
class BlockSystem:
    """Monolithic linear system over named unknown blocks.

    ``blocks[(row, col)]`` holds the coupling of test block ``row`` with
    trial block ``col``.  Essential constraints are recorded per block and
    eliminated symmetrically when the monolithic matrix is formed.
    """

    names: tuple
    sizes: tuple
    blocks: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=dict)
    constraints: tuple = ()

    @property
    def offsets(self) -> dict:
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        return {n: int(o) for n, o in zip(self.names, off)}

    @property
    def size(self) -> int:
        return int(sum(self.sizes))

    def add(self, row: str, col: str, A) -> None:
        i, j = self.names.index(row), self.names.index(col)
        if A.shape != (self.sizes[i], self.sizes[j]):
            raise ValueError(f"block ({row}, {col}) has shape {A.shape}, expected "
                             f"{(self.sizes[i], self.sizes[j])}")
        if (row, col) in self.blocks:
            self.blocks[(row, col)] = self.blocks[(row, col)] + A
        else:
            self.blocks[(row, col)] = sp.csr_matrix(A)

    def add_rhs(self, row: str, b) -> None:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.sizes[self.names.index(row)],):
            raise ValueError(f"rhs for {row} has shape {b.shape}")
        self.rhs[row] = self.rhs.get(row, 0.0) + b

    def with_constraint(self, name: str, dofs, values) -> "BlockSystem":
        dofs = np.asarray(dofs, dtype=np.int64)
        values = np.broadcast_to(np.asarray(values, dtype=float), dofs.shape)
        return replace(self, constraints=self.constraints + ((name, dofs, values.copy()),))

    def matrix(self) -> sp.csr_matrix:
        grid = [[self.blocks.get((r, c)) for c in self.names] for r in self.names]
        for k, r in enumerate(self.names):
            if grid[k][k] is None:
                grid[k][k] = sp.csr_matrix((self.sizes[k], self.sizes[k]))
        return sp.bmat(grid, format="csr")

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [np.broadcast_to(self.rhs.get(n, 0.0), (s,)) for n, s in zip(self.names, self.sizes)]
        ).astype(float)

    def assembled(self):
        """Monolithic ``(A, b)`` with constrained rows and columns eliminated."""
        A, b = self.matrix(), self.vector()
        if not self.constraints:
            return A, b
        off = self.offsets
        fixed = np.zeros(self.size, dtype=bool)
        g = np.zeros(self.size)
        for name, dofs, vals in self.constraints:
            fixed[off[name] + dofs] = True
            g[off[name] + dofs] = vals
        keep = sp.diags((~fixed).astype(float))
        b = keep @ (b - A @ g) + g * fixed
        A = (keep @ A @ keep + sp.diags(fixed.astype(float))).tocsr()
        A.eliminate_zeros()
        return A, b

    def split(self, x: np.ndarray) -> dict:
        off = self.offsets
        return {n: x[off[n] : off[n] + s] for n, s in zip(self.names, self.sizes)}

    def solve(self, method: str = "direct", tol: float = ITERATIVE_RTOL) -> dict:
        A, b = self.assembled()
        if method == "direct":
            x = lu_solve(A, b)
        elif method == "gmres":
            x, it = gmres_solve(A, b, tol=tol)
            logger.debug("GMRES converged in %d iterations", it)
        else:
            raise ValueError(f"unknown solver {method!r}; expected 'direct' or 'gmres'")
        return self.split(x)
