"""Regularised sparse least squares through the normal equations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SINGULAR_CONDITION = 1e14


class LeastSquaresError(RuntimeError):
    pass


@dataclass(frozen=True)
class LSQResult:
    x: np.ndarray
    residual_norm: float | np.ndarray
    condition: float | None = None


def _condest(M: sp.csc_matrix, fac: "NormalEquations") -> float:
    # onenormest draws its probe vectors from the global numpy RNG; pin it so reruns agree bit for bit
    state = np.random.get_state()
    np.random.seed(0)
    try:
        return _condest_unseeded(M, fac)
    finally:
        np.random.set_state(state)


def _condest_unseeded(M: sp.csc_matrix, fac: "NormalEquations") -> float:
    dtype = M.dtype
    n = M.shape[0]
    inv = spla.LinearOperator((n, n), matvec=fac._lu_solve, rmatvec=lambda y: fac._lu_solve(y, trans="H"),
                              dtype=dtype)
    if np.iscomplexobj(M.data):
        # onenormest needs real operators; the real 2x2 embedding has the same 1-norm up to a factor 2
        return float(spla.onenormest(abs(M)) * spla.onenormest(_realify(inv, n)))
    return float(spla.onenormest(M) * spla.onenormest(inv))


def _realify(op, n):
    def mv(y):
        z = op.matvec(y[:n] + 1j * y[n:])
        return np.concatenate([z.real, z.imag])

    def rmv(y):
        z = op.rmatvec(y[:n] + 1j * y[n:])
        return np.concatenate([z.real, z.imag])

    return spla.LinearOperator((2 * n, 2 * n), matvec=mv, rmatvec=rmv, dtype=float)


def nested_dissection(nx: int, ny: int, width: int = 2, leaf: int = 6) -> np.ndarray:
    """Geometric nested-dissection order of an ``nx`` by ``ny`` node grid (row-major numbering).

    Separators are ``width`` lines thick, enough to decouple the halves of an
    operator whose stencil reaches ``width`` nodes along each axis.
    """
    idx = np.arange(nx * ny).reshape(nx, ny)
    out = []

    def rec(i0, i1, j0, j1):
        a, b = i1 - i0, j1 - j0
        if a <= 0 or b <= 0:
            return
        if max(a, b) <= max(leaf, width + 1):
            out.append(idx[i0:i1, j0:j1].ravel())
        elif a >= b:
            mid = i0 + (a - width) // 2
            rec(i0, mid, j0, j1)
            rec(mid + width, i1, j0, j1)
            out.append(idx[mid:mid + width, j0:j1].ravel())
        else:
            mid = j0 + (b - width) // 2
            rec(i0, i1, j0, mid)
            rec(i0, i1, mid + width, j1)
            out.append(idx[i0:i1, mid:mid + width].ravel())

    rec(0, nx, 0, ny)
    return np.concatenate(out)


def block_order(node_order: np.ndarray, n_blocks: int) -> np.ndarray:
    """Node-major permutation for unknowns numbered block-major (``block * n_nodes + node``)."""
    n_nodes = len(node_order)
    return (node_order[:, None] + n_nodes * np.arange(n_blocks)[None, :]).ravel()


class NormalEquations:
    """Factored ``A^H A + R^H R``; reusable for many right-hand sides.

    With ``ordering`` (a permutation of the unknowns) the factorisation
    follows that order without pivoting, which is safe because the normal
    matrix is Hermitian positive definite.
    """

    def __init__(self, rows: sp.spmatrix, regularizer: sp.spmatrix | None = None, check: bool = True,
                 ordering: np.ndarray | None = None):
        A = sp.csr_matrix(rows)
        M = (A.conj().T @ A).tocsc()
        if regularizer is not None:
            R = sp.csr_matrix(regularizer)
            M = (M + R.conj().T @ R).tocsc()
            self.R = R
        else:
            self.R = None
        self.A = A
        self.M = M
        self.perm = ordering
        try:
            if ordering is None:
                self.lu = spla.splu(M, permc_spec="MMD_AT_PLUS_A")
            else:
                Mp = M[ordering][:, ordering].tocsc()
                self.lu = spla.splu(Mp, permc_spec="NATURAL", diag_pivot_thresh=0.0,
                                    options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise LeastSquaresError(f"normal equations are singular: {exc} (condition estimate: inf)") from exc
        self.condition = _condest(M, self) if check else None
        if self.condition is not None and not self.condition < SINGULAR_CONDITION:
            raise LeastSquaresError(f"normal equations numerically singular, condition estimate {self.condition:.2e}")

    def _lu_solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        if self.perm is None:
            return self.lu.solve(b, trans=trans)
        x = np.empty_like(b)
        x[self.perm] = self.lu.solve(np.ascontiguousarray(b[self.perm]), trans=trans)
        return x

    def solve(self, rhs, reg_rhs=None) -> LSQResult:
        rhs = np.asarray(rhs)
        dtype = np.result_type(self.M.dtype, rhs.dtype)
        b = self.A.conj().T @ rhs
        if reg_rhs is not None:
            b = b + self.R.conj().T @ np.asarray(reg_rhs)
        if np.iscomplexobj(b) and not np.iscomplexobj(self.M.data):
            x = self._lu_solve(np.ascontiguousarray(b.real)) + 1j * self._lu_solve(np.ascontiguousarray(b.imag))
        else:
            x = self._lu_solve(np.ascontiguousarray(b.astype(dtype)))
        if not np.all(np.isfinite(x)):
            raise LeastSquaresError("least-squares solution is not finite")
        res = self.A @ x - rhs
        sq = np.sum(np.abs(res) ** 2, axis=0)
        if self.R is not None:
            rr = self.R @ x - (0 if reg_rhs is None else np.asarray(reg_rhs))
            sq = sq + np.sum(np.abs(rr) ** 2, axis=0)
        return LSQResult(x=x, residual_norm=np.sqrt(sq), condition=self.condition)


def solve_weighted_least_squares(rows: sp.spmatrix, rhs, regularizer: sp.spmatrix | None = None,
                                 reg_rhs=None) -> LSQResult:
    """Minimise ``|rows x - rhs|^2 + |regularizer x - reg_rhs|^2`` via a sparse LU of the normal equations."""
    return NormalEquations(rows, regularizer).solve(rhs, reg_rhs)
