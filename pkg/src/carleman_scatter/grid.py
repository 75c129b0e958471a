"""Uniform grid over the square [-1, 1]^2 and the finite-difference operators on it.

Arrays are indexed ``u[i, j]`` with ``i`` along x and ``j`` along y
(``meshgrid(..., indexing="ij")``); flattening is C-order, so the flat index
of node ``(i, j)`` is ``i * n + j``.

Boundary nodes are enumerated counter-clockwise starting at the corner
(-1, -1): bottom edge left to right, right edge bottom to top, top edge right
to left, left edge top to bottom.  There are ``4 (n - 1)`` of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


def diff1_matrix(n: int, h: float) -> sp.csr_matrix:
    """First derivative, central inside and second-order one-sided at both ends."""
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1] = -0.5
        D[i, i + 1] = 0.5
    D[0, 0:3] = [-1.5, 2.0, -0.5]
    D[n - 1, n - 3:n] = [0.5, -2.0, 1.5]
    return (D / h).tocsr()


def diff2_matrix(n: int, h: float) -> sp.csr_matrix:
    """Second derivative, central inside and second-order one-sided at both ends."""
    D = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        D[i, i - 1:i + 2] = [1.0, -2.0, 1.0]
    D[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
    D[n - 1, n - 4:n] = [-1.0, 4.0, -5.0, 2.0]
    return (D / h**2).tocsr()


@dataclass(frozen=True)
class SpatialGrid:
    """``n x n`` nodes over the closed square, spacing ``h = 2 / (n - 1)``."""

    n: int

    def __post_init__(self):
        if self.n < 5:
            raise ValueError(f"grid needs at least 5 points per side, got {self.n}")

    @property
    def h(self) -> float:
        return 2.0 / (self.n - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n)

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(self.x, self.x, indexing="ij"))

    # -- boundary bookkeeping ------------------------------------------------

    @cached_property
    def boundary_ij(self) -> np.ndarray:
        """``(4(n-1), 2)`` array of (i, j) indices, counter-clockwise from (-1, -1)."""
        n = self.n
        r = np.arange(n - 1)
        bottom = np.stack([r, np.zeros_like(r)], axis=1)
        right = np.stack([np.full_like(r, n - 1), r], axis=1)
        top = np.stack([n - 1 - r, np.full_like(r, n - 1)], axis=1)
        left = np.stack([np.zeros_like(r), n - 1 - r], axis=1)
        return np.concatenate([bottom, right, top, left])

    @cached_property
    def boundary_flat(self) -> np.ndarray:
        ij = self.boundary_ij
        return ij[:, 0] * self.n + ij[:, 1]

    @cached_property
    def boundary_xy(self) -> np.ndarray:
        return self.x[self.boundary_ij]

    @cached_property
    def is_corner(self) -> np.ndarray:
        ij = self.boundary_ij
        edge = (ij == 0) | (ij == self.n - 1)
        return edge[:, 0] & edge[:, 1]

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normal per boundary node; corners get the normalised average."""
        ij = self.boundary_ij
        nu = np.zeros((len(ij), 2))
        nu[ij[:, 0] == 0, 0] -= 1.0
        nu[ij[:, 0] == self.n - 1, 0] += 1.0
        nu[ij[:, 1] == 0, 1] -= 1.0
        nu[ij[:, 1] == self.n - 1, 1] += 1.0
        return nu / np.linalg.norm(nu, axis=1, keepdims=True)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    @cached_property
    def interior_flat(self) -> np.ndarray:
        return np.flatnonzero(self.interior_mask.ravel())

    def side_nodes(self, side: str = "bottom") -> np.ndarray:
        """Boundary indices (into ``boundary_ij``) of one full side, corners included."""
        ij = self.boundary_ij
        sel = {
            "bottom": ij[:, 1] == 0,
            "top": ij[:, 1] == self.n - 1,
            "left": ij[:, 0] == 0,
            "right": ij[:, 0] == self.n - 1,
        }[side]
        idx = np.flatnonzero(sel)
        # order along the side by the running coordinate
        coord = ij[idx, 0] if side in ("bottom", "top") else ij[idx, 1]
        return idx[np.argsort(coord)]

    def boundary_values(self, field: np.ndarray) -> np.ndarray:
        """Sample ``field[..., n, n]`` at the boundary nodes."""
        ij = self.boundary_ij
        return field[..., ij[:, 0], ij[:, 1]]

    # -- operators -------------------------------------------------------------

    @cached_property
    def _d1(self) -> sp.csr_matrix:
        return diff1_matrix(self.n, self.h)

    @cached_property
    def _d2(self) -> sp.csr_matrix:
        return diff2_matrix(self.n, self.h)

    @cached_property
    def dx(self) -> sp.csr_matrix:
        return sp.kron(self._d1, sp.identity(self.n), format="csr")

    @cached_property
    def dy(self) -> sp.csr_matrix:
        return sp.kron(sp.identity(self.n), self._d1, format="csr")

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        eye = sp.identity(self.n)
        return (sp.kron(self._d2, eye) + sp.kron(eye, self._d2)).tocsr()

    @cached_property
    def normal_derivative(self) -> sp.csr_matrix:
        """Rows of ``nu . grad`` at boundary nodes (one-sided, second order)."""
        nu = self.normals
        rows = self.boundary_flat
        return (sp.diags(nu[:, 0]) @ self.dx[rows] + sp.diags(nu[:, 1]) @ self.dy[rows]).tocsr()

    def gradient(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``u[..., n, n]`` (central inside, one-sided at the edges)."""
        d1 = self._d1.toarray()
        return (np.einsum("ab,...bj->...aj", d1, u), np.einsum("ab,...ib->...ia", d1, u))

    def laplace(self, u: np.ndarray) -> np.ndarray:
        d2 = self._d2.toarray()
        return np.einsum("ab,...bj->...aj", d2, u) + np.einsum("ab,...ib->...ia", d2, u)

    def integrate(self, u: np.ndarray) -> np.ndarray:
        """Tensor trapezoid rule over the square, summed over the last two axes."""
        w = np.full(self.n, self.h)
        w[[0, -1]] *= 0.5
        return np.einsum("i,j,...ij->...", w, w, u)
