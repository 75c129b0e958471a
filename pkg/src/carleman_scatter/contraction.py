"""Carleman-weighted Picard iteration for the coupled system of Fourier coefficients.

Each step minimises, over fields ``phi = (phi_1..phi_N)`` with ``phi_m = F_m``
on the boundary,

    sum_m int W |sum_n s_mn Lap phi_n + grad phi_n . B_mn
                 + sum_l a_mnl grad phi_n . grad v_l^prev|^2
    + neumann_weight * sum_m int_bdry |d_nu phi_m - G_m|^2
    + epsilon * |phi|_{H^2}^2

discretised with second-order finite differences.  Dirichlet values are
eliminated; the Neumann condition enters as penalty rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .basis import BasisSet
from .grid import SpatialGrid
from .lsq import LeastSquaresError, NormalEquations, block_order, nested_dissection
from .preprocess import FourierTraces

log = logging.getLogger(__name__)

MAX_EXPONENT = 700.0


class ContractionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CarlemanParams:
    x0: tuple[float, float] = (0.0, -10.0)
    beta: float = 20.0
    lam: float = 6.0
    epsilon: float = 10**-5.5
    normalize_radius: bool = False
    neumann_weight: float | None = None  # None -> 1e4 * mean(W)

    def __post_init__(self):
        if max(abs(self.x0[0]), abs(self.x0[1])) <= 1.0:
            raise ValueError(f"x0={self.x0} must lie outside the closed square")
        if self.beta <= 0 or self.lam < 0 or self.epsilon <= 0:
            raise ValueError("beta and epsilon must be positive, lambda non-negative")


@dataclass
class FourierField:
    """``values[m, i, j]``: the N coefficient fields on the grid."""

    values: np.ndarray
    grid: SpatialGrid

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def norm(self) -> float:
        return float(np.sqrt(self.grid.integrate(np.sum(np.abs(self.values) ** 2, axis=0))))

    @classmethod
    def zeros(cls, N: int, grid: SpatialGrid) -> "FourierField":
        return cls(np.zeros((N,) + grid.shape, dtype=complex), grid)


@dataclass
class ContractionRun:
    params: CarlemanParams
    P: int
    diffs: list[float] = field(default_factory=list)
    iterates: list[FourierField] = field(default_factory=list)
    solver_info: list[dict] = field(default_factory=list)
    rate_estimate: float | None = None
    final: FourierField | None = None
    initial: FourierField | None = None


def carleman_weight(grid: SpatialGrid, params: CarlemanParams) -> np.ndarray:
    """``exp(2 lambda r^-beta)`` with ``r = |x - x0|`` (optionally divided by its minimum over the grid)."""
    X, Y = grid.mesh
    r = np.hypot(X - params.x0[0], Y - params.x0[1])
    if params.normalize_radius:
        r = r / r.min()
    expo = 2.0 * params.lam * r ** (-params.beta)
    if expo.max() >= MAX_EXPONENT:
        raise ContractionError(f"Carleman exponent {expo.max():.1f} overflows; enable normalize_radius or lower lambda")
    return np.exp(expo)


def _split(op: sp.csr_matrix, rows, inner, outer):
    sub = op[rows]
    return sub[:, inner].tocsr(), sub[:, outer].tocsr()


def h2_regularizer(grid: SpatialGrid) -> sp.csr_matrix:
    """Rows of the discrete H^2 seminorms (values, first and second differences), area-scaled."""
    n, h = grid.n, grid.h
    eye = sp.identity(n, format="csr")
    fwd = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n)) / h
    sec = sp.diags([np.ones(n - 2), -2 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2], shape=(n - 2, n)) / h**2
    cen = sp.diags([-np.ones(n - 2), np.ones(n - 2)], [0, 2], shape=(n - 2, n)) / (2 * h)
    inner = sp.identity(n, format="csr")[1:-1]
    blocks = [
        sp.kron(eye, eye),
        sp.kron(fwd, eye), sp.kron(eye, fwd),
        sp.kron(sec, inner), sp.kron(inner, sec),
        np.sqrt(2.0) * sp.kron(cen, cen),
    ]
    return (h * sp.vstack(blocks)).tocsr()


class PicardSystem:
    """Everything about the step that does not depend on the previous iterate."""

    def __init__(self, grid: SpatialGrid, basis: BasisSet, traces: FourierTraces, params: CarlemanParams,
                 weight: np.ndarray | None = None, check_condition: bool = True):
        if basis.S is None:
            raise ValueError("basis coefficients not computed")
        if traces.N != basis.N:
            raise ValueError(f"traces carry N={traces.N} components, basis has N={basis.N}")
        self.grid, self.basis, self.traces, self.params = grid, basis, traces, params
        self.N = basis.N
        self.weight = carleman_weight(grid, params) if weight is None else weight
        self.nw = params.neumann_weight if params.neumann_weight is not None else 1e4 * float(self.weight.mean())
        self.check_condition = check_condition
        I, Bd = grid.interior_flat, grid.boundary_flat
        self.I, self.Bd = I, Bd
        self.ni = len(I)
        h = grid.h

        self.lap_I, self.lap_B = _split(grid.laplacian, I, I, Bd)
        self.dx_I, self.dx_B = _split(grid.dx, I, I, Bd)
        self.dy_I, self.dy_B = _split(grid.dy, I, I, Bd)
        self.row_scale = np.sqrt(self.weight.ravel()[I] * h**2)

        # common sparsity pattern of the interior blocks
        pattern = (abs(self.lap_I) + abs(self.dx_I) + abs(self.dy_I)).tocoo()
        self.p_rows, self.p_cols = pattern.row, pattern.col
        self.p_lap = np.asarray(self.lap_I[self.p_rows, self.p_cols]).ravel()
        self.p_dx = np.asarray(self.dx_I[self.p_rows, self.p_cols]).ravel()
        self.p_dy = np.asarray(self.dy_I[self.p_rows, self.p_cols]).ravel()

        # Neumann penalty rows on edge nodes (corners excluded)
        edge = np.flatnonzero(~grid.is_corner)
        self.neu_I, self.neu_B = _split(grid.normal_derivative, edge, I, Bd)
        neu_scale = np.sqrt(self.nw * h)
        self.neu_I = (neu_scale * self.neu_I).tocsr()
        F_b, G_b = traces.F, traces.G  # (N, n_boundary)
        self.F_b = F_b
        self.neu_rhs = neu_scale * (G_b[:, edge] - (self.neu_B @ F_b.T).T)

        reg = np.sqrt(params.epsilon) * h2_regularizer(grid)
        cols = reg.tocsc()
        self.reg_I = cols[:, I].tocsr()
        self.reg_rhs = -(cols[:, Bd] @ F_b.T).T

        # node-major nested dissection keeps the fill of the coupled factorisation moderate
        m = grid.n - 2
        self.ordering = block_order(nested_dissection(m, m), self.N)

    # -- assembly ---------------------------------------------------------------

    def coupling(self, v_prev: FourierField) -> tuple[np.ndarray, np.ndarray]:
        """First-order coefficients ``C[m, n, p]`` (x and y) at interior points."""
        gx, gy = self.grid.gradient(v_prev.values)
        gx = gx.reshape(self.N, -1)[:, self.I]
        gy = gy.reshape(self.N, -1)[:, self.I]
        a, B = self.basis.a, self.basis.B
        Cx = B[:, :, 0, None] + np.einsum("mnl,lp->mnp", a, gx)
        Cy = B[:, :, 1, None] + np.einsum("mnl,lp->mnp", a, gy)
        return Cx, Cy

    def pde_rows(self, v_prev: FourierField) -> tuple[sp.csr_matrix, np.ndarray]:
        """Weighted PDE residual rows over interior unknowns and the matching right-hand side."""
        N, ni = self.N, self.ni
        S = self.basis.S
        Cx, Cy = self.coupling(v_prev)
        r, c = self.p_rows, self.p_cols
        vals = (S[:, :, None] * self.p_lap[None, None, :]
                + Cx[:, :, r] * self.p_dx[None, None, :]
                + Cy[:, :, r] * self.p_dy[None, None, :])
        vals = vals * self.row_scale[r][None, None, :]
        mm, nn = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
        rows = (mm[:, :, None] * ni + r[None, None, :]).ravel()
        cols = (nn[:, :, None] * ni + c[None, None, :]).ravel()
        A = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(N * ni, N * ni))

        F = self.F_b
        lapF = (self.lap_B @ F.T).T
        dxF = (self.dx_B @ F.T).T
        dyF = (self.dy_B @ F.T).T
        known = (np.einsum("mn,np->mp", S, lapF) + np.einsum("mnp,np->mp", Cx, dxF)
                 + np.einsum("mnp,np->mp", Cy, dyF))
        rhs = -(known * self.row_scale[None, :]).ravel()
        return A, rhs

    # -- solver ---------------------------------------------------------------

    def step(self, v_prev: FourierField) -> tuple[FourierField, dict]:
        """Minimise the functional with the coefficient frozen at ``v_prev``."""
        A, rhs = self.pde_rows(v_prev)
        N, ni = self.N, self.ni
        eye = sp.identity(N, format="csr")
        rows = sp.vstack([A, sp.kron(eye, self.neu_I)]).tocsr()
        full_rhs = np.concatenate([rhs, self.neu_rhs.ravel()])
        try:
            fac = NormalEquations(rows, sp.kron(eye, self.reg_I), check=self.check_condition, ordering=self.ordering)
            res = fac.solve(full_rhs, self.reg_rhs.ravel())
        except LeastSquaresError as exc:
            raise ContractionError(str(exc)) from exc
        info = {"condition": res.condition, "residual": float(res.residual_norm)}
        return self.assemble_field(res.x.reshape(N, ni)), info

    def assemble_field(self, interior: np.ndarray) -> FourierField:
        vals = np.zeros((self.N, self.grid.n * self.grid.n), dtype=complex)
        vals[:, self.I] = interior
        vals[:, self.Bd] = self.F_b
        return FourierField(vals.reshape((self.N,) + self.grid.shape), self.grid)

    def objective(self, phi: FourierField, v_prev: FourierField) -> float:
        """Value of the discrete functional at ``phi`` (for diagnostics and tests)."""
        A, rhs = self.pde_rows(v_prev)
        x = phi.values.reshape(self.N, -1)[:, self.I]
        pde = A @ x.ravel() - rhs
        neu = (self.neu_I @ x.T).T - self.neu_rhs
        reg = (self.reg_I @ x.T).T - self.reg_rhs
        return float(sum(np.sum(np.abs(t) ** 2) for t in (pde, neu, reg)))


def initial_guess(traces: FourierTraces, grid: SpatialGrid, params: CarlemanParams, mode: str = "qr") -> FourierField:
    """Quasi-reversibility start: per component minimise ``|Lap phi|^2`` with the Cauchy data.

    ``mode="zero"`` returns the zero field instead.
    """
    N = traces.N
    if mode == "zero":
        return FourierField.zeros(N, grid)
    if mode != "qr":
        raise ValueError(f"unknown init mode {mode!r}")
    h = grid.h
    I, Bd = grid.interior_flat, grid.boundary_flat
    lap_I, lap_B = _split(grid.laplacian, I, I, Bd)
    edge = np.flatnonzero(~grid.is_corner)
    neu_I, neu_B = _split(grid.normal_derivative, edge, I, Bd)
    nw = params.neumann_weight if params.neumann_weight is not None else 1e4 * float(carleman_weight(grid, params).mean())
    sn = np.sqrt(nw * h)
    reg = (np.sqrt(params.epsilon) * h2_regularizer(grid)).tocsc()
    rows = sp.vstack([h * lap_I, sn * neu_I]).tocsr()
    F, G = traces.F, traces.G
    rhs = np.concatenate([-(h * (lap_B @ F.T)), sn * (G[:, edge].T - neu_B @ F.T)])
    reg_rhs = -(reg[:, Bd] @ F.T)
    res = NormalEquations(rows, reg[:, I]).solve(rhs, reg_rhs)
    vals = np.zeros((N, grid.n * grid.n), dtype=complex)
    vals[:, I] = res.x.T
    vals[:, Bd] = F
    return FourierField(vals.reshape((N,) + grid.shape), grid)


def picard_step(v_prev: FourierField, traces: FourierTraces, basis: BasisSet, weight: np.ndarray | None,
                params: CarlemanParams, system: PicardSystem | None = None) -> FourierField:
    """One contraction step with the nonlinear coefficient frozen at ``v_prev``."""
    if system is None:
        system = PicardSystem(v_prev.grid, basis, traces, params, weight=weight)
    return system.step(v_prev)[0]


def relative_difference(new: FourierField, old: FourierField) -> float:
    num = FourierField(new.values - old.values, new.grid).norm()
    den = new.norm()
    return num / den if den > 0 else (0.0 if num == 0 else np.inf)


def run_contraction(traces: FourierTraces, basis: BasisSet, grid: SpatialGrid, params: CarlemanParams,
                    P: int, init_mode: str = "qr", keep_iterates: bool = False,
                    initial: FourierField | None = None, system: PicardSystem | None = None) -> ContractionRun:
    """Iterate the Picard step ``P`` times and record consecutive relative differences."""
    if P < 1:
        raise ValueError("P must be at least 1")
    if system is None:
        system = PicardSystem(grid, basis, traces, params)
    v = initial_guess(traces, grid, params, init_mode) if initial is None else initial
    run = ContractionRun(params=params, P=P, initial=v)
    prev_norm = v.norm()
    for p in range(1, P + 1):
        new, info = system.step(v)
        d = relative_difference(new, v)
        if not np.isfinite(d):
            raise ContractionError(f"non-finite difference at iteration {p}")
        norm = new.norm()
        if prev_norm > 0 and norm > 10 * prev_norm:
            log.warning("iterate norm grew from %.3e to %.3e at iteration %d", prev_norm, norm, p)
        run.diffs.append(d)
        run.solver_info.append(info)
        if keep_iterates:
            run.iterates.append(new)
        v, prev_norm = new, norm
    run.final = v
    run.rate_estimate = rate_estimate(run.diffs)
    return run


def rate_estimate(diffs) -> float | None:
    """Geometric mean of successive ratios ``diffs[p] / diffs[p-1]`` for p >= 2."""
    d = np.asarray(diffs, dtype=float)
    if len(d) < 2 or np.any(d[:-1] <= 0):
        return None
    return float(np.exp(np.mean(np.log(d[1:] / d[:-1]))))


@dataclass(frozen=True)
class DiagnosticRow:
    lam: float
    ratio: float
    status: str


def bump(grid: SpatialGrid, center=(0.0, 0.0), radius: float = 0.5) -> np.ndarray:
    """``(1 - |x - c|^2 / rho^2)^3`` inside the disk, zero outside."""
    X, Y = grid.mesh
    s = 1.0 - ((X - center[0]) ** 2 + (Y - center[1]) ** 2) / radius**2
    return np.where(s > 0, s, 0.0) ** 3


def carleman_diagnostic(test_field: np.ndarray, grid: SpatialGrid, params: CarlemanParams,
                        lambdas=(6.0, 12.0, 24.0)) -> list[DiagnosticRow]:
    """Ratio ``int W|Lap v|^2 / (lam int W|grad v|^2 + lam^3 int W|v|^2)`` per lambda."""
    v = np.asarray(test_field)
    trace = np.abs(grid.boundary_values(v)).max()
    dnu = np.abs(grid.normal_derivative @ v.ravel()).max()
    if trace > 1e-10 or dnu > 1e-10:
        raise ValueError(f"test field must vanish with its normal derivative on the boundary "
                         f"(|v|={trace:.1e}, |d_nu v|={dnu:.1e})")
    rows = []
    if not np.any(v):
        return [DiagnosticRow(float(lam), float("nan"), "skipped") for lam in lambdas]
    lap = grid.laplace(v)
    gx, gy = grid.gradient(v)
    for lam in lambdas:
        W = carleman_weight(grid, replace(params, lam=float(lam)))
        top = grid.integrate(W * np.abs(lap) ** 2)
        bottom = lam * grid.integrate(W * (np.abs(gx) ** 2 + np.abs(gy) ** 2)) + lam**3 * grid.integrate(W * np.abs(v) ** 2)
        rows.append(DiagnosticRow(float(lam), float(top / bottom), "ok"))
    return rows
