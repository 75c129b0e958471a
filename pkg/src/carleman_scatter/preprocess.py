"""From measured Cauchy data to the boundary traces of the Fourier coefficients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import BasisSet, build_basis, on_angles
from .forward import BoundaryDataset, direction, incident_wave

LOG_FLOOR = 1e-14


class PreprocessError(RuntimeError):
    pass


@dataclass(frozen=True)
class LogBoundaryField:
    """``v = log(f / u_inc) / k^2`` at boundary nodes x angles."""

    v_boundary: np.ndarray
    unwrap_applied: bool


@dataclass(frozen=True)
class FourierTraces:
    """``F[m, b]`` and ``G[m, b]``: Dirichlet and Neumann traces of ``v_m`` at boundary node b."""

    F: np.ndarray
    G: np.ndarray

    @property
    def N(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True)
class CutoffResult:
    N: int
    e: np.ndarray  # e[N - 1] = e(N)
    sustained_increase_at: int | None


def _incident_on_boundary(data: BoundaryDataset) -> np.ndarray:
    return incident_wave(data.grid.boundary_xy, data.k, data.angular.thetas).T


def compute_log_boundary(data: BoundaryDataset, unwrap: bool = True, align_boundary: bool = True) -> LogBoundaryField:
    """Complex logarithm of ``f / u_inc`` scaled by ``1/k^2``.

    The phase is unwrapped along the angles, separately for every boundary
    node.  With ``align_boundary`` the per-node branches are additionally
    shifted by multiples of 2pi so the first-angle phase is continuous along
    the boundary curve.
    """
    rho = data.f / _incident_on_boundary(data)
    if np.any(np.abs(rho) < LOG_FLOOR):
        raise PreprocessError("f vanishes at some sample; logarithm undefined")
    phase = np.angle(rho)
    if unwrap:
        phase = np.unwrap(phase, axis=1)
        if align_boundary:
            start = phase[:, 0]
            phase = phase + (np.unwrap(start) - start)[:, None]
    v = (np.log(np.abs(rho)) + 1j * phase) / data.k**2
    return LogBoundaryField(v_boundary=v, unwrap_applied=unwrap)


def projection_matrix(basis: BasisSet, weights: np.ndarray, mode: str = "lsq") -> np.ndarray:
    """Matrix mapping samples on the data angles to N basis coefficients.

    ``"quadrature"`` applies the rule ``sum_i w_i Psi_m(theta_i)``.  ``"lsq"``
    is the discrete least-squares fit in the same weighted inner product
    (it reduces to the quadrature map as the angular grid is refined, and is
    exact for data lying in the span of the basis).
    """
    if basis.psi is None:
        raise ValueError("basis has no angle tables; call on_angles first")
    Q = basis.psi * weights
    if mode == "quadrature":
        return Q
    if mode == "lsq":
        gram = Q @ basis.psi.T
        return np.linalg.solve(gram, Q)
    raise ValueError(f"unknown projection mode {mode!r}")


def compute_traces(logfield: LogBoundaryField, data: BoundaryDataset, basis: BasisSet,
                   projection: str = "lsq") -> FourierTraces:
    """``F_m = int v Psi_m``, ``G_m = k^-2 int Psi_m (g/f - i k theta_hat . nu)``."""
    if basis.psi is None or basis.psi.shape[1] != data.angular.n_theta:
        basis = on_angles(basis, data.angular)
    if np.any(np.abs(data.f) < LOG_FLOOR):
        raise PreprocessError("f vanishes at some sample; g/f undefined")
    proj = projection_matrix(basis, data.angular.weights, projection)
    dirs = direction(data.angular.thetas)  # (n_theta, 2)
    nu_dot = data.grid.normals @ dirs.T  # (n_boundary, n_theta)
    neumann = (data.g / data.f - 1j * data.k * nu_dot) / data.k**2
    F = logfield.v_boundary @ proj.T
    G = neumann @ proj.T
    return FourierTraces(F=np.ascontiguousarray(F.T), G=np.ascontiguousarray(G.T))


def truncation_errors(data: BoundaryDataset, basis: BasisSet, side: str = "bottom",
                      projection: str = "quadrature") -> np.ndarray:
    """``e(N)`` for N = 1..basis.N on one side of the boundary."""
    if basis.psi is None or basis.psi.shape[1] != data.angular.n_theta:
        basis = on_angles(basis, data.angular)
    nodes = data.grid.side_nodes(side)
    f = data.f[nodes]  # (n_side, n_theta)
    wt = data.angular.weights
    wx = np.full(len(nodes), data.grid.h)
    wx[[0, -1]] *= 0.5
    W = wx[:, None] * wt[None, :]
    norm_f = np.sqrt(np.sum(W * np.abs(f) ** 2))
    psi = basis.psi
    errors = np.empty(basis.N)
    approx = np.zeros_like(f)
    if projection == "quadrature":
        coeffs = f @ (psi * wt).T  # (n_side, N)
        for N in range(1, basis.N + 1):
            approx = approx + np.outer(coeffs[:, N - 1], psi[N - 1])
            errors[N - 1] = np.sqrt(np.sum(W * np.abs(f - approx) ** 2)) / norm_f
    else:
        for N in range(1, basis.N + 1):
            sub = psi[:N]
            coeffs = f @ projection_matrix_from(sub, wt).T
            approx = coeffs @ sub
            errors[N - 1] = np.sqrt(np.sum(W * np.abs(f - approx) ** 2)) / norm_f
    return errors


def projection_matrix_from(psi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    Q = psi * weights
    return np.linalg.solve(Q @ psi.T, Q)


def select_cutoff(e: np.ndarray, run: int = 3, plateau: float = 1e-6) -> tuple[int, int | None]:
    """Critical N: smallest N within ``plateau`` of the minimum of e before the first sustained increase.

    A sustained increase is ``run`` consecutive increases.  Returns the
    selected N and the N at which the sustained increase starts (or None).
    """
    e = np.asarray(e, dtype=float)
    steps = np.diff(e)
    if len(steps) and np.all(steps >= 0):
        raise PreprocessError("e(N) is non-decreasing from N=1; data and basis do not match")
    stop = len(e)
    start = None
    for i in range(len(steps) - run + 1):
        if np.all(steps[i:i + run] > 0):
            stop, start = i + 1, i + 1
            break
    head = e[:stop]
    best = np.flatnonzero(head <= head.min() + plateau)[0]
    return int(best) + 1, start


def choose_cutoff(data: BoundaryDataset, n_max: int = 30, side: str = "bottom", basis: BasisSet | None = None,
                  projection: str = "quadrature", fine_quadrature: int = 4096) -> CutoffResult:
    """Pick N from the data by the truncation-misfit curve e(N)."""
    if basis is None:
        basis = build_basis(n_max, max(fine_quadrature, 50 * n_max), data.angular)
    e = truncation_errors(data, basis, side=side, projection=projection)
    N, start = select_cutoff(e)
    return CutoffResult(N=N, e=e, sustained_increase_at=start)
