"""Polynomial-exponential orthonormal basis of L^2(0, 2pi) and its coupling coefficients.

The basis is the Gram-Schmidt orthonormalisation of ``theta**(n-1) * exp(theta)``.
Orthogonalising the monomials directly is hopeless beyond a handful of terms,
so we orthogonalise ``theta * Psi_n`` against ``Psi_1..Psi_n`` instead.  Both
families span the same nested spaces, so the resulting functions are the same
(leading coefficients are kept positive).  The orthogonalisation coefficients
give a recurrence that evaluates ``Psi_n`` and ``Psi_n'`` stably at any angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi


class BasisError(RuntimeError):
    """Raised when the basis cannot be built to working precision."""


def gauss_legendre_panels(a: float, b: float, total: int, order: int = 16):
    """Composite Gauss-Legendre rule with roughly ``total`` nodes on [a, b]."""
    panels = max(1, total // order)
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def end_corrected_weights(n: int, h: float, order: int) -> np.ndarray:
    """Trapezoid weights with ``order`` corrected end weights on each side.

    The corrected weights make the rule exact for polynomials of degree
    ``2 * order - 1`` (Gregory-type end corrections).  ``order=0`` is the
    plain trapezoid rule.
    """
    w = np.ones(n)
    if order == 0:
        w[[0, -1]] = 0.5
        return w * h
    if n < 2 * order + 1:
        raise ValueError(f"need at least {2 * order + 1} points for order {order}")
    half = (n - 1) / 2
    x = (np.arange(n) - half) / half
    powers = 2 * np.arange(order)
    A = x[:order, None] ** powers[None, :]
    exact = 2.0 * half / (powers + 1)
    interior = np.sum(x[order:n - order, None] ** powers[None, :], axis=0)
    end = np.linalg.solve(A.T, 0.5 * (exact - interior))
    w[:order] = end
    w[n - order:] = end[::-1]
    return w * h


@dataclass(frozen=True)
class AngularGrid:
    """Uniform incidence angles on [0, 2pi], both endpoints included."""

    n_theta: int
    rule: str = "trapezoid"
    order: int = 0

    def __post_init__(self):
        if self.n_theta < 3:
            raise ValueError("need at least 3 angles")
        if self.rule not in ("trapezoid", "gregory"):
            raise ValueError(f"unknown angular rule {self.rule!r}")

    @property
    def thetas(self) -> np.ndarray:
        return np.linspace(0.0, TWO_PI, self.n_theta)

    @property
    def step(self) -> float:
        return TWO_PI / (self.n_theta - 1)

    @property
    def weights(self) -> np.ndarray:
        order = self.order if self.rule == "gregory" else 0
        return end_corrected_weights(self.n_theta, self.step, order)


@dataclass(frozen=True)
class BasisSet:
    N: int
    fine_quadrature: int
    norm0: float
    recurrence: np.ndarray  # (N, N): theta*Psi_n = sum_j recurrence[j, n] Psi_j (+ next term)
    gs_coeffs: np.ndarray  # (N, N) lower triangular, Psi_n = sum_j c[n, j] theta^j e^theta
    gram_residual: float
    thetas: np.ndarray | None = None
    psi: np.ndarray | None = None
    psi_prime: np.ndarray | None = None
    k: float | None = None
    S: np.ndarray | None = None
    B: np.ndarray | None = None  # (N, N, 2) complex
    a: np.ndarray | None = None  # (N, N, N) real, a[m, n, l]
    extra: dict = field(default_factory=dict)

    def evaluate(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(Psi, Psi')`` with shape ``(N,) + theta.shape``."""
        t = np.asarray(theta, dtype=float)
        H = self.recurrence
        P = np.empty((self.N,) + t.shape)
        dP = np.empty_like(P)
        P[0] = np.exp(t) / self.norm0
        dP[0] = P[0]
        for n in range(self.N - 1):
            c = H[: n + 1, n]
            z = t * P[n] - np.tensordot(c, P[: n + 1], axes=1)
            dz = P[n] + t * dP[n] - np.tensordot(c, dP[: n + 1], axes=1)
            P[n + 1] = z / H[n + 1, n]
            dP[n + 1] = dz / H[n + 1, n]
        return P, dP

    def evaluate_monomial(self, theta) -> np.ndarray:
        """Evaluate through ``gs_coeffs``; only trustworthy for small N."""
        t = np.asarray(theta, dtype=float)
        V = t[..., None] ** np.arange(self.N)
        return np.moveaxis(V @ self.gs_coeffs.T, -1, 0) * np.exp(t)

    @property
    def condition_S(self) -> float:
        if self.S is None:
            raise ValueError("coefficients not computed")
        return float(np.linalg.cond(self.S))

    def report(self) -> dict:
        out = {
            "N": self.N,
            "fine_quadrature": self.fine_quadrature,
            "gram_residual": self.gram_residual,
            "gs_coeffs": self.gs_coeffs.tolist(),
        }
        if self.S is not None:
            sv = np.linalg.svd(self.S, compute_uv=False)
            out.update(k=self.k, cond_S=float(sv[0] / sv[-1]), min_singular_S=float(sv[-1]))
        return out


def _orthonormalise(N: int, nodes: np.ndarray, weights: np.ndarray):
    """Modified Gram-Schmidt with one re-orthogonalisation pass on the Krylov form."""
    Q = np.empty((N, nodes.size))
    H = np.zeros((N, N))
    q = np.exp(nodes)
    norm0 = np.sqrt(weights @ (q * q))
    Q[0] = q / norm0
    for n in range(N - 1):
        z = nodes * Q[n]
        for _ in range(2):
            for j in range(n + 1):
                c = weights @ (z * Q[j])
                z = z - c * Q[j]
                H[j, n] += c
        nrm = np.sqrt(weights @ (z * z))
        if not nrm > 0:
            raise BasisError(f"Gram-Schmidt broke down at n={n + 2}")
        H[n + 1, n] = nrm
        Q[n + 1] = z / nrm
    return norm0, H


def _monomial_coeffs(norm0: float, H: np.ndarray) -> np.ndarray:
    N = H.shape[0]
    C = np.zeros((N, N))
    C[0, 0] = 1.0 / norm0
    for n in range(N - 1):
        shifted = np.zeros(N)
        shifted[1:] = C[n, :-1]
        C[n + 1] = (shifted - H[: n + 1, n] @ C[: n + 1]) / H[n + 1, n]
    return C


def build_basis(N: int, fine_quadrature: int = 4096, angular: AngularGrid | None = None) -> BasisSet:
    """Orthonormalise the first ``N`` polynomial-exponential functions.

    Inner products use a composite Gauss-Legendre rule with about
    ``fine_quadrature`` nodes.  Orthonormality is re-checked on an independent,
    finer rule; a residual above 1e-6 raises :class:`BasisError`.
    """
    if N < 1:
        raise ValueError("N must be positive")
    if fine_quadrature < 50 * N:
        raise ValueError(f"fine_quadrature must be >= 50*N = {50 * N}")
    nodes, weights = gauss_legendre_panels(0.0, TWO_PI, fine_quadrature)
    norm0, H = _orthonormalise(N, nodes, weights)
    basis = BasisSet(N=N, fine_quadrature=fine_quadrature, norm0=norm0, recurrence=H,
                     gs_coeffs=_monomial_coeffs(norm0, H), gram_residual=np.nan)

    check_nodes, check_weights = gauss_legendre_panels(0.0, TWO_PI, 3 * fine_quadrature // 2, order=20)
    P, dP = basis.evaluate(check_nodes)
    gram = (P * check_weights) @ P.T
    residual = float(np.abs(gram - np.eye(N)).max())
    if residual > 1e-6:
        raise BasisError(f"Gram residual {residual:.2e} exceeds 1e-6; lower N (={N})")
    if np.any(np.abs(dP).max(axis=1) == 0):
        raise BasisError("a basis derivative vanishes identically")

    basis = replace(basis, gram_residual=residual)
    if angular is not None:
        basis = on_angles(basis, angular)
    return basis


def on_angles(basis: BasisSet, angular: AngularGrid) -> BasisSet:
    """Attach the ``psi`` / ``psi_prime`` tables for the data angles."""
    thetas = angular.thetas
    psi, dpsi = basis.evaluate(thetas)
    return replace(basis, thetas=thetas, psi=psi, psi_prime=dpsi)


def compute_coefficients(basis: BasisSet, k: float) -> BasisSet:
    """Fill ``S``, ``B`` and ``a`` for wave number ``k`` using the fine rule.

    ``S[m, n] = int Psi_n' Psi_m``,
    ``B[m, n] = 2ik int (theta_hat Psi_n' + theta_hat' Psi_n) Psi_m``,
    ``a[m, n, l] = 2k^2 int Psi_n Psi_l' Psi_m``.
    """
    if k < 0:
        raise ValueError("wave number must be non-negative")
    nodes, w = gauss_legendre_panels(0.0, TWO_PI, basis.fine_quadrature)
    P, dP = basis.evaluate(nodes)
    Pw = P * w
    S = Pw @ dP.T
    dir_ = np.stack([np.cos(nodes), np.sin(nodes)])
    ddir = np.stack([-np.sin(nodes), np.cos(nodes)])
    B = np.empty((basis.N, basis.N, 2), dtype=complex)
    for c in range(2):
        B[:, :, c] = 2j * k * ((Pw * dir_[c]) @ dP.T + (Pw * ddir[c]) @ P.T)
    a = 2.0 * k**2 * np.einsum("mq,nq,lq->mnl", Pw, P, dP, optimize=True)
    return replace(basis, k=float(k), S=S, B=B, a=a)
