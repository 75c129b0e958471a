import numpy as np
import pytest
import mpmath as mp
from hypothesis import given, settings, strategies as st

from carleman_scatter.basis import (TWO_PI, AngularGrid, BasisError, build_basis, compute_coefficients,
                                    end_corrected_weights, gauss_legendre_panels, on_angles)


def exact_basis(N, dps=60):
    """Gram-Schmidt in coefficient space from exact moments, in extended precision.

    With ``M[i, j] = int theta^(i+j) e^(2 theta)`` and ``M = L L^T``, the rows of
    ``L^-1`` hold the monomial coefficients of the orthonormal functions.
    """
    with mp.workdps(dps):
        two_pi = 2 * mp.pi
        moments = [mp.quad(lambda t, p=p: t**p * mp.exp(2 * t), [0, two_pi]) for p in range(2 * N - 1)]
        M = mp.matrix(N, N)
        for i in range(N):
            for j in range(N):
                M[i, j] = moments[i + j]
        L = mp.cholesky(M)
        return L**-1


def eval_exact(C, n, t, dps=60):
    with mp.workdps(dps):
        t = mp.mpf(t)
        val = sum(C[n, j] * t**j for j in range(n + 1)) * mp.exp(t)
        der = sum(C[n, j] * (j * t ** (j - 1) if j else 0) for j in range(n + 1)) * mp.exp(t) + val
        return float(val), float(der)


def test_single_function_matches_closed_form():
    b = build_basis(1, 4096)
    theta = np.linspace(0, TWO_PI, 7)
    psi, dpsi = b.evaluate(theta)
    expected = np.exp(theta) / np.sqrt((np.exp(4 * np.pi) - 1) / 2)
    assert np.allclose(psi[0], expected, rtol=1e-13)
    assert np.allclose(dpsi[0], expected, rtol=1e-13)


def test_agrees_with_extended_precision_gram_schmidt():
    N = 8
    C = exact_basis(N)
    b = build_basis(N, 4096)
    pts = np.array([0.0, 0.7, 2.0, 3.9, 6.1, TWO_PI])
    psi, dpsi = b.evaluate(pts)
    for n in range(N):
        want = np.array([eval_exact(C, n, p) for p in pts])
        assert np.abs(psi[n] - want[:, 0]).max() <= 1e-10 * np.abs(want[:, 0]).max()
        assert np.abs(dpsi[n] - want[:, 1]).max() <= 1e-10 * np.abs(want[:, 1]).max()


@pytest.mark.parametrize("N", [1, 5, 12, 20])
def test_gram_matrix_is_identity_on_independent_rule(N):
    b = build_basis(N, 4096)
    x, w = gauss_legendre_panels(0.0, TWO_PI, 10000, order=12)
    P, _ = b.evaluate(x)
    assert np.abs((P * w) @ P.T - np.eye(N)).max() <= 1e-8
    assert b.gram_residual <= 1e-8


def test_gs_coeffs_lower_triangular_with_nonzero_diagonal():
    b = build_basis(5, 4096)
    C = b.gs_coeffs
    assert np.all(np.triu(C, 1) == 0)
    assert np.all(np.diag(C) != 0)
    theta = np.linspace(0, TWO_PI, 11)
    assert np.allclose(b.evaluate_monomial(theta), b.evaluate(theta)[0], rtol=1e-9, atol=1e-12)


def test_derivative_matches_central_difference():
    b = build_basis(10, 4096)
    h = TWO_PI / 4095
    theta = np.linspace(h, TWO_PI - h, 4000)
    P, dP = b.evaluate(theta)
    fd = (b.evaluate(theta + h)[0] - b.evaluate(theta - h)[0]) / (2 * h)
    assert np.abs(fd - dP).max() / np.abs(dP).max() <= 1e-4


def test_no_derivative_vanishes():
    b = build_basis(15, 4096)
    _, dP = b.evaluate(np.linspace(0, TWO_PI, 300))
    assert np.all(np.abs(dP).max(axis=1) > 0)


def test_s11_and_integration_by_parts():
    b = compute_coefficients(build_basis(15, 4096), 2 * np.pi)
    S = b.S
    assert abs(S[0, 0] - 1.0) <= 1e-8
    P0, _ = b.evaluate(np.array([0.0]))
    P1, _ = b.evaluate(np.array([TWO_PI]))
    boundary = np.outer(P1[:, 0], P1[:, 0]) - np.outer(P0[:, 0], P0[:, 0])
    assert np.abs(S + S.T - boundary).max() <= 1e-8 * max(1.0, np.abs(boundary).max())
    assert np.linalg.svd(S, compute_uv=False)[-1] > 0


def test_coupling_coefficients_against_direct_quadrature():
    k = 3.0
    b = compute_coefficients(build_basis(4, 4096), k)
    x, w = gauss_legendre_panels(0.0, TWO_PI, 8000, order=10)
    P, dP = b.evaluate(x)
    d = np.stack([np.cos(x), np.sin(x)])
    dd = np.stack([-np.sin(x), np.cos(x)])
    m, n, l = 2, 1, 3
    for c in range(2):
        want = 2j * k * (np.sum(w * d[c] * dP[n] * P[m]) + np.sum(w * dd[c] * P[n] * P[m]))
        assert abs(b.B[m, n, c] - want) <= 1e-10 * max(1.0, abs(want))
    want = 2 * k**2 * np.sum(w * P[n] * dP[l] * P[m])
    assert abs(b.a[m, n, l] - want) <= 1e-10 * max(1.0, abs(want))
    assert np.all(b.B.real == 0)


def test_zero_wave_number_kills_a():
    b = compute_coefficients(build_basis(4, 4096), 0.0)
    assert np.all(b.a == 0)
    assert np.all(b.B == 0)


def test_direction_examples():
    from carleman_scatter.forward import direction
    assert np.allclose(direction(0.0), [1.0, 0.0])
    assert np.allclose(direction(np.pi / 2), [0.0, 1.0], atol=1e-16)


def test_fine_quadrature_too_coarse_rejected():
    with pytest.raises(ValueError):
        build_basis(20, 500)


def test_large_N_stays_orthonormal():
    b = build_basis(200, 10000)
    assert b.gram_residual <= 1e-10


def test_broken_orthogonalisation_raises(monkeypatch):
    import carleman_scatter.basis as mod
    real = mod._orthonormalise

    def skewed(N, nodes, weights):
        norm0, H = real(N, nodes, weights)
        H = H.copy()
        H[0, 2] += 0.1
        return norm0, H

    monkeypatch.setattr(mod, "_orthonormalise", skewed)
    with pytest.raises(BasisError):
        build_basis(6, 4096)


def test_angular_grid_invariants():
    ang = AngularGrid(64)
    th = ang.thetas
    assert th[0] == 0.0 and th[-1] == TWO_PI
    assert np.all(np.diff(th) > 0)
    assert abs(ang.weights.sum() - TWO_PI) <= 1e-12
    assert np.isclose(th[1], TWO_PI / 63)


@settings(max_examples=20, deadline=None)
@given(order=st.integers(1, 6), n=st.integers(40, 200))
def test_end_corrected_rule_exact_for_low_degree(order, n):
    w = end_corrected_weights(n, TWO_PI / (n - 1), order)
    x = np.linspace(0, TWO_PI, n)
    for p in range(2 * order):
        exact = TWO_PI ** (p + 1) / (p + 1)
        assert abs(w @ x**p - exact) <= 1e-8 * exact


def test_on_angles_tables():
    ang = AngularGrid(33)
    b = on_angles(build_basis(6, 4096), ang)
    assert b.psi.shape == (6, 33) and b.psi_prime.shape == (6, 33)
    assert np.array_equal(b.psi, b.evaluate(ang.thetas)[0])
