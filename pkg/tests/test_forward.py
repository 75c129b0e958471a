import numpy as np
import pytest
from scipy import integrate

from carleman_scatter.basis import AngularGrid
from carleman_scatter.forward import (ForwardError, add_noise, custom_phantom, extract_cauchy, generate_dataset,
                                      incident_wave, make_phantom, phantom_value, read_dataset, solve_forward,
                                      solve_helmholtz, write_dataset)
from carleman_scatter.grid import SpatialGrid


def mean_abs_uniform_complex():
    """E|X + iY| for X, Y independent and uniform on [-1, 1], by 2D quadrature."""
    val, _ = integrate.dblquad(lambda y, x: np.hypot(x, y), -1, 1, -1, 1, epsabs=1e-12)
    return val / 4.0


@pytest.mark.parametrize("pid", ["test1", "test2", "test3", "test4"])
def test_phantom_background_on_boundary(pid):
    assert phantom_value(pid, -1.0, -1.0) == 1.0
    g = SpatialGrid(33)
    ph = make_phantom(pid, g)
    assert np.all(ph.c >= 1)
    assert np.all(g.boundary_values(ph.c) == 1.0)


def test_phantom_examples():
    assert phantom_value("test1", -0.5, -0.5) == 2.0
    assert phantom_value("test1", 0.5, 0.5) == 1.5
    assert phantom_value("test3", 0.0, 0.0) == 2.5
    assert phantom_value("test4", 0.0, 0.6) == 1.5
    with pytest.raises(ValueError):
        phantom_value("test9", 0.0, 0.0)


def test_custom_phantom_rejects_values_below_one():
    g = SpatialGrid(9)
    with pytest.raises(ValueError):
        custom_phantom(g, np.full(g.shape, 0.5))


@pytest.mark.parametrize("n", [32, 64])
def test_zero_contrast_gives_incident_wave(n):
    g = SpatialGrid(n)
    ph = make_phantom("homogeneous", g)
    thetas = np.array([0.0, 1.0, 2.5])
    u = solve_forward(ph, 2 * np.pi, thetas)
    assert np.abs(u - incident_wave(g, 2 * np.pi, thetas)).max() <= 1e-10


def _manufactured_error(n, k=2.0):
    g = SpatialGrid(n)
    X, Y = g.mesh
    u = np.sin(1.3 * X + 0.4) * np.cos(0.9 * Y) + 0.5j * X * Y**2
    ux = 1.3 * np.cos(1.3 * X + 0.4) * np.cos(0.9 * Y) + 0.5j * Y**2
    uy = -0.9 * np.sin(1.3 * X + 0.4) * np.sin(0.9 * Y) + 1j * X * Y
    lap = -(1.3**2 + 0.9**2) * np.sin(1.3 * X + 0.4) * np.cos(0.9 * Y) + 1j * X
    source = lap + k**2 * u
    robin_x = np.stack([-ux[0, :] - 1j * k * u[0, :], ux[-1, :] - 1j * k * u[-1, :]])
    robin_y = np.stack([-uy[:, 0] - 1j * k * u[:, 0], uy[:, -1] - 1j * k * u[:, -1]])
    sol = solve_helmholtz(g, np.ones(g.shape), k, source, robin_x, robin_y)
    return np.abs(sol - u).max()


def test_manufactured_solution_second_order():
    ns = np.array([32, 64, 128])
    errs = np.array([_manufactured_error(n) for n in ns])
    h = 2.0 / (ns - 1)
    orders = np.log(errs[:-1] / errs[1:]) / np.log(h[:-1] / h[1:])
    assert np.all((orders >= 1.8) & (orders <= 2.2)), orders


def test_plane_wave_normal_derivative_second_order():
    k = 2 * np.pi
    errs = []
    for n in (33, 65):
        g = SpatialGrid(n)
        ang = AngularGrid(5)
        u = incident_wave(g, k, ang.thetas)
        data = extract_cauchy(u, g, k, ang)
        d = np.stack([np.cos(ang.thetas), np.sin(ang.thetas)], axis=1)
        exact = 1j * k * (g.normals @ d.T) * incident_wave(g.boundary_xy, k, ang.thetas).T
        keep = ~g.is_corner
        assert np.allclose(data.f, incident_wave(g.boundary_xy, k, ang.thetas).T, atol=1e-14)
        errs.append(np.abs(data.g[keep] - exact[keep]).max())
    assert 3.4 <= errs[0] / errs[1] <= 4.6


def test_test1_field_grid_converged():
    k = 3 * np.pi
    peaks = []
    for n in (64, 128):
        ph = make_phantom("test1", SpatialGrid(n))
        u = solve_forward(ph, k, np.pi / 2)
        u_sc = u - incident_wave(ph.grid, k, np.pi / 2)
        peaks.append(np.abs(u_sc).max())
    assert np.all(np.isfinite(peaks))
    assert abs(peaks[0] - peaks[1]) / peaks[1] <= 0.05


def test_shape_contract():
    data = generate_dataset("test1", 17, 9, 2 * np.pi)
    assert data.f.shape == (4 * 16, 9) and data.g.shape == (4 * 16, 9)
    assert not data.noise_applied


def test_noise_zero_is_identity():
    clean = generate_dataset("test1", 17, 9, 2 * np.pi)
    same = add_noise(clean, 0.0, seed=5)
    assert np.array_equal(same.f, clean.f) and np.array_equal(same.g, clean.g)


def test_noise_deterministic_and_calibrated():
    clean = generate_dataset("test1", 25, 128, 2 * np.pi)
    a = add_noise(clean, 0.1, seed=3)
    b = add_noise(clean, 0.1, seed=3)
    assert np.array_equal(a.f, b.f) and np.array_equal(a.g, b.g)
    assert a.noise_applied and a.delta == 0.1 and a.seed == 3
    assert clean.f.size >= 10_000
    expected = 0.1 * mean_abs_uniform_complex()
    observed = np.mean(np.abs(a.f / clean.f - 1))
    assert abs(observed - expected) <= 0.05 * expected
    with pytest.raises(ValueError):
        add_noise(clean, -0.1, seed=3)


def test_noise_hitting_zero_fails():
    clean = generate_dataset("homogeneous", 9, 5, 1.0)
    zero = clean.__class__(**{**clean.__dict__, "f": np.zeros_like(clean.f)})
    with pytest.raises(ForwardError):
        add_noise(zero, 0.1, seed=1)


def test_angle_relabelling_invariance():
    ph = make_phantom("test1", SpatialGrid(25))
    thetas = np.linspace(0, 2 * np.pi, 11)
    perm = np.random.default_rng(0).permutation(11)
    u = solve_forward(ph, 2 * np.pi, thetas)
    u_perm = solve_forward(ph, 2 * np.pi, thetas[perm])
    assert np.allclose(u_perm, u[perm], rtol=0, atol=1e-12)


def test_dataset_round_trip(tmp_path):
    data = generate_dataset("test2", 13, 7, 2 * np.pi, delta=0.05, seed=9, n_data=25)
    write_dataset(data, tmp_path)
    back = read_dataset(tmp_path)
    assert np.array_equal(back.f, data.f) and np.array_equal(back.g, data.g)
    assert back.delta == 0.05 and back.seed == 9 and back.meta["n_data"] == 25
    assert np.array_equal(back.angular.thetas, data.angular.thetas)
    with open(tmp_path / "f.csv") as fh:
        assert fh.readline().strip() == "boundary_node_index,theta_index,re,im"


def test_finer_data_grid_restricts_to_coarse_nodes():
    fine = generate_dataset("test1", 33, 5, 2 * np.pi)
    coarse = generate_dataset("test1", 17, 5, 2 * np.pi, n_data=33)
    g17 = SpatialGrid(17)
    lookup = {tuple(ij): b for b, ij in enumerate(SpatialGrid(33).boundary_ij)}
    sel = [lookup[(2 * i, 2 * j)] for i, j in g17.boundary_ij]
    assert np.array_equal(coarse.f, fine.f[sel])
