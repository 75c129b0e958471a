"""Synthetic boundary data: phantoms, the Robin-truncated Helmholtz solve, Cauchy traces, noise."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import AngularGrid
from .grid import SpatialGrid

PHANTOM_IDS = ("test1", "test2", "test3", "test4", "homogeneous")


class ForwardError(RuntimeError):
    """The discrete Helmholtz system could not be solved."""


@dataclass(frozen=True)
class Inclusion:
    name: str
    mask: np.ndarray
    value: float
    center: tuple[float, float] | None  # None when the support does not contain a natural centre


@dataclass(frozen=True)
class Phantom:
    id: str
    grid: SpatialGrid
    c: np.ndarray
    inclusions: tuple[Inclusion, ...] = ()


def phantom_value(id: str, x, y) -> np.ndarray:
    """True dielectric constant of a named phantom at points ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = np.ones(np.broadcast(x, y).shape)
    for inc in _inclusion_shapes(id):
        c = np.where(inc[1](x, y), inc[2], c)
    return c


def _inclusion_shapes(id: str):
    if id == "test1":
        return [
            ("lower disk", lambda x, y: (x + 0.5) ** 2 + (y + 0.5) ** 2 <= 0.04, 2.0, (-0.5, -0.5)),
            ("upper disk", lambda x, y: (x - 0.5) ** 2 + (y - 0.5) ** 2 <= 0.04, 1.5, (0.5, 0.5)),
        ]
    if id == "test2":
        return [("rectangle", lambda x, y: np.maximum(np.abs(x - 0.5) / 0.5, np.abs(y) / 1.5) <= 0.3, 2.0, (0.5, 0.0))]
    if id == "test3":
        return [("square", lambda x, y: np.maximum(np.abs(x), np.abs(y)) <= 0.09, 2.5, (0.0, 0.0))]
    if id == "test4":
        return [
            ("ring", lambda x, y: (x**2 + y**2 > 0.25) & (x**2 + y**2 < 0.49), 1.5, None),
            ("inner disk", lambda x, y: x**2 + y**2 < 0.04, 1.5, (0.0, 0.0)),
        ]
    if id == "homogeneous":
        return []
    raise ValueError(f"unknown phantom {id!r}; expected one of {PHANTOM_IDS}")


def make_phantom(id: str, grid: SpatialGrid) -> Phantom:
    X, Y = grid.mesh
    shapes = _inclusion_shapes(id)
    c = phantom_value(id, X, Y)
    inclusions = tuple(Inclusion(name, sel(X, Y), value, center) for name, sel, value, center in shapes)
    return Phantom(id=id, grid=grid, c=c, inclusions=inclusions)


def custom_phantom(grid: SpatialGrid, c: np.ndarray, id: str = "custom") -> Phantom:
    c = np.asarray(c, dtype=float)
    if c.shape != grid.shape:
        raise ValueError("phantom shape does not match grid")
    if np.any(c < 1):
        raise ValueError("dielectric constant must be >= 1")
    return Phantom(id=id, grid=grid, c=c)


def direction(theta) -> np.ndarray:
    """Unit propagation direction ``(cos theta, sin theta)``, stacked on the last axis."""
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def incident_wave(grid_or_points, k: float, theta) -> np.ndarray:
    """``exp(i k theta_hat . x)``; returns shape ``theta.shape + points.shape[:-1]``."""
    if isinstance(grid_or_points, SpatialGrid):
        X, Y = grid_or_points.mesh
        pts = np.stack([X, Y], axis=-1)
    else:
        pts = np.asarray(grid_or_points, dtype=float)
    d = direction(theta)
    phase = np.tensordot(d, pts, axes=([-1], [-1]))
    return np.exp(1j * k * phase)


def helmholtz_matrix(grid: SpatialGrid, c: np.ndarray, k: float) -> sp.csc_matrix:
    """Five-point ``Delta + k^2 c`` with ``d_nu u - i k u`` eliminated through ghost nodes.

    Along each axis a boundary node sees one ghost neighbour whose value is
    fixed by the Robin condition written with the axis normal; a corner sees
    two, one per axis.
    """
    n, h = grid.n, grid.h
    main = np.zeros(grid.shape, dtype=complex) - 4.0 / h**2 + k**2 * np.asarray(c)
    rows, cols, vals = [], [], []
    idx = np.arange(n * n).reshape(grid.shape)

    def add(r, cc, v):
        rows.append(r.ravel())
        cols.append(cc.ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    for axis in (0, 1):
        for side in (0, n - 1):
            sl = [slice(None), slice(None)]
            sl[axis] = side
            # ghost value = mirror neighbour + 2 h i k u_boundary
            main[tuple(sl)] += 2j * k / h
    add(idx, idx, main)
    for axis in (0, 1):
        for step in (-1, 1):
            src = [slice(None), slice(None)]
            dst = [slice(None), slice(None)]
            if step == 1:
                src[axis], dst[axis] = slice(0, n - 1), slice(1, n)
            else:
                src[axis], dst[axis] = slice(1, n), slice(0, n - 1)
            coef = np.full(idx[tuple(src)].shape, 1.0 / h**2)
            # the mirrored ghost doubles the inward neighbour at the boundary
            edge = [slice(None), slice(None)]
            edge[axis] = 0 if step == 1 else -1
            coef[tuple(edge)] = 2.0 / h**2
            add(idx[tuple(src)], idx[tuple(dst)], coef)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))
    return A


def robin_rhs(grid: SpatialGrid, robin_x=None, robin_y=None) -> np.ndarray:
    """Right-hand-side contribution of inhomogeneous Robin data ``d_nu u - i k u = r``.

    ``robin_x`` holds r for the x-facing sides (shape ``(2, n)``: left, right,
    indexed by j); ``robin_y`` for bottom and top (indexed by i).
    """
    n, h = grid.n, grid.h
    out = np.zeros(grid.shape, dtype=complex)
    if robin_x is not None:
        out[0, :] -= 2.0 * np.asarray(robin_x[0]) / h
        out[-1, :] -= 2.0 * np.asarray(robin_x[1]) / h
    if robin_y is not None:
        out[:, 0] -= 2.0 * np.asarray(robin_y[0]) / h
        out[:, -1] -= 2.0 * np.asarray(robin_y[1]) / h
    return out


def factorize(A: sp.spmatrix):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise ForwardError(f"Helmholtz system is singular ({exc}); perturb k") from exc
    return lu


def solve_helmholtz(grid: SpatialGrid, c: np.ndarray, k: float, source: np.ndarray,
                    robin_x=None, robin_y=None) -> np.ndarray:
    """Solve ``Delta u + k^2 c u = source`` with Robin data; ``source`` may carry a leading batch axis."""
    lu = factorize(helmholtz_matrix(grid, c, k))
    src = np.asarray(source, dtype=complex)
    rhs = src + robin_rhs(grid, robin_x, robin_y)
    flat = rhs.reshape(-1, grid.n * grid.n).T
    sol = lu.solve(np.ascontiguousarray(flat))
    if not np.all(np.isfinite(sol)):
        raise ForwardError("non-finite Helmholtz solution; perturb k")
    return sol.T.reshape(src.shape)


def solve_forward(phantom: Phantom, k: float, theta) -> np.ndarray:
    """Total field ``u = u_sc + u_inc`` for one angle or an array of angles.

    One factorisation serves every angle.
    """
    if k <= 0:
        raise ValueError("wave number must be positive")
    grid = phantom.grid
    theta = np.asarray(theta, dtype=float)
    u_inc = incident_wave(grid, k, theta)
    source = -(k**2) * (phantom.c - 1.0) * u_inc
    u_sc = solve_helmholtz(grid, phantom.c, k, source)
    return u_sc + u_inc


@dataclass
class BoundaryDataset:
    """Cauchy data ``f = u``, ``g = d_nu u`` at boundary nodes x angles.

    Arrays have shape ``(n_boundary, n_theta)``.  ``g`` at corner nodes is the
    derivative along the averaged corner normal; the inverse solver ignores it.
    """

    f: np.ndarray
    g: np.ndarray
    k: float
    grid: SpatialGrid
    angular: AngularGrid
    delta: float = 0.0
    seed: int | None = None
    noise_applied: bool = False
    meta: dict = field(default_factory=dict)

    def header(self) -> dict:
        return {
            "n": self.grid.n,
            "n_theta": self.angular.n_theta,
            "angular_rule": self.angular.rule,
            "angular_order": self.angular.order,
            "thetas": self.angular.thetas.tolist(),
            "k": self.k,
            "delta": self.delta,
            "seed": self.seed,
            "noise_applied": self.noise_applied,
            "n_boundary": int(self.f.shape[0]),
            **self.meta,
        }


def extract_cauchy(u: np.ndarray, grid: SpatialGrid, k: float, angular: AngularGrid) -> BoundaryDataset:
    """Noiseless ``f*``, ``g*`` from fields ``u[theta, i, j]``."""
    if u.shape != (angular.n_theta,) + grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid/angles")
    flat = u.reshape(angular.n_theta, -1)
    f = flat[:, grid.boundary_flat].T
    g = (grid.normal_derivative @ flat.T)
    return BoundaryDataset(f=np.ascontiguousarray(f), g=np.ascontiguousarray(g), k=k, grid=grid, angular=angular)


def restrict_dataset(data: BoundaryDataset, coarse: SpatialGrid) -> BoundaryDataset:
    """Subsample data from a finer grid whose nodes contain the coarse nodes."""
    fine = data.grid
    ratio, rem = divmod(fine.n - 1, coarse.n - 1)
    if rem:
        raise ValueError(f"grid n={fine.n} does not nest n={coarse.n}")
    lookup = {tuple(ij): b for b, ij in enumerate(fine.boundary_ij)}
    sel = np.array([lookup[(i * ratio, j * ratio)] for i, j in coarse.boundary_ij])
    meta = dict(data.meta, n_data=fine.n)
    return replace(data, f=data.f[sel], g=data.g[sel], grid=coarse, meta=meta)


def _uniform_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, shape) + 1j * rng.uniform(-1.0, 1.0, shape)


def add_noise(data: BoundaryDataset, delta: float, seed: int) -> BoundaryDataset:
    """Multiplicative noise ``f*(1 + delta rand)``, ``g*(1 + delta rand)``."""
    if delta < 0:
        raise ValueError("noise level must be non-negative")
    if delta == 0:
        return replace(data, delta=0.0, seed=seed, noise_applied=False)
    rng = np.random.default_rng(seed)
    f = data.f * (1.0 + delta * _uniform_complex(rng, data.f.shape))
    g = data.g * (1.0 + delta * _uniform_complex(rng, data.g.shape))
    if np.any(f == 0):
        raise ForwardError(f"noisy f hit zero with seed {seed}; use seed {seed + 1}")
    return replace(data, f=f, g=g, delta=float(delta), seed=seed, noise_applied=True)


def generate_dataset(phantom_id: str, n: int, n_theta: int, k: float, delta: float = 0.0,
                     seed: int = 0, n_data: int | None = None) -> BoundaryDataset:
    """Forward solve on an ``n_data`` grid, restrict to ``n``, then add noise."""
    n_data = n if n_data is None else n_data
    fine = SpatialGrid(n_data)
    angular = AngularGrid(n_theta)
    u = solve_forward(make_phantom(phantom_id, fine), k, angular.thetas)
    data = extract_cauchy(u, fine, k, angular)
    data.meta.update(phantom=phantom_id, n_data=n_data)
    if n_data != n:
        data = restrict_dataset(data, SpatialGrid(n))
    return add_noise(data, delta, seed)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_dataset(data: BoundaryDataset, path: str | Path) -> list[Path]:
    """``header.json`` plus ``f.csv`` / ``g.csv`` with (boundary_node_index, theta_index, re, im)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    header = path / "header.json"
    header.write_text(json.dumps(data.header(), indent=2, sort_keys=True) + "\n")
    written.append(header)
    for name, arr in (("f", data.f), ("g", data.g)):
        target = path / f"{name}.csv"
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["boundary_node_index", "theta_index", "re", "im"])
            for b in range(arr.shape[0]):
                for t in range(arr.shape[1]):
                    z = arr[b, t]
                    w.writerow([b, t, _fmt(z.real), _fmt(z.imag)])
        written.append(target)
    return written


def read_dataset(path: str | Path) -> BoundaryDataset:
    path = Path(path)
    header = json.loads((path / "header.json").read_text())
    grid = SpatialGrid(header["n"])
    angular = AngularGrid(header["n_theta"], header.get("angular_rule", "trapezoid"), header.get("angular_order", 0))
    shape = (header["n_boundary"], header["n_theta"])
    arrays = {}
    for name in ("f", "g"):
        raw = np.loadtxt(path / f"{name}.csv", delimiter=",", skiprows=1)
        arr = np.zeros(shape, dtype=complex)
        arr[raw[:, 0].astype(int), raw[:, 1].astype(int)] = raw[:, 2] + 1j * raw[:, 3]
        arrays[name] = arr
    known = {"n", "n_theta", "angular_rule", "angular_order", "thetas", "k", "delta", "seed",
             "noise_applied", "n_boundary"}
    meta = {key: val for key, val in header.items() if key not in known}
    return BoundaryDataset(f=arrays["f"], g=arrays["g"], k=header["k"], grid=grid, angular=angular,
                           delta=header["delta"], seed=header["seed"], noise_applied=header["noise_applied"],
                           meta=meta)
