"""Recover the dielectric constant from the coefficient fields and score it against a phantom."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .basis import AngularGrid, BasisSet
from .contraction import FourierField
from .forward import Phantom, direction


@dataclass
class Reconstruction:
    c: np.ndarray
    v_comp: FourierField
    k: float
    angular: AngularGrid


@dataclass
class InclusionMetrics:
    name: str
    true_value: float
    max_in_truth: float
    rel_error_max: float
    peak_offset: float
    peak_location: tuple[float, float]


@dataclass
class Metrics:
    l2_rel: float
    inclusions: list[InclusionMetrics] = field(default_factory=list)

    @property
    def rel_error_max(self) -> float:
        return max((m.rel_error_max for m in self.inclusions), default=0.0)

    @property
    def peak_offset(self) -> float:
        return max((m.peak_offset for m in self.inclusions), default=0.0)

    @property
    def max_in_truth(self) -> float:
        return max((m.max_in_truth for m in self.inclusions), default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "l2_rel": self.l2_rel,
            "rel_error_max": self.rel_error_max,
            "peak_offset": self.peak_offset,
            "inclusions": [asdict(m) for m in self.inclusions],
        }


def synthesize_v(v_comp: FourierField, basis: BasisSet, theta) -> np.ndarray:
    """``v(x, theta) = sum_n v_n(x) Psi_n(theta)``; a leading theta axis is added for array input."""
    psi, _ = basis.evaluate(np.asarray(theta, dtype=float))
    return np.tensordot(psi.T, v_comp.values[: basis.N], axes=1) if psi.ndim == 2 else \
        np.tensordot(psi, v_comp.values[: basis.N], axes=1)


def c_integrand(v: np.ndarray, grid, k: float, theta) -> np.ndarray:
    """``|Lap v + 2ik grad v . theta_hat + k^2 (grad v)^2|`` with the complex (unconjugated) square."""
    d = direction(theta)
    gx, gy = grid.gradient(v)
    lap = grid.laplace(v)
    dx = d[..., 0].reshape(d.shape[:-1] + (1, 1))
    dy = d[..., 1].reshape(d.shape[:-1] + (1, 1))
    expr = lap + 2j * k * (gx * dx + gy * dy) + k**2 * (gx**2 + gy**2)
    return np.abs(expr)


def reconstruct_c(v_comp: FourierField, basis: BasisSet, k: float, angular: AngularGrid) -> Reconstruction:
    """``c(x) = 1 + (1/2pi) int_0^2pi |...| dtheta``, angle integral by the rule of ``angular``."""
    thetas = angular.thetas
    v = synthesize_v(v_comp, basis, thetas)
    vals = c_integrand(v, v_comp.grid, k, thetas)
    c = 1.0 + np.tensordot(angular.weights, vals, axes=1) / (2.0 * np.pi)
    return Reconstruction(c=c, v_comp=v_comp, k=k, angular=angular)


def _voronoi_regions(phantom: Phantom) -> tuple[list[np.ndarray], list[np.ndarray]]:
    h = phantom.grid.h
    dists = [ndimage.distance_transform_edt(~inc.mask, sampling=h) for inc in phantom.inclusions]
    nearest = np.argmin(np.stack(dists), axis=0)
    return [nearest == i for i in range(len(dists))], dists


def score(c: np.ndarray, phantom: Phantom) -> Metrics:
    """Per-inclusion peak value error and peak location error, plus the global relative L2 error.

    The peak of ``c - 1`` for an inclusion is searched in the part of the
    domain closer to that inclusion than to any other.  Its offset is the
    distance to the inclusion centre, or to the support when the inclusion has
    no centre (a ring).  Ties in the maximum go to the node nearest the
    centre (or the support), so a flat plateau over the inclusion counts as
    correctly placed.
    """
    grid = phantom.grid
    c = np.asarray(c)
    if c.shape != grid.shape:
        raise ValueError("reconstruction and phantom grids differ")
    diff = grid.integrate((c - phantom.c) ** 2)
    l2_rel = float(np.sqrt(diff / grid.integrate(phantom.c**2)))
    metrics = Metrics(l2_rel=l2_rel)
    if not phantom.inclusions:
        return metrics
    regions, dists = _voronoi_regions(phantom)
    X, Y = grid.mesh
    for inc, region, dist in zip(phantom.inclusions, regions, dists):
        max_in = float(c[inc.mask].max())
        masked = np.where(region, c - 1.0, -np.inf)
        if inc.center is not None:
            to_target = np.hypot(X - inc.center[0], Y - inc.center[1])
        else:
            to_target = dist
        ties = np.flatnonzero(masked.ravel() == masked.max())
        best = ties[np.argmin(to_target.ravel()[ties])]
        i, j = np.unravel_index(best, grid.shape)
        px, py = float(X[i, j]), float(Y[i, j])
        offset = float(to_target[i, j])
        metrics.inclusions.append(InclusionMetrics(
            name=inc.name, true_value=inc.value, max_in_truth=max_in,
            rel_error_max=abs(max_in - inc.value) / inc.value, peak_offset=offset, peak_location=(px, py)))
    return metrics
