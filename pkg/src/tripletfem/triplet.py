"""Material-equivalence algebra.

A problem is posed by a triplet {chart, metric, material}. Changing one
member and compensating in the others leaves every observable invariant:
fields transform with the transition Jacobian and the two metrics, materials
transform with the same data plus the Jacobian determinant. All operations
are pure, accept stacked operands with shape (..., n, n) / (..., n), and
never special-case the dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import AsymmetricCoefficient, DimensionMismatch, SingularJacobian

# |det J| at or below this floor counts as singular.
DET_FLOOR = 1e-300

# Relative asymmetry tolerated in effective coefficients.
SYMMETRY_RTOL = 1e-10


def _as_square(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionMismatch(f"{name} must be a square matrix (stack)")
    return M


def material_matrix(eps, dim):
    """Normalize a material value: scalars mean isotropic eps * I."""
    eps = np.asarray(eps, dtype=float)
    if eps.ndim >= 2 and eps.shape[-2:] == (dim, dim):
        return eps
    if eps.ndim >= 2:
        raise DimensionMismatch(
            f"material matrix shape {eps.shape[-2:]} disagrees with dimension {dim}")
    return eps[..., None, None] * np.eye(dim)


def _abs_det(J):
    det = np.abs(np.linalg.det(J))
    if np.any(det <= DET_FLOOR):
        raise SingularJacobian(
            f"|det J| = {float(np.min(det)):.3e} is at or below {DET_FLOOR:.0e}"
        )
    return det


def transform_material(eps_i, S_i, S_j, J):
    """Material in chart j equivalent to (eps_i, S_i) in chart i.

    J is the Jacobian of the transition map from chart i to chart j. The
    result is eps_j = J eps_i S_i^-1 J^T S_j / |det J|; the determinant
    enters with its magnitude because it stands for the volume element.
    """
    J = _as_square(J, "J")
    n = J.shape[-1]
    det = _abs_det(J)
    eps_i = material_matrix(eps_i, n)
    S_i = _as_square(S_i, "S_i")
    S_j = _as_square(S_j, "S_j")
    Jt = np.swapaxes(J, -1, -2)
    out = J @ eps_i @ np.linalg.inv(S_i) @ Jt @ S_j
    return out / det[..., None, None]


def transform_material_euclidean(eps_f, J):
    """Special case of transform_material when both metrics are Euclidean:
    eps_g = J eps_f J^T / |det J|."""
    J = _as_square(J, "J")
    n = J.shape[-1]
    det = _abs_det(J)
    eps_f = material_matrix(eps_f, n)
    Jt = np.swapaxes(J, -1, -2)
    return (J @ eps_f @ Jt) / det[..., None, None]


def metric_for_motion(J):
    """Metric that keeps a scalar material unchanged under a deformation.

    J is the Jacobian of the transition map from the deformed (physical)
    configuration to the fixed computational chart. Requiring the
    transformed material to equal the original scalar one gives
    S = |det J| J^-T J^-1, which this returns.
    """
    J = _as_square(J, "J")
    det = _abs_det(J)
    Jinv = np.linalg.inv(J)
    S = np.swapaxes(Jinv, -1, -2) @ Jinv
    return S * det[..., None, None]


def transform_field(E_j, S_i, S_j, J):
    """Field components in chart i recovered from chart j:
    E_i = S_i^-1 J^T S_j E_j, with J the transition Jacobian i -> j."""
    J = _as_square(J, "J")
    _abs_det(J)
    S_i = _as_square(S_i, "S_i")
    S_j = _as_square(S_j, "S_j")
    E_j = np.asarray(E_j, dtype=float)
    if E_j.shape[-1] != J.shape[-1]:
        raise DimensionMismatch("field and Jacobian dimensions disagree")
    Jt = np.swapaxes(J, -1, -2)
    rhs = np.einsum("...ij,...j->...i", S_j, E_j)
    rhs = np.einsum("...ij,...j->...i", Jt, rhs)
    return np.linalg.solve(S_i, rhs[..., None])[..., 0]


def virtual_emf(E, S, dr):
    """Voltage increment E^T S dr along a coordinate increment dr."""
    return geometry.inner_product(S, E, dr)


def effective_coefficient(eps, S):
    """Galerkin coefficient K = eps S^-1, symmetrized.

    Raises AsymmetricCoefficient when the asymmetry exceeds SYMMETRY_RTOL
    relative to the coefficient's own magnitude.
    """
    S = _as_square(S, "S")
    n = S.shape[-1]
    eps = material_matrix(eps, n)
    K = eps @ np.linalg.inv(S)
    Kt = np.swapaxes(K, -1, -2)
    asym = np.sqrt(np.sum((K - Kt) ** 2, axis=(-2, -1)))
    norm = np.sqrt(np.sum(K * K, axis=(-2, -1)))
    rel = asym / np.maximum(norm, 1e-300)
    if np.any(rel > SYMMETRY_RTOL):
        raise AsymmetricCoefficient(
            f"effective coefficient asymmetry {float(np.max(rel)):.3e} exceeds "
            f"{SYMMETRY_RTOL:.0e}; the material/metric pair is inconsistent"
        )
    return 0.5 * (K + Kt)


# ---------------------------------------------------------- material fields


class MaterialField:
    """Region-tagged permittivity field.

    Entries are scalars (isotropic), (n, n) matrices, or pointwise
    evaluators returning either. eval() always hands back full matrices.
    A default entry covers region tags without one of their own.
    """

    def __init__(self, dim, regions=None, default=None, label=""):
        self.dim = int(dim)
        self.label = label
        self.regions = dict(regions) if regions else {}
        self.default = default
        if not self.regions and self.default is None:
            raise ValueError("material field needs at least one entry")

    @classmethod
    def uniform(cls, eps, dim, label=""):
        """One entry covering every region."""
        return cls(dim, default=eps, label=label)

    def entry(self, region=None):
        if region in self.regions:
            return self.regions[region]
        if self.default is not None:
            return self.default
        if region is None and len(self.regions) == 1:
            return next(iter(self.regions.values()))
        raise ValueError(f"material field has no entry for region {region!r}")

    def is_constant(self, region=None):
        """The region's constant matrix, or None when it varies pointwise."""
        entry = self.entry(region)
        if callable(entry):
            return None
        return material_matrix(entry, self.dim)

    def eval(self, points, region=None):
        """Material matrices at the given points, shape (..., n, n)."""
        p = np.asarray(points, dtype=float)
        if p.shape[-1] != self.dim:
            raise DimensionMismatch(
                f"points have {p.shape[-1]} coordinates, field has {self.dim}")
        entry = self.entry(region)
        if callable(entry):
            out = np.asarray(entry(p), dtype=float)
        else:
            out = np.asarray(entry, dtype=float)
        out = material_matrix(out, self.dim)
        want = p.shape[:-1] + (self.dim, self.dim)
        if out.shape != want:
            out = np.broadcast_to(out, want)
        return out

    def __repr__(self):
        tags = sorted(map(repr, self.regions))
        return (f"MaterialField(dim={self.dim}, regions=[{', '.join(tags)}], "
                f"default={'set' if self.default is not None else 'none'})")


@dataclass(frozen=True)
class Triplet:
    """A chart, the metric expressed in it, and the material expressed in it.

    The chart member is the transition map from the problem's implicit
    standard parameterization to this triplet's coordinates.
    """

    chart: geometry.ChartMap
    metric: geometry.MetricField
    material: MaterialField

    def effective_at(self, points, region=None):
        """Galerkin coefficient K = eps S^-1 at the given points."""
        eps = self.material.eval(points, region)
        S = self.metric.eval(points, region)
        return effective_coefficient(eps, S)


@dataclass(frozen=True)
class FieldVector:
    """Field components tied to the point and chart they were measured in."""

    components: np.ndarray
    at: np.ndarray
    chart_label: str = ""


def motion_metric_field(deformation, dim):
    """Metric field modeling a region deformed by `deformation` (fixed chart
    to physical configuration) without moving any node."""

    def fn(points):
        Jm = deformation.jacobian(points)
        return metric_for_motion(np.linalg.inv(Jm))

    return geometry.MetricField(dim, fn=fn, label="motion")


# ------------------------------------------------------------- verification


@dataclass(frozen=True)
class EquivalenceReport:
    """Worst-case relative deviation between a declared and a derived material."""

    max_deviation: float
    worst_point: np.ndarray
    deviations: np.ndarray


def verify_material_equivalence(t_i, t_j, samples, region=None):
    """Check that t_j's material is the transform of t_i's.

    Samples are points in the shared standard parameterization. At each one
    the transition Jacobian i -> j is assembled from the two charts, t_i's
    material is pushed through transform_material, and the result is compared
    with what t_j declares, as a relative Frobenius deviation.
    """
    samples = np.asarray(samples, dtype=float)
    x_i = t_i.chart.forward(samples)
    x_j = t_j.chart.forward(samples)
    J = t_j.chart.jacobian(samples) @ np.linalg.inv(t_i.chart.jacobian(samples))
    expected = transform_material(
        t_i.material.eval(x_i, region),
        t_i.metric.eval(x_i, region),
        t_j.metric.eval(x_j, region),
        J,
    )
    actual = t_j.material.eval(x_j, region)
    diff = np.sqrt(np.sum((expected - actual) ** 2, axis=(-2, -1)))
    scale = np.maximum(
        np.sqrt(np.sum(expected ** 2, axis=(-2, -1))),
        np.sqrt(np.sum(actual ** 2, axis=(-2, -1))),
    )
    dev = diff / np.maximum(scale, 1e-300)
    worst = int(np.argmax(dev))
    flat = samples.reshape(-1, samples.shape[-1])
    return EquivalenceReport(
        max_deviation=float(dev.reshape(-1)[worst]),
        worst_point=flat[worst].copy(),
        deviations=dev,
    )
