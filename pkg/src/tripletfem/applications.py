"""Turnkey drivers built on the triplet algebra.

Three recipes: compressing an unbounded exterior onto a finite shell so
open-boundary problems become ordinary Dirichlet solves, pushing a whole
problem through a chart while the metric stays hardwired Euclidean, and
sweeping a deformation over one mesh where each step touches only the
matrix entries of the moving region.
"""

import itertools
import time
from dataclasses import dataclass, replace

import numpy as np

from . import fem
from . import solver as _solver
from .errors import (RegionNotContained, SingularJacobian, TopologyChange,
                     UnknownTag)
from .geometry import (Annulus, Box, Composite, KelvinShell, MetricField,
                       PiecewiseRadial)
from .mesh import Mesh, generate_structured, map_mesh, write_vtk
from .triplet import (MaterialField, Triplet, material_matrix,
                      metric_for_motion, transform_material,
                      transform_material_euclidean)


def _eval_entry(entry, pts, dim):
    """Material entry at points, mirroring the field's own broadcasting."""
    if callable(entry):
        out = np.asarray(entry(pts), dtype=float)
    else:
        out = np.asarray(entry, dtype=float)
    out = material_matrix(out, dim)
    want = pts.shape[:-1] + (dim, dim)
    if out.shape != want:
        out = np.broadcast_to(out, want)
    return out


# ----------------------------------------------------------- open boundary


@dataclass(frozen=True)
class OpenBoundarySpec:
    """Geometry of an exterior problem: sources and conductors live in
    `interior`, everything outside radius a is squeezed into the shell
    a <= R < b, whose outer circle is the image of infinity."""

    interior: object
    a: float
    b: float
    center: tuple = None

    def __post_init__(self):
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        if not 0.0 < self.a < self.b:
            raise ValueError(f"shell radii must satisfy 0 < a < b, "
                             f"got a={self.a}, b={self.b}")
        dim = getattr(self.interior, "dim", 2)
        center = np.zeros(dim) if self.center is None \
            else np.atleast_1d(np.asarray(self.center, dtype=float))
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        if not _contained_in_disc(self.interior, center, self.a):
            raise RegionNotContained(
                f"interior region {self.interior!r} is not contained in the "
                f"disc of radius {self.a} about {center.tolist()}")


def _contained_in_disc(region, center, radius):
    if isinstance(region, Box):
        corners = np.array(list(itertools.product(*zip(region.lo, region.hi))))
        return bool(np.all(np.linalg.norm(corners - center, axis=-1)
                           <= radius * (1.0 + 1e-12)))
    if isinstance(region, Annulus):
        if not np.isfinite(region.rmax):
            return False
        offset = float(np.linalg.norm(region.center - center))
        return offset + region.rmax <= radius * (1.0 + 1e-12)
    return False  # half spaces and full space are unbounded


def _require_euclidean_exterior(metric, center, a, dim):
    ring = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    if dim == 2:
        dirs = np.stack([np.cos(ring), np.sin(ring)], axis=-1)
    else:
        rng = np.random.default_rng(3)
        dirs = rng.standard_normal((8, dim))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    pts = center + np.concatenate([1.5 * a * dirs, 4.0 * a * dirs])
    try:
        S = metric.eval(pts)
    except ValueError as err:
        raise ValueError(
            f"open-boundary mapping assumes a Euclidean exterior metric; "
            f"could not evaluate the metric outside radius {a}: {err}")
    if np.abs(S - np.eye(dim)).max() > 1e-10:
        raise ValueError(
            "open-boundary mapping assumes a Euclidean metric outside "
            f"radius {a}; the given metric differs by "
            f"{np.abs(S - np.eye(dim)).max():.3e}")


def open_boundary_triplet(base, ob):
    """Triplet that brings infinity to a finite radius.

    The chart composes the base chart with a shell map that leaves the
    disc of radius a untouched and compresses the exterior into
    a <= R < b. The material outside a is replaced pointwise by its
    pull-through, so the solve on the shell is the exterior problem.
    Points at R = b itself (infinity's image) are not evaluable; interior
    quadrature never lands there.
    """
    center = ob.center
    dim = center.size
    _require_euclidean_exterior(base.metric, center, ob.a, dim)
    shell = KelvinShell(ob.a, ob.b, center=center, dim=dim)
    folded = PiecewiseRadial(ob.a, shell, center=center)
    chart = folded if base.chart.is_identity() \
        else Composite([base.chart, folded])

    inner_cut = ob.a * (1.0 + 1e-12)

    def shellify(entry):
        def fn(points, _entry=entry):
            p = np.asarray(points, dtype=float)
            lead = p.shape[:-1]
            flat = p.reshape(-1, dim)
            R = np.linalg.norm(flat - center, axis=-1)
            out = np.empty((flat.shape[0], dim, dim))
            inside = R <= inner_cut
            if inside.any():
                out[inside] = _eval_entry(_entry, flat[inside], dim)
            if (~inside).any():
                physical = shell.inverse(flat[~inside])
                J = shell.jacobian(physical)
                eps_f = _eval_entry(_entry, physical, dim)
                out[~inside] = transform_material_euclidean(eps_f, J)
            return out.reshape(lead + (dim, dim))
        return fn

    regions = {tag: shellify(entry)
               for tag, entry in base.material.regions.items()}
    default = None if base.material.default is None \
        else shellify(base.material.default)
    material = MaterialField(dim, regions=regions or None, default=default)
    return Triplet(chart=chart, metric=base.metric, material=material)


def open_boundary_bvp(ob, base, boundary_value, divisions=(64, 40),
                      grading=2.0):
    """Exterior Dirichlet problem on the shell annulus.

    Meshes a <= R <= b directly (2-d), applies boundary_value on the
    inner circle, and grounds the outer circle, which stands for
    infinity. The folded coefficient stiffens like 1/(b - R) near the
    outer rim, so rings are packed there by default (grading > 1).
    Returns the ready-to-solve problem specification.
    """
    center = ob.center
    if center.size != 2:
        raise ValueError("the open-boundary mesh driver is two-dimensional")
    tri = open_boundary_triplet(base, ob)
    m = generate_structured("annulus", divisions, radii=(ob.a, ob.b),
                            center=tuple(center), region="exterior",
                            grading=grading)
    tags = m.facet_tags.copy()
    tags[tags == "outer"] = "infinity"
    m = Mesh(m.nodes, m.elements, m.element_regions,
             boundary_facets=m.boundary_facets, facet_tags=tags)
    return fem.BVPSpec(domain=m, triplet=tri,
                       dirichlet=(("inner", boundary_value),
                                  ("infinity", 0.0)))


# -------------------------------------------------------- reparameterize


def reparameterize_fixed_metric(spec, g):
    """Push a whole problem through the chart g, metric staying Euclidean.

    The mesh is mapped node by node, materials are replaced by their
    transforms so the assembled operator is unchanged up to roundoff
    (exactly so for affine g), and boundary values keep their physical
    meaning: callables are composed with g^-1 so each boundary node
    receives the same number as before.
    """
    if not isinstance(spec.domain, Mesh):
        raise TypeError("reparameterization works on plain mesh problems")
    m = spec.domain
    mapped = map_mesh(m, g)
    t = spec.triplet
    dim = m.nodes.shape[1]
    eye = np.eye(dim)
    anchor = m.nodes.mean(axis=0)

    def transformed(entry, tag):
        const = None if callable(entry) else material_matrix(entry, dim)
        S_const = t.metric.constant_matrix(tag)
        if g.is_affine and const is not None and S_const is not None:
            J = g.jacobian(anchor)
            return transform_material(const, S_const, eye, J)

        def fn(points, _entry=entry, _tag=tag):
            p = np.asarray(points, dtype=float)
            x = g.inverse(p)
            J = g.jacobian(x)
            eps = _eval_entry(_entry, x, dim)
            S = t.metric.eval(x, _tag)
            return transform_material(eps, S, eye, J)
        return fn

    regions = {tag: transformed(entry, tag)
               for tag, entry in t.material.regions.items()}
    default = None if t.material.default is None \
        else transformed(t.material.default, None)
    material = MaterialField(dim, regions=regions or None, default=default)

    chart = g if t.chart.is_identity() else Composite([t.chart, g])
    triplet = Triplet(chart=chart, metric=MetricField.euclidean(dim),
                      material=material)

    dirichlet = []
    for tag, value in spec.dirichlet:
        if callable(value):
            dirichlet.append((tag, lambda X, _v=value: _v(g.inverse(X))))
        else:
            dirichlet.append((tag, value))
    return fem.BVPSpec(domain=mapped, triplet=triplet,
                       dirichlet=tuple(dirichlet),
                       quadrature=spec.quadrature)


# ------------------------------------------------------------ motion sweep


@dataclass(frozen=True)
class MotionSweep:
    """A deformation sequence applied to one region of one mesh.

    Each step map takes the base configuration of the moving region to
    its deformed position; regions other than moving_region stay put.
    The mesh and dof numbering are shared by every step. metric-change
    mode absorbs the deformation into the metric tensor, material-change
    mode into the material parameters; for scalar materials the two
    produce the same matrices.
    """

    base: object
    moving_region: str
    steps: tuple
    mode: str = "metric-change"

    def __post_init__(self):
        if not isinstance(self.base, fem.BVPSpec):
            raise TypeError("base must be a BVPSpec")
        if not isinstance(self.base.domain, Mesh):
            raise TypeError("motion sweeps run on plain mesh problems")
        if self.mode not in ("metric-change", "material-change"):
            raise ValueError(f"mode must be metric-change or "
                             f"material-change, got {self.mode!r}")
        object.__setattr__(self, "moving_region", str(self.moving_region))
        object.__setattr__(self, "steps", tuple(self.steps))
        if self.moving_region not in self.base.domain.regions():
            raise UnknownTag(
                f"no region {self.moving_region!r} in the mesh; have "
                f"{self.base.domain.regions()}")
        S = self.base.triplet.metric.constant_matrix(self.moving_region)
        dim = self.base.domain.nodes.shape[1]
        if S is None or np.abs(S - np.eye(dim)).max() > 1e-12:
            raise ValueError("the moving region must carry a Euclidean "
                             "metric in the base problem")


@dataclass(frozen=True)
class SweepStep:
    """One solved configuration of a motion sweep."""

    step: int
    solution: object
    energy: float
    iterations: int
    changed_entries: int
    wall_time: float
    cold_iterations: int = -1  # -1 when the cold solve was not measured


def _inverted_jacobian(step_map, points):
    try:
        return np.linalg.inv(step_map.jacobian(points))
    except np.linalg.LinAlgError:
        raise SingularJacobian(
            "step map Jacobian is singular on the moving region") from None


def _step_triplet(base_triplet, moving_tag, step_map, mode, dim, anchor):
    if step_map.is_identity():
        return base_triplet
    if mode == "metric-change":
        if step_map.is_affine:
            entry = metric_for_motion(_inverted_jacobian(step_map, anchor))
        else:
            entry = MetricField(dim, fn=lambda p: metric_for_motion(
                _inverted_jacobian(step_map, p)))
        metric = MetricField.by_region(dim, {moving_tag: entry},
                                       default=base_triplet.metric)
        return Triplet(base_triplet.chart, metric, base_triplet.material)

    # material-change: pull the deformed region's material back into the
    # base chart; the material is carried by the matter it describes
    base_entry = base_triplet.material.entry(moving_tag)
    if step_map.is_affine and not callable(base_entry):
        J = _inverted_jacobian(step_map, anchor)
        entry = transform_material_euclidean(
            material_matrix(base_entry, dim), J)
    else:
        def entry(points, _e=base_entry):
            p = np.asarray(points, dtype=float)
            J = _inverted_jacobian(step_map, p)
            return transform_material_euclidean(_eval_entry(_e, p, dim), J)
    regions = dict(base_triplet.material.regions)
    regions[moving_tag] = entry
    material = MaterialField(dim, regions=regions,
                             default=base_triplet.material.default)
    return Triplet(base_triplet.chart, base_triplet.metric, material)


def _check_topology(step_map, coords, k):
    mapped = step_map.forward(coords.reshape(-1, coords.shape[2]))
    mapped = mapped.reshape(coords.shape)
    edges = mapped[:, 1:, :] - mapped[:, :1, :]
    dets = np.linalg.det(edges)
    bad = int(np.count_nonzero(dets <= 0.0))
    if bad:
        raise TopologyChange(
            f"step {k}: the deformation folds or collapses {bad} "
            f"element(s) of the moving region")


def motion_sweep(ms, *, config=None, reuse_preconditioner=True,
                 measure_cold=False, vtk_pattern=None):
    """Solve every configuration of the sweep on one shared system.

    Per step only the moving region's element blocks are recomputed;
    the solver is warm-started from the previous step and, by default,
    keeps the first step's preconditioner. measure_cold additionally
    runs each step cold (no warm start, fresh preconditioner) to expose
    the iteration counts the reuse avoids; the extra solve is excluded
    from the reported wall time.
    """
    spec = ms.base
    if spec.quadrature == "auto" and any(not s.is_affine for s in ms.steps):
        # a curved step can make frozen one-point rules inexact
        spec = replace(spec, quadrature="interior")
    cfg = config if config is not None else _solver.SolverConfig()
    system = fem.assemble(spec)
    moving = spec.domain.elements_in_regions([ms.moving_region])
    coords = system.coords[moving]
    anchor = coords.mean(axis=(0, 1)) if moving.size else \
        spec.domain.nodes.mean(axis=0)
    dim = system.dim

    results = []
    precond = None
    prev = None
    for k, step_map in enumerate(ms.steps):
        t0 = time.perf_counter()
        try:
            if not step_map.is_identity():
                _check_topology(step_map, coords, k)
            tri = _step_triplet(spec.triplet, ms.moving_region, step_map,
                                ms.mode, dim, anchor)
            changed = fem.update_elements(system, tri, moving)
        except SingularJacobian as err:
            raise SingularJacobian(f"step {k}: {err}") from None
        if precond is None or not reuse_preconditioner:
            precond = _solver.build_preconditioner(system.matrix,
                                                   cfg.preconditioner)
        sol = fem.solve_bvp(spec, cfg, system=system, preconditioner=precond,
                            x0=prev)
        prev = sol.solve_info.x if sol.solve_info is not None else None
        wall = time.perf_counter() - t0

        cold_iters = -1
        if measure_cold:
            fresh = _solver.build_preconditioner(system.matrix,
                                                 cfg.preconditioner)
            cold = _solver.solve(system.matrix, system.rhs, cfg,
                                 preconditioner=fresh)
            cold_iters = cold.iterations
        if vtk_pattern is not None:
            write_vtk(spec.domain, vtk_pattern.format(step=k),
                      point_data={"potential": sol.u})
        iters = sol.solve_info.iterations if sol.solve_info is not None else 0
        results.append(SweepStep(step=k, solution=sol, energy=sol.energy,
                                 iterations=iters, changed_entries=changed,
                                 wall_time=wall, cold_iterations=cold_iters))
    return results


def write_sweep_csv(path, results, zero_wall_time=False):
    """Sweep log: step, energy, iterations, changed entries, wall time.

    zero_wall_time replaces the timing column with zeros so reruns of a
    deterministic scenario produce identical bytes.
    """
    with open(path, "w") as f:
        f.write("step,energy,iterations,changed_entries,wall_time\n")
        for r in results:
            wall = 0.0 if zero_wall_time else r.wall_time
            f.write(f"{r.step},{r.energy:.17g},{r.iterations},"
                    f"{r.changed_entries},{wall:.17g}\n")
