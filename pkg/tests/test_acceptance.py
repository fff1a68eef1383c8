"""End-to-end acceptance checks at their stated tolerances and budgets.

Each test prints one PASS/FAIL line with the measured figure next to its
limit; run `pytest tests/test_acceptance.py -v -s` to see them. The
checks exercise the public surface only, except where an exact-bits
claim needs the same internal step construction the sweep itself uses.
"""

import time
from dataclasses import replace

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from tripletfem import applications as app
from tripletfem import fem, geometry as geo, mesh, triplet as tp
from tripletfem.atlas import Atlas, AtlasRegion
from tripletfem.errors import DegenerateElement
from tripletfem.solver import SolverConfig


def verdict(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"{name}: {detail}"


def euclidean_triplet(dim=2, eps=1.0):
    return tp.Triplet(chart=geo.Identity(dim),
                      metric=geo.MetricField.euclidean(dim),
                      material=tp.MaterialField.uniform(eps, dim))


def equivalent_material(chart, S_target, base_eps=1.0, dim=2):
    """Material making {chart, S_target, .} equivalent to the standard
    problem {Identity, I, base_eps}; evaluated pointwise in the chart."""
    S_target = np.asarray(S_target, dtype=float)
    base = tp.material_matrix(np.asarray(base_eps, dtype=float), dim)

    def fn(points):
        p = np.asarray(points, dtype=float)
        lead = p.shape[:-1]
        flat = p.reshape(-1, dim)
        x = chart.inverse(flat)
        J = chart.jacobian(x)
        eps = np.broadcast_to(base, (len(flat), dim, dim))
        eye = np.broadcast_to(np.eye(dim), (len(flat), dim, dim))
        S = np.broadcast_to(S_target, (len(flat), dim, dim))
        out = tp.transform_material(eps, eye, S, J)
        return out.reshape(lead + (dim, dim))

    return fn


# 1 ------------------------------------------------------ operator identity


def test_operator_identical_across_distorting_chart():
    t0 = time.perf_counter()
    m = mesh.generate_structured("box", (32, 32))
    bc = (("left", 0.0), ("right", 1.0))
    A = fem.assemble(fem.BVPSpec(m, euclidean_triplet(), bc)).full_matrix

    # scaling applied after the rotation; mapped mesh, pulled-back material
    chart = geo.Composite([geo.Rotation(0.7), geo.AxisScaling((1e3, 1e-2))])
    J = chart.jacobian(np.zeros(2))
    eps = tp.transform_material_euclidean(np.eye(2), J)
    other = tp.Triplet(chart=chart, metric=geo.MetricField.euclidean(2),
                       material=tp.MaterialField.uniform(eps, 2))
    B = fem.assemble(fem.BVPSpec(mesh.map_mesh(m, chart), other,
                                 bc)).full_matrix

    dev = fem.compare_matrices(A, B).rel_frobenius
    elapsed = time.perf_counter() - t0
    verdict("operator identity across a distorting chart",
            dev <= 1e-12 and elapsed < 1.0,
            f"rel Frobenius {dev:.3e} (limit 1e-12), "
            f"{elapsed:.2f}s (budget 1 s)")


# 2 ------------------------------------------------------- energy invariance


def test_energy_invariant_under_random_charts_and_metrics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20260815)
    n = 12
    m = mesh.generate_structured("box", (n, n))
    bc = (("left", 0.0), ("right", 1.0))
    cfg = SolverConfig(tol=1e-14)
    ref = fem.solve_bvp(fem.BVPSpec(m, euclidean_triplet(), bc), cfg).energy

    grid = np.linspace(0.0, 1.0, n + 1)
    worst = 0.0
    for trial in range(20):
        # piecewise-affine chart with kinks on mesh lines, so every
        # element sees one affine piece and quadrature stays exact
        axis = int(rng.integers(0, 2))
        cut = np.sort(rng.choice(np.arange(1, n), size=2, replace=False))
        breaks = np.array([0.0, grid[cut[0]], grid[cut[1]], 1.0])
        slopes = rng.uniform(0.3, 1.7, size=3)
        images = float(rng.uniform(-0.5, 0.5)) + np.concatenate(
            [[0.0], np.cumsum(slopes * np.diff(breaks))])
        chart = geo.AxisPiecewiseLinear(axis, breaks, images)
        if trial % 2:
            chart = geo.Composite(
                [chart, geo.Rotation(float(rng.uniform(-np.pi, np.pi)))])

        raw = rng.normal(size=(2, 2))
        S = raw @ raw.T + 0.5 * np.eye(2)
        t = tp.Triplet(chart=chart, metric=geo.MetricField(2, constant=S),
                       material=tp.MaterialField(
                           2, default=equivalent_material(chart, S)))
        sol = fem.solve_bvp(fem.BVPSpec(mesh.map_mesh(m, chart), t, bc),
                            cfg)
        worst = max(worst, abs(sol.energy - ref) / abs(ref))

    elapsed = time.perf_counter() - t0
    verdict("energy invariance over 20 random charts and metrics",
            worst <= 1e-10 and elapsed < 10.0,
            f"worst relative deviation {worst:.3e} (limit 1e-10), "
            f"{elapsed:.2f}s (budget 10 s)")


# 3 -------------------------------------------------------- field transform


def test_element_fields_transform_between_charts():
    n = 16
    m = mesh.generate_structured("box", (n, n))
    bc = (("left", 0.0), ("top", 1.0))  # genuinely two-dimensional field
    cfg = SolverConfig(tol=1e-13)
    sol_f = fem.solve_bvp(fem.BVPSpec(m, euclidean_triplet(), bc), cfg)
    centroids = m.nodes[m.elements].mean(axis=1)
    scale = np.abs(sol_f.fields).max()

    charts = (geo.Composite([geo.Rotation(0.6),
                             geo.AxisScaling((3.0, 0.25))]),
              geo.AxisPiecewiseLinear(1, (0.0, 0.5, 1.0),
                                      (0.0, 0.3, 1.4)))
    worst = 0.0
    for g in charts:
        t_g = tp.Triplet(chart=g, metric=geo.MetricField.euclidean(2),
                         material=tp.MaterialField(
                             2, default=equivalent_material(g, np.eye(2))))
        sol_g = fem.solve_bvp(fem.BVPSpec(mesh.map_mesh(m, g), t_g, bc),
                              cfg)
        J = g.jacobian(centroids)
        eye = np.broadcast_to(np.eye(2), J.shape)
        back = tp.transform_field(sol_g.fields, eye, eye, J)
        worst = max(worst, np.abs(back - sol_f.fields).max() / scale)

    verdict("element fields carried between charts",
            worst <= 1e-8,
            f"relative max-norm deviation {worst:.3e} (limit 1e-8)")


# 4 -------------------------------------------------------- exterior dipole


def dipole_solution(divisions):
    interior = geo.Annulus((0.0, 0.0), 0.0, 1.0)
    ob = app.OpenBoundarySpec(interior=interior, a=1.0, b=2.0)

    def rim(x):
        return np.cos(np.arctan2(x[1], x[0]))

    spec = app.open_boundary_bvp(ob, euclidean_triplet(), rim,
                                 divisions=divisions, grading=2.0)
    return spec, fem.solve_bvp(spec)


def dipole_sampled_error(spec, sol, radii=(1.1, 1.5, 2.0, 3.0, 4.0)):
    # u = cos(theta)/r on circles pulled into the annulus via R = 2 - 1/r
    interp = LinearNDInterpolator(spec.domain.nodes, sol.u)
    thetas = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
    err2 = ref2 = 0.0
    for r in radii:
        R = 2.0 - 1.0 / r
        pts = np.column_stack([R * np.cos(thetas), R * np.sin(thetas)])
        exact = np.cos(thetas) / r
        err2 += float(np.sum((interp(pts) - exact) ** 2))
        ref2 += float(np.sum(exact ** 2))
    return float(np.sqrt(err2 / ref2))


def test_exterior_dipole_accuracy_and_convergence():
    t0 = time.perf_counter()
    spec_c, sol_c = dipole_solution((80, 32))       # 5120 elements
    spec_f, sol_f = dipole_solution((160, 64))      # h halved
    err_c = dipole_sampled_error(spec_c, sol_c)
    err_f = dipole_sampled_error(spec_f, sol_f)
    ratio = err_c / err_f
    elapsed = time.perf_counter() - t0
    verdict("exterior dipole through the inverting shell",
            err_c < 0.02 and ratio >= 3.0 and elapsed < 30.0,
            f"L2 error {err_c:.4f} at 5120 elements (limit 0.02), "
            f"halving h shrinks it {ratio:.2f}x (needs >= 3), "
            f"{elapsed:.1f}s (budget 30 s)")


# 5 -------------------------------------------------------- capacitor sweep


def capacitor_spec(n):
    m = mesh.generate_structured("box", (n, n),
                                 region_bands=[("gap", 1, 0.5, 1.0)])
    return fem.BVPSpec(domain=m, triplet=euclidean_triplet(),
                       dirichlet=(("bottom", 0.0), ("top", 1.0)))


def gap_stretch(s):
    return geo.AxisPiecewiseLinear(1, (0.0, 0.5, 1.0),
                                   (0.0, 0.5, 0.5 + 0.5 * s))


def test_capacitor_sweep_law_updates_and_warm_starts():
    t0 = time.perf_counter()
    spec = capacitor_spec(32)
    s_values = [1.0 + 0.01 * k for k in range(201)]  # gap d = (1+s)/2
    steps = [gap_stretch(s) for s in s_values]
    ms = app.MotionSweep(base=spec, moving_region="gap", steps=steps)
    cfg = SolverConfig(tol=1e-7, preconditioner="ic0")
    results = app.motion_sweep(ms, config=cfg, reuse_preconditioner=False,
                               measure_cold=True)

    gates = {0: 1.0, 50: 1.25, 100: 1.5, 200: 2.0}
    law_dev = max(abs(results[k].energy * d - 1.0)
                  for k, d in gates.items())
    worst_ratio = max(r.iterations / r.cold_iterations
                      for r in results[2:])

    # the partially updated operator must equal a from-scratch assembly
    # of the final step, bit for bit
    final = results[-1].solution.system.full_matrix
    stepped = replace(spec, quadrature="interior",
                      triplet=app._step_triplet(spec.triplet, "gap",
                                                steps[-1], "metric-change",
                                                2, np.zeros(2)))
    fresh = fem.assemble(stepped).full_matrix
    exact = (np.array_equal(final.data, fresh.data)
             and np.array_equal(final.indices, fresh.indices)
             and np.array_equal(final.indptr, fresh.indptr))

    elapsed = time.perf_counter() - t0
    verdict("capacitor sweep: gap law, exact updates, warm starts",
            law_dev <= 0.01 and exact and worst_ratio <= 0.6
            and elapsed < 30.0,
            f"max |W*d - 1| {law_dev:.1e} (limit 0.01), "
            f"partial==full {exact}, worst warm/cold ratio "
            f"{worst_ratio:.2f} (limit 0.60), {elapsed:.1f}s (budget 30 s)")


# 6 ------------------------------------------------------------ dual modes


def test_motion_modes_build_equal_matrices():
    spec = capacitor_spec(16)
    mats = {}
    for mode in ("metric-change", "material-change"):
        ms = app.MotionSweep(base=spec, moving_region="gap",
                             steps=[gap_stretch(2.0)], mode=mode)
        mats[mode] = app.motion_sweep(ms)[-1].solution.system.full_matrix
    dev = fem.compare_matrices(mats["metric-change"],
                               mats["material-change"]).rel_frobenius
    verdict("metric-change and material-change agree",
            dev <= 1e-12, f"rel Frobenius {dev:.3e} (limit 1e-12)")


# 7 ------------------------------------------------------------ thin film


def test_thin_film_needs_compressing_chart():
    film, eps_film = 1e-5, 1e-5          # feature ratio 1e5
    lo, hi = 0.5 - film / 2, 0.5 + film / 2

    try:
        mesh.generate_structured("box", (64, 64),
                                 region_bands=[("film", 1, lo, hi)])
        meshing_failed = False
    except DegenerateElement:
        meshing_failed = True

    # draw the film a quarter of the domain thick; the chart owns the
    # compression and the materials carry the pullback
    squeeze = geo.AxisPiecewiseLinear(1, (0.0, lo, hi, 1.0),
                                      (0.0, 0.375, 0.625, 1.0))
    m = mesh.generate_structured("box", (64, 64),
                                 region_bands=[("film", 1, 0.375, 0.625)])
    material = tp.MaterialField(2, regions={
        "film": equivalent_material(squeeze, np.eye(2), base_eps=eps_film),
        "domain": equivalent_material(squeeze, np.eye(2), base_eps=1.0)})
    t = tp.Triplet(chart=squeeze, metric=geo.MetricField.euclidean(2),
                   material=material)
    spec = fem.BVPSpec(m, t, (("bottom", 0.0), ("top", 1.0)))
    sol = fem.solve_bvp(spec, SolverConfig(tol=1e-8,
                                           preconditioner="ic0"))

    # series-capacitor reduction: W = 1 / sum(thickness / eps)
    w_1d = 1.0 / (lo / 1.0 + film / eps_film + (1.0 - hi) / 1.0)
    dev = abs(sol.energy - w_1d) / w_1d
    verdict("feature ratio 1e5 rescued by a compressing chart",
            meshing_failed and dev <= 0.05,
            f"flat meshing raises DegenerateElement: {meshing_failed}, "
            f"energy off 1D series by {dev:.2e} (limit 0.05)")


# 8 ----------------------------------------------------------------- atlas


def test_atlas_solve_matches_single_mesh():
    n = 8
    bc = (("left", 0.0), ("right", 1.0))
    cfg = SolverConfig(tol=1e-13)
    ref_mesh = mesh.generate_structured("box", (2 * n, n),
                                        bounds=([0, 0], [2, 1]))
    t = euclidean_triplet()
    ref = fem.solve_bvp(fem.BVPSpec(ref_mesh, t, bc), cfg)

    half = mesh.generate_structured("box", (n, n))
    atlas = Atlas([AtlasRegion("a", geo.Identity(2), half),
                   AtlasRegion("b", geo.translation([-1.0, 0.0]), half)],
                  interfaces=[(("a", "b"), ("right", "left"))])
    sol = fem.solve_bvp(fem.BVPSpec(atlas, t, bc), cfg)

    table = {}
    for patch in sol.system.patches:
        pts = patch.chart.inverse(patch.mesh.nodes)
        for i, p in enumerate(pts):
            table[tuple(np.round(p, 9))] = sol.u[patch.dofs[i]]
    worst = max(abs(table[tuple(np.round(p, 9))] - u)
                for p, u in zip(ref_mesh.nodes, ref.u))
    verdict("two-region atlas equals the single-mesh solve",
            worst <= 1e-10,
            f"nodal max-norm deviation {worst:.3e} (limit 1e-10)")


# 9 ----------------------------------------------------------- unit oracles


def fd_jacobian(chart, pts, h=1e-6):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    n, d = pts.shape
    J = np.zeros((n, d, d))
    for k in range(d):
        dp = np.zeros(d)
        dp[k] = h
        J[:, :, k] = (chart.forward(pts + dp)
                      - chart.forward(pts - dp)) / (2.0 * h)
    return J


def test_local_stiffness_and_jacobian_oracles():
    L = fem.local_stiffness([[0, 0], [1, 0], [0, 1]], np.eye(2))
    want = np.array([[1.0, -0.5, -0.5],
                     [-0.5, 0.5, 0.0],
                     [-0.5, 0.0, 0.5]])
    stiff_dev = float(np.abs(L - want).max())

    rng = np.random.default_rng(7)
    pts2 = rng.uniform(0.05, 0.45, size=(6, 2))
    pts3 = rng.uniform(0.1, 0.9, size=(4, 3))
    cases = [
        (geo.Identity(2), pts2),
        (geo.AxisScaling((2.0, 0.5)), pts2),
        (geo.Rotation(0.7), pts2),
        (geo.translation([0.3, -0.2]), pts2),
        (geo.Affine([[1.0, 0.3], [0.1, 1.2]], [0.05, -0.1]), pts2),
        (geo.PolarStretch(scale=1.3, exponent=1.2), pts2 + 1.0),
        (geo.KelvinShell(1.0, 2.0), pts2 + 1.5),
        (geo.PiecewiseRadial(1.0, geo.KelvinShell(1.0, 2.0)), pts2 * 0.5),
        (geo.PiecewiseRadial(1.0, geo.KelvinShell(1.0, 2.0)), pts2 + 1.5),
        (geo.AxisPiecewiseLinear(1, (0.0, 0.5, 1.0), (0.0, 0.4, 1.1)),
         pts2),
        (geo.AxisPiecewiseLinear(1, (0.0, 0.5, 1.0), (0.0, 0.4, 1.1)),
         pts2 + np.array([0.0, 0.5])),
        (geo.Composite([geo.Rotation(0.3), geo.AxisScaling((2.0, 0.5))]),
         pts2),
        (geo.AxisScaling((2.0, 3.0, 0.5)), pts3),
        (geo.Rotation(0.4, axis=(0.0, 0.0, 1.0)), pts3),
        (geo.translation([0.1, -0.2, 0.3]), pts3),
    ]
    worst = 0.0
    for chart, pts in cases:
        J = chart.jacobian(pts)
        dev = np.abs(J - fd_jacobian(chart, pts)).max()
        worst = max(worst, dev / max(1.0, float(np.abs(J).max())))

    verdict("reference stiffness and analytic Jacobians",
            stiff_dev <= 1e-15 and worst <= 1e-6,
            f"stiffness deviation {stiff_dev:.2e} (limit 1e-15), "
            f"worst Jacobian vs finite differences {worst:.3e} "
            f"(limit 1e-6)")
