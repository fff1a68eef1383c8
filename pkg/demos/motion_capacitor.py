# A moving electrode without remeshing.
#
# Parallel-plate capacitor on the unit square, bottom plate at 0, top
# at 1, natural side walls, so the field is perfectly one dimensional
# and the stored energy follows the textbook law W = 1/d for plate
# separation d (unit permittivity, no 1/2 convention).
#
# To widen the gap we never touch the mesh. The upper half of the
# square is tagged "gap", each sweep step is a map stretching that
# band, and the deformation is absorbed into the metric tensor of the
# gap region. Only the gap's element blocks are reassembled per step
# and each solve warm-starts from the previous one.

import numpy as np

from tripletfem import applications as app, fem, geometry as geo, mesh
from tripletfem import solver, triplet as tp

n = 32
m = mesh.generate_structured("box", (n, n),
                             region_bands=[("gap", 1, 0.5, 1.0)])
base = tp.Triplet(chart=geo.Identity(2),
                  metric=geo.MetricField.euclidean(2),
                  material=tp.MaterialField.uniform(1.0, 2))
spec = fem.BVPSpec(m, base, (("bottom", 0.0), ("top", 1.0)))


def gap_stretch(s):
    # piecewise-linear in y: fixed below the plate gap, stretched above
    return geo.AxisPiecewiseLinear(1, (0.0, 0.5, 1.0),
                                   (0.0, 0.5, 0.5 + 0.5 * s))


separations = np.linspace(1.0, 2.0, 21)
sweep = app.MotionSweep(base=spec, moving_region="gap",
                        steps=[gap_stretch(2.0 * d - 1.0)
                               for d in separations],
                        mode="metric-change")

results = app.motion_sweep(
    sweep,
    config=solver.SolverConfig(tol=1e-10, preconditioner="ic0"),
    reuse_preconditioner=False,  # the operator drifts too far over the sweep
    measure_cold=True)

print("   d      energy      1/d       warm  cold  changed entries")
for d, r in zip(separations, results):
    print(f"  {d:4.2f}  {r.energy:.8f}  {1.0 / d:.8f}  "
          f"{r.iterations:4d}  {r.cold_iterations:4d}  {r.changed_entries:8d}")

worst_law = max(abs(r.energy * d - 1.0) for d, r in zip(separations, results))
print(f"\nworst relative deviation from W = 1/d: {worst_law:.2e}")

# The closer the steps, the better the previous solution predicts the
# next one; at this coarse spacing the saving is modest, at ten times
# finer it roughly halves the iteration count.
warm = sum(r.iterations for r in results[1:])
cold = sum(r.cold_iterations for r in results[1:])
print(f"warm-started iterations after step 0: {warm} vs cold {cold} "
      f"({warm / cold:.0%})")

# Step 0 is the identity, so the partial reassembly touches nothing.
print(f"entries rewritten at the identity step: {results[0].changed_entries}")
