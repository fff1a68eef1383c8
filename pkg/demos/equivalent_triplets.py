# One physical problem, three descriptions.
#
# A boundary value problem is pinned down by a coordinate chart, the
# metric tensor expressed in that chart, and the material tensor
# expressed in that chart. Change any one of the three and compensate
# in the others, and the assembled finite element system comes out the
# same, up to round-off. This script builds the unit-square Laplace
# problem three ways and compares the results.

import numpy as np

from tripletfem import fem, geometry as geo, mesh, triplet as tp

bc = (("left", 0.0), ("right", 1.0))
m = mesh.generate_structured("box", (24, 24))

# Description 1: the textbook one. Identity chart, Euclidean metric,
# unit permittivity. The solution is u = x and the energy is exactly 1.
plain = tp.Triplet(chart=geo.Identity(2),
                   metric=geo.MetricField.euclidean(2),
                   material=tp.MaterialField.uniform(1.0, 2))
sol_plain = fem.solve_bvp(fem.BVPSpec(m, plain, bc))
print(f"plain chart        energy = {sol_plain.energy:.15f}")

# Description 2: draw the same square rotated and squashed by a factor
# of ten thousand between the axes. The mesh nodes move, the chart
# records how, and the material is pulled through the chart:
#
#   eps' = J eps J^T / |det J|
#
# That single transform is what keeps the physics identical.
squash = geo.Composite([geo.Rotation(0.7), geo.AxisScaling((100.0, 0.01))])
J = squash.jacobian(np.zeros(2))
eps = tp.transform_material_euclidean(np.eye(2), J)
warped = tp.Triplet(chart=squash,
                    metric=geo.MetricField.euclidean(2),
                    material=tp.MaterialField.uniform(eps, 2))
sol_warped = fem.solve_bvp(fem.BVPSpec(mesh.map_mesh(m, squash), warped, bc))
print(f"squashed chart     energy = {sol_warped.energy:.15f}")

# Description 3: keep the mesh where the squashed one is, but blame the
# distortion on the metric instead of the material. metric_for_motion
# gives the metric that keeps the scalar unit material valid.
S = tp.metric_for_motion(J)
bent = tp.Triplet(chart=squash,
                  metric=geo.MetricField(2, constant=S),
                  material=tp.MaterialField.uniform(1.0, 2))
sol_bent = fem.solve_bvp(fem.BVPSpec(mesh.map_mesh(m, squash), bent, bc))
print(f"bent metric        energy = {sol_bent.energy:.15f}")

# The three operators are the same matrix in the same dof numbering.
A = fem.assemble(fem.BVPSpec(m, plain, bc)).full_matrix
B = fem.assemble(fem.BVPSpec(mesh.map_mesh(m, squash), warped, bc)).full_matrix
C = fem.assemble(fem.BVPSpec(mesh.map_mesh(m, squash), bent, bc)).full_matrix
print(f"plain vs material  rel Frobenius = {fem.compare_matrices(A, B).rel_frobenius:.2e}")
print(f"plain vs metric    rel Frobenius = {fem.compare_matrices(A, C).rel_frobenius:.2e}")

# Fields transform too: E in the squashed chart carried back through
# the Jacobian lands on the plain-chart fields.
eye = np.eye(2)
back = tp.transform_field(sol_warped.fields, eye, eye, J)
dev = np.abs(back - sol_plain.fields).max() / np.abs(sol_plain.fields).max()
print(f"fields carried back, relative max deviation = {dev:.2e}")
