"""Interface matching and stitched dof numbering across chart patches."""

import numpy as np
import pytest

from tripletfem import atlas as atl
from tripletfem import geometry as geo
from tripletfem import mesh as msh
from tripletfem.errors import InterfaceMismatch, NoSuchInterface


def two_square_atlas(n, translated=False):
    """Unit squares side by side in the universal chart, glued along x=1.
    With translated=True the right region's mesh is drawn at the origin
    and its chart shifts universal coordinates onto it."""
    left = msh.generate_structured("box", (n, n), region="L")
    if translated:
        right = msh.generate_structured("box", (n, n), region="R")
        chart_b = geo.translation([-1.0, 0.0])  # universal [1,2] -> mesh [0,1]
    else:
        right = msh.generate_structured("box", (n, n),
                                        bounds=([1, 0], [2, 1]), region="R")
        chart_b = geo.Identity(2)
    return atl.Atlas(
        [("A", geo.Identity(2), left), ("B", chart_b, right)],
        [(("A", "B"), ("right", "left"))])


@pytest.mark.parametrize("n", [2, 4, 8])
def test_two_region_dof_count(n):
    index = atl.build_global_index(two_square_atlas(n))
    assert index.n_dofs == 2 * (n + 1) ** 2 - (n + 1)


def test_matching_happens_in_the_universal_chart():
    plain = atl.build_global_index(two_square_atlas(4))
    translated = atl.build_global_index(two_square_atlas(4, translated=True))
    assert plain.n_dofs == translated.n_dofs
    # glued nodes share one dof across regions
    a = two_square_atlas(4, translated=True)
    left_edge = a.region("A").mesh.boundary_nodes("right")
    right_edge = a.region("B").mesh.boundary_nodes("left")
    da = set(translated.dofs("A")[left_edge].tolist())
    db = set(translated.dofs("B")[right_edge].tolist())
    assert da == db


def test_numbering_is_deterministic():
    one = atl.build_global_index(two_square_atlas(5))
    two = atl.build_global_index(two_square_atlas(5))
    assert one.n_dofs == two.n_dofs
    for rid in ("A", "B"):
        assert np.array_equal(one.dofs(rid), two.dofs(rid))


def test_first_seen_dof_wins():
    index = atl.build_global_index(two_square_atlas(3))
    # region A is declared first, so its dofs are 0..(n_A - 1)
    assert index.dofs("A").max() == two_square_atlas(3).region("A").mesh.n_nodes - 1
    assert index.dofs("A").min() == 0


def test_perturbed_interface_node_is_reported():
    a = two_square_atlas(4)
    tol = a.dedup_tolerance()
    right = a.region("B").mesh
    nodes = right.nodes.copy()
    victim = int(right.boundary_nodes("left")[2])
    nodes[victim, 0] += 10.0 * tol
    bad_mesh = msh.Mesh(nodes, right.elements, right.element_regions,
                        right.boundary_facets, right.facet_tags)
    bad = atl.Atlas(
        [("A", geo.Identity(2), a.region("A").mesh), ("B", geo.Identity(2), bad_mesh)],
        [(("A", "B"), ("right", "left"))])
    with pytest.raises(InterfaceMismatch) as err:
        atl.build_global_index(bad)
    assert "partner" in str(err.value)


def test_map_interface_nodes_identity():
    a = two_square_atlas(3)
    pairs = atl.map_interface_nodes(a, "A", "B")
    mesh_a = a.region("A").mesh
    for node, point in pairs:
        assert np.allclose(point, mesh_a.nodes[node], atol=1e-14)


def test_map_interface_nodes_applies_target_chart():
    left = msh.generate_structured("box", (2, 2), region="L")
    right = msh.generate_structured("box", (4, 2), bounds=([2, 0], [4, 1]),
                                    region="R")
    a = atl.Atlas(
        [("A", geo.Identity(2), left), ("B", geo.AxisScaling([2.0, 1.0]), right)],
        [(("A", "B"), ("right", "left"))])
    pairs = atl.map_interface_nodes(a, "A", "B")
    mesh_a = a.region("A").mesh
    for node, point in pairs:
        assert np.allclose(point, [2.0 * mesh_a.nodes[node][0],
                                   mesh_a.nodes[node][1]], atol=1e-14)


def test_map_interface_nodes_roundtrip():
    a = two_square_atlas(4, translated=True)
    pairs = atl.map_interface_nodes(a, "A", "B")
    chart_a = a.region("A").chart
    chart_b = a.region("B").chart
    mesh_a = a.region("A").mesh
    for node, point in pairs:
        back = chart_a.forward(chart_b.inverse(point))
        assert np.abs(back - mesh_a.nodes[node]).max() <= 1e-12


def test_undeclared_interface_is_an_error():
    left = msh.generate_structured("box", (2, 2), region="L")
    right = msh.generate_structured("box", (2, 2), bounds=([1, 0], [2, 1]),
                                    region="R")
    a = atl.Atlas([("A", geo.Identity(2), left), ("B", geo.Identity(2), right)])
    with pytest.raises(NoSuchInterface):
        atl.map_interface_nodes(a, "A", "B")
    with pytest.raises(ValueError):
        a.region("C")


def test_reversed_lookup_uses_other_sides_tag():
    a = two_square_atlas(3)
    pairs = atl.map_interface_nodes(a, "B", "A")
    mesh_b = a.region("B").mesh
    for node, point in pairs:
        assert np.allclose(point, mesh_b.nodes[node], atol=1e-14)


def test_duplicate_region_ids_rejected():
    m = msh.generate_structured("box", (1, 1))
    with pytest.raises(ValueError):
        atl.Atlas([("A", geo.Identity(2), m), ("A", geo.Identity(2), m)])
