import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geneo_dd import materials, mesh
from geneo_dd.elements import HEX8, SERENDIPITY20


def test_plate_counts(plate_grid):
    assert plate_grid.n_cells == 3500
    assert plate_grid.cell_shape == (20, 5, 35)
    assert 3 * plate_grid.n_nodes == 13608
    assert plate_grid.spec.thickness == pytest.approx(12 * 0.23 + 11 * 0.02)


def test_plate_serendipity_counts(plate_grid):
    g = mesh.build_layer_cake(plate_grid.spec, SERENDIPITY20)
    assert g.n_cells == 3500
    # corners plus edge midpoints of a 20x5x35 lattice
    corners = 21 * 6 * 36
    edges = 20 * 6 * 36 + 21 * 5 * 36 + 21 * 6 * 35
    assert g.n_nodes == corners + edges


def test_region_ids_follow_stack(plate_grid):
    z = plate_grid.cell_nodes_xyz().mean(axis=1)[:, 2]
    bottom = plate_grid.cell_region[np.argmin(z)]
    top = plate_grid.cell_region[np.argmax(z)]
    assert bottom == 0 and top == 11
    assert set(np.unique(plate_grid.cell_region)) == set(range(13))


def test_unit_cube():
    g = mesh.build_layer_cake(mesh.box_spec((1, 1, 1), (1, 1, 1)))
    assert g.n_cells == 1 and g.n_nodes == 8
    assert np.allclose(np.sort(np.unique(g.node_coordinates)), [0, 1])


def test_two_layer_z_coordinates():
    spec = mesh.GridSpec((1, 1), (1, 1), [mesh.Layer(0, 0.5, 1), mesh.Layer(1, 0.5, 1)])
    g = mesh.build_layer_cake(spec)
    assert np.allclose(np.unique(g.node_coordinates[:, 2]), [0, 0.5, 1.0])


def test_invalid_specs():
    with pytest.raises(ValueError):
        mesh.GridSpec((1, 1), (1, 1), [mesh.Layer(0, -0.5, 1)])
    with pytest.raises(ValueError):
        mesh.GridSpec((1, 1), (0, 1), [mesh.Layer(0, 0.5, 1)])
    with pytest.raises(ValueError):
        mesh.GridSpec((1, 1), (1, 1), [])


def test_stacking_csv_round_trip(tmp_path, plate_grid):
    path = tmp_path / "stack.csv"
    mesh.write_stacking_csv(path, plate_grid.spec)
    spec = mesh.read_stacking_csv(path, (100.0, 20.0), (20, 5))
    assert spec.layer_stack == plate_grid.spec.layer_stack


def test_identity_and_scaling_maps(plate_grid):
    same = mesh.apply_transformation(plate_grid, mesh.identity_map())
    assert np.array_equal(same.node_coordinates, plate_grid.node_coordinates)
    big = mesh.apply_transformation(plate_grid, mesh.scaling_map(2.0))
    assert np.allclose(big.node_coordinates, 2 * plate_grid.node_coordinates)
    assert big.n_cells == plate_grid.n_cells


def test_z_grading_bias_ratio():
    spec = mesh.GridSpec((1, 1), (1, 1), [mesh.Layer(0, 1.0, 9), mesh.Layer(1, 2.0, 6)])
    g = mesh.apply_transformation(mesh.build_layer_cake(spec), mesh.z_grading_map(spec, 10.0))
    z = np.unique(g.node_coordinates[:, 2])
    for lo, hi in [(0.0, 1.0), (1.0, 3.0)]:
        h = np.diff(z[(z >= lo - 1e-12) & (z <= hi + 1e-12)])
        assert abs(h.max() / h.min() - 10.0) < 1e-9


def test_graded_positions_monotone():
    p = mesh.graded_layer_positions(7, 4.0)
    assert p[0] == 0 and abs(p[-1] - 1) < 1e-15
    assert (np.diff(p) > 0).all()


def test_bend_keeps_jacobians_positive():
    g = mesh.build_layer_cake(mesh.box_spec((3.0, 1.0, 0.5), (6, 2, 2)), SERENDIPITY20)
    bent = mesh.apply_transformation(g, mesh.cylindrical_bend_map(2.0))
    assert (mesh.jacobian_determinants(bent) > 0).all()
    # the inner face lies on the circle of the given radius
    inner = bent.node_coordinates[g.node_coordinates[:, 2] == 0]
    r = np.hypot(inner[:, 0], inner[:, 2] + 2.0)
    assert np.allclose(r, 2.0)


def test_inverting_map_is_rejected():
    g = mesh.build_layer_cake(mesh.box_spec((1, 1, 1), (2, 1, 1)))
    with pytest.raises(ValueError):
        mesh.apply_transformation(g, lambda x: x * np.array([-1.0, 1.0, 1.0]))


def test_named_transformations(plate_grid):
    spec = plate_grid.spec
    for name in ("identity", "scale", "z_grading", "cylindrical_bend"):
        f = mesh.named_transformation(name, spec, radius=50.0, bias=5.0, factors=1.5)
        mesh.apply_transformation(plate_grid, f)
    with pytest.raises(ValueError):
        mesh.named_transformation("twist", spec)


# -- decomposition --------------------------------------------------------------------


def test_four_strips(plate_grid):
    d = mesh.decompose(plate_grid, (4, 1, 1), 1)
    widths = [len(np.unique(plate_grid.cell_ijk(c)[:, 0])) for c in d.subdomain_cells]
    # owner blocks of 5 columns, grown by one column on each interior side
    assert widths == [6, 7, 7, 6]
    for c in d.subdomain_cells:
        assert len(c) % (5 * 35) == 0
    mult = d.dof_multiplicity
    shared = np.intersect1d(d.subdomain_dofs(0), d.subdomain_dofs(1))
    assert (mult[shared] == 2).all()


def test_single_subdomain(plate_grid):
    d = mesh.decompose(plate_grid, (1, 1, 1), 1)
    assert len(d.overlap_cells[0]) == 0
    assert len(d.interior_boundary_dofs[0]) == 0
    assert d.neighbor_lists == [[]]


def test_two_by_two_neighbors(plate_grid):
    d = mesh.decompose(plate_grid, (2, 2, 1), 1)
    assert all(len(nb) == 3 for nb in d.neighbor_lists)


@settings(max_examples=15, deadline=None)
@given(
    px=st.integers(1, 4),
    py=st.integers(1, 3),
    pz=st.integers(1, 2),
    overlap=st.integers(1, 2),
)
def test_decomposition_invariants(px, py, pz, overlap):
    g = mesh.build_layer_cake(mesh.box_spec((8.0, 6.0, 4.0), (8, 6, 4)))
    d = mesh.decompose(g, (px, py, pz), overlap, ncomp=1)
    # owner sets partition the cells; extended sets cover them
    assert np.bincount(d.cell_owner, minlength=d.num_subdomains).sum() == g.n_cells
    for j, cells in enumerate(d.subdomain_cells):
        assert np.isin(np.flatnonzero(d.cell_owner == j), cells).all()
    # neighbor relation symmetric and irreflexive
    for j, nb in enumerate(d.neighbor_lists):
        assert j not in nb
        assert all(j in d.neighbor_lists[k] for k in nb)
    # multiplicity by brute force
    brute = np.zeros(g.n_nodes, dtype=int)
    for nodes in d.subdomain_nodes:
        brute[nodes] += 1
    assert np.array_equal(brute, d.node_multiplicity)
    # no owned node sits on its own subdomain's artificial boundary
    for j in range(d.num_subdomains):
        owned_nodes = np.unique(g.cell_connectivity[d.cell_owner == j])
        assert not np.isin(owned_nodes, d.interior_boundary_nodes[j]).any()


def test_bad_partitions(plate_grid):
    with pytest.raises(ValueError):
        mesh.decompose(plate_grid, (21, 1, 1), 1)
    with pytest.raises(ValueError):
        mesh.decompose(plate_grid, (2, 1), 1)


def test_wide_overlap_warns(caplog):
    g = mesh.build_layer_cake(mesh.box_spec((6.0, 1.0, 1.0), (6, 1, 1)))
    with caplog.at_level(logging.WARNING):
        mesh.decompose(g, (6, 1, 1), 2, ncomp=1)
    assert "non-adjacent" in caplog.text


def test_overlap_axes(plate_grid):
    d = mesh.decompose(plate_grid, (2, 2, 1), 1)
    assert all(d.overlap_axes(j) == [0, 1] for j in range(4))


def test_grid_vtk(tmp_path, plate_grid):
    path = tmp_path / "grid.vtk"
    mesh.write_grid_vtk(plate_grid, path)
    text = path.read_text()
    assert text.startswith("# vtk DataFile Version 3.0")
    assert "SCALARS region" in text
