"""Test functions in mesh.py"""
import numpy as np
import pytest

from src import MeshError
from src.config import MeshConfig, RunConfig
from src.mesh import (
    build_mesh,
    build_mesh_from_geometry,
    check_field,
    dirichlet_energy,
    grad_inner,
    l2_inner,
    sphere_defect,
)

MESHES = [
    (1, [1.0], [3]),
    (1, [2.5], [17]),
    (2, [1.0, 1.0], [3, 3]),
    (2, [2.0, 0.5], [6, 4]),
]


def test_three_node_interval():
    mesh = build_mesh_from_geometry(1, [1.0], [3])
    np.testing.assert_allclose(mesh.lumped_mass, [0.25, 0.5, 0.25])
    np.testing.assert_allclose(
        mesh.stiffness.toarray(), [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]]
    )


def test_build_mesh_reads_config():
    config = RunConfig(mesh=MeshConfig(dimension=2, extents=(1.0, 1.0), nodes_per_axis=(3, 3)))
    mesh = build_mesh(config)
    assert mesh.num_nodes == 9
    assert len(mesh.elements) == 8
    assert mesh.lumped_mass.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("dimension, extents, nodes", MESHES)
def test_mesh_invariants(dimension, extents, nodes):
    mesh = build_mesh_from_geometry(dimension, extents, nodes)
    stiffness = mesh.stiffness.toarray()
    assert np.all(mesh.lumped_mass > 0)
    assert mesh.lumped_mass.sum() == pytest.approx(np.prod(extents), rel=1e-14)
    np.testing.assert_array_equal(stiffness, stiffness.T)
    np.testing.assert_allclose(mesh.stiffness @ np.ones(mesh.num_nodes), 0.0, atol=1e-12)
    off_diagonal = stiffness[~np.eye(mesh.num_nodes, dtype=bool)]
    assert np.all(off_diagonal <= 1e-14)


@pytest.mark.parametrize("dimension, extents, nodes", MESHES)
def test_triangles_are_not_obtuse(dimension, extents, nodes):
    mesh = build_mesh_from_geometry(dimension, extents, nodes)
    if dimension == 1:
        return
    vertices = mesh.node_coords[mesh.elements]
    for a in range(3):
        first = vertices[:, (a + 1) % 3] - vertices[:, a]
        second = vertices[:, (a + 2) % 3] - vertices[:, a]
        assert np.all(np.einsum("ec,ec->e", first, second) >= -1e-14)


def test_stiffness_symmetry_on_random_vectors():
    mesh = build_mesh_from_geometry(2, [1.0, 2.0], [7, 5])
    rng = np.random.default_rng(3)
    u, w = rng.standard_normal((2, mesh.num_nodes))
    left = u @ (mesh.stiffness @ w)
    right = w @ (mesh.stiffness @ u)
    assert abs(left - right) <= 1e-13 * max(abs(left), 1.0)


@pytest.mark.parametrize(
    "dimension, extents, nodes",
    [(0, [1.0], [3]), (1, [0.0], [3]), (1, [-1.0], [3]), (1, [1.0], [1]), (2, [1.0], [3, 3])],
)
def test_invalid_mesh_requests(dimension, extents, nodes):
    with pytest.raises(MeshError):
        build_mesh_from_geometry(dimension, extents, nodes)


def test_constant_field_has_zero_energy():
    mesh = build_mesh_from_geometry(2, [1.0, 1.0], [4, 4])
    field = np.tile([0.0, 0.0, 1.0], (mesh.num_nodes, 1))
    assert dirichlet_energy(field, mesh) == 0.0


def test_two_node_energy():
    mesh = build_mesh_from_geometry(1, [1.0], [2])
    field = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert dirichlet_energy(field, mesh) == pytest.approx(2.0)


def test_energy_parity_and_sign():
    mesh = build_mesh_from_geometry(1, [1.0], [9])
    field = np.random.default_rng(5).standard_normal((mesh.num_nodes, 3))
    assert dirichlet_energy(field, mesh) > 0
    assert dirichlet_energy(-field, mesh) == dirichlet_energy(field, mesh)


def test_energy_converges_under_refinement():
    """(cos 2 pi x, sin 2 pi x, 0) has Dirichlet integral 4 pi^2 on [0, 1]."""
    errors = []
    for nodes in (17, 33, 65):
        mesh = build_mesh_from_geometry(1, [1.0], [nodes])
        x = mesh.node_coords[:, 0]
        field = np.column_stack([np.cos(2 * np.pi * x), np.sin(2 * np.pi * x), 0 * x])
        errors.append(abs(dirichlet_energy(field, mesh) - 4 * np.pi**2))
    assert errors[0] > errors[1] > errors[2]


def test_energy_rejects_mismatched_field():
    mesh = build_mesh_from_geometry(1, [1.0], [5])
    with pytest.raises(MeshError):
        dirichlet_energy(np.zeros((4, 3)), mesh)
    with pytest.raises(MeshError):
        check_field(np.zeros((5, 2)), mesh)


def test_pairings_are_mass_weighted():
    mesh = build_mesh_from_geometry(1, [1.0], [3])
    u = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    assert l2_inner(u, u, mesh) == pytest.approx(0.25 + 0.5 * 2 + 0.25 * 4)
    assert grad_inner(u, u, mesh) == pytest.approx(dirichlet_energy(u, mesh))


def test_sphere_defect():
    field = np.array([[0.0, 0.0, 1.0], [0.0, 2.0, 0.0]])
    assert sphere_defect(field) == pytest.approx(1.0)
