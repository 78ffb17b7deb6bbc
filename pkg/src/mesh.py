"""P1 finite elements with lumped mass on intervals and rectangles.

Nodal fields are arrays of shape (num_nodes, 3). All L2 pairings use the
lumped (diagonal) mass, so they reduce to mass-weighted nodal dot products,
and gradient pairings use the stiffness matrix with natural Neumann
boundary conditions.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from src import MeshError

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable P1 mesh. Safe to share read-only between paths."""

    dimension: int
    extents: Tuple[float, ...]
    nodes_per_axis: Tuple[int, ...]
    node_coords: np.ndarray
    elements: np.ndarray
    lumped_mass: np.ndarray
    stiffness: sp.csr_matrix

    @property
    def num_nodes(self) -> int:
        return self.node_coords.shape[0]

    @cached_property
    def stiffness_coo(self) -> sp.coo_matrix:
        return self.stiffness.tocoo()

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(
            length / (count - 1)
            for length, count in zip(self.extents, self.nodes_per_axis)
        )


def _interval_mesh(length: float, count: int):
    h = length / (count - 1)
    coords = np.linspace(0.0, length, count).reshape(-1, 1)
    elements = np.column_stack([np.arange(count - 1), np.arange(1, count)])
    local_stiffness = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    local_mass = np.full(2, h / 2.0)
    stiffness_blocks = np.broadcast_to(local_stiffness, (len(elements), 2, 2))
    mass_blocks = np.broadcast_to(local_mass, (len(elements), 2))
    return coords, elements, stiffness_blocks, mass_blocks


def _rectangle_mesh(lengths, counts):
    """Uniform grid, each cell split along the same diagonal into two right
    triangles. Right angles keep every off-diagonal stiffness entry <= 0."""
    nx, ny = counts
    hx, hy = lengths[0] / (nx - 1), lengths[1] / (ny - 1)
    xs = np.linspace(0.0, lengths[0], nx)
    ys = np.linspace(0.0, lengths[1], ny)
    grid_x, grid_y = np.meshgrid(xs, ys, indexing="xy")
    coords = np.column_stack([grid_x.ravel(), grid_y.ravel()])

    # Node (i, j) lives at index j * nx + i.
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(ny - 1), indexing="xy")
    i, j = i.ravel(), j.ravel()
    sw = j * nx + i
    se = sw + 1
    nw = sw + nx
    ne = nw + 1
    # Right angle at se for the lower triangle and at nw for the upper one.
    elements = np.concatenate(
        [np.column_stack([sw, se, ne]), np.column_stack([sw, ne, nw])]
    )

    vertices = coords[elements]
    edges = np.stack(
        [
            vertices[:, 2] - vertices[:, 1],
            vertices[:, 0] - vertices[:, 2],
            vertices[:, 1] - vertices[:, 0],
        ],
        axis=1,
    )
    area = 0.5 * np.abs(
        edges[:, 2, 0] * (-edges[:, 1, 1]) - edges[:, 2, 1] * (-edges[:, 1, 0])
    )
    # Gradient of the barycentric coordinate of vertex a is the rotated
    # opposite edge divided by twice the area.
    stiffness_blocks = np.einsum("eac,ebc->eab", edges, edges) / (4.0 * area)[
        :, None, None
    ]
    mass_blocks = np.repeat((area / 3.0)[:, None], 3, axis=1)
    return coords, elements, stiffness_blocks, mass_blocks


def _validate_geometry(dimension, extents, nodes_per_axis):
    violations = []
    if dimension not in (1, 2):
        violations.append(f"dimension must be 1 or 2, got {dimension}")
    if len(extents) != dimension:
        violations.append(
            f"expected {dimension} extents, got {len(extents)}: {list(extents)}"
        )
    if len(nodes_per_axis) != dimension:
        violations.append(
            f"expected {dimension} node counts, got {len(nodes_per_axis)}: "
            f"{list(nodes_per_axis)}"
        )
    violations += [f"extent {e} is not positive" for e in extents if not e > 0]
    violations += [
        f"node count {n} is below 2" for n in nodes_per_axis if int(n) < 2
    ]
    if violations:
        raise MeshError("Invalid mesh request: " + "; ".join(violations))


def build_mesh_from_geometry(dimension, extents, nodes_per_axis) -> Mesh:
    extents = tuple(float(e) for e in extents)
    nodes_per_axis = tuple(int(n) for n in nodes_per_axis)
    _validate_geometry(dimension, extents, nodes_per_axis)

    if dimension == 1:
        coords, elements, k_blocks, m_blocks = _interval_mesh(
            extents[0], nodes_per_axis[0]
        )
    else:
        coords, elements, k_blocks, m_blocks = _rectangle_mesh(
            extents, nodes_per_axis
        )

    num_nodes = coords.shape[0]
    local_size = elements.shape[1]
    rows = np.repeat(elements, local_size, axis=1).ravel()
    cols = np.tile(elements, (1, local_size)).ravel()
    stiffness = sp.coo_matrix(
        (k_blocks.ravel(), (rows, cols)), shape=(num_nodes, num_nodes)
    ).tocsr()
    stiffness.sum_duplicates()
    lumped_mass = np.bincount(
        elements.ravel(), weights=m_blocks.ravel(), minlength=num_nodes
    )

    coords.setflags(write=False)
    elements.setflags(write=False)
    lumped_mass.setflags(write=False)
    _LOGGER.debug(
        "Mesh built (dimension=%d, nodes=%d, elements=%d, nnz=%d)",
        dimension,
        num_nodes,
        len(elements),
        stiffness.nnz,
    )
    return Mesh(
        dimension=dimension,
        extents=extents,
        nodes_per_axis=nodes_per_axis,
        node_coords=coords,
        elements=elements,
        lumped_mass=lumped_mass,
        stiffness=stiffness,
    )


def build_mesh(config) -> Mesh:
    """Build the mesh described by the mesh section of a RunConfig."""
    mesh_cfg = config.mesh
    return build_mesh_from_geometry(
        mesh_cfg.dimension, mesh_cfg.extents, mesh_cfg.nodes_per_axis
    )


def check_field(field: np.ndarray, mesh: Mesh, name: str = "field") -> np.ndarray:
    """Return field as a float array, checking it is a nodal vector field on
    mesh."""
    field = np.asarray(field, dtype=float)
    if field.shape != (mesh.num_nodes, 3):
        raise MeshError(
            f"{name} has shape {field.shape}, expected ({mesh.num_nodes}, 3)."
        )
    return field


def l2_inner(u: np.ndarray, w: np.ndarray, mesh: Mesh) -> float:
    """(u, w) in L2 with lumped mass."""
    return float(np.einsum("j,jc,jc->", mesh.lumped_mass, u, w))


def l2_norm_sq(u: np.ndarray, mesh: Mesh) -> float:
    return l2_inner(u, u, mesh)


def l4_norm_4(u: np.ndarray, mesh: Mesh) -> float:
    """||u||_{L4}^4 with lumped mass."""
    return float(mesh.lumped_mass @ np.einsum("jc,jc->j", u, u) ** 2)


def grad_inner(u: np.ndarray, w: np.ndarray, mesh: Mesh) -> float:
    """(grad u, grad w) in L2, summed over the three components."""
    return float(np.einsum("jc,jc->", u, mesh.stiffness @ w))


def dirichlet_energy(m: np.ndarray, mesh: Mesh) -> float:
    """||grad m||^2 of the P1 interpolant of m. Zero iff m is nodally
    constant."""
    m = check_field(m, mesh, "magnetization")
    return max(grad_inner(m, m, mesh), 0.0)


def sphere_defect(m: np.ndarray) -> float:
    """max_j ||m_j| - 1|."""
    return float(np.max(np.abs(np.linalg.norm(m, axis=1) - 1.0)))
