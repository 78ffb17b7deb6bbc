"""Linear tangent-plane problem solved at every time step.

The increment v is sought among nodal fields with v_j orthogonal to m_j.
Writing v_j = r_j1 t1_j + r_j2 t2_j in an orthonormal frame of m_j^perp
leaves two unknowns per node, and testing against phi = t^a_j e_j gives
the nonsymmetric system

    mu_j [[1, 1], [-1, 1]] r_j + 2 theta dt sum_k K_jk (t^a_j . t^b_k) r_kb
        = t^a_j . ( -2 dt (K m)_j + mu_j (Id - m_j x)(A_j + dt/2 S(m)_j) )

with A = m x G dW, S the Ito correction field, mu the lumped mass and K the
stiffness matrix. The symmetric part of the matrix is positive definite,
the mass block contributes only a per-node skew part.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import gmres, spsolve

from src import (
    DIRECT_SOLVER_MAX_NODES,
    TOL_FRAME_INPUT,
    FrameError,
    SolverError,
)
from src.config import SolverConfig
from src.mesh import Mesh, check_field, grad_inner, l2_inner, l2_norm_sq
from src.noise import NoiseModel, WienerIncrement, ito_correction

_LOGGER = logging.getLogger(__name__)

GMRES_RESTART = 50
# Allowed ratio between the true relative residual and the requested one.
RESIDUAL_SLACK = 10.0
DENSE_DIAGNOSTICS_MAX_UNKNOWNS = 1024
MASS_BLOCK = np.array([[1.0, 1.0], [-1.0, 1.0]])


@dataclass(frozen=True, eq=False)
class TangentFrame:
    """Per node, two orthonormal vectors spanning m_j^perp, with
    t2 = m x t1."""

    t1: np.ndarray
    t2: np.ndarray

    @property
    def vectors(self) -> np.ndarray:
        """Shape (nodes, 2, 3)."""
        return np.stack([self.t1, self.t2], axis=1)


@dataclass(frozen=True, eq=False)
class TangentUpdate:
    v: np.ndarray
    reduced: np.ndarray
    frames: TangentFrame
    residual: float
    iterations: Optional[int]
    method: str


def build_frames(m: np.ndarray) -> TangentFrame:
    """Frame of the tangent plane at every node. t1 is the coordinate axis of
    the smallest |m| component, made orthogonal to m by crossing twice:
    (m x e) x m = e - (m . e) m."""
    norms = np.linalg.norm(m, axis=1)
    worst = float(np.max(np.abs(norms - 1.0))) if len(norms) else 0.0
    if worst > TOL_FRAME_INPUT:
        raise FrameError(
            f"Magnetization is off the unit sphere by {worst:.3e} "
            f"(allowed {TOL_FRAME_INPUT:g}); refusing to build tangent frames."
        )
    unit = m / norms[:, None]
    axes = np.zeros_like(unit)
    axes[np.arange(len(unit)), np.argmin(np.abs(unit), axis=1)] = 1.0
    t1 = np.cross(np.cross(unit, axes), unit)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(unit, t1)
    return TangentFrame(t1=t1, t2=t2)


def to_reduced(field: np.ndarray, frames: TangentFrame) -> np.ndarray:
    """Frame coordinates (nodes, 2) of a nodal vector field."""
    return np.einsum("nac,nc->na", frames.vectors, field)


def from_reduced(reduced: np.ndarray, frames: TangentFrame) -> np.ndarray:
    return np.einsum("na,nac->nc", reduced, frames.vectors)


def _check_scheme(theta: float, dt: float):
    if not 0.5 < theta <= 1.0:
        raise ValueError(f"theta must lie in (1/2, 1], got {theta}.")
    if not dt > 0:
        raise ValueError(f"Time step must be positive, got {dt}.")


def assemble_system(
    frames: TangentFrame, mesh: Mesh, theta: float, dt: float
) -> sp.csr_matrix:
    """Reduced matrix of size 2n: per-node mass blocks plus the stiffness
    restricted to the tangent frames."""
    stiffness = mesh.stiffness_coo
    vectors = frames.vectors
    local = np.arange(2)

    frame_dots = np.einsum(
        "eac,ebc->eab", vectors[stiffness.row], vectors[stiffness.col]
    )
    stiff_values = (2.0 * theta * dt * stiffness.data)[:, None, None] * frame_dots
    stiff_rows = 2 * stiffness.row[:, None, None] + local[None, :, None]
    stiff_cols = 2 * stiffness.col[:, None, None] + local[None, None, :]

    nodes = np.arange(mesh.num_nodes)
    mass_values = mesh.lumped_mass[:, None, None] * MASS_BLOCK[None, :, :]
    mass_rows = 2 * nodes[:, None, None] + local[None, :, None]
    mass_cols = 2 * nodes[:, None, None] + local[None, None, :]

    rows = np.concatenate(
        [
            np.broadcast_to(stiff_rows, stiff_values.shape).ravel(),
            np.broadcast_to(mass_rows, mass_values.shape).ravel(),
        ]
    )
    cols = np.concatenate(
        [
            np.broadcast_to(stiff_cols, stiff_values.shape).ravel(),
            np.broadcast_to(mass_cols, mass_values.shape).ravel(),
        ]
    )
    values = np.concatenate([stiff_values.ravel(), mass_values.ravel()])
    size = 2 * mesh.num_nodes
    return sp.coo_matrix((values, (rows, cols)), shape=(size, size)).tocsr()


def assemble_rhs(
    m: np.ndarray,
    increment: WienerIncrement,
    noise: NoiseModel,
    frames: TangentFrame,
    mesh: Mesh,
    dt: float,
) -> np.ndarray:
    """Right-hand side tested against every frame vector."""
    noise_term = np.cross(m, increment.field)
    forcing = noise_term + 0.5 * dt * ito_correction(noise, m)
    # (Id - m x) applied nodewise.
    forcing = forcing - np.cross(m, forcing)
    nodal = -2.0 * dt * (mesh.stiffness @ m) + mesh.lumped_mass[:, None] * forcing
    return to_reduced(nodal, frames).ravel()


def _resolve_method(method: str, mesh: Mesh) -> str:
    if method == "auto":
        return "direct" if mesh.num_nodes <= DIRECT_SOLVER_MAX_NODES else "iterative"
    return method


def min_symmetric_eigenvalue(matrix: sp.spmatrix) -> Optional[float]:
    """Smallest eigenvalue of (M + M^T)/2, computed densely for small
    systems only."""
    if matrix.shape[0] > DENSE_DIAGNOSTICS_MAX_UNKNOWNS:
        return None
    dense = matrix.toarray()
    return float(np.linalg.eigvalsh(0.5 * (dense + dense.T))[0])


def max_iterations(solver_cfg: SolverConfig, mesh: Mesh) -> int:
    """Iteration cap of the Krylov solver: max_iter, or 10 per mesh node."""
    return solver_cfg.max_iter or 10 * mesh.num_nodes


def solve_reduced(matrix: sp.csr_matrix, rhs: np.ndarray, solver_cfg: SolverConfig,
                  mesh: Mesh):
    """Solve the reduced system. Returns (solution, relative residual,
    iterations, method)."""
    method = _resolve_method(solver_cfg.method, mesh)
    size = matrix.shape[0]
    rhs_norm = float(np.linalg.norm(rhs))
    iterations = None

    if method == "direct":
        solution = np.atleast_1d(spsolve(matrix.tocsc(), rhs))
        converged = True
    else:
        max_iter = max_iterations(solver_cfg, mesh)
        restart = min(GMRES_RESTART, size)
        counter = []
        solution, info = gmres(
            matrix,
            rhs,
            rtol=solver_cfg.tol,
            atol=0.0,
            restart=restart,
            maxiter=max(1, -(-max_iter // restart)),
            callback=lambda _: counter.append(1),
            callback_type="pr_norm",
        )
        iterations = len(counter)
        converged = info == 0

    residual = float(np.linalg.norm(matrix @ solution - rhs))
    if rhs_norm > 0:
        residual /= rhs_norm
    if (
        not converged
        or not np.isfinite(residual)
        or residual > RESIDUAL_SLACK * solver_cfg.tol
    ):
        raise SolverError(
            f"{method} solve of the tangent system did not reach tolerance "
            f"{solver_cfg.tol:g} (relative residual {residual:.3e}).",
            residual=residual,
            iterations=iterations,
            min_sym_eig=min_symmetric_eigenvalue(matrix),
        )
    return solution, residual, iterations, method


def assemble_and_solve(
    m: np.ndarray,
    increment: WienerIncrement,
    noise: NoiseModel,
    mesh: Mesh,
    theta: float,
    dt: float,
    solver_cfg: SolverConfig,
) -> TangentUpdate:
    """Solve for the tangential increment v of m over one step."""
    _check_scheme(theta, dt)
    m = check_field(m, mesh, "magnetization")
    frames = build_frames(m)
    matrix = assemble_system(frames, mesh, theta, dt)
    rhs = assemble_rhs(m, increment, noise, frames, mesh, dt)
    solution, residual, iterations, method = solve_reduced(
        matrix, rhs, solver_cfg, mesh
    )
    reduced = solution.reshape(-1, 2)
    return TangentUpdate(
        v=from_reduced(reduced, frames),
        reduced=reduced,
        frames=frames,
        residual=residual,
        iterations=iterations,
        method=method,
    )


def _identity_terms(m, v, increment, noise, mesh, theta, dt):
    noise_term = np.cross(m, increment.field)
    difference = v - noise_term
    correction = ito_correction(noise, m)
    correction = correction - np.cross(m, correction)
    lhs = 2.0 * grad_inner(m, v, mesh)
    rhs_terms = (
        -l2_norm_sq(difference, mesh) / dt,
        -2.0 * theta * grad_inner(v, v, mesh),
        2.0 * theta * grad_inner(v, noise_term, mesh),
        2.0 * grad_inner(m, noise_term, mesh),
        0.5 * l2_inner(correction, difference, mesh),
    )
    return lhs, rhs_terms


def step_residual_identity(
    m: np.ndarray,
    v: np.ndarray,
    increment: WienerIncrement,
    noise: NoiseModel,
    mesh: Mesh,
    theta: float,
    dt: float,
) -> float:
    """|lhs - rhs| of the energy identity obtained by testing the step
    problem with phi = v - A:

        2 (grad m, grad v) = -|v - A|^2 / dt - 2 theta |grad v|^2
            + 2 theta (grad v, grad A) + 2 (grad m, grad A)
            + 1/2 ((Id - m x) S(m), v - A)

    It vanishes up to the solver residual for the exact step solution."""
    lhs, rhs_terms = _identity_terms(m, v, increment, noise, mesh, theta, dt)
    return abs(lhs - sum(rhs_terms))


def identity_scale(
    m: np.ndarray,
    v: np.ndarray,
    increment: WienerIncrement,
    noise: NoiseModel,
    mesh: Mesh,
    theta: float,
    dt: float,
) -> float:
    """Size of the terms entering step_residual_identity, at least 1."""
    lhs, rhs_terms = _identity_terms(m, v, increment, noise, mesh, theta, dt)
    return max(1.0, abs(lhs) + sum(abs(term) for term in rhs_terms))
