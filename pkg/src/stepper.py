"""Time stepping: tangent solve, renormalization and per-step diagnostics."""

import logging
from dataclasses import dataclass
from os.path import join
from typing import List, Optional

import numpy as np
import pandas as pd

from src import (
    RENORMALIZATION_GUARD,
    ConfigError,
    PathError,
    RenormalizationError,
    SimulationError,
)
from src.config import InitialCondition, RunConfig, SchemeConfig, SolverConfig
from src.helpers import load_field, make_generator, save_field, write_csv, write_vtk
from src.mesh import (
    Mesh,
    build_mesh,
    check_field,
    dirichlet_energy,
    grad_inner,
    l2_norm_sq,
    sphere_defect,
)
from src.noise import (
    NoiseModel,
    WienerIncrement,
    build_noise_from_config,
    increment_from_coefficients,
    sample_increment,
)
from src.tangent import assemble_and_solve, identity_scale, step_residual_identity

_LOGGER = logging.getLogger(__name__)

SchemeParams = SchemeConfig

SCALAR_COLUMNS = [
    "step",
    "t",
    "energy",
    "norm_v_sq",
    "norm_v_minus_A_sq",
    "norm_grad_v_sq",
    "residual",
    "energy_next",
    "pre_renorm_energy",
    "norm_A_sq",
    "residual_scale",
    "solver_residual",
    "sphere_defect",
    "tangency_defect",
    "projection_defect",
]


def _rotation_profile(coords: np.ndarray, extents) -> np.ndarray:
    angle = 2.0 * np.pi * coords[:, 0] / extents[0]
    return np.column_stack([np.cos(angle), np.sin(angle), np.zeros(len(coords))])


def _bump_profile(coords: np.ndarray, extents) -> np.ndarray:
    """Polar-angle bump: (0, 0, 1) at the centre of the domain turning over to
    (0, 0, -1) at distance 0.25 * min(extents) and beyond."""
    centre = 0.5 * np.asarray(extents)
    offset = (coords - centre) / (0.25 * min(extents))
    radius_sq = np.sum(offset**2, axis=1)
    weight = np.clip(1.0 - np.sqrt(radius_sq), 0.0, None) ** 4
    planar = np.zeros((len(coords), 2))
    planar[:, : offset.shape[1]] = offset
    denominator = weight**2 + radius_sq
    return np.column_stack(
        [
            2.0 * weight * planar[:, 0],
            2.0 * weight * planar[:, 1],
            weight**2 - radius_sq,
        ]
    ) / denominator[:, None]


PROFILES = {"rotation": _rotation_profile, "bump": _bump_profile}


def init_state(m0_spec: InitialCondition, mesh: Mesh) -> np.ndarray:
    """Sample the initial condition at the nodes and normalize every node."""
    if m0_spec.kind == "constant":
        field = np.tile(np.asarray(m0_spec.vector, dtype=float), (mesh.num_nodes, 1))
    elif m0_spec.kind == "profile":
        if m0_spec.name not in PROFILES:
            raise ConfigError(
                [f"initial_condition.name: unknown profile {m0_spec.name!r}"]
            )
        field = PROFILES[m0_spec.name](mesh.node_coords, mesh.extents)
    elif m0_spec.kind == "file":
        field = check_field(load_field(m0_spec.path), mesh, "initial condition")
    else:
        raise ConfigError([f"initial_condition.kind: unknown kind {m0_spec.kind!r}"])

    lengths = np.linalg.norm(field, axis=1)
    zero_nodes = np.flatnonzero(lengths == 0)
    if len(zero_nodes):
        raise ConfigError(
            [
                f"initial_condition: zero-length vector at node(s) "
                f"{zero_nodes[:10].tolist()}"
            ]
        )
    return field / lengths[:, None]


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    energy: float
    energy_next: float
    pre_renorm_energy: float
    norm_v_sq: float
    norm_v_minus_A_sq: float
    norm_grad_v_sq: float
    norm_A_sq: float
    residual: float
    residual_scale: float
    solver_residual: float
    sphere_defect: float
    tangency_defect: float
    projection_defect: float
    noise_term: np.ndarray
    v: np.ndarray

    def scalars(self) -> dict:
        return {
            name: getattr(self, name)
            for name in SCALAR_COLUMNS
            if name not in ("step", "t")
        }


def renormalize(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """(m + v) / |m + v| nodewise. Tangent v keeps |m + v| >= 1, so a small
    length means the increment is corrupted."""
    shifted = m + v
    lengths = np.linalg.norm(shifted, axis=1)
    shortest = float(np.min(lengths))
    if shortest < RENORMALIZATION_GUARD:
        raise RenormalizationError(
            f"|m + v| dropped to {shortest:.3e} at node "
            f"{int(np.argmin(lengths))}; refusing to renormalize."
        )
    return shifted / lengths[:, None]


def step(
    m: np.ndarray,
    rng: Optional[np.random.Generator],
    params: SchemeParams,
    noise: NoiseModel,
    mesh: Mesh,
    solver_cfg: SolverConfig,
    increment: Optional[WienerIncrement] = None,
    step_index: int = 0,
):
    """Advance m by one step. Draws the increment from rng unless one is
    given. Returns (m_next, StepDiagnostics)."""
    dt = params.dt
    if increment is None:
        increment = sample_increment(noise, rng, dt, step_index)
    update = assemble_and_solve(
        m, increment, noise, mesh, params.theta, dt, solver_cfg
    )
    v = update.v
    m_next = renormalize(m, v)

    noise_term = np.cross(m, increment.field)
    v_sq = np.einsum("nc,nc->n", v, v)
    diagnostics = StepDiagnostics(
        energy=dirichlet_energy(m, mesh),
        energy_next=dirichlet_energy(m_next, mesh),
        pre_renorm_energy=max(grad_inner(m + v, m + v, mesh), 0.0),
        norm_v_sq=l2_norm_sq(v, mesh),
        norm_v_minus_A_sq=l2_norm_sq(v - noise_term, mesh),
        norm_grad_v_sq=max(grad_inner(v, v, mesh), 0.0),
        norm_A_sq=l2_norm_sq(noise_term, mesh),
        residual=step_residual_identity(
            m, v, increment, noise, mesh, params.theta, dt
        ),
        residual_scale=identity_scale(m, v, increment, noise, mesh, params.theta, dt),
        solver_residual=update.residual,
        sphere_defect=sphere_defect(m_next),
        tangency_defect=float(np.max(np.abs(np.einsum("nc,nc->n", v, m)))),
        projection_defect=float(
            np.max(np.linalg.norm(m_next - m - v, axis=1) - 0.5 * v_sq)
        ),
        noise_term=noise_term,
        v=v,
    )
    return m_next, diagnostics


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One simulated path. scalars has one row per step n = 0..N-1, with the
    energy of m^n and of m^{n+1}. snapshots and martingale hold m^n and
    X_N(n dt) at snapshot_steps."""

    seed: Optional[int]
    dt: float
    scalars: pd.DataFrame
    snapshot_steps: np.ndarray
    snapshots: np.ndarray
    martingale: np.ndarray
    coefficients: np.ndarray

    @property
    def final_state(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def initial_state(self) -> np.ndarray:
        return self.snapshots[0]


def snapshot_schedule(num_steps: int, stride: int) -> List[int]:
    """Steps at which fields are stored. Always includes 0 and N."""
    if stride <= 0:
        return [0, num_steps] if num_steps else [0]
    steps = list(range(0, num_steps + 1, stride))
    if steps[-1] != num_steps:
        steps.append(num_steps)
    return steps


def run_path(
    config: RunConfig,
    seed: Optional[int],
    mesh: Optional[Mesh] = None,
    noise: Optional[NoiseModel] = None,
    coefficients: Optional[np.ndarray] = None,
    snapshot_stride: Optional[int] = None,
    m0: Optional[np.ndarray] = None,
) -> Trajectory:
    """Run the scheme over [0, T] on one path. Step n only uses the increments
    of steps 0..n. With coefficients given (shape (N, modes)), those mode
    increments are used instead of draws from the seeded generator."""
    mesh = build_mesh(config) if mesh is None else mesh
    noise = build_noise_from_config(mesh, config) if noise is None else noise
    params = config.scheme
    dt = params.dt
    num_steps = params.steps
    stride = config.output.snapshot_stride if snapshot_stride is None else snapshot_stride
    schedule = snapshot_schedule(num_steps, stride)

    if coefficients is not None:
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (num_steps, noise.modes):
            raise ValueError(
                f"Expected mode increments of shape {(num_steps, noise.modes)}, "
                f"got {coefficients.shape}."
            )
        rng = None
    else:
        rng = make_generator(seed)
        coefficients = np.empty((num_steps, noise.modes))

    m = init_state(config.initial_condition, mesh) if m0 is None else np.array(m0)
    martingale = np.zeros_like(m)
    snapshots = [m.copy()]
    martingale_snapshots = [martingale.copy()]
    rows = []
    _LOGGER.info(
        "Path started (seed=%s, steps=%d, dt=%g, nodes=%d, modes=%d)",
        seed,
        num_steps,
        dt,
        mesh.num_nodes,
        noise.modes,
    )
    for n in range(num_steps):
        if rng is None:
            increment = increment_from_coefficients(noise, coefficients[n], dt, n)
        else:
            increment = sample_increment(noise, rng, dt, n)
            coefficients[n] = increment.coefficients
        try:
            m, diagnostics = step(
                m, rng, params, noise, mesh, config.solver, increment, n
            )
        except SimulationError as exc:
            _LOGGER.warning("Path with seed %s failed at step %d: %s", seed, n, exc)
            raise PathError(
                f"Path with seed {seed} failed at step {n}: {exc}", step=n, seed=seed
            ) from exc
        martingale = martingale + diagnostics.noise_term
        rows.append({"step": n, "t": n * dt, **diagnostics.scalars()})
        if n + 1 in schedule:
            snapshots.append(m.copy())
            martingale_snapshots.append(martingale.copy())
        _LOGGER.debug(
            "step %d: energy=%.6g |v|^2=%.3g residual=%.3g",
            n,
            diagnostics.energy_next,
            diagnostics.norm_v_sq,
            diagnostics.residual,
        )

    _LOGGER.info("Path finished (seed=%s)", seed)
    return Trajectory(
        seed=seed,
        dt=dt,
        scalars=pd.DataFrame(rows, columns=SCALAR_COLUMNS),
        snapshot_steps=np.asarray(schedule),
        snapshots=np.asarray(snapshots),
        martingale=np.asarray(martingale_snapshots),
        coefficients=coefficients,
    )


def write_trajectory(
    trajectory: Trajectory, mesh: Mesh, out_dir: str, vtk: bool = False
) -> List[str]:
    """Write per-step scalars as CSV, the final state as .npy and, if asked,
    every snapshot as a legacy VTK file. Returns the written paths."""
    written = [join(out_dir, "trajectory.csv"), join(out_dir, "final_state.npy")]
    write_csv(trajectory.scalars, written[0])
    save_field(trajectory.final_state, written[1])
    if vtk:
        for n, field, martingale in zip(
            trajectory.snapshot_steps, trajectory.snapshots, trajectory.martingale
        ):
            file_path = join(out_dir, "snapshots", f"m_{int(n):06d}.vtk")
            write_vtk(mesh, {"m": field, "X": martingale}, file_path)
            written.append(file_path)
    return written
