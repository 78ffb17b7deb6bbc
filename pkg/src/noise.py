"""Spectral representation of the noise operator G and its Wiener increments.

G is diagonal in the Neumann cosine basis: the i-th basis field is
G_i = g_i e_i, where e_i is a discrete-L2-normalized nodal cosine times a
coordinate unit vector and g_i = c (1 + lambda_i)^(-s). Scalar modes are
ordered by eigenvalue; each one is used for the three directions in the
order z, x, y before moving to the next eigenvalue.

Random draws follow one documented order: one step at a time, and within a
step one standard normal per mode in index order. Coarse increments for a
coupled time-step ladder are therefore exact sums of fine ones.
"""

import logging
from dataclasses import dataclass

import numpy as np

from src import NoiseError
from src.mesh import Mesh, check_field, l2_norm_sq, l4_norm_4

_LOGGER = logging.getLogger(__name__)

DIRECTION_CYCLE = (2, 0, 1)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Truncated noise operator. Immutable and shareable between paths."""

    modes: int
    decay: float
    amplitude: float
    eigenvalues: np.ndarray
    multipliers: np.ndarray
    directions: np.ndarray
    basis: np.ndarray
    hs_norm_sq: float
    h1_norm_sq: float
    l2_norm_sq: float

    @property
    def num_nodes(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True, eq=False)
class WienerIncrement:
    """G dW over one step. coefficients holds the per-mode Brownian
    increments sqrt(dt) * xi_i."""

    field: np.ndarray
    coefficients: np.ndarray
    step: int
    dt: float


def scalar_modes(mesh: Mesh):
    """Neumann Laplacian eigenpairs that the mesh resolves without aliasing,
    sorted by eigenvalue. Returns (eigenvalues, angular frequencies per
    axis)."""
    wavenumbers = np.stack(
        np.meshgrid(*[np.arange(n) for n in mesh.nodes_per_axis], indexing="ij"),
        axis=-1,
    ).reshape(-1, mesh.dimension)
    frequencies = wavenumbers * np.pi / np.asarray(mesh.extents)
    eigenvalues = np.sum(frequencies**2, axis=1)
    # Sort by eigenvalue, ties broken by wavenumber for determinism.
    order = np.lexsort(tuple(wavenumbers[:, ::-1].T) + (eigenvalues,))
    return eigenvalues[order], frequencies[order]


def eigenfunctions(mesh: Mesh, frequencies: np.ndarray) -> np.ndarray:
    """Nodal samples of prod_d cos(k_d x_d), shape (len(frequencies), nodes)."""
    return np.prod(
        np.cos(mesh.node_coords[None, :, :] * frequencies[:, None, :]), axis=2
    )


def available_modes(mesh: Mesh) -> int:
    return 3 * int(np.prod(mesh.nodes_per_axis))


def build_noise(mesh: Mesh, modes: int, decay: float, amplitude: float) -> NoiseModel:
    """Build the first `modes` basis fields G_i of the noise operator."""
    if modes < 0:
        raise NoiseError(f"Number of noise modes must be >= 0, got {modes}.")
    if not decay > 0:
        raise NoiseError(f"Spectral decay must be > 0, got {decay}.")
    if not amplitude >= 0:
        raise NoiseError(f"Noise amplitude must be >= 0, got {amplitude}.")
    if modes > available_modes(mesh):
        raise NoiseError(
            f"{modes} noise modes requested but the mesh only resolves "
            f"{available_modes(mesh)} distinct modes."
        )

    index = np.arange(modes)
    scalar_index = index // 3
    directions = np.asarray(DIRECTION_CYCLE)[index % 3]
    eigenvalues, frequencies = scalar_modes(mesh)
    eigenvalues = eigenvalues[scalar_index]
    functions = eigenfunctions(mesh, frequencies[scalar_index])
    norms = np.sqrt(functions**2 @ mesh.lumped_mass)
    multipliers = amplitude * (1.0 + eigenvalues) ** (-decay)

    basis = np.zeros((modes, mesh.num_nodes, 3))
    basis[index, :, directions] = (multipliers / norms)[:, None] * functions
    basis.setflags(write=False)

    weights = multipliers**2
    noise = NoiseModel(
        modes=modes,
        decay=float(decay),
        amplitude=float(amplitude),
        eigenvalues=eigenvalues,
        multipliers=multipliers,
        directions=directions,
        basis=basis,
        hs_norm_sq=float(np.sum(weights * (1.0 + eigenvalues) ** 2)),
        h1_norm_sq=float(np.sum(weights * (1.0 + eigenvalues))),
        l2_norm_sq=float(np.sum(weights)),
    )
    _LOGGER.debug(
        "Noise built (modes=%d, decay=%g, amplitude=%g, hs_norm_sq=%g)",
        modes,
        decay,
        amplitude,
        noise.hs_norm_sq,
    )
    return noise


def build_noise_from_config(mesh: Mesh, config) -> NoiseModel:
    noise_cfg = config.noise
    return build_noise(mesh, noise_cfg.modes, noise_cfg.decay, noise_cfg.amplitude)


def increment_from_coefficients(
    noise: NoiseModel, coefficients: np.ndarray, dt: float, step: int = 0
) -> WienerIncrement:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (noise.modes,):
        raise NoiseError(
            f"Expected {noise.modes} mode coefficients, got shape "
            f"{coefficients.shape}."
        )
    field = np.einsum("i,inc->nc", coefficients, noise.basis)
    return WienerIncrement(field=field, coefficients=coefficients, step=step, dt=dt)


def sample_increment(
    noise: NoiseModel, rng: np.random.Generator, dt: float, step: int = 0
) -> WienerIncrement:
    """Draw G dW over a step of length dt. Consumes exactly `modes` standard
    normals from rng."""
    if not dt > 0:
        raise NoiseError(f"Time step must be > 0, got {dt}.")
    coefficients = np.sqrt(dt) * rng.standard_normal(noise.modes)
    return increment_from_coefficients(noise, coefficients, dt, step)


def draw_coefficients(
    noise: NoiseModel, rng: np.random.Generator, dt: float, num_steps: int
) -> np.ndarray:
    """Mode increments for num_steps consecutive steps, shape
    (num_steps, modes), in the same draw order as repeated
    sample_increment calls."""
    if not dt > 0:
        raise NoiseError(f"Time step must be > 0, got {dt}.")
    coefficients = np.empty((num_steps, noise.modes))
    for n in range(num_steps):
        coefficients[n] = np.sqrt(dt) * rng.standard_normal(noise.modes)
    return coefficients


def coarsen_coefficients(fine: np.ndarray) -> np.ndarray:
    """Brownian increments over steps twice as long: each coarse increment
    is the sum of two consecutive fine ones."""
    if fine.shape[0] % 2:
        raise NoiseError(
            f"Cannot pair up an odd number of fine steps ({fine.shape[0]})."
        )
    return fine[0::2] + fine[1::2]


def ito_correction(noise: NoiseModel, m: np.ndarray) -> np.ndarray:
    """S(m)_j = sum_i (m_j x G_i(x_j)) x G_i(x_j). The factor 1/2 is left to
    the caller."""
    if m.shape != (noise.num_nodes, 3):
        raise NoiseError(
            f"Magnetization has shape {m.shape}, noise lives on "
            f"{noise.num_nodes} nodes."
        )
    # (m x G) x G = G (m . G) - m |G|^2
    dots = np.einsum("nc,inc->in", m, noise.basis)
    squares = np.einsum("inc,inc->n", noise.basis, noise.basis)
    return np.einsum("in,inc->nc", dots, noise.basis) - squares[:, None] * m


def mode_projections(noise: NoiseModel, probe: np.ndarray, mesh: Mesh) -> np.ndarray:
    """(G_i, a) for every mode i."""
    probe = check_field(probe, mesh, "probe")
    return np.einsum("n,inc,nc->i", mesh.lumped_mass, noise.basis, probe)


def increment_variance(
    noise: NoiseModel, probe: np.ndarray, mesh: Mesh, dt: float
) -> float:
    """Var (G dW, a) = dt * sum_i (G_i, a)^2."""
    return float(dt * np.sum(mode_projections(noise, probe, mesh) ** 2))


def cross_projections(
    noise: NoiseModel, m: np.ndarray, probes: np.ndarray, mesh: Mesh
) -> np.ndarray:
    """(m x G_i, a_p) for every mode i and probe p, shape (modes, probes)."""
    crossed = np.cross(m[None, :, :], noise.basis)
    return np.einsum("n,inc,pnc->ip", mesh.lumped_mass, crossed, probes)


@dataclass(frozen=True)
class NoiseMoments:
    samples: int
    dt: float
    mean_l2_sq: float
    mean_l4_4: float
    l2_bound: float


def noise_moments(
    noise: NoiseModel,
    m: np.ndarray,
    mesh: Mesh,
    dt: float,
    samples: int,
    rng: np.random.Generator,
) -> NoiseMoments:
    """Sample E||m x G dW||^2_L2 and E||m x G dW||^4_L4. The first is bounded
    by dt * ||G||^2 in the L2 Hilbert-Schmidt norm."""
    m = check_field(m, mesh, "magnetization")
    l2_values = np.empty(samples)
    l4_values = np.empty(samples)
    for k in range(samples):
        noise_term = np.cross(m, sample_increment(noise, rng, dt, k).field)
        l2_values[k] = l2_norm_sq(noise_term, mesh)
        l4_values[k] = l4_norm_4(noise_term, mesh)
    return NoiseMoments(
        samples=samples,
        dt=dt,
        mean_l2_sq=float(np.mean(l2_values)),
        mean_l4_4=float(np.mean(l4_values)),
        l2_bound=dt * noise.l2_norm_sq,
    )
