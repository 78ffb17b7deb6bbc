"""Monte Carlo ensembles, coupled time-step ladders and martingale checks.

Every path i of an experiment uses the seed base_seed + i, so adding paths
never changes the existing ones. Per-path results come back in seed order
and are reduced in that order whatever the number of workers.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src import PathError, SimulationError
from src.config import RunConfig
from src.helpers import make_generator, path_seed
from src.mesh import Mesh, build_mesh, check_field
from src.noise import (
    NoiseModel,
    build_noise_from_config,
    coarsen_coefficients,
    cross_projections,
    draw_coefficients,
    mode_projections,
    noise_moments,
)
from src.stepper import init_state, run_path

_LOGGER = logging.getLogger(__name__)

CONFIDENCE_SIGMAS = 3.0
ENERGY_CONSTANT_SPREAD = 2.0
DRIFT_RATIO_RANGE = (0.3, 0.8)
GRAM_INDICES = 8


@dataclass(frozen=True)
class Estimate:
    """Sample mean with a 3 sigma half-width."""

    mean: float
    half_width: float

    def contains(self, value: float = 0.0) -> bool:
        return abs(self.mean - value) <= self.half_width

    def as_dict(self) -> dict:
        return {"mean": self.mean, "half_width": self.half_width}


def estimate(samples) -> Estimate:
    samples = np.asarray(samples, dtype=float)
    count = len(samples)
    if count < 2:
        raise ValueError(f"Need at least 2 samples for an estimate, got {count}.")
    spread = float(np.std(samples, ddof=1))
    return Estimate(
        mean=float(np.mean(samples)),
        half_width=CONFIDENCE_SIGMAS * spread / np.sqrt(count),
    )


def _mean_and_half_width(samples: np.ndarray):
    """Elementwise estimate over the first axis."""
    count = samples.shape[0]
    spread = np.std(samples, axis=0, ddof=1)
    return np.mean(samples, axis=0), CONFIDENCE_SIGMAS * spread / np.sqrt(count)


def map_paths(function: Callable, seeds: Sequence[int], workers: int = 1) -> list:
    """Apply function to every seed, in a process pool if workers > 1.
    Results are returned in seed order."""
    if workers <= 1 or len(seeds) <= 1:
        return [function(seed) for seed in seeds]
    chunksize = max(1, len(seeds) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(function, seeds, chunksize=chunksize))


def noise_fields(noise: NoiseModel, coefficients: np.ndarray) -> np.ndarray:
    """G dW^n for every row of mode increments, shape (steps, nodes, 3)."""
    return np.einsum("ki,inc->knc", coefficients, noise.basis)


def gram_indices(steps: int) -> np.ndarray:
    """Evenly spread step indices, first and last included, at which the
    ensemble keeps the increment Gram matrix."""
    count = min(steps, GRAM_INDICES)
    return np.unique(np.linspace(0, steps - 1, count).round().astype(int))


@dataclass(frozen=True, eq=False)
class PathSummary:
    seed: int
    error: Optional[str] = None
    energies: Optional[np.ndarray] = None
    sum_drift_sq: float = 0.0
    sum_v_sq: float = 0.0
    sum_grad_v_sq: float = 0.0
    sum_noise_sq: float = 0.0
    martingale_sq: float = 0.0
    increment_gram: Optional[np.ndarray] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def summarize_path(
    config: RunConfig, mesh: Mesh, noise: NoiseModel, seed: int
) -> PathSummary:
    """Run one path and keep only what the ensemble reduction needs."""
    try:
        trajectory = run_path(config, seed, mesh, noise, snapshot_stride=1)
    except PathError as exc:
        return PathSummary(seed=seed, error=str(exc))

    scalars = trajectory.scalars
    energies = np.append(
        scalars["energy"].to_numpy(), scalars["energy_next"].to_numpy()[-1:]
    )
    indices = gram_indices(len(trajectory.coefficients))
    noise_terms = np.cross(
        trajectory.snapshots[indices],
        noise_fields(noise, trajectory.coefficients[indices]),
    )
    gram = np.einsum("j,kjc,ljc->kl", mesh.lumped_mass, noise_terms, noise_terms)
    final_martingale = trajectory.martingale[-1]
    return PathSummary(
        seed=seed,
        energies=energies,
        sum_drift_sq=float(scalars["norm_v_minus_A_sq"].sum()),
        sum_v_sq=float(scalars["norm_v_sq"].sum()),
        sum_grad_v_sq=float(scalars["norm_grad_v_sq"].sum()),
        sum_noise_sq=float(scalars["norm_A_sq"].sum()),
        martingale_sq=float(
            np.einsum("j,jc,jc->", mesh.lumped_mass, final_martingale, final_martingale)
        ),
        increment_gram=gram,
    )


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Reduction of M independent paths.

    energy has one row per step n = 0..N with the mean, variance and 3 sigma
    half-width of the Dirichlet energy of m^n. increment_gram is the mean of
    (A^n, A^k) over paths, with A^n = m^n x G dW^n, for n and k in
    gram_steps."""

    paths: int
    failures: int
    failed_seeds: List[int]
    base_seed: int
    steps: int
    dt: float
    energy: pd.DataFrame
    sum_drift_sq: Estimate
    sum_v_sq: Estimate
    sum_grad_v_sq: Estimate
    sum_noise_sq: Estimate
    martingale_sq: Estimate
    gram_steps: np.ndarray
    increment_gram: np.ndarray
    increment_gram_half_width: np.ndarray

    @property
    def initial_energy(self) -> float:
        return float(self.energy["mean_energy"].iloc[0])

    @property
    def max_mean_energy(self) -> float:
        return float(self.energy["mean_energy"].max())

    @property
    def energy_constant(self) -> float:
        """max_n E||grad m^n||^2 / (1 + ||grad m^0||^2)."""
        return self.max_mean_energy / (1.0 + self.initial_energy)

    def orthogonality_coverage(self) -> float:
        """Share of the off-diagonal (A^n, A^k) means whose 3 sigma interval
        contains 0. Close to 1 for independent increments."""
        off_diagonal = ~np.eye(len(self.gram_steps), dtype=bool)
        if not off_diagonal.any():
            return 1.0
        return float(
            np.mean(
                np.abs(self.increment_gram[off_diagonal])
                <= self.increment_gram_half_width[off_diagonal]
            )
        )

    def summary(self) -> dict:
        return {
            "paths": self.paths,
            "failures": self.failures,
            "failed_seeds": self.failed_seeds,
            "base_seed": self.base_seed,
            "steps": self.steps,
            "dt": self.dt,
            "initial_energy": self.initial_energy,
            "max_mean_energy": self.max_mean_energy,
            "energy_constant": self.energy_constant,
            "sum_drift_sq": self.sum_drift_sq.as_dict(),
            "sum_v_sq": self.sum_v_sq.as_dict(),
            "sum_grad_v_sq": self.sum_grad_v_sq.as_dict(),
            "sum_noise_sq": self.sum_noise_sq.as_dict(),
            "martingale_sq": self.martingale_sq.as_dict(),
            "increment_orthogonality_coverage": self.orthogonality_coverage(),
        }


def run_ensemble(
    config: RunConfig,
    paths: Optional[int] = None,
    base_seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> EnsembleStats:
    """Run M independent paths with seeds base_seed + i and reduce them.
    Failed paths are counted and left out of the statistics."""
    paths = config.mc.paths if paths is None else paths
    base_seed = config.mc.base_seed if base_seed is None else base_seed
    workers = config.mc.workers if workers is None else workers
    if paths < 2:
        raise ValueError(f"An ensemble needs at least 2 paths, got {paths}.")

    mesh = build_mesh(config)
    noise = build_noise_from_config(mesh, config)
    seeds = [path_seed(base_seed, i) for i in range(paths)]
    _LOGGER.info(
        "Ensemble started (paths=%d, base_seed=%d, workers=%d, steps=%d)",
        paths,
        base_seed,
        workers,
        config.scheme.steps,
    )
    results = map_paths(partial(summarize_path, config, mesh, noise), seeds, workers)

    survivors = [result for result in results if not result.failed]
    failed_seeds = [result.seed for result in results if result.failed]
    for result in results:
        if result.failed:
            _LOGGER.warning("Path %d left out: %s", result.seed, result.error)
    if len(survivors) < 2:
        raise SimulationError(
            f"Only {len(survivors)} of {paths} paths survived; "
            "cannot form ensemble statistics."
        )

    dt = config.scheme.dt
    energies = np.stack([result.energies for result in survivors])
    mean_energy, energy_half_width = _mean_and_half_width(energies)
    gram_mean, gram_half_width = _mean_and_half_width(
        np.stack([result.increment_gram for result in survivors])
    )
    steps = np.arange(energies.shape[1])
    energy = pd.DataFrame(
        {
            "step": steps,
            "t": steps * dt,
            "mean_energy": mean_energy,
            "var_energy": np.var(energies, axis=0, ddof=1),
            "half_width": energy_half_width,
        }
    )

    def collect(name):
        return estimate([getattr(result, name) for result in survivors])

    stats = EnsembleStats(
        paths=len(survivors),
        failures=len(failed_seeds),
        failed_seeds=failed_seeds,
        base_seed=base_seed,
        steps=config.scheme.steps,
        dt=dt,
        energy=energy,
        sum_drift_sq=collect("sum_drift_sq"),
        sum_v_sq=collect("sum_v_sq"),
        sum_grad_v_sq=collect("sum_grad_v_sq"),
        sum_noise_sq=collect("sum_noise_sq"),
        martingale_sq=collect("martingale_sq"),
        gram_steps=gram_indices(config.scheme.steps),
        increment_gram=gram_mean,
        increment_gram_half_width=gram_half_width,
    )
    _LOGGER.info(
        "Ensemble finished (survivors=%d, failures=%d, max mean energy=%.6g)",
        stats.paths,
        stats.failures,
        stats.max_mean_energy,
    )
    return stats


def halving_study(
    config: RunConfig,
    levels: int,
    paths: Optional[int] = None,
    base_seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> pd.DataFrame:
    """Repeat the ensemble with dt halved `levels - 1` times at fixed T.

    Columns: steps, dt, max_mean_energy, energy_constant, sum_drift_sq,
    sum_drift_sq_half_width and drift_ratio (to the previous level)."""
    if levels < 2:
        raise ValueError(f"A halving study needs at least 2 levels, got {levels}.")
    rows = []
    for level in range(levels):
        scheme = replace(config.scheme, steps=config.scheme.steps * 2**level)
        stats = run_ensemble(
            replace(config, scheme=scheme), paths, base_seed, workers
        )
        rows.append(
            {
                "steps": scheme.steps,
                "dt": scheme.dt,
                "max_mean_energy": stats.max_mean_energy,
                "energy_constant": stats.energy_constant,
                "sum_drift_sq": stats.sum_drift_sq.mean,
                "sum_drift_sq_half_width": stats.sum_drift_sq.half_width,
            }
        )
    table = pd.DataFrame(rows)
    table["drift_ratio"] = table["sum_drift_sq"] / table["sum_drift_sq"].shift(1)
    return table


def halving_verdict(table: pd.DataFrame) -> Dict[str, bool]:
    """Energy constants agree within a factor 2 across the levels, and the
    summed drift squares shrink like dt."""
    constants = table["energy_constant"]
    ratios = table["drift_ratio"].dropna()
    low, high = DRIFT_RATIO_RANGE
    return {
        "energy_constant_stable": bool(
            constants.max() <= ENERGY_CONSTANT_SPREAD * constants.min()
        ),
        "drift_ratio_in_range": bool(ratios.between(low, high).all()),
    }


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    """Coupled-path Cauchy differences over a ladder of step counts.

    differences[k] is the path mean of ||m_k - m_{k+1}||^2 in
    L2([0, T] x D), both runs taken piecewise constant in time. The
    empirical order is log2(d_k / d_{k+1}) / 2 and is only reported."""

    seed: int
    paths: int
    final_time: float
    steps: List[int]
    differences: np.ndarray
    failures: int = 0

    @property
    def dts(self) -> List[float]:
        return [self.final_time / n for n in self.steps]

    @property
    def squared_rates(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log2(self.differences[:-1] / self.differences[1:])

    @property
    def orders(self) -> np.ndarray:
        return self.squared_rates / 2.0

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.differences) < 0))

    def to_frame(self) -> pd.DataFrame:
        count = len(self.differences)
        padding = np.full(1, np.nan)
        return pd.DataFrame(
            {
                "level": np.arange(count),
                "coarse_steps": self.steps[:count],
                "fine_steps": self.steps[1 : count + 1],
                "difference": self.differences,
                "squared_rate": np.concatenate([self.squared_rates, padding]),
                "order": np.concatenate([self.orders, padding]),
            }
        )

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "paths": self.paths,
            "failures": self.failures,
            "steps": self.steps,
            "dts": self.dts,
            "differences": self.differences.tolist(),
            "orders": [float(order) for order in self.orders],
            "monotone": self.monotone,
        }


def piecewise_constant_distance(
    coarse: np.ndarray, fine: np.ndarray, fine_dt: float, mesh: Mesh
) -> float:
    """||u_coarse - u_fine||^2 in L2([0, T] x D) of two piecewise constant
    paths, the coarse one with steps twice as long. coarse holds N + 1
    states, fine holds 2N + 1 states; the final states carry no time."""
    repeated = np.repeat(coarse[:-1], 2, axis=0)
    difference = repeated - fine[:-1]
    return float(
        fine_dt * np.einsum("j,kjc,kjc->", mesh.lumped_mass, difference, difference)
    )


def _ladder_differences(
    config: RunConfig,
    mesh: Mesh,
    noise: NoiseModel,
    steps: List[int],
    seed: int,
) -> Optional[np.ndarray]:
    """Differences between consecutive ladder levels on one Brownian path.
    The finest increments are drawn first and summed pairwise downwards."""
    final_time = config.scheme.final_time
    coefficients = [
        draw_coefficients(noise, make_generator(seed), final_time / steps[-1], steps[-1])
    ]
    for _ in steps[:-1]:
        coefficients.insert(0, coarsen_coefficients(coefficients[0]))

    states = []
    try:
        for count, level_coefficients in zip(steps, coefficients):
            scheme = replace(config.scheme, steps=count)
            trajectory = run_path(
                replace(config, scheme=scheme),
                seed,
                mesh,
                noise,
                coefficients=level_coefficients,
                snapshot_stride=1,
            )
            states.append(trajectory.snapshots)
    except PathError as exc:
        _LOGGER.warning("Ladder path %d left out: %s", seed, exc)
        return None

    return np.array(
        [
            piecewise_constant_distance(
                states[k], states[k + 1], final_time / steps[k + 1], mesh
            )
            for k in range(len(steps) - 1)
        ]
    )


def run_convergence(
    config: RunConfig,
    ladder_levels: int,
    seed: int,
    paths: int = 1,
    workers: int = 1,
) -> ConvergenceReport:
    """Step counts N, 2N, 4N, ... driven by the same Brownian paths. A
    non-monotone ladder is reported, not raised."""
    if ladder_levels < 3:
        raise ValueError(f"A ladder needs at least 3 levels, got {ladder_levels}.")
    if paths < 1:
        raise ValueError(f"Need at least one path, got {paths}.")
    mesh = build_mesh(config)
    noise = build_noise_from_config(mesh, config)
    steps = [config.scheme.steps * 2**level for level in range(ladder_levels)]
    seeds = [path_seed(seed, i) for i in range(paths)]
    _LOGGER.info("Convergence ladder started (steps=%s, paths=%d)", steps, paths)

    results = map_paths(
        partial(_ladder_differences, config, mesh, noise, steps), seeds, workers
    )
    survivors = [result for result in results if result is not None]
    if not survivors:
        raise SimulationError("Every ladder path failed; no differences to report.")

    report = ConvergenceReport(
        seed=seed,
        paths=len(survivors),
        final_time=config.scheme.final_time,
        steps=steps,
        differences=np.mean(np.stack(survivors), axis=0),
        failures=paths - len(survivors),
    )
    if not report.monotone:
        _LOGGER.warning(
            "Ladder differences are not strictly decreasing: %s",
            report.differences.tolist(),
        )
    return report


def default_probes(mesh: Mesh) -> np.ndarray:
    """Three probe fields of shape (3, nodes, 3): x-hat, y-hat times a ramp
    along the first axis, and z-hat times the complementary ramp."""
    ramp = mesh.node_coords[:, 0] / mesh.extents[0]
    probes = np.zeros((3, mesh.num_nodes, 3))
    probes[0, :, 0] = 1.0
    probes[1, :, 1] = ramp
    probes[2, :, 2] = 1.0 - ramp
    return probes


def check_probes(probes: np.ndarray, mesh: Mesh) -> np.ndarray:
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 2:
        probes = probes[None]
    for probe in probes:
        check_field(probe, mesh, "probe field")
    return probes


@dataclass(frozen=True, eq=False)
class MartingalePath:
    seed: int
    error: Optional[str] = None
    projections: Optional[np.ndarray] = None
    compensator: Optional[np.ndarray] = None
    increment_inner: Optional[np.ndarray] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


def increment_order(steps: int, shuffle: bool) -> np.ndarray:
    """Which increment step n pairs with. The shuffled order is the
    reversal, which breaks adaptedness for every n > (N - 1) / 2."""
    order = np.arange(steps)
    return order[::-1].copy() if shuffle else order


def martingale_path(
    config: RunConfig,
    mesh: Mesh,
    noise: NoiseModel,
    probes: np.ndarray,
    increment_pairs: List[Tuple[int, int]],
    shuffle: bool,
    seed: int,
) -> MartingalePath:
    """(X^n, a_p) for n = 0..N, the cumulative compensator
    dt sum_{k<n} sum_i (m^k x G_i, a_p)(m^k x G_i, a_q) and (A^n, A^k) for
    the requested increment pairs."""
    try:
        trajectory = run_path(config, seed, mesh, noise, snapshot_stride=1)
    except PathError as exc:
        return MartingalePath(seed=seed, error=str(exc))

    dt = trajectory.dt
    states = trajectory.snapshots[:-1]
    order = increment_order(len(states), shuffle)
    noise_terms = np.cross(
        states, noise_fields(noise, trajectory.coefficients[order])
    )
    increments = np.einsum("j,kjc,pjc->kp", mesh.lumped_mass, noise_terms, probes)
    projections = np.vstack([np.zeros(len(probes)), np.cumsum(increments, axis=0)])

    compensator = np.zeros((len(states) + 1, len(probes), len(probes)))
    for k, state in enumerate(states):
        crossed = cross_projections(noise, state, probes, mesh)
        compensator[k + 1] = compensator[k] + dt * crossed.T @ crossed

    increment_inner = np.array(
        [
            np.einsum(
                "j,jc,jc->", mesh.lumped_mass, noise_terms[n], noise_terms[k]
            )
            for n, k in increment_pairs
        ]
    )
    return MartingalePath(
        seed=seed,
        projections=projections,
        compensator=compensator,
        increment_inner=increment_inner,
    )


@dataclass(frozen=True, eq=False)
class MartingaleReport:
    """One row per 3 sigma test. kind is mean, quadratic or orthogonality;
    a test passes when its interval contains 0."""

    paths: int
    failures: int
    seed: int
    shuffled: bool
    tests: pd.DataFrame = field(repr=False)

    @property
    def passed(self) -> bool:
        return bool(self.tests["passed"].all())

    def summary(self) -> dict:
        return {
            "paths": self.paths,
            "failures": self.failures,
            "seed": self.seed,
            "shuffled": self.shuffled,
            "tests": len(self.tests),
            "failed_tests": int((~self.tests["passed"]).sum()),
            "passed": self.passed,
        }


def default_pairs(steps: int) -> List[Tuple[int, int]]:
    """Time index pairs (n, n') with n < n' <= N."""
    pairs = {(0, steps // 2), (0, steps), (steps // 2, steps)}
    return sorted(pair for pair in pairs if pair[0] < pair[1])


def default_increment_pairs(steps: int) -> List[Tuple[int, int]]:
    """Increment index pairs (n, k) with n < k <= N - 1."""
    last = steps - 1
    pairs = {(0, 1), (0, last), (steps // 2, last)}
    return sorted(pair for pair in pairs if pair[0] < pair[1] <= last)


def _test_row(kind, probe_a, probe_b, n, n_prime, samples) -> dict:
    result = estimate(samples)
    return {
        "kind": kind,
        "probe_a": probe_a,
        "probe_b": probe_b,
        "n": n,
        "n_prime": n_prime,
        "mean": result.mean,
        "half_width": result.half_width,
        "passed": result.contains(0.0),
    }


def martingale_diagnostics(
    config: RunConfig,
    paths: int,
    seed: int,
    probe_fields: Optional[np.ndarray] = None,
    pairs: Optional[List[Tuple[int, int]]] = None,
    increment_pairs: Optional[List[Tuple[int, int]]] = None,
    shuffle: bool = False,
    workers: int = 1,
) -> MartingaleReport:
    """3 sigma tests of the martingale structure of X_N over M paths:

    * mean: E[(X^{n'} - X^n, a)] = 0
    * quadratic: E[(X^{n'}, a)(X^{n'}, b) - (X^n, a)(X^n, b)
      - dt sum_{n<=k<n'} sum_i (m^k x G_i, a)(m^k x G_i, b)] = 0
    * orthogonality: E[(A^n, A^k)] = 0 for n != k

    With shuffle, step n uses the increment of step N - 1 - n, which a
    working test must reject."""
    if paths < 2:
        raise ValueError(f"Martingale tests need at least 2 paths, got {paths}.")
    mesh = build_mesh(config)
    noise = build_noise_from_config(mesh, config)
    steps = config.scheme.steps
    probes = check_probes(
        default_probes(mesh) if probe_fields is None else probe_fields, mesh
    )
    pairs = default_pairs(steps) if pairs is None else list(pairs)
    increment_pairs = (
        default_increment_pairs(steps) if increment_pairs is None else list(increment_pairs)
    )
    for n, n_prime in pairs:
        if not 0 <= n < n_prime <= steps:
            raise ValueError(f"Invalid time pair ({n}, {n_prime}) for N = {steps}.")
    for n, k in increment_pairs:
        if not 0 <= n < k < steps:
            raise ValueError(f"Invalid increment pair ({n}, {k}) for N = {steps}.")

    seeds = [path_seed(seed, i) for i in range(paths)]
    results = map_paths(
        partial(
            martingale_path, config, mesh, noise, probes, increment_pairs, shuffle
        ),
        seeds,
        workers,
    )
    survivors = [result for result in results if not result.failed]
    if len(survivors) < 2:
        raise SimulationError(
            f"Only {len(survivors)} of {paths} paths survived the martingale run."
        )
    projections = np.stack([result.projections for result in survivors])
    compensator = np.stack([result.compensator for result in survivors])
    inner = np.stack([result.increment_inner for result in survivors])

    rows = []
    for n, n_prime in pairs:
        for p in range(len(probes)):
            rows.append(
                _test_row(
                    "mean",
                    p,
                    p,
                    n,
                    n_prime,
                    projections[:, n_prime, p] - projections[:, n, p],
                )
            )
        for p in range(len(probes)):
            for q in range(p, len(probes)):
                samples = (
                    projections[:, n_prime, p] * projections[:, n_prime, q]
                    - projections[:, n, p] * projections[:, n, q]
                    - (compensator[:, n_prime, p, q] - compensator[:, n, p, q])
                )
                rows.append(_test_row("quadratic", p, q, n, n_prime, samples))
    for index, (n, k) in enumerate(increment_pairs):
        rows.append(_test_row("orthogonality", -1, -1, n, k, inner[:, index]))

    report = MartingaleReport(
        paths=len(survivors),
        failures=paths - len(survivors),
        seed=seed,
        shuffled=shuffle,
        tests=pd.DataFrame(rows),
    )
    if not report.passed:
        _LOGGER.warning(
            "%d of %d martingale tests failed",
            report.summary()["failed_tests"],
            len(report.tests),
        )
    return report


@dataclass(frozen=True, eq=False)
class NoiseCheckReport:
    """Per probe: sample mean and variance of (G dW, a) against 0 and
    dt sum_i (G_i, a)^2. Variance intervals use the Gaussian variance of a
    sample variance, 2 sigma^4 / (M - 1)."""

    samples: int
    dt: float
    table: pd.DataFrame = field(repr=False)
    moments: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.table["passed"].all())

    def summary(self) -> dict:
        return {
            "samples": self.samples,
            "dt": self.dt,
            "passed": self.passed,
            "moments": self.moments,
        }


def covariance_check(
    noise: NoiseModel,
    mesh: Mesh,
    dt: float,
    probes: np.ndarray,
    samples: int,
    rng: np.random.Generator,
) -> NoiseCheckReport:
    """Sample M increments and compare the first two moments of their probe
    projections with direct mode sums."""
    if samples < 2:
        raise ValueError(f"Need at least 2 samples, got {samples}.")
    probes = check_probes(probes, mesh)
    coefficients = draw_coefficients(noise, rng, dt, samples)
    weights = np.stack([mode_projections(noise, probe, mesh) for probe in probes], axis=1)
    values = coefficients @ weights

    expected = dt * np.sum(weights**2, axis=0)
    sample_mean = np.mean(values, axis=0)
    sample_var = np.var(values, axis=0, ddof=1)
    mean_half_width = CONFIDENCE_SIGMAS * np.sqrt(expected / samples)
    var_half_width = CONFIDENCE_SIGMAS * expected * np.sqrt(2.0 / (samples - 1))
    table = pd.DataFrame(
        {
            "probe": np.arange(len(probes)),
            "sample_mean": sample_mean,
            "mean_half_width": mean_half_width,
            "sample_variance": sample_var,
            "expected_variance": expected,
            "variance_half_width": var_half_width,
        }
    )
    table["passed"] = (np.abs(sample_mean) <= mean_half_width) & (
        np.abs(sample_var - expected) <= var_half_width
    )
    return NoiseCheckReport(samples=samples, dt=dt, table=table)


def run_noise_check(
    config: RunConfig,
    samples: int,
    seed: int,
    probe_fields: Optional[np.ndarray] = None,
) -> NoiseCheckReport:
    """covariance_check for the configured noise and step, plus sampled
    moments of m0 x G dW."""
    mesh = build_mesh(config)
    noise = build_noise_from_config(mesh, config)
    dt = config.scheme.dt
    probes = default_probes(mesh) if probe_fields is None else probe_fields
    report = covariance_check(noise, mesh, dt, probes, samples, make_generator(seed))
    moments = noise_moments(
        noise,
        init_state(config.initial_condition, mesh),
        mesh,
        dt,
        samples,
        make_generator(path_seed(seed, 1)),
    )
    _LOGGER.info(
        "Noise check done (samples=%d, passed=%s, E|A|^2=%.4g <= %.4g)",
        samples,
        report.passed,
        moments.mean_l2_sq,
        moments.l2_bound,
    )
    return replace(
        report,
        moments={
            "mean_l2_sq": moments.mean_l2_sq,
            "mean_l4_4": moments.mean_l4_4,
            "l2_bound": moments.l2_bound,
        },
    )
