"""Test functions in noise.py"""
import numpy as np
import pytest

from src import NoiseError
from src.helpers import make_generator
from src.mesh import build_mesh_from_geometry, l2_norm_sq
from src.noise import (
    available_modes,
    build_noise,
    coarsen_coefficients,
    draw_coefficients,
    increment_from_coefficients,
    increment_variance,
    ito_correction,
    mode_projections,
    noise_moments,
    sample_increment,
    scalar_modes,
)


def unit_field(rng, num_nodes):
    field = rng.standard_normal((num_nodes, 3))
    return field / np.linalg.norm(field, axis=1)[:, None]


@pytest.fixture(name="interval")
def fixture_interval():
    return build_mesh_from_geometry(1, [1.0], [9])


def test_no_modes_gives_zero_increments(interval):
    noise = build_noise(interval, 0, 2.0, 1.0)
    assert noise.basis.shape == (0, interval.num_nodes, 3)
    increment = sample_increment(noise, make_generator(0), 0.1)
    np.testing.assert_array_equal(increment.field, 0.0)
    np.testing.assert_array_equal(ito_correction(noise, unit_field(np.random.default_rng(0), 9)), 0.0)


def test_first_mode_is_constant_z(interval):
    noise = build_noise(interval, 1, 2.0, 0.7)
    expected = np.tile([0.0, 0.0, 0.7], (interval.num_nodes, 1))
    np.testing.assert_allclose(noise.basis[0], expected, atol=1e-15)


def test_modes_cycle_directions_then_eigenvalues(interval):
    noise = build_noise(interval, 6, 2.0, 1.0)
    np.testing.assert_array_equal(noise.directions, [2, 0, 1, 2, 0, 1])
    np.testing.assert_allclose(noise.eigenvalues, [0, 0, 0, np.pi**2, np.pi**2, np.pi**2])
    np.testing.assert_allclose(noise.multipliers[3:], (1 + np.pi**2) ** -2.0)


@pytest.mark.parametrize(
    "dimension, extents, nodes",
    [(1, [1.0], [9]), (1, [3.0], [6]), (2, [1.0, 2.0], [4, 3])],
)
def test_basis_norms_equal_multipliers(dimension, extents, nodes):
    mesh = build_mesh_from_geometry(dimension, extents, nodes)
    noise = build_noise(mesh, available_modes(mesh), 1.5, 2.0)
    norms = np.array([np.sqrt(l2_norm_sq(field, mesh)) for field in noise.basis])
    np.testing.assert_allclose(norms, noise.multipliers, rtol=1e-12)


def test_scalar_modes_are_sorted():
    mesh = build_mesh_from_geometry(2, [1.0, 2.0], [4, 5])
    eigenvalues, frequencies = scalar_modes(mesh)
    assert len(eigenvalues) == 20
    assert np.all(np.diff(eigenvalues) >= 0)
    np.testing.assert_allclose(eigenvalues, np.sum(frequencies**2, axis=1))


def test_hs_partial_sums_are_bounded():
    mesh = build_mesh_from_geometry(1, [1.0], [64])
    k = np.arange(200_000)
    series = 3.0 * np.sum((1.0 + (k * np.pi) ** 2) ** -2.0)
    partial_sums = [
        build_noise(mesh, modes, 2.0, 1.0).hs_norm_sq
        for modes in range(0, available_modes(mesh) + 1, 7)
    ]
    assert np.all(np.diff(partial_sums) >= 0)
    assert partial_sums[-1] <= series


def test_norm_proxies(interval):
    noise = build_noise(interval, 5, 2.0, 0.5)
    weights = noise.multipliers**2
    assert noise.l2_norm_sq == pytest.approx(np.sum(weights))
    assert noise.h1_norm_sq == pytest.approx(np.sum(weights * (1 + noise.eigenvalues)))
    assert noise.l2_norm_sq <= noise.h1_norm_sq <= noise.hs_norm_sq


@pytest.mark.parametrize(
    "modes, decay, amplitude",
    [(-1, 2.0, 1.0), (4, 0.0, 1.0), (4, 2.0, -0.1), (28, 2.0, 1.0)],
)
def test_invalid_noise(interval, modes, decay, amplitude):
    with pytest.raises(NoiseError):
        build_noise(interval, modes, decay, amplitude)


def test_sampling_is_reproducible(interval):
    noise = build_noise(interval, 3, 2.0, 1.0)
    first = sample_increment(noise, make_generator(5), 0.01)
    second = sample_increment(noise, make_generator(5), 0.01)
    np.testing.assert_array_equal(first.field, second.field)
    assert first.coefficients.shape == (3,)


def test_sampling_consumes_one_normal_per_mode(interval):
    noise = build_noise(interval, 4, 2.0, 1.0)
    rng = make_generator(9)
    sample_increment(noise, rng, 0.25)
    following = rng.standard_normal()
    reference = make_generator(9)
    reference.standard_normal(4)
    assert following == reference.standard_normal()


def test_draw_coefficients_matches_step_by_step_draws(interval):
    noise = build_noise(interval, 5, 2.0, 1.0)
    block = draw_coefficients(noise, make_generator(1), 0.1, 6)
    rng = make_generator(1)
    steps = np.array([sample_increment(noise, rng, 0.1, n).coefficients for n in range(6)])
    np.testing.assert_array_equal(block, steps)


def test_coarse_increments_are_sums_of_fine_ones(interval):
    noise = build_noise(interval, 3, 2.0, 1.0)
    fine = draw_coefficients(noise, make_generator(2), 0.05, 8)
    coarse = coarsen_coefficients(fine)
    assert coarse.shape == (4, 3)
    np.testing.assert_allclose(coarse[1], fine[2] + fine[3], atol=1e-15)
    with pytest.raises(NoiseError):
        coarsen_coefficients(fine[:3])


def test_increment_from_coefficients_checks_shape(interval):
    noise = build_noise(interval, 3, 2.0, 1.0)
    with pytest.raises(NoiseError):
        increment_from_coefficients(noise, np.zeros(2), 0.1)


def test_sample_increment_rejects_bad_dt(interval):
    noise = build_noise(interval, 3, 2.0, 1.0)
    with pytest.raises(NoiseError):
        sample_increment(noise, make_generator(0), 0.0)


def test_ito_correction_orthogonal_single_mode(interval):
    noise = build_noise(interval, 1, 2.0, 0.8)
    m = np.tile([1.0, 0.0, 0.0], (interval.num_nodes, 1))
    np.testing.assert_allclose(ito_correction(noise, m), -(0.8**2) * m, atol=1e-15)


def test_ito_correction_parallel_single_mode(interval):
    noise = build_noise(interval, 1, 2.0, 0.8)
    m = np.tile([0.0, 0.0, 1.0], (interval.num_nodes, 1))
    np.testing.assert_allclose(ito_correction(noise, m), 0.0, atol=1e-15)


def test_ito_correction_matches_double_cross_product(interval):
    rng = np.random.default_rng(11)
    noise = build_noise(interval, 5, 1.0, 1.3)
    m = unit_field(rng, interval.num_nodes)
    expected = np.zeros_like(m)
    for basis_field in noise.basis:
        expected += np.cross(np.cross(m, basis_field), basis_field)
    np.testing.assert_allclose(ito_correction(noise, m), expected, atol=1e-14)
    # m . S(m) = -sum_i |m x G_i|^2 <= 0 nodewise.
    normal = np.einsum("nc,nc->n", m, ito_correction(noise, m))
    crossed = sum(np.sum(np.cross(m, g) ** 2, axis=1) for g in noise.basis)
    np.testing.assert_allclose(normal, -crossed, atol=1e-13)


def test_increment_statistics(interval):
    noise = build_noise(interval, 4, 2.0, 1.0)
    dt = 0.01
    probe = np.column_stack(
        [np.ones(9), interval.node_coords[:, 0], 1 - interval.node_coords[:, 0]]
    )
    rng = make_generator(2024)
    samples = 10_000
    fields = np.array([sample_increment(noise, rng, dt, k).field for k in range(samples)])
    projections = np.einsum("j,kjc,jc->k", interval.lumped_mass, fields, probe)

    nodal_scale = 4 * np.sqrt(dt * noise.l2_norm_sq) / 100
    assert np.all(np.abs(fields.mean(axis=0)) <= nodal_scale)
    expected = increment_variance(noise, probe, interval, dt)
    assert expected == pytest.approx(dt * np.sum(mode_projections(noise, probe, interval) ** 2))
    assert np.var(projections, ddof=1) == pytest.approx(expected, rel=0.1)


def test_noise_moment_bound(interval):
    noise = build_noise(interval, 6, 2.0, 1.0)
    m = unit_field(np.random.default_rng(4), interval.num_nodes)
    moments = noise_moments(noise, m, interval, 0.01, 4000, make_generator(8))
    assert moments.l2_bound == pytest.approx(0.01 * noise.l2_norm_sq)
    assert moments.mean_l2_sq <= 1.1 * moments.l2_bound
    assert moments.mean_l4_4 > 0
