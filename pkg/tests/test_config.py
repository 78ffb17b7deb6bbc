"""Test functions in config.py"""
from dataclasses import replace

import numpy as np
import pytest

from src import ConfigError
from src.config import (
    RunConfig,
    config_hash,
    load_config,
    parse_config,
    serialize_config,
)

TEST_DATA_PATH = "tests/test_data/"


def test_minimal_config_takes_documented_defaults():
    config = load_config(TEST_DATA_PATH + "minimal.yaml")
    assert config == RunConfig()
    assert config.mesh.nodes_per_axis == (33,)
    assert config.scheme.theta == 1.0
    assert config.scheme.dt == pytest.approx(1.0 / 64)
    assert config.noise.modes == 4
    assert config.solver.method == "auto"
    assert config.output.snapshot_stride == 0


def test_empty_text_parses():
    assert parse_config("") == RunConfig()


@pytest.mark.parametrize("theta", [0.5, 0.2, 1.01])
def test_theta_outside_interval_is_rejected(theta):
    with pytest.raises(ConfigError) as error:
        parse_config(f"scheme:\n  theta: {theta}\n")
    (violation,) = error.value.violations
    assert violation.startswith("scheme.theta:")
    assert "(1/2, 1]" in violation


def test_all_violations_are_reported():
    with pytest.raises(ConfigError) as error:
        load_config(TEST_DATA_PATH + "invalid.yaml")
    violations = error.value.violations
    assert any(v.startswith("scheme.theta:") for v in violations)
    assert any(v.startswith("scheme.steps:") for v in violations)
    assert "noise.modse: unknown key" in violations
    assert any(v.startswith("solver.method:") for v in violations)


@pytest.mark.parametrize(
    "text, prefix",
    [
        ("meshes:\n  dimension: 1\n", "meshes: unknown section"),
        ("mesh:\n  dimension: 3\n", "mesh.dimension:"),
        ("mesh:\n  extents: [0.0]\n", "mesh.extents:"),
        ("mesh:\n  nodes_per_axis: [1]\n", "mesh.nodes_per_axis:"),
        ("noise:\n  modes: -1\n", "noise.modes:"),
        ("noise:\n  decay: 0\n", "noise.decay:"),
        ("solver:\n  tol: 0\n", "solver.tol:"),
        ("mc:\n  base_seed: -3\n", "mc.base_seed:"),
        ("mc:\n  base_seed: 18446744073709551616\n", "mc.base_seed:"),
        ("mc:\n  paths: 1\n", "mc.paths:"),
        ("scheme:\n  steps: 2.5\n", "scheme.steps:"),
        ("output:\n  vtk: maybe\n", "output.vtk:"),
        ("initial_condition:\n  vector: [0, 0, 0]\n", "initial_condition.vector:"),
        ("initial_condition:\n  kind: profile\n  name: spiral\n", "initial_condition.name:"),
        ("initial_condition:\n  kind: file\n", "initial_condition.path:"),
        ("scheme: 3\n", "scheme: expected a mapping"),
        ("[1, 2]\n", "<root>:"),
    ],
)
def test_invalid_values_name_their_field(text, prefix):
    with pytest.raises(ConfigError) as error:
        parse_config(text)
    assert any(v.startswith(prefix) for v in error.value.violations)


def test_too_many_modes_for_mesh():
    text = "mesh:\n  nodes_per_axis: [2]\nnoise:\n  modes: 7\n"
    with pytest.raises(ConfigError) as error:
        parse_config(text)
    assert error.value.violations[0].startswith("noise.modes:")


@pytest.mark.parametrize(
    "file_name",
    ["minimal.yaml", "noisy_small.yaml", "noisy_square.yaml", "martingale_two_nodes.yaml"],
)
def test_serialize_round_trip(file_name):
    config = load_config(TEST_DATA_PATH + file_name)
    assert parse_config(serialize_config(config)) == config


def test_hash_ignores_output_and_workers():
    config = load_config(TEST_DATA_PATH + "noisy_small.yaml")
    moved = replace(
        config,
        output=replace(config.output, dir="elsewhere", vtk=True),
        mc=replace(config.mc, workers=8),
    )
    assert config_hash(moved) == config_hash(config)


@pytest.mark.parametrize(
    "section, change",
    [
        ("scheme", {"theta": 0.8}),
        ("noise", {"amplitude": 0.25}),
        ("mesh", {"nodes_per_axis": (17,)}),
        ("mc", {"paths": 17}),
        ("solver", {"tol": 1e-9}),
    ],
)
def test_hash_changes_with_semantic_fields(section, change):
    config = load_config(TEST_DATA_PATH + "noisy_small.yaml")
    changed = replace(config, **{section: replace(getattr(config, section), **change)})
    assert config_hash(changed) != config_hash(config)


def test_missing_file_is_a_config_error():
    with pytest.raises(ConfigError):
        load_config(TEST_DATA_PATH + "does_not_exist.yaml")


@pytest.mark.parametrize(
    "seed", [2**53 + 1, 1152921504606846977, 2**64 - 1]
)
def test_large_seeds_are_exact(seed):
    config = parse_config(f"mc:\n  base_seed: {seed}\n")
    assert config.mc.base_seed == seed
    assert parse_config(serialize_config(config)).mc.base_seed == seed


@pytest.mark.parametrize("text, expected", [("steps: 16", 16), ("steps: 16.0", 16), ("steps: '16'", 16)])
def test_integer_spellings(text, expected):
    assert parse_config(f"scheme:\n  {text}\n").scheme.steps == expected


def test_hash_follows_initial_condition_file(tmp_path):
    file_path = tmp_path / "m0.npy"
    np.save(file_path, np.tile([0.0, 0.0, 1.0], (9, 1)))
    config = parse_config(f"initial_condition:\n  kind: file\n  path: {file_path}\n")
    before = config_hash(config)
    np.save(file_path, np.tile([1.0, 0.0, 0.0], (9, 1)))
    assert config_hash(config) != before
