import hashlib
import json
import logging
from os import makedirs
from os.path import dirname

import meshio
import numpy as np
import pandas as pd
import yaml

from src import CSV_FLOAT_FORMAT, MeshError

_LOGGER = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


def load_yaml(file_path):
    """Load yaml file and return resulting dictionary."""
    with open(file_path, "r") as yaml_file:
        try:
            data = yaml.safe_load(yaml_file)
        except yaml.YAMLError as exc:
            raise exc
    return data


def dump_yaml(data: dict) -> str:
    """Dump a plain dictionary to YAML text, keeping key order."""
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=None)


def hash_dict(data: dict) -> str:
    """SHA-256 of the canonical JSON form of data. Floats are written with
    repr precision, so any change of value changes the hash."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(file_path: str):
    """SHA-256 of a file's bytes, or None when it cannot be read."""
    try:
        with open(file_path, "rb") as handle:
            return hashlib.sha256(handle.read()).hexdigest()
    except OSError:
        return None


def path_seed(base_seed: int, path_index: int) -> int:
    """Seed of the path_index-th path of an ensemble started at base_seed.
    Path i always gets base_seed + i, so adding paths never changes the
    existing ones."""
    return (int(base_seed) + int(path_index)) % (MAX_SEED + 1)


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based generator owned by exactly one simulation path."""
    if not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"Seed must be an unsigned 64-bit integer, got {seed}.")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def ensure_dir(file_path: str):
    """Create the parent directory of file_path if it does not exist."""
    parent = dirname(file_path)
    if parent:
        makedirs(parent, exist_ok=True)


def write_csv(table: pd.DataFrame, file_path: str):
    """Write a table with a fixed column order and 17 significant digits so
    that identical runs give byte-identical files."""
    ensure_dir(file_path)
    table.to_csv(
        file_path,
        index=False,
        float_format=CSV_FLOAT_FORMAT,
        lineterminator="\n",
    )


def write_json(data: dict, file_path: str):
    ensure_dir(file_path)
    with open(file_path, "w", encoding="utf-8") as json_file:
        json.dump(data, json_file, indent=2, sort_keys=True)
        json_file.write("\n")


def save_field(field: np.ndarray, file_path: str):
    """Save a nodal field as .npy; reading it back is bitwise exact."""
    ensure_dir(file_path)
    np.save(file_path, np.asarray(field, dtype=float), allow_pickle=False)


def load_field(file_path: str) -> np.ndarray:
    field = np.load(file_path, allow_pickle=False)
    if field.ndim != 2 or field.shape[1] != 3:
        raise MeshError(
            f"Field file {file_path} must hold an (n_nodes, 3) array, "
            f"got shape {field.shape}."
        )
    return field


def write_vtk(mesh, point_data: dict, file_path: str):
    """Write nodal fields on the mesh as a legacy ASCII VTK file."""
    points = np.zeros((mesh.num_nodes, 3))
    points[:, : mesh.dimension] = mesh.node_coords
    cell_type = "line" if mesh.dimension == 1 else "triangle"
    for name, values in point_data.items():
        if len(values) != mesh.num_nodes:
            raise MeshError(
                f"point_data['{name}'] has {len(values)} rows, mesh has "
                f"{mesh.num_nodes} nodes."
            )
    ensure_dir(file_path)
    vtk_mesh = meshio.Mesh(
        points=points,
        cells=[(cell_type, np.asarray(mesh.elements))],
        point_data={name: np.asarray(values) for name, values in point_data.items()},
    )
    meshio.write(file_path, vtk_mesh, file_format="vtk", binary=False)
    _LOGGER.debug("VTK snapshot written to '%s'", file_path)
