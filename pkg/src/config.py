"""Run configuration: YAML text in, validated frozen dataclasses out.

Every section and key is optional. Defaults:

    mesh:
      dimension: 1              # 1 (interval) or 2 (rectangle)
      extents: [1.0]            # one positive length per axis
      nodes_per_axis: [33]      # at least 2 per axis
    scheme:
      final_time: 1.0           # T > 0
      steps: 64                 # N >= 1, dt = T / N
      theta: 1.0                # in (1/2, 1]
    noise:
      modes: 4                  # J >= 0, 0 gives a deterministic run
      decay: 2.0                # s > 0, g_i = c (1 + lambda_i)^(-s)
      amplitude: 1.0            # c >= 0
    initial_condition:
      kind: constant            # constant | profile | file
      vector: [0.0, 0.0, 1.0]   # kind constant
      name: null                # kind profile: rotation | bump
      path: null                # kind file: .npy array of shape (nodes, 3)
    solver:
      method: auto              # auto | direct | iterative
      tol: 1.0e-10
      max_iter: null            # null means 10 * number of mesh nodes
    mc:
      paths: 100                # M >= 2
      base_seed: 0
      workers: 1
    output:
      dir: out
      snapshot_stride: 0        # 0 keeps only the initial and final states
      vtk: false
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

import yaml

from src import DEFAULT_DECAY, DEFAULT_SOLVER_TOL, DEFAULT_THETA, ConfigError
from src.helpers import MAX_SEED, dump_yaml, file_digest, hash_dict, load_yaml

PROFILE_NAMES = ("rotation", "bump")
INITIAL_CONDITION_KINDS = ("constant", "profile", "file")
SOLVER_METHODS = ("auto", "direct", "iterative")
NON_SEMANTIC_KEYS = {"output": None, "mc": ("workers",)}


@dataclass(frozen=True)
class MeshConfig:
    dimension: int = 1
    extents: Tuple[float, ...] = (1.0,)
    nodes_per_axis: Tuple[int, ...] = (33,)


@dataclass(frozen=True)
class SchemeConfig:
    final_time: float = 1.0
    steps: int = 64
    theta: float = DEFAULT_THETA

    @property
    def dt(self) -> float:
        return self.final_time / self.steps


@dataclass(frozen=True)
class NoiseConfig:
    modes: int = 4
    decay: float = DEFAULT_DECAY
    amplitude: float = 1.0


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "constant"
    vector: Tuple[float, ...] = (0.0, 0.0, 1.0)
    name: Optional[str] = None
    path: Optional[str] = None


@dataclass(frozen=True)
class SolverConfig:
    method: str = "auto"
    tol: float = DEFAULT_SOLVER_TOL
    max_iter: Optional[int] = None


@dataclass(frozen=True)
class MonteCarloConfig:
    paths: int = 100
    base_seed: int = 0
    workers: int = 1


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    snapshot_stride: int = 0
    vtk: bool = False


@dataclass(frozen=True)
class RunConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    initial_condition: InitialCondition = field(default_factory=InitialCondition)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


SECTIONS = {
    "mesh": MeshConfig,
    "scheme": SchemeConfig,
    "noise": NoiseConfig,
    "initial_condition": InitialCondition,
    "solver": SolverConfig,
    "mc": MonteCarloConfig,
    "output": OutputConfig,
}


class _Reader:
    """Pulls typed values out of one raw section, recording violations
    instead of stopping at the first one."""

    def __init__(self, name, raw, violations):
        self.name = name
        self.raw = raw
        self.violations = violations

    def fail(self, key, message):
        self.violations.append(f"{self.name}.{key}: {message}")

    def real(self, key, default):
        value = self.raw.get(key, default)
        if isinstance(value, bool):
            self.fail(key, f"expected a number, got {value!r}")
            return default
        try:
            return float(value)
        except (TypeError, ValueError):
            self.fail(key, f"expected a number, got {value!r}")
            return default

    def integer(self, key, default):
        value = self.raw.get(key, default)
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            self.fail(key, f"expected an integer, got {value!r}")
            return default
        if isinstance(value, int):
            return value
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                pass
        try:
            as_float = float(value)
        except ValueError:
            self.fail(key, f"expected an integer, got {value!r}")
            return default
        if not as_float.is_integer():
            self.fail(key, f"expected an integer, got {value!r}")
            return default
        return int(as_float)

    def text(self, key, default):
        value = self.raw.get(key, default)
        if value is None or isinstance(value, str):
            return value
        self.fail(key, f"expected a string, got {value!r}")
        return default

    def flag(self, key, default):
        value = self.raw.get(key, default)
        if isinstance(value, bool):
            return value
        self.fail(key, f"expected true or false, got {value!r}")
        return default

    def sequence(self, key, default, convert):
        value = self.raw.get(key, default)
        if not isinstance(value, (list, tuple)):
            self.fail(key, f"expected a list, got {value!r}")
            return tuple(default)
        try:
            return tuple(convert(item) for item in value)
        except (TypeError, ValueError):
            self.fail(key, f"expected a list of numbers, got {value!r}")
            return tuple(default)


def _read_mesh(reader: _Reader) -> MeshConfig:
    dimension = reader.integer("dimension", 1)
    if dimension not in (1, 2):
        reader.fail("dimension", f"must be 1 or 2, got {dimension}")
        dimension = 1
    extents = reader.sequence("extents", (1.0,) * dimension, float)
    nodes = reader.sequence("nodes_per_axis", (33,) * dimension, int)
    if len(extents) != dimension:
        reader.fail("extents", f"expected {dimension} values, got {len(extents)}")
    if len(nodes) != dimension:
        reader.fail(
            "nodes_per_axis", f"expected {dimension} values, got {len(nodes)}"
        )
    for extent in extents:
        if not extent > 0:
            reader.fail("extents", f"lengths must be positive, got {extent}")
    for count in nodes:
        if count < 2:
            reader.fail("nodes_per_axis", f"need at least 2 nodes, got {count}")
    return MeshConfig(dimension=dimension, extents=extents, nodes_per_axis=nodes)


def _read_scheme(reader: _Reader) -> SchemeConfig:
    final_time = reader.real("final_time", 1.0)
    steps = reader.integer("steps", 64)
    theta = reader.real("theta", DEFAULT_THETA)
    if not final_time > 0:
        reader.fail("final_time", f"must be positive, got {final_time}")
    if steps < 1:
        reader.fail("steps", f"must be at least 1, got {steps}")
    if not 0.5 < theta <= 1.0:
        reader.fail(
            "theta", f"must lie in the half-open interval (1/2, 1], got {theta}"
        )
    return SchemeConfig(final_time=final_time, steps=steps, theta=theta)


def _read_noise(reader: _Reader) -> NoiseConfig:
    modes = reader.integer("modes", 4)
    decay = reader.real("decay", DEFAULT_DECAY)
    amplitude = reader.real("amplitude", 1.0)
    if modes < 0:
        reader.fail("modes", f"must be >= 0, got {modes}")
    if not decay > 0:
        reader.fail("decay", f"must be positive, got {decay}")
    if not amplitude >= 0:
        reader.fail("amplitude", f"must be >= 0, got {amplitude}")
    return NoiseConfig(modes=modes, decay=decay, amplitude=amplitude)


def _read_initial_condition(reader: _Reader) -> InitialCondition:
    kind = reader.text("kind", "constant")
    vector = reader.sequence("vector", (0.0, 0.0, 1.0), float)
    name = reader.text("name", None)
    path = reader.text("path", None)
    if kind not in INITIAL_CONDITION_KINDS:
        reader.fail("kind", f"must be one of {INITIAL_CONDITION_KINDS}, got {kind!r}")
    if len(vector) != 3:
        reader.fail("vector", f"expected 3 components, got {len(vector)}")
    elif kind == "constant" and not any(vector):
        reader.fail("vector", "must not be the zero vector")
    if kind == "profile" and name not in PROFILE_NAMES:
        reader.fail("name", f"must be one of {PROFILE_NAMES}, got {name!r}")
    if kind == "file" and not path:
        reader.fail("path", "a field file is required when kind is file")
    return InitialCondition(kind=kind, vector=vector, name=name, path=path)


def _read_solver(reader: _Reader) -> SolverConfig:
    method = reader.text("method", "auto")
    tol = reader.real("tol", DEFAULT_SOLVER_TOL)
    max_iter = reader.integer("max_iter", None)
    if method not in SOLVER_METHODS:
        reader.fail("method", f"must be one of {SOLVER_METHODS}, got {method!r}")
    if not tol > 0:
        reader.fail("tol", f"must be positive, got {tol}")
    if max_iter is not None and max_iter < 1:
        reader.fail("max_iter", f"must be at least 1, got {max_iter}")
    return SolverConfig(method=method, tol=tol, max_iter=max_iter)


def _read_mc(reader: _Reader) -> MonteCarloConfig:
    paths = reader.integer("paths", 100)
    base_seed = reader.integer("base_seed", 0)
    workers = reader.integer("workers", 1)
    if paths < 2:
        reader.fail("paths", f"an ensemble needs at least 2, got {paths}")
    if not 0 <= base_seed <= MAX_SEED:
        reader.fail("base_seed", f"must be an unsigned 64-bit integer, got {base_seed}")
    if workers < 1:
        reader.fail("workers", f"must be at least 1, got {workers}")
    return MonteCarloConfig(paths=paths, base_seed=base_seed, workers=workers)


def _read_output(reader: _Reader) -> OutputConfig:
    out_dir = reader.text("dir", "out")
    stride = reader.integer("snapshot_stride", 0)
    vtk = reader.flag("vtk", False)
    if not out_dir:
        reader.fail("dir", "must not be empty")
    if stride < 0:
        reader.fail("snapshot_stride", f"must be >= 0, got {stride}")
    return OutputConfig(dir=out_dir, snapshot_stride=stride, vtk=vtk)


READERS = {
    "mesh": _read_mesh,
    "scheme": _read_scheme,
    "noise": _read_noise,
    "initial_condition": _read_initial_condition,
    "solver": _read_solver,
    "mc": _read_mc,
    "output": _read_output,
}


def parse_config(text: str) -> RunConfig:
    """Parse and validate YAML config text. Raises ConfigError listing every
    violation found."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"<root>: invalid YAML: {exc}"]) from exc
    return config_from_dict({} if raw is None else raw)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError([f"<root>: expected a mapping, got {type(raw).__name__}"])

    violations = [f"{key}: unknown section" for key in raw if key not in SECTIONS]
    sections = {}
    for name, reader_function in READERS.items():
        section = raw.get(name)
        if section is None:
            section = {}
        if not isinstance(section, dict):
            violations.append(f"{name}: expected a mapping, got {section!r}")
            section = {}
        known = {f.name for f in fields(SECTIONS[name])}
        violations += [
            f"{name}.{key}: unknown key" for key in section if key not in known
        ]
        sections[name] = reader_function(_Reader(name, section, violations))

    config = RunConfig(**sections)
    if not violations:
        resolvable = 3
        for count in config.mesh.nodes_per_axis:
            resolvable *= count
        if config.noise.modes > resolvable:
            violations.append(
                f"noise.modes: {config.noise.modes} modes exceed the "
                f"{resolvable} distinct modes the mesh resolves"
            )
    if violations:
        raise ConfigError(violations)
    return config


def load_config(file_path: str) -> RunConfig:
    """Read a YAML config file and validate it."""
    try:
        raw = load_yaml(file_path)
    except OSError as exc:
        raise ConfigError([f"<file>: cannot read {file_path}: {exc}"]) from exc
    except yaml.YAMLError as exc:
        raise ConfigError([f"<root>: invalid YAML in {file_path}: {exc}"]) from exc
    return config_from_dict({} if raw is None else raw)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(item) for item in value]
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    return value


def config_to_dict(config: RunConfig) -> dict:
    return _plain(asdict(config))


def serialize_config(config: RunConfig) -> str:
    """YAML text that parses back to an equal RunConfig."""
    return dump_yaml(config_to_dict(config))


def semantic_dict(config: RunConfig) -> dict:
    """The config fields that can change simulation results."""
    data = config_to_dict(config)
    for section, keys in NON_SEMANTIC_KEYS.items():
        if keys is None:
            data.pop(section)
        else:
            for key in keys:
                data[section].pop(key)
    if config.initial_condition.kind == "file":
        data["initial_condition"]["sha256"] = file_digest(config.initial_condition.path)
    return data


def config_hash(config: RunConfig) -> str:
    return hash_dict(semantic_dict(config))
