"""Command-line entry points.

    sllg run         --config PATH [--seed U64] [--out DIR]
    sllg ensemble    --config PATH [--paths M] [--levels L] [--workers W]
    sllg converge    --config PATH [--levels L] [--paths M] [--workers W]
    sllg noise-check --config PATH [--paths M] [--probes FILE.npy]
    sllg martingale  --config PATH [--paths M] [--probes FILE.npy] [--shuffle]

Exit codes: 0 success, 1 a statistical or convergence check failed, 2 bad
arguments or config, 3 runtime failure. Every command writes manifest.json
next to its outputs.
"""

import argparse
import logging
import sys
from os.path import join
from typing import Callable, List, Optional

import numpy as np

from src import ConfigError, SimulationError, __version__
from src import experiments
from src.config import RunConfig, config_hash, load_config, serialize_config
from src.helpers import MAX_SEED, ensure_dir, write_csv, write_json
from src.mesh import build_mesh
from src.stepper import run_path, write_trajectory

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

DEFAULT_NOISE_SAMPLES = 10_000
DEFAULT_LADDER_LEVELS = 4
MIN_LADDER_LEVELS = 3


def parse_seed(text: str) -> int:
    try:
        seed = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if not 0 <= seed <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64 - 1], got {seed}")
    return seed


def at_least(minimum: int) -> Callable[[str], int]:
    """argparse type for integers no smaller than minimum."""

    def convert(text: str) -> int:
        try:
            value = int(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
        if value < minimum:
            raise argparse.ArgumentTypeError(
                f"must be at least {minimum}, got {value}"
            )
        return value

    return convert


positive_int = at_least(1)
ensemble_size = at_least(2)


def _parser(command: str, description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=f"sllg {command}", description=description)
    parser.add_argument("--config", required=True, help="Path to the YAML run config")
    parser.add_argument(
        "--seed", type=parse_seed, default=None, help="Base seed (default: mc.base_seed)"
    )
    parser.add_argument(
        "--out", default=None, help="Output directory (default: output.dir)"
    )
    parser.add_argument("--verbose", action="store_true", help="Log every step")
    return parser


def _add_workers(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--workers",
        type=positive_int,
        default=None,
        help="Worker processes (default: mc.workers)",
    )


def _add_probes(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--probes",
        default=None,
        help=".npy file with one (nodes, 3) probe field or a stack of them",
    )


def _parse(parser: argparse.ArgumentParser, argv):
    """argparse exits with status 2 on bad usage; hand that back as a value."""
    try:
        return parser.parse_args(argv)
    except SystemExit as exc:
        return None if exc.code else argparse.Namespace(help_only=True)


def configure_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


class Manifest:
    """Collects what a command wrote and records it in manifest.json."""

    def __init__(self, command: str, config: RunConfig, seed: int, out_dir: str):
        self.out_dir = out_dir
        self.data = {
            "command": command,
            "version": __version__,
            "config_hash": config_hash(config),
            "seed": seed,
            "status": "running",
            "partial": True,
            "files": [],
        }

    def path(self, name: str) -> str:
        file_path = join(self.out_dir, name)
        self.data["files"].append(name)
        return file_path

    def add_files(self, paths: List[str]):
        prefix = self.out_dir.rstrip("/") + "/"
        self.data["files"] += [
            file_path[len(prefix):] if file_path.startswith(prefix) else file_path
            for file_path in paths
        ]

    def write(self, status: str, partial: bool, **extra):
        self.data.update(status=status, partial=partial, **extra)
        write_json(self.data, join(self.out_dir, "manifest.json"))


def _run_command(
    command: str, args, body: Callable[[RunConfig, int, Manifest], int]
) -> int:
    """Load the config, set up the output directory and map failures to exit
    codes. body returns EXIT_OK or EXIT_CHECK_FAILED."""
    configure_logging(args.verbose)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"Invalid config {args.config}:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  {violation}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    seed = config.mc.base_seed if args.seed is None else args.seed
    out_dir = config.output.dir if args.out is None else args.out
    manifest = Manifest(command, config, seed, out_dir)
    ensure_dir(join(out_dir, "manifest.json"))
    with open(manifest.path("config.yaml"), "w", encoding="utf-8") as config_file:
        config_file.write(serialize_config(config))

    try:
        code = body(config, seed, manifest)
    except ConfigError as exc:
        _LOGGER.error("Invalid input: %s", exc)
        manifest.write("config_error", True, error=str(exc))
        return EXIT_CONFIG_ERROR
    except (SimulationError, OSError, ValueError) as exc:
        _LOGGER.error("%s failed: %s", command, exc)
        manifest.write("error", True, error=str(exc))
        return EXIT_RUNTIME_ERROR

    manifest.write("passed" if code == EXIT_OK else "failed", False)
    _LOGGER.info("Outputs written to '%s'", out_dir)
    return code


def _load_probes(probes_path: Optional[str]) -> Optional[np.ndarray]:
    if probes_path is None:
        return None
    try:
        return np.load(probes_path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError([f"--probes: cannot read {probes_path}: {exc}"]) from exc


def cmd_run(argv) -> int:
    """Simulate one path and write its per-step scalars and fields."""
    parser = _parser("run", cmd_run.__doc__)
    args = _parse(parser, argv)
    if args is None:
        return EXIT_CONFIG_ERROR
    if getattr(args, "help_only", False):
        return EXIT_OK

    def body(config, seed, manifest):
        mesh = build_mesh(config)
        trajectory = run_path(config, seed, mesh)
        written = write_trajectory(
            trajectory, mesh, manifest.out_dir, vtk=config.output.vtk
        )
        manifest.add_files(written)
        final = trajectory.scalars.iloc[-1]
        manifest.data["final_energy"] = float(final["energy_next"])
        return EXIT_OK

    return _run_command("run", args, body)


def cmd_ensemble(argv) -> int:
    """Run M independent paths and write ensemble statistics. With
    --levels L > 1 the ensemble is repeated with dt halved L - 1 times and
    the estimate constants are checked for stability."""
    parser = _parser("ensemble", cmd_ensemble.__doc__)
    parser.add_argument("--paths", type=ensemble_size, default=None)
    parser.add_argument("--levels", type=positive_int, default=1)
    _add_workers(parser)
    args = _parse(parser, argv)
    if args is None:
        return EXIT_CONFIG_ERROR
    if getattr(args, "help_only", False):
        return EXIT_OK

    def body(config, seed, manifest):
        stats = experiments.run_ensemble(config, args.paths, seed, args.workers)
        write_csv(stats.energy, manifest.path("ensemble_energy.csv"))
        summary = stats.summary()
        code = EXIT_OK
        if args.levels > 1:
            table = experiments.halving_study(
                config, args.levels, args.paths, seed, args.workers
            )
            write_csv(table, manifest.path("halving.csv"))
            verdict = experiments.halving_verdict(table)
            summary["halving"] = verdict
            if not all(verdict.values()):
                _LOGGER.warning("dt-halving checks failed: %s", verdict)
                code = EXIT_CHECK_FAILED
        write_json(summary, manifest.path("summary.json"))
        return code

    return _run_command("ensemble", args, body)


def cmd_converge(argv) -> int:
    """Coupled-path self-convergence over a ladder N, 2N, 4N, ... of step
    counts. Fails when the differences are not strictly decreasing."""
    parser = _parser("converge", cmd_converge.__doc__)
    parser.add_argument(
        "--levels", type=at_least(MIN_LADDER_LEVELS), default=DEFAULT_LADDER_LEVELS
    )
    parser.add_argument("--paths", type=positive_int, default=1)
    _add_workers(parser)
    args = _parse(parser, argv)
    if args is None:
        return EXIT_CONFIG_ERROR
    if getattr(args, "help_only", False):
        return EXIT_OK

    def body(config, seed, manifest):
        workers = config.mc.workers if args.workers is None else args.workers
        report = experiments.run_convergence(
            config, args.levels, seed, args.paths, workers
        )
        write_csv(report.to_frame(), manifest.path("convergence.csv"))
        write_json(report.summary(), manifest.path("summary.json"))
        return EXIT_OK if report.monotone else EXIT_CHECK_FAILED

    return _run_command("converge", args, body)


def cmd_noise_check(argv) -> int:
    """Compare sampled probe statistics of G dW with their exact values."""
    parser = _parser("noise-check", cmd_noise_check.__doc__)
    parser.add_argument("--paths", type=ensemble_size, default=DEFAULT_NOISE_SAMPLES)
    _add_probes(parser)
    args = _parse(parser, argv)
    if args is None:
        return EXIT_CONFIG_ERROR
    if getattr(args, "help_only", False):
        return EXIT_OK

    def body(config, seed, manifest):
        report = experiments.run_noise_check(
            config, args.paths, seed, _load_probes(args.probes)
        )
        write_csv(report.table, manifest.path("noise_check.csv"))
        write_json(report.summary(), manifest.path("summary.json"))
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED

    return _run_command("noise-check", args, body)


def cmd_martingale(argv) -> int:
    """3 sigma tests of the martingale structure of the noise part."""
    parser = _parser("martingale", cmd_martingale.__doc__)
    parser.add_argument("--paths", type=ensemble_size, default=None)
    parser.add_argument(
        "--shuffle",
        action="store_true",
        help="Pair every step with the wrong increment (negative control)",
    )
    _add_probes(parser)
    _add_workers(parser)
    args = _parse(parser, argv)
    if args is None:
        return EXIT_CONFIG_ERROR
    if getattr(args, "help_only", False):
        return EXIT_OK

    def body(config, seed, manifest):
        paths = config.mc.paths if args.paths is None else args.paths
        workers = config.mc.workers if args.workers is None else args.workers
        report = experiments.martingale_diagnostics(
            config,
            paths,
            seed,
            _load_probes(args.probes),
            shuffle=args.shuffle,
            workers=workers,
        )
        write_csv(report.tests, manifest.path("martingale.csv"))
        write_json(report.summary(), manifest.path("summary.json"))
        return EXIT_OK if report.passed else EXIT_CHECK_FAILED

    return _run_command("martingale", args, body)


COMMANDS = {
    "run": cmd_run,
    "ensemble": cmd_ensemble,
    "converge": cmd_converge,
    "noise-check": cmd_noise_check,
    "martingale": cmd_martingale,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv or argv[0] not in COMMANDS:
        commands = " | ".join(COMMANDS)
        print(f"usage: sllg {{{commands}}} --config PATH [options]", file=sys.stderr)
        return EXIT_OK if argv[:1] in (["-h"], ["--help"]) else EXIT_CONFIG_ERROR
    return COMMANDS[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
