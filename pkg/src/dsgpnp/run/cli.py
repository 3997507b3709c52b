"""Command line interface of dsgpnp.

Every subcommand runs one experiment of the `ExperimentRunner`. Settings are read from an
optional key=value configuration file, then overwritten by the dedicated flags and finally by
`--set key=value` entries.

Example:
    dsgpnp interp --out results/interp --seed 3 --denoiser dsg-nlm
    dsgpnp tomo --config tomo.cfg --set outlier_fraction=0.1
    dsgpnp verify --denoiser nlm --set probe_count=4

Functions:
    build_parser: Argument parser with all subcommands
    parse_overrides: Configuration entries from parsed arguments
    main: Entry point of the `dsgpnp` console script
"""

import argparse
import sys
from collections.abc import Sequence
from pathlib import Path

from dsgpnp.run import runner

# Flags that map onto a configuration attribute of the same name
_CONFIG_FLAGS = (
    "seed",
    "threads",
    "iterations",
    "beta",
    "sigma_lambda",
    "denoiser",
    "freeze_at",
    "input_image",
    "mask_file",
    "sinogram_file",
    "weights_file",
)


# ==================================================================================================
def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the subcommands `interp`, `tomo`, `denoise` and `verify`."""
    parser = argparse.ArgumentParser(
        prog="dsgpnp",
        description="Plug-and-play reconstruction with doubly stochastic NLM priors",
    )
    subparsers = parser.add_subparsers(dest="kind", required=True)
    descriptions = {
        "interp": "Sparse interpolation, compared against Shepard interpolation",
        "tomo": "Bright-field tomography with outlier-robust likelihood, compared against FBP",
        "denoise": "Apply a denoiser once to an image",
        "verify": "Check the convergence conditions of a denoiser",
    }
    for kind, description in descriptions.items():
        subparser = subparsers.add_parser(kind, help=description, description=description)
        _add_common_arguments(subparser)
    return parser


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key=value configuration file")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Experiment seed")
    parser.add_argument("--threads", type=int, default=None, help="Threads for weight construction")
    parser.add_argument("--iterations", type=int, default=None, help="Plug-and-play iterations")
    parser.add_argument("--beta", type=float, default=None, help="Regularization strength")
    parser.add_argument(
        "--sigma-lambda", type=float, default=None, help="Augmented Lagrangian parameter"
    )
    parser.add_argument(
        "--denoiser", default=None, help="nlm, dsg-nlm, identity or external:<executable>"
    )
    parser.add_argument(
        "--freeze-at", default=None, help="Weight freeze iteration, an integer, never or auto"
    )
    parser.add_argument("--input-image", type=Path, default=None, help="Input raster")
    parser.add_argument("--mask-file", type=Path, default=None, help="Measured sampling mask")
    parser.add_argument("--sinogram-file", type=Path, default=None, help="Measured tilt series")
    parser.add_argument("--weights-file", type=Path, default=None, help="Tilt series weights")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Set any configuration attribute, can be repeated",
    )


# --------------------------------------------------------------------------------------------------
def parse_overrides(arguments: argparse.Namespace) -> dict[str, str]:
    """Configuration entries from parsed arguments, `--set` entries take precedence.

    Raises:
        ValueError: If a `--set` entry is not of the form key=value
    """
    entries = {"kind": arguments.kind}
    if arguments.out is not None:
        entries["output_directory"] = str(arguments.out)
    for name in _CONFIG_FLAGS:
        value = getattr(arguments, name)
        if value is not None:
            entries[name] = str(value)
    for override in arguments.overrides:
        key, separator, value = override.partition("=")
        if not separator or not key.strip():
            raise ValueError(f"Expected key=value, got {override}")
        key = key.strip().replace("-", "_")
        entries["output_directory" if key == "out" else key] = value.strip()
    return entries


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point of the `dsgpnp` console script.

    Returns:
        int: Exit code, 0 on success, 1 on invalid settings or a failed experiment
    """
    parser = build_parser()
    arguments = parser.parse_args(argv)
    try:
        config = runner.ExperimentConfig.from_file(arguments.config, parse_overrides(arguments))
        result = runner.ExperimentRunner(config).run()
    except (ValueError, FloatingPointError, RuntimeError, OSError) as error:
        context = "".join(f"{note}: " for note in getattr(error, "__notes__", ()))
        print(f"dsgpnp: {context}{error}", file=sys.stderr)  # noqa: T201
        return 1
    print(f"Results written to {result.output_directory}")  # noqa: T201
    return 0


if __name__ == "__main__":
    sys.exit(main())
