"""Postprocessing for reconstruction experiments.

The postprocessor collects the scalar outcomes of an experiment (reconstruction errors, final
residuals, operator bookkeeping) and writes them into a flat key=value summary. Values are
formatted deterministically, so that summaries of identical runs are bit-identical.

Classes:
    MethodResult: Outcome of one plug-and-play or baseline reconstruction
    PostprocessorSettings: Dataclass to store postprocessing settings
    Postprocessor: Assembles and writes experiment summaries

Functions:
    format_value: Deterministic string representation of summary values
    read_summary: Read a summary file
"""

import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dsgpnp import utilities as utils
from dsgpnp.core import pnp


# ==================================================================================================
@dataclass
class MethodResult:
    """Outcome of one reconstruction method.

    Attributes:
        method (str): Method name, e.g. `shepard`, `fbp`, `nlm`, `dsg-nlm`
        rmse (float | None): Normalized RMSE against the ground truth, if available
        beta (float | None): Regularization strength of a plug-and-play run
        iterations (int | None): Number of plug-and-play iterations performed
        final_primal (float | None): Final normalized primal residual
        final_dual (float | None): Final normalized dual residual
        extras (dict[str, object]): Further method-specific entries
    """

    method: str
    rmse: float | None = None
    beta: float | None = None
    iterations: int | None = None
    final_primal: float | None = None
    final_dual: float | None = None
    extras: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_residual_log(
        cls,
        method: str,
        residual_log: pnp.ResidualLog,
        beta: float,
        rmse: float | None = None,
        **extras: object,
    ) -> "MethodResult":
        """Result of a plug-and-play run from its residual log."""
        return cls(
            method=method,
            rmse=rmse,
            beta=beta,
            iterations=len(residual_log),
            final_primal=residual_log.final_primal if len(residual_log) else None,
            final_dual=residual_log.final_dual if len(residual_log) else None,
            extras=dict(extras),
        )

    def entries(self) -> dict[str, object]:
        """Flat entries, keyed `method.<name>.<quantity>`."""
        prefix = f"method.{self.method}"
        entries: dict[str, object] = {}
        for name in ("rmse", "beta", "iterations", "final_primal", "final_dual"):
            value = getattr(self, name)
            if value is not None:
                entries[f"{prefix}.{name}"] = value
        entries.update({f"{prefix}.{key}": value for key, value in self.extras.items()})
        return entries


# ==================================================================================================
@dataclass
class PostprocessorSettings:
    """Dataclass to store postprocessing settings.

    Attributes:
        output_directory (Path): Directory to write the summary to
        summary_name (str): File name of the summary, default is `summary.txt`
    """

    output_directory: Path
    summary_name: str = "summary.txt"


# ==================================================================================================
class Postprocessor:
    """Assembles and writes experiment summaries.

    Methods:
        add_entries: Add general entries
        add_method: Add the outcome of a reconstruction method
        entries: All entries in insertion order
        write: Write the summary file
    """

    def __init__(self, postprocessor_settings: PostprocessorSettings) -> None:
        """Constructor of the postprocessor.

        Args:
            postprocessor_settings (PostprocessorSettings): Output settings
        """
        self._output_directory = Path(postprocessor_settings.output_directory)
        self._summary_name = postprocessor_settings.summary_name
        self._entries: dict[str, object] = {}
        self._methods: list[MethodResult] = []

    # ----------------------------------------------------------------------------------------------
    def add_entries(self, entries: Mapping[str, object], prefix: str | None = None) -> None:
        """Add general entries, optionally under a key prefix."""
        for key, value in entries.items():
            self._entries[f"{prefix}.{key}" if prefix else key] = value

    def add_method(self, result: MethodResult) -> None:
        """Add the outcome of a reconstruction method."""
        self._methods.append(result)

    @property
    def methods(self) -> list[MethodResult]:
        """Added method results, in insertion order."""
        return list(self._methods)

    # ----------------------------------------------------------------------------------------------
    def entries(self) -> dict[str, str]:
        """All entries formatted as strings, general entries first, then methods."""
        entries = dict(self._entries)
        entries["methods"] = ",".join(result.method for result in self._methods)
        for result in self._methods:
            entries.update(result.entries())
        return {key: format_value(value) for key, value in entries.items()}

    def write(self) -> Path:
        """Write the summary file and return its path."""
        path = self._output_directory / self._summary_name
        utils.write_key_value(path, self.entries())
        return path


# ==================================================================================================
def format_value(value: object) -> str:
    """Deterministic string representation of summary values.

    Floats are written in scientific notation with ten decimals, booleans in lower case and `None`
    as `n/a`.
    """
    if value is None:
        return "n/a"
    if isinstance(value, bool | np.bool_):
        return str(bool(value)).lower()
    if isinstance(value, int | np.integer):
        return str(int(value))
    if isinstance(value, float | np.floating):
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.10e}"
    if isinstance(value, Path):
        return value.as_posix()
    return str(value)


def read_summary(path: Path) -> dict[str, str]:
    """Read a summary file into a dictionary of strings."""
    return utils.read_key_value(path)
