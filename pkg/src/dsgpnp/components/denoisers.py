"""Denoising operators for the plug-and-play algorithm.

All denoisers adhere to the `DenoisingOperator` interface. The NLM denoisers expose their weight
matrix and support weight freezing, after which they act as a fixed linear operator. External
denoisers, e.g. BM3D, are invoked as a separate process that exchanges images via raster files.

Classes:
    NLMDenoiser: Non-local means with row-normalized weights
    DSGNLMDenoiser: Non-local means with symmetric, doubly stochastic weights
    IdentityDenoiser: Denoiser returning its input, for diagnostics
    ExternalDenoiser: Denoiser implemented by an external executable

Functions:
    build_denoiser: Construct a denoiser from its selector string
"""

import subprocess
import tempfile
from collections.abc import Callable
from pathlib import Path

import numpy as np

from dsgpnp import utilities as utils
from dsgpnp.components import nlm
from dsgpnp.core import logging, operators


# ==================================================================================================
class _WeightedDenoiser(operators.DenoisingOperator):
    """Base class of the NLM denoisers, applying H(ṽ; σn) = W(ṽ) ṽ.

    Methods:
        __call__: Denoise with adaptive or frozen weights
        weight_matrix: Weight matrix for a given image
        freeze_at: Reset the freeze policy to freeze at the given iteration
    """

    exposes_weight_matrix = True
    _weight_function: Callable[..., nlm.WeightMatrix]
    _name: str

    def __init__(
        self,
        params: nlm.NlmParams,
        freeze_at: int | None = None,
        logger: logging.PnPLogger | None = None,
    ) -> None:
        """Constructor.

        Args:
            params (nlm.NlmParams): Patch and search window settings
            freeze_at (int | None, optional): Iteration at which the weights are frozen, `None`
                means never. Defaults to None.
            logger (logging.PnPLogger | None, optional): Logger for freeze events and clamped
                weights. Defaults to None.
        """
        self._params = params
        self._logger = logger
        self.policy = nlm.FreezePolicy(freeze_at=freeze_at)
        self.num_clamped_diagonals = 0

    # ----------------------------------------------------------------------------------------------
    def __call__(self, v_tilde: np.ndarray, sigma_n: float, iteration: int = 0) -> np.ndarray:
        """Denoise an image, recomputing the weights until they are frozen.

        Args:
            v_tilde (np.ndarray): Image to denoise
            sigma_n (float): Noise level entering the patch weights
            iteration (int, optional): Index of the calling iteration. Defaults to 0.

        Returns:
            np.ndarray: Denoised image
        """
        was_frozen = self.policy.frozen
        computed = []

        def _weights(image: np.ndarray, params: nlm.NlmParams, noise: float) -> nlm.WeightMatrix:
            weights = self._weight_function(image, params, noise)
            computed.append(weights)
            return weights

        result = nlm.denoise(
            v_tilde, self._params, self.policy, iteration, sigma_n=sigma_n, weight_function=_weights
        )
        for weights in computed:
            self._record_clamped(weights, iteration)
        if self.policy.frozen and not was_frozen and self._logger is not None:
            self._logger.log_debug_event(
                "freeze", f"{self._name}: weights frozen at iteration {iteration}"
            )
        return result

    # ----------------------------------------------------------------------------------------------
    def weight_matrix(self, image: np.ndarray, sigma_n: float) -> nlm.WeightMatrix:
        """Frozen weight matrix if available, else the weights computed from `image`."""
        if self.policy.frozen:
            return self.policy.cached
        return self._weight_function(image, self._params, sigma_n)

    # ----------------------------------------------------------------------------------------------
    def freeze_at(self, iteration: int | None) -> None:
        """Reset the freeze policy to freeze at the given iteration, `None` meaning never."""
        self.policy = nlm.FreezePolicy(freeze_at=iteration)

    # ----------------------------------------------------------------------------------------------
    def _record_clamped(self, weights: nlm.WeightMatrix, iteration: int) -> None:
        self.num_clamped_diagonals += weights.clamped_diagonals
        if weights.clamped_diagonals > 0 and self._logger is not None:
            self._logger.log_debug_event(
                "clamp",
                f"{self._name}: clamped {weights.clamped_diagonals} diagonal weights "
                f"at iteration {iteration}",
            )


# ==================================================================================================
class NLMDenoiser(_WeightedDenoiser):
    """Non-local means with row-normalized weights.

    The weight matrix is row stochastic but in general not column stochastic, so the convergence
    conditions for plug-and-play do not apply.
    """

    _weight_function = staticmethod(nlm.nlm_weights)
    _name = "nlm"


# ==================================================================================================
class DSGNLMDenoiser(_WeightedDenoiser):
    """Non-local means with symmetric, doubly stochastic weights."""

    _weight_function = staticmethod(nlm.dsg_nlm_weights)
    _name = "dsg-nlm"


# ==================================================================================================
class IdentityDenoiser(operators.DenoisingOperator):
    """Denoising operator that returns its input.

    Its weight matrix is the identity, so it trivially passes all condition checks.
    """

    exposes_weight_matrix = True

    def __call__(
        self,
        v_tilde: np.ndarray,
        sigma_n: float,  # noqa: ARG002
        iteration: int = 0,  # noqa: ARG002
    ) -> np.ndarray:
        """Return a copy of the input."""
        return np.array(v_tilde, dtype=np.float64, copy=True)

    def weight_matrix(self, image: np.ndarray, sigma_n: float) -> nlm.WeightMatrix:  # noqa: ARG002
        """Return the identity as weight matrix for images of the given shape."""
        return nlm.WeightMatrix.identity(image.shape)

    def freeze_at(self, iteration: int | None) -> None:
        """Nothing to freeze, the identity is linear."""


# ==================================================================================================
class ExternalDenoiser(operators.DenoisingOperator):
    """Denoiser implemented by an external executable.

    The executable is called as `<executable> <input raster> <sigma_n> <output raster>`. It reads
    the input raster and must write a raster of identical shape to the output path. This keeps
    third-party denoisers such as BM3D outside of the code base.
    """

    def __init__(self, executable: Path, logger: logging.PnPLogger | None = None) -> None:
        """Constructor.

        Args:
            executable (Path): Path to the denoiser executable
            logger (logging.PnPLogger | None, optional): Logger for plugin calls. Defaults to None.
        """
        self._executable = Path(executable)
        self._logger = logger

    def __call__(self, v_tilde: np.ndarray, sigma_n: float, iteration: int = 0) -> np.ndarray:
        """Run the external denoiser on an image.

        Raises:
            RuntimeError: If the executable fails
            ValueError: If the returned raster does not have the shape of the input

        Returns:
            np.ndarray: Denoised image
        """
        v_tilde = np.asarray(v_tilde, dtype=np.float64)
        with tempfile.TemporaryDirectory(prefix="dsgpnp_plugin_") as work_directory:
            input_path = Path(work_directory) / "input.raster"
            output_path = Path(work_directory) / "output.raster"
            utils.write_raster(input_path, v_tilde)
            command = [str(self._executable), str(input_path), f"{sigma_n:.17g}", str(output_path)]
            completed = subprocess.run(  # noqa: S603
                command, capture_output=True, text=True, check=False
            )
            if completed.returncode != 0:
                raise RuntimeError(
                    f"External denoiser {self._executable} failed at iteration {iteration} with "
                    f"exit code {completed.returncode}: {completed.stderr.strip()}"
                )
            result = utils.read_raster(output_path).astype(np.float64)
        if result.shape != v_tilde.shape:
            raise ValueError(
                f"External denoiser {self._executable} returned {result.shape}, "
                f"expected {v_tilde.shape}"
            )
        if self._logger is not None:
            self._logger.log_debug_event("plugin", f"{self._executable.name} at {iteration}")
        return result


# ==================================================================================================
def build_denoiser(
    selector: str,
    params: nlm.NlmParams,
    freeze_at: int | None = None,
    logger: logging.PnPLogger | None = None,
) -> operators.DenoisingOperator:
    """Construct a denoiser from its selector string.

    Args:
        selector (str): One of `nlm`, `dsg-nlm`, `identity` or `external:<path>`
        params (nlm.NlmParams): Patch and search window settings for the NLM denoisers
        freeze_at (int | None, optional): Freeze iteration for the NLM denoisers. Defaults to None.
        logger (logging.PnPLogger | None, optional): Logger handed to the denoiser.
            Defaults to None.

    Raises:
        ValueError: If the selector is unknown

    Returns:
        operators.DenoisingOperator: Denoiser
    """
    if selector == "nlm":
        return NLMDenoiser(params, freeze_at, logger)
    if selector == "dsg-nlm":
        return DSGNLMDenoiser(params, freeze_at, logger)
    if selector == "identity":
        return IdentityDenoiser()
    if selector.startswith("external:"):
        return ExternalDenoiser(Path(selector.removeprefix("external:")), logger)
    raise ValueError(f"Unknown denoiser: {selector}")
