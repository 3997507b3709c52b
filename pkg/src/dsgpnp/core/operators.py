"""Operator interfaces for the plug-and-play algorithm.

The plug-and-play loop only knows two operators: an inversion operator F, the proximal map of the
negative log likelihood, and a denoising operator H, which takes the place of the proximal map of
the prior. Concrete operators adhere to the interfaces prescribed by the abstract base classes in
this module. New forward models or denoisers can be implemented through subclassing.

Classes:
    InversionOperator: Base class for inversion operators F(x_tilde; sigma_lambda)
    DenoisingOperator: Base class for denoising operators H(v_tilde; sigma_n)
    IdentityInversion: Inversion operator returning its input, for diagnostics
"""

from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from dsgpnp.components import nlm


# ==================================================================================================
class InversionOperator(ABC):
    """Base class for inversion operators.

    An inversion operator evaluates F(x̃; σλ) = argmin_x {l(x) + ||x - x̃||² / (2σλ²)},
    where l is the negative log likelihood of the forward model. The output must have the shape of
    the input and respect the constraints of the forward model, e.g. nonnegativity.

    Methods:
        __call__: Evaluate the operator
    """

    @abstractmethod
    def __call__(self, x_tilde: np.ndarray, sigma_lambda: float) -> np.ndarray:
        """Evaluate the inversion operator.

        Args:
            x_tilde (np.ndarray): Point at which to evaluate the proximal map
            sigma_lambda (float): Augmented Lagrangian parameter

        Returns:
            np.ndarray: Image of the same shape as `x_tilde`
        """
        raise NotImplementedError


# ==================================================================================================
class DenoisingOperator(ABC):
    """Base class for denoising operators.

    A denoising operator evaluates H(ṽ; σn). Denoisers whose Jacobian is an explicit weight
    matrix set `exposes_weight_matrix` and implement `weight_matrix` and `freeze_at`, so that the
    plug-and-play loop can freeze their weights and the condition checks can inspect them.

    Attributes:
        exposes_weight_matrix (bool): Whether the operator provides an explicit weight matrix

    Methods:
        __call__: Evaluate the operator
        weight_matrix: Weight matrix the operator applies to a given image
        freeze_at: Instruct the operator to freeze its weights at a given iteration
    """

    exposes_weight_matrix: bool = False

    @abstractmethod
    def __call__(self, v_tilde: np.ndarray, sigma_n: float, iteration: int = 0) -> np.ndarray:
        """Evaluate the denoising operator.

        Args:
            v_tilde (np.ndarray): Image to denoise
            sigma_n (float): Assumed noise standard deviation
            iteration (int, optional): Index of the calling plug-and-play iteration, only relevant
                for adaptive operators. Defaults to 0.

        Returns:
            np.ndarray: Denoised image of the same shape as `v_tilde`
        """
        raise NotImplementedError

    def weight_matrix(self, image: np.ndarray, sigma_n: float) -> "nlm.WeightMatrix":
        """Return the weight matrix the operator would apply to `image`."""
        raise NotImplementedError(f"{type(self).__name__} does not expose a weight matrix")

    def freeze_at(self, iteration: int | None) -> None:
        """Freeze the operator's weights at the given iteration, `None` meaning never."""
        raise NotImplementedError(f"{type(self).__name__} does not expose a weight matrix")


# ==================================================================================================
class IdentityInversion(InversionOperator):
    """Inversion operator of the trivial likelihood, F(x̃) = x̃."""

    def __call__(self, x_tilde: np.ndarray, sigma_lambda: float) -> np.ndarray:  # noqa: ARG002
        """Return a copy of the input."""
        return np.array(x_tilde, dtype=np.float64, copy=True)
