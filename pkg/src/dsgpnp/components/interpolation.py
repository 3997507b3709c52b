"""Sparse interpolation forward model.

The interpolation problem observes a random subset of the pixels of an image, y = A x + ε, where
every row of A selects exactly one pixel. The inversion operator is the proximal map of the
corresponding negative log likelihood under a positivity constraint, which decouples into a
closed form per pixel. Shepard's inverse distance weighting serves as baseline and initialization.

Classes:
    SamplingMask: Sampled pixel indices, measured values and noise level
    InterpolationInversion: Inversion operator of the interpolation problem
    IntensityScaling: Affine map of image values onto a fixed range

Functions:
    random_mask: Uniformly random sampling mask
    sample_image: Measure an image at the pixels of a mask
    interp_prox: Closed-form proximal map of the interpolation likelihood
    shepard_interpolate: Inverse distance weighted interpolation
    normalized_rmse: Normalized reconstruction error
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse, spatial

from dsgpnp import utilities as utils
from dsgpnp.core import operators


# ==================================================================================================
@dataclass(frozen=True)
class SamplingMask:
    """Sampled pixels of an image together with their measured values.

    Attributes:
        shape (tuple[int, ...]): Shape of the sampled image
        indices (np.ndarray): Sorted, distinct row-major indices of the sampled pixels
        values (np.ndarray | None): Measured values y, one per index, `None` before measurement
        sigma_w (float): Standard deviation of the measurement noise, default is 0
    """

    shape: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray | None = field(default=None, repr=False)
    sigma_w: float = 0.0

    def __post_init__(self) -> None:
        """Validate mask consistency.

        Raises:
            ValueError: If indices are out of range or repeated, or values do not match indices
        """
        indices = np.asarray(self.indices, dtype=np.int64)
        size = int(np.prod(self.shape))
        if indices.ndim != 1 or np.any(indices < 0) or np.any(indices >= size):
            raise ValueError(f"Mask indices must be a 1D array of pixel indices below {size}")
        if np.unique(indices).size != indices.size:
            raise ValueError("Mask indices must be distinct")
        if self.values is not None and np.shape(self.values) != indices.shape:
            raise ValueError(
                f"Number of measured values {np.size(self.values)} does not match the "
                f"{indices.size} sampled pixels"
            )
        if self.sigma_w < 0:
            raise ValueError(f"sigma_w must be nonnegative, got {self.sigma_w}")
        order = np.argsort(indices)
        object.__setattr__(self, "shape", tuple(int(dim) for dim in self.shape))
        object.__setattr__(self, "indices", indices[order])
        if self.values is not None:
            object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64)[order])

    # ----------------------------------------------------------------------------------------------
    @property
    def count(self) -> int:
        """Number of sampled pixels."""
        return int(self.indices.size)

    @property
    def indicator(self) -> np.ndarray:
        """Boolean image, true at sampled pixels."""
        indicator = np.zeros(int(np.prod(self.shape)), dtype=bool)
        indicator[self.indices] = True
        return indicator.reshape(self.shape)

    def measured_values(self) -> np.ndarray:
        """Measured values, raising if the mask has not been measured yet."""
        if self.values is None:
            raise ValueError("Sampling mask holds no measured values")
        return self.values

    def to_sparse(self) -> sparse.csr_matrix:
        """Measurement matrix A, one unit entry per row."""
        rows = np.arange(self.count)
        return sparse.csr_matrix(
            (np.ones(self.count), (rows, self.indices)),
            shape=(self.count, int(np.prod(self.shape))),
        )

    # ----------------------------------------------------------------------------------------------
    def write(self, path: Path) -> None:
        """Write the mask file, `mask <width> <height> <count>` followed by `index value` lines."""
        if len(self.shape) != 2:  # noqa: PLR2004
            raise ValueError(f"Mask files hold 2D masks, got shape {self.shape}")
        utils.write_mask_file(path, self.shape, self.indices, self.measured_values())

    @classmethod
    def read(cls, path: Path, sigma_w: float = 0.0) -> "SamplingMask":
        """Read a mask file written by `write`."""
        shape, indices, values = utils.read_mask_file(path)
        return cls(shape=shape, indices=indices, values=values, sigma_w=sigma_w)


# ==================================================================================================
class InterpolationInversion(operators.InversionOperator):
    """Inversion operator F(x̃; σλ) of the interpolation problem, see `interp_prox`."""

    def __init__(self, mask: SamplingMask) -> None:
        """Constructor.

        Args:
            mask (SamplingMask): Measured sampling mask
        """
        mask.measured_values()
        self.mask = mask

    def __call__(self, x_tilde: np.ndarray, sigma_lambda: float) -> np.ndarray:
        """Evaluate the closed-form proximal map."""
        return interp_prox(x_tilde, self.mask, sigma_lambda)


# ==================================================================================================
@dataclass(frozen=True)
class IntensityScaling:
    """Affine map of image values onto [lower, upper].

    Attributes:
        offset (float): Value mapped to `lower`
        scale (float): Multiplicative factor of the map
        lower (float): Lower bound of the target range, default is 0
    """

    offset: float
    scale: float
    lower: float = 0.0

    @classmethod
    def from_values(
        cls, values: np.ndarray, lower: float = 0.0, upper: float = 255.0
    ) -> "IntensityScaling":
        """Map the range of the given values onto [lower, upper].

        Constant values are shifted onto `lower` without scaling.
        """
        minimum, maximum = float(np.min(values)), float(np.max(values))
        scale = (upper - lower) / (maximum - minimum) if maximum > minimum else 1.0
        return cls(offset=minimum, scale=scale, lower=lower)

    def forward(self, values: np.ndarray) -> np.ndarray:
        """Apply the map."""
        return (np.asarray(values, dtype=np.float64) - self.offset) * self.scale + self.lower

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Undo the map."""
        return (np.asarray(values, dtype=np.float64) - self.lower) / self.scale + self.offset


# ==================================================================================================
def random_mask(shape: tuple[int, ...], fraction: float, seed: int) -> SamplingMask:
    """Uniformly random sampling mask without measured values.

    Args:
        shape (tuple[int, ...]): Image shape
        fraction (float): Fraction of pixels to sample, in (0, 1]
        seed (int): Seed of the random generator

    Raises:
        ValueError: If the fraction is out of range or yields no sampled pixel

    Returns:
        SamplingMask: Mask with exactly round(fraction * N) distinct pixels
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"Sampling fraction must be in (0, 1], got {fraction}")
    size = int(np.prod(shape))
    count = round(fraction * size)
    if count == 0:
        raise ValueError(f"Sampling fraction {fraction} of {size} pixels yields no samples")
    rng = np.random.default_rng(seed)
    indices = rng.choice(size, size=count, replace=False)
    return SamplingMask(shape=tuple(shape), indices=indices)


# --------------------------------------------------------------------------------------------------
def sample_image(
    truth: np.ndarray, mask: SamplingMask, sigma_w: float = 0.0, seed: int = 0
) -> SamplingMask:
    """Measure an image at the sampled pixels, y = A x + ε with ε ~ N(0, σ_w²).

    Raises:
        ValueError: If the image shape does not match the mask

    Returns:
        SamplingMask: Copy of the mask carrying the measured values and noise level
    """
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != mask.shape:
        raise ValueError(f"Image shape {truth.shape} does not match mask shape {mask.shape}")
    values = truth.ravel()[mask.indices].copy()
    if sigma_w > 0:
        values += np.random.default_rng(seed).normal(0.0, sigma_w, size=values.size)
    return replace(mask, values=values, sigma_w=sigma_w)


# --------------------------------------------------------------------------------------------------
def interp_prox(x_tilde: np.ndarray, mask: SamplingMask, sigma_lambda: float) -> np.ndarray:
    """Proximal map of the interpolation likelihood with positivity constraint.

    For σ_w = 0, sampled pixels take their measured value and all others keep x̃. For σ_w > 0,
    sampled pixels take the precision-weighted mean of measurement and x̃. Both cases are clipped
    to nonnegative values.

    Args:
        x_tilde (np.ndarray): Point at which to evaluate the map
        mask (SamplingMask): Measured sampling mask
        sigma_lambda (float): Augmented Lagrangian parameter

    Raises:
        ValueError: If shapes do not match or sigma_lambda is not positive

    Returns:
        np.ndarray: Proximal point
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.shape != mask.shape:
        raise ValueError(f"Image shape {x_tilde.shape} does not match mask shape {mask.shape}")
    if not sigma_lambda > 0:
        raise ValueError(f"sigma_lambda must be positive, got {sigma_lambda}")
    values = mask.measured_values()

    result = x_tilde.ravel().copy()
    if mask.sigma_w == 0:
        result[mask.indices] = values
    else:
        data_precision = 1.0 / mask.sigma_w**2
        prior_precision = 1.0 / sigma_lambda**2
        result[mask.indices] = (
            data_precision * values + prior_precision * result[mask.indices]
        ) / (data_precision + prior_precision)
    return np.maximum(result, 0.0).reshape(mask.shape)


# --------------------------------------------------------------------------------------------------
def shepard_interpolate(
    mask: SamplingMask,
    shape: tuple[int, ...] | None = None,
    power: float = 2.0,
    radius: float = np.inf,
    num_neighbors: int = 64,
) -> np.ndarray:
    """Shepard's inverse distance weighted interpolation.

    Every unsampled pixel is the average of the measured values of its `num_neighbors` nearest
    samples within `radius`, weighted by distance to the power `-power`. If no sample lies within
    the radius, the nearest sample is used. Sampled pixels keep their measured value.

    Args:
        mask (SamplingMask): Measured sampling mask
        shape (tuple[int, ...] | None, optional): Output shape, defaults to the mask shape
        power (float, optional): Exponent of the inverse distance weights. Defaults to 2.
        radius (float, optional): Neighborhood radius in pixels. Defaults to infinity.
        num_neighbors (int, optional): Maximum number of samples per pixel. Defaults to 64.

    Raises:
        ValueError: If the mask holds no samples or the shape does not match

    Returns:
        np.ndarray: Interpolated image
    """
    shape = mask.shape if shape is None else tuple(shape)
    if shape != mask.shape:
        raise ValueError(f"Requested shape {shape} does not match mask shape {mask.shape}")
    if mask.count == 0:
        raise ValueError("Shepard interpolation requires at least one sample")
    values = mask.measured_values()

    coordinates = np.indices(shape).reshape(len(shape), -1).T.astype(np.float64)
    sample_points = coordinates[mask.indices]
    tree = spatial.KDTree(sample_points)
    num_neighbors = min(num_neighbors, mask.count)
    distances, neighbors = tree.query(
        coordinates, k=num_neighbors, distance_upper_bound=radius
    )
    distances = distances.reshape(coordinates.shape[0], num_neighbors)
    neighbors = neighbors.reshape(coordinates.shape[0], num_neighbors)

    # sampled pixels are overwritten below, their zero distances carry no weight
    valid = np.isfinite(distances) & (distances > 0)
    weights = np.where(valid, np.where(valid, distances, 1.0) ** (-power), 0.0)
    neighbor_values = np.where(valid, values[np.minimum(neighbors, mask.count - 1)], 0.0)
    weight_sums = weights.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        result = (weights * neighbor_values).sum(axis=1) / weight_sums

    empty = weight_sums == 0
    if np.any(empty):
        _, nearest = tree.query(coordinates[empty], k=1)
        result[empty] = values[nearest]
    result[mask.indices] = values
    return result.reshape(shape)


# --------------------------------------------------------------------------------------------------
def normalized_rmse(x_hat: np.ndarray, truth: np.ndarray) -> float:
    """Normalized reconstruction error ||truth - x̂|| / ||truth||.

    Raises:
        ValueError: If the ground truth has zero norm
    """
    truth = np.asarray(truth, dtype=np.float64)
    truth_norm = float(np.linalg.norm(truth))
    if truth_norm == 0:
        raise ValueError("Normalized RMSE is undefined for a ground truth of zero norm")
    return float(np.linalg.norm(truth - np.asarray(x_hat, dtype=np.float64))) / truth_norm
