"""Bright-field tomography forward model.

This module implements the likelihood and inversion operator of 2D parallel-beam bright-field
tomography. Measurements are log attenuations y = -log(counts) per tilt and detector bin. The
negative log likelihood uses the generalized Huber function to reject anomalously attenuated
measurements, and carries per-tilt blank scan offsets d and a noise scale σ as nuisance
parameters:

    l(x, d, σ) = 1/2 Σ_k Σ_i β_{T,δ}((y_ki - A_ki x - d_k) sqrt(Λ_ki) / σ) + M K log σ.

The inversion operator minimizes l(x, d, σ) + ||x - x̃||² / (2σλ²) over x ≥ 0, d and σ by
alternating minimization. The x- and d-updates minimize a quadratic surrogate of the Huber
function, the σ-update minimizes the exact cost in σ.

The image lives on a (nz, nx) grid of pixels centered at the origin, a ray at angle θ and detector
offset t is the line {(x, z): x cos θ + z sin θ = t}. System matrix entries are exact
intersection lengths of rays with pixels.

Classes:
    ProjectionGeometry: Image grid and detector layout
    HuberParams: Parameters of the generalized Huber function
    TiltSeries: Tomographic measurements
    NuisanceParams: Blank scan offsets and noise scale
    AlternatingMinimizationResult: Outcome of a tomography proximal map evaluation
    TomographyInversion: Inversion operator of the tomography problem

Functions:
    system_matrix: Sparse projection matrix of a single tilt
    stacked_system_matrix: Sparse projection matrix of a tilt series
    project: Forward projection at a single tilt
    backproject: Adjoint projection at a single tilt
    generalized_huber: Generalized Huber function
    huber_surrogate_weight: Weight of the quadratic Huber majorizer
    data_residual: Residual of the measurements for given image and offsets
    tomo_likelihood: Negative log likelihood
    initial_nuisance: Robust initialization of offsets and noise scale
    alternating_minimization: Proximal map with nuisance parameters and descent bookkeeping
    tomo_prox: Proximal map of the tomography likelihood
    fbp_reconstruct: Filtered backprojection
"""

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import jit
from scipy import fft, optimize, sparse

from dsgpnp import utilities as utils
from dsgpnp.core import logging, operators

_numba_params = {"nopython": True, "cache": True}
_DESCENT_TOLERANCE = 1e-9


# ==================================================================================================
@dataclass(frozen=True)
class ProjectionGeometry:
    """Image grid and detector layout of a 2D parallel-beam acquisition.

    Attributes:
        nx (int): Number of pixels along x
        nz (int): Number of pixels along z, the beam direction at zero tilt
        pixel_pitch (float): Pixel side length in nm, default is 1
        num_bins (int | None): Number of detector bins, default covers the image diagonal
        bin_spacing (float | None): Detector bin spacing in nm, default is the pixel pitch
    """

    nx: int
    nz: int
    pixel_pitch: float = 1.0
    num_bins: int | None = None
    bin_spacing: float | None = None

    def __post_init__(self) -> None:
        """Validate the geometry and fill in detector defaults."""
        if self.nx < 1 or self.nz < 1:
            raise ValueError(f"Image grid must be nonempty, got {self.nz} x {self.nx}")
        if not self.pixel_pitch > 0:
            raise ValueError(f"pixel_pitch must be positive, got {self.pixel_pitch}")
        if self.bin_spacing is None:
            object.__setattr__(self, "bin_spacing", float(self.pixel_pitch))
        if not self.bin_spacing > 0:
            raise ValueError(f"bin_spacing must be positive, got {self.bin_spacing}")
        if self.num_bins is None:
            diagonal = math.hypot(self.nx, self.nz) * self.pixel_pitch / self.bin_spacing
            num_bins = math.ceil(diagonal)
            num_bins += (num_bins - self.nx) % 2
            object.__setattr__(self, "num_bins", num_bins)
        if self.num_bins < 1:
            raise ValueError(f"num_bins must be positive, got {self.num_bins}")

    @property
    def shape(self) -> tuple[int, int]:
        """Image shape (nz, nx)."""
        return (self.nz, self.nx)

    @property
    def num_pixels(self) -> int:
        """Number of pixels N."""
        return self.nx * self.nz

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinates (x, z) of the pixel centers in nm, each of image shape."""
        x = (np.arange(self.nx) - (self.nx - 1) / 2) * self.pixel_pitch
        z = (np.arange(self.nz) - (self.nz - 1) / 2) * self.pixel_pitch
        z_grid, x_grid = np.meshgrid(z, x, indexing="ij")
        return x_grid, z_grid

    def bin_centers(self) -> np.ndarray:
        """Detector offsets t of the bin centers in nm."""
        return (np.arange(self.num_bins) - (self.num_bins - 1) / 2) * self.bin_spacing


# ==================================================================================================
@dataclass(frozen=True)
class HuberParams:
    """Parameters of the generalized Huber function.

    Attributes:
        threshold (float): Threshold T between quadratic and linear branch, default is 3
        delta (float): Slope reduction δ of the linear branch in [0, 1], default is 0.5
    """

    threshold: float = 3.0
    delta: float = 0.5

    def __post_init__(self) -> None:
        """Validate settings."""
        if not self.threshold > 0:
            raise ValueError(f"Huber threshold must be positive, got {self.threshold}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"Huber delta must be in [0, 1], got {self.delta}")


# ==================================================================================================
@dataclass(frozen=True)
class TiltSeries:
    """Tomographic measurements of a 2D slice.

    Attributes:
        angles (np.ndarray): Tilt angles in degrees, within [-90, 90), shape (K,)
        measurements (np.ndarray): Log attenuations y = -log(counts), shape (K, M)
        weights (np.ndarray): Positive diagonal weights Λ, shape (K, M)
        counts (np.ndarray | None): Raw counts, shape (K, M), if available
        outlier_flags (np.ndarray | None): Simulated outlier indicator, shape (K, M), if available
        clamped_counts (int): Number of counts clamped to one before the log transform
    """

    angles: np.ndarray
    measurements: np.ndarray
    weights: np.ndarray
    counts: np.ndarray | None = field(default=None, repr=False)
    outlier_flags: np.ndarray | None = field(default=None, repr=False)
    clamped_counts: int = 0

    def __post_init__(self) -> None:
        """Validate consistency of the measurement arrays."""
        angles = np.atleast_1d(np.asarray(self.angles, dtype=np.float64))
        measurements = np.asarray(self.measurements, dtype=np.float64)
        if measurements.ndim != 2 or measurements.shape[0] != angles.size:  # noqa: PLR2004
            raise ValueError(
                f"Measurements of shape {measurements.shape} do not match {angles.size} tilts"
            )
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != measurements.shape:
            raise ValueError(
                f"Weights of shape {weights.shape} do not match measurements {measurements.shape}"
            )
        if np.any(weights <= 0):
            raise ValueError("All measurement weights must be positive")
        if np.any(angles < -90) or np.any(angles >= 90):  # noqa: PLR2004
            raise ValueError("Tilt angles must lie within [-90, 90) degrees")
        for name in ("counts", "outlier_flags"):
            value = getattr(self, name)
            if value is not None and np.shape(value) != measurements.shape:
                raise ValueError(f"{name} of shape {np.shape(value)} do not match measurements")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "measurements", measurements)
        object.__setattr__(self, "weights", weights)

    @property
    def num_tilts(self) -> int:
        """Number of tilts K."""
        return int(self.angles.size)

    @property
    def num_bins(self) -> int:
        """Number of measurements M per tilt."""
        return int(self.measurements.shape[1])

    def angle_key(self) -> tuple[float, ...]:
        """Hashable tuple of the tilt angles."""
        return tuple(float(angle) for angle in self.angles)

    def write(self, path: Path, weights_path: Path | None = None) -> None:
        """Write the measurements as sinogram file, and optionally the weights alongside."""
        utils.write_sinogram(path, self.angles, self.measurements)
        if weights_path is not None:
            utils.write_sinogram(weights_path, self.angles, self.weights)

    @classmethod
    def read(cls, path: Path, weights_path: Path | None = None) -> "TiltSeries":
        """Read a sinogram file, with unit weights if no weights file is given.

        Raises:
            ValueError: If the angles of the weights file differ from those of the sinogram
        """
        angles, measurements = utils.read_sinogram(path)
        if weights_path is None:
            return cls(angles=angles, measurements=measurements, weights=np.ones_like(measurements))
        weight_angles, weights = utils.read_sinogram(weights_path)
        if not np.array_equal(weight_angles, angles):
            raise ValueError(f"Tilt angles of {weights_path} differ from those of {path}")
        return cls(angles=angles, measurements=measurements, weights=weights)


# ==================================================================================================
@dataclass(frozen=True)
class NuisanceParams:
    """Nuisance parameters of the tomography likelihood.

    Attributes:
        offsets (np.ndarray): Blank scan offsets d_k = -log(blank scan counts), shape (K,)
        sigma (float): Noise scale σ
    """

    offsets: np.ndarray
    sigma: float

    def __post_init__(self) -> None:
        """Validate the noise scale."""
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))


# ==================================================================================================
@dataclass(frozen=True)
class AlternatingMinimizationResult:
    """Outcome of one evaluation of the tomography proximal map.

    Attributes:
        x (np.ndarray): Minimizer in x
        nuisance (NuisanceParams): Updated nuisance parameters
        costs (tuple[tuple[str, float], ...]): Exact cost after every sub-step, starting with
            `("start", cost)`
        descent_violations (int): Number of sub-steps that increased the exact cost
    """

    x: np.ndarray
    nuisance: NuisanceParams
    costs: tuple[tuple[str, float], ...]
    descent_violations: int


# ==================================================================================================
@functools.lru_cache(maxsize=512)
def system_matrix(geometry: ProjectionGeometry, angle: float) -> sparse.csr_matrix:
    """Sparse projection matrix of a single tilt, shape (M, N).

    Row i holds the intersection lengths of ray i with all pixels, computed by tracing the ray
    through the pixel grid.

    Args:
        geometry (ProjectionGeometry): Image grid and detector layout
        angle (float): Tilt angle in degrees

    Returns:
        sparse.csr_matrix: Projection matrix
    """
    theta = math.radians(angle)
    cos_theta, sin_theta = math.cos(theta), math.sin(theta)
    pitch = geometry.pixel_pitch
    x_edges = (np.arange(geometry.nx + 1) - geometry.nx / 2) * pitch
    z_edges = (np.arange(geometry.nz + 1) - geometry.nz / 2) * pitch

    rows, cols, lengths = [], [], []
    for row, offset in enumerate(geometry.bin_centers()):
        ray_cols, ray_lengths = _trace_ray(
            offset, cos_theta, sin_theta, x_edges, z_edges, geometry.nx, geometry.nz
        )
        rows.append(np.full(ray_cols.size, row))
        cols.append(ray_cols)
        lengths.append(ray_lengths)
    matrix = sparse.csr_matrix(
        (np.concatenate(lengths), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geometry.num_bins, geometry.num_pixels),
    )
    matrix.sum_duplicates()
    return matrix


@functools.lru_cache(maxsize=16)
def stacked_system_matrix(
    geometry: ProjectionGeometry, angles: tuple[float, ...]
) -> sparse.csr_matrix:
    """Projection matrix of a tilt series, the single-tilt matrices stacked row-wise."""
    if not angles:
        return sparse.csr_matrix((0, geometry.num_pixels))
    return sparse.vstack([system_matrix(geometry, angle) for angle in angles], format="csr")


@functools.lru_cache(maxsize=16)
def _stacked_columns(geometry: ProjectionGeometry, angles: tuple[float, ...]) -> sparse.csc_matrix:
    return stacked_system_matrix(geometry, angles).tocsc()


# --------------------------------------------------------------------------------------------------
def project(x: np.ndarray, geometry: ProjectionGeometry, angle: float) -> np.ndarray:
    """Forward projection A_k x of an image at a single tilt.

    Raises:
        ValueError: If the image does not match the grid or is not finite

    Returns:
        np.ndarray: Line integrals, one per detector bin
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != geometry.shape:
        raise ValueError(f"Image shape {x.shape} does not match geometry {geometry.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("Image contains non-finite values")
    return system_matrix(geometry, float(angle)) @ x.ravel()


def backproject(residual: np.ndarray, geometry: ProjectionGeometry, angle: float) -> np.ndarray:
    """Adjoint projection A_k^T r of detector values at a single tilt.

    Raises:
        ValueError: If the number of values does not match the detector

    Returns:
        np.ndarray: Image of the grid shape
    """
    residual = np.asarray(residual, dtype=np.float64)
    if residual.shape != (geometry.num_bins,):
        raise ValueError(
            f"Residual of shape {residual.shape} does not match {geometry.num_bins} bins"
        )
    return (system_matrix(geometry, float(angle)).T @ residual).reshape(geometry.shape)


# --------------------------------------------------------------------------------------------------
def generalized_huber(error: np.ndarray | float, params: HuberParams) -> np.ndarray | float:
    """Generalized Huber function.

    β(e) = e² for |e| < T, and 2δT|e| + T²(1 - 2δ) otherwise.
    """
    magnitude = np.abs(error)
    threshold, delta = params.threshold, params.delta
    value = np.where(
        magnitude < threshold,
        magnitude**2,
        2 * delta * threshold * magnitude + threshold**2 * (1 - 2 * delta),
    )
    return value if np.ndim(error) else float(value)


def huber_surrogate_weight(error: np.ndarray | float, params: HuberParams) -> np.ndarray | float:
    """Weight q of the quadratic majorizer of the generalized Huber function at e.

    The function t -> q t² + β(e) - q e² majorizes β and touches it at t = ±e. The weight is
    one on the quadratic branch and δT/|e| beyond the threshold.
    """
    magnitude = np.abs(error)
    threshold = params.threshold
    weight = np.where(
        magnitude < threshold, 1.0, params.delta * threshold / np.maximum(magnitude, threshold)
    )
    return weight if np.ndim(error) else float(weight)


# --------------------------------------------------------------------------------------------------
def data_residual(
    x: np.ndarray, offsets: np.ndarray, tilt_series: TiltSeries, geometry: ProjectionGeometry
) -> np.ndarray:
    """Data residual y - A x - d per tilt and bin, shape (K, M)."""
    matrix = stacked_system_matrix(geometry, tilt_series.angle_key())
    projection = (matrix @ np.asarray(x, dtype=np.float64).ravel()).reshape(
        tilt_series.measurements.shape
    )
    return tilt_series.measurements - projection - np.asarray(offsets)[:, None]


# --------------------------------------------------------------------------------------------------
def tomo_likelihood(
    x: np.ndarray,
    offsets: np.ndarray,
    sigma: float,
    tilt_series: TiltSeries,
    huber: HuberParams,
    geometry: ProjectionGeometry,
) -> float:
    """Negative log likelihood of the tomography model, additive constants dropped.

    Raises:
        ValueError: If sigma is not positive

    Returns:
        float: 1/2 Σ β((y - A x - d) sqrt(Λ) / σ) + M K log σ
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if tilt_series.num_tilts == 0:
        return 0.0
    residual = data_residual(x, offsets, tilt_series, geometry)
    return _likelihood_from_residual(residual, sigma, tilt_series, huber)


# --------------------------------------------------------------------------------------------------
def initial_nuisance(
    x_init: np.ndarray, tilt_series: TiltSeries, geometry: ProjectionGeometry
) -> NuisanceParams:
    """Robust initialization of the nuisance parameters.

    Offsets are the per-tilt median of y - A x_init, the noise scale is the root mean weighted
    squared residual after subtracting the offsets.
    """
    matrix = stacked_system_matrix(geometry, tilt_series.angle_key())
    projection = (matrix @ np.asarray(x_init, dtype=np.float64).ravel()).reshape(
        tilt_series.measurements.shape
    )
    difference = tilt_series.measurements - projection
    offsets = np.median(difference, axis=1)
    residual = difference - offsets[:, None]
    sigma = math.sqrt(float(np.mean(tilt_series.weights * residual**2)))
    return NuisanceParams(offsets=offsets, sigma=max(sigma, 1e-12))


# --------------------------------------------------------------------------------------------------
def alternating_minimization(
    x_tilde: np.ndarray,
    tilt_series: TiltSeries,
    huber: HuberParams,
    sigma_lambda: float,
    geometry: ProjectionGeometry,
    nuisance: NuisanceParams | None = None,
    passes: int = 3,
    sweeps: int = 5,
    update_offsets: bool = True,
    update_sigma: bool = True,
) -> AlternatingMinimizationResult:
    """Minimize the tomography cost by alternating over x, d and σ.

    Every pass refreshes the surrogate weights at the current point and updates x by coordinate
    descent with nonnegativity clipping, then d in closed form, then σ by a bounded 1D search on
    log σ. The surrogate is refreshed before the d-update as well: a quadratic majorizer only
    touches the exact cost at the residual it was built from, and the x-update moves that
    residual, so the d-update majorizes at the post-x residual to keep every sub-step a descent
    step. The exact cost is recorded after every sub-step.

    Args:
        x_tilde (np.ndarray): Point at which the proximal map is evaluated
        tilt_series (TiltSeries): Measurements
        huber (HuberParams): Generalized Huber parameters
        sigma_lambda (float): Augmented Lagrangian parameter
        geometry (ProjectionGeometry): Image grid and detector layout
        nuisance (NuisanceParams | None, optional): Starting nuisance parameters, initialized
            from [x̃]₊ if not given. Defaults to None.
        passes (int, optional): Number of alternating passes. Defaults to 3.
        sweeps (int, optional): Coordinate descent sweeps per x-update. Defaults to 5.
        update_offsets (bool, optional): Whether to update d. Defaults to True.
        update_sigma (bool, optional): Whether to update σ. Defaults to True.

    Raises:
        ValueError: If inputs are inconsistent or not finite
        FloatingPointError: If the cost becomes non-finite, naming the sub-step

    Returns:
        AlternatingMinimizationResult: Minimizer, nuisance parameters and cost history
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    if x_tilde.shape != geometry.shape:
        raise ValueError(f"Image shape {x_tilde.shape} does not match geometry {geometry.shape}")
    if not np.all(np.isfinite(x_tilde)):
        raise ValueError("x_tilde contains non-finite values")
    if not sigma_lambda > 0:
        raise ValueError(f"sigma_lambda must be positive, got {sigma_lambda}")
    if tilt_series.num_tilts > 0 and tilt_series.num_bins != geometry.num_bins:
        raise ValueError(
            f"Tilt series has {tilt_series.num_bins} bins, geometry has {geometry.num_bins}"
        )

    x = np.maximum(x_tilde, 0.0).ravel()
    if tilt_series.num_tilts == 0:
        nuisance = nuisance or NuisanceParams(offsets=np.zeros(0), sigma=1.0)
        cost = _prox_cost(x, x_tilde.ravel(), sigma_lambda, 0.0)
        return AlternatingMinimizationResult(
            x=x.reshape(geometry.shape),
            nuisance=nuisance,
            costs=(("start", cost),),
            descent_violations=0,
        )

    if nuisance is None:
        nuisance = initial_nuisance(x.reshape(geometry.shape), tilt_series, geometry)
    if nuisance.offsets.shape != (tilt_series.num_tilts,):
        raise ValueError(
            f"{nuisance.offsets.size} offsets given for {tilt_series.num_tilts} tilts"
        )

    angles = tilt_series.angle_key()
    matrix = stacked_system_matrix(geometry, angles)
    columns = _stacked_columns(geometry, angles)
    measurements = tilt_series.measurements.ravel()
    weights = tilt_series.weights.ravel()
    num_tilts, num_bins = tilt_series.num_tilts, tilt_series.num_bins
    offsets = nuisance.offsets.copy()
    sigma = nuisance.sigma
    x_tilde_flat = x_tilde.ravel()

    def _residual() -> np.ndarray:
        return measurements - matrix @ x - np.repeat(offsets, num_bins)

    def _cost(residual: np.ndarray, substep: str) -> float:
        likelihood = _likelihood_from_residual(
            residual.reshape(num_tilts, num_bins), sigma, tilt_series, huber
        )
        cost = _prox_cost(x, x_tilde_flat, sigma_lambda, likelihood)
        if not math.isfinite(cost):
            raise FloatingPointError(f"Non-finite tomography cost after {substep} update")
        return cost

    def _surrogate_weights(residual: np.ndarray) -> np.ndarray:
        normalized = residual * np.sqrt(weights) / sigma
        return huber_surrogate_weight(normalized, huber) * weights / sigma**2

    residual = _residual()
    costs = [("start", _cost(residual, "initial"))]
    violations = 0

    def _record(substep: str, residual: np.ndarray) -> None:
        nonlocal violations
        cost = _cost(residual, substep)
        previous = costs[-1][1]
        if cost > previous + _DESCENT_TOLERANCE * max(abs(previous), 1.0):
            violations += 1
        costs.append((substep, cost))

    for _ in range(passes):
        data_weights = _surrogate_weights(residual)
        error = residual.copy()
        _icd_sweeps(
            columns.indptr,
            columns.indices,
            columns.data,
            data_weights,
            error,
            x,
            x_tilde_flat,
            1.0 / sigma_lambda**2,
            sweeps,
        )
        residual = _residual()
        _record("x", residual)

        if update_offsets:
            data_weights = _surrogate_weights(residual).reshape(num_tilts, num_bins)
            shifted = (residual + np.repeat(offsets, num_bins)).reshape(num_tilts, num_bins)
            weight_sums = data_weights.sum(axis=1)
            updatable = weight_sums > 0
            offsets[updatable] = (data_weights * shifted).sum(axis=1)[updatable] / weight_sums[
                updatable
            ]
            residual = _residual()
            _record("d", residual)

        if update_sigma:
            sigma = _update_sigma(residual, sigma, tilt_series, huber)
            _record("sigma", residual)

    return AlternatingMinimizationResult(
        x=x.reshape(geometry.shape),
        nuisance=NuisanceParams(offsets=offsets, sigma=sigma),
        costs=tuple(costs),
        descent_violations=violations,
    )


# --------------------------------------------------------------------------------------------------
def tomo_prox(
    x_tilde: np.ndarray,
    tilt_series: TiltSeries,
    huber: HuberParams,
    sigma_lambda: float,
    geometry: ProjectionGeometry,
    passes: int = 3,
) -> np.ndarray:
    """Proximal map of the tomography likelihood, see `alternating_minimization`."""
    return alternating_minimization(
        x_tilde, tilt_series, huber, sigma_lambda, geometry, passes=passes
    ).x


# ==================================================================================================
class TomographyInversion(operators.InversionOperator):
    """Inversion operator F(x̃; σλ) of the tomography problem.

    Nuisance parameters are carried from one call to the next. Cost histories and the number of
    descent violations of all calls are accumulated for reporting.
    """

    def __init__(
        self,
        tilt_series: TiltSeries,
        geometry: ProjectionGeometry,
        huber: HuberParams,
        nuisance: NuisanceParams | None = None,
        passes: int = 3,
        sweeps: int = 5,
        logger: logging.PnPLogger | None = None,
    ) -> None:
        """Constructor.

        Args:
            tilt_series (TiltSeries): Measurements
            geometry (ProjectionGeometry): Image grid and detector layout
            huber (HuberParams): Generalized Huber parameters
            nuisance (NuisanceParams | None, optional): Initial nuisance parameters, estimated at
                the first call if not given. Defaults to None.
            passes (int, optional): Alternating passes per call. Defaults to 3.
            sweeps (int, optional): Coordinate descent sweeps per x-update. Defaults to 5.
            logger (logging.PnPLogger | None, optional): Logger for sub-step costs.
                Defaults to None.
        """
        self.tilt_series = tilt_series
        self.geometry = geometry
        self.huber = huber
        self.nuisance = nuisance
        self._passes = passes
        self._sweeps = sweeps
        self._logger = logger
        self.num_calls = 0
        self.descent_violations = 0
        self.cost_history: list[tuple[tuple[str, float], ...]] = []

    def __call__(self, x_tilde: np.ndarray, sigma_lambda: float) -> np.ndarray:
        """Evaluate the proximal map and update the nuisance parameters."""
        result = alternating_minimization(
            x_tilde,
            self.tilt_series,
            self.huber,
            sigma_lambda,
            self.geometry,
            nuisance=self.nuisance,
            passes=self._passes,
            sweeps=self._sweeps,
        )
        self.num_calls += 1
        self.nuisance = result.nuisance
        self.descent_violations += result.descent_violations
        self.cost_history.append(result.costs)
        if self._logger is not None:
            self._log_call(result)
            if result.descent_violations > 0:
                self._logger.warning(
                    f"Tomography cost increased in {result.descent_violations} sub-steps "
                    f"of call {self.num_calls}"
                )
        return result.x

    def _log_call(self, result: AlternatingMinimizationResult) -> None:
        statistics = {
            "call": logging.Statistic("Call", "<6d"),
            "start": logging.Statistic("Start", "<12.6e"),
            "final": logging.Statistic("Final", "<12.6e"),
            "sigma": logging.Statistic("Sigma", "<12.6e"),
            "violations": logging.Statistic("Violations", "<4d"),
        }
        statistics["call"].set_value(self.num_calls)
        statistics["start"].set_value(result.costs[0][1])
        statistics["final"].set_value(result.costs[-1][1])
        statistics["sigma"].set_value(result.nuisance.sigma)
        statistics["violations"].set_value(result.descent_violations)
        self._logger.log_debug_statistics("tomo-prox", statistics)
        costs = " ".join(f"{substep}={cost:.10e}" for substep, cost in result.costs)
        self._logger.log_debug_event("tomo-costs", costs)


# ==================================================================================================
def fbp_reconstruct(
    tilt_series: TiltSeries,
    geometry: ProjectionGeometry,
    filter_name: str = "ram-lak",
    offsets: np.ndarray | None = None,
    num_edge_bins: int = 8,
) -> np.ndarray:
    """Filtered backprojection of a tilt series.

    The offsets d are subtracted from the measurements before filtering. If they are not given,
    every tilt's offset is estimated as the median of its `num_edge_bins` outermost bins on either
    side, which see the blank beam when the object fits into the field of view. Projections are
    filtered with the ramp filter and backprojected with linear interpolation between bins. The
    result is clipped to nonnegative values.

    Args:
        tilt_series (TiltSeries): Measurements
        geometry (ProjectionGeometry): Image grid and detector layout
        filter_name (str, optional): Only `ram-lak` is supported. Defaults to "ram-lak".
        offsets (np.ndarray | None, optional): Per-tilt offsets. Defaults to None.
        num_edge_bins (int, optional): Bins per side for offset estimation. Defaults to 8.

    Raises:
        ValueError: If fewer than two tilts are given or the filter is unknown

    Returns:
        np.ndarray: Nonnegative reconstruction of the grid shape
    """
    if tilt_series.num_tilts < 2:  # noqa: PLR2004
        raise ValueError(
            f"Filtered backprojection requires at least two tilts, got {tilt_series.num_tilts}"
        )
    if filter_name != "ram-lak":
        raise ValueError(f"Unknown FBP filter: {filter_name}")
    if offsets is None:
        edge = min(num_edge_bins, tilt_series.num_bins // 2)
        edges = np.concatenate(
            [tilt_series.measurements[:, :edge], tilt_series.measurements[:, -edge:]], axis=1
        )
        offsets = np.median(edges, axis=1)
    projections = tilt_series.measurements - np.asarray(offsets)[:, None]
    filtered = _ramp_filter(projections, geometry.bin_spacing)

    angles = np.radians(tilt_series.angles)
    angular_step = (angles.max() - angles.min()) / (angles.size - 1)
    x_grid, z_grid = geometry.pixel_centers()
    bin_index = np.arange(geometry.num_bins)
    image = np.zeros(geometry.shape)
    for theta, row in zip(angles, filtered, strict=True):
        offset = x_grid * math.cos(theta) + z_grid * math.sin(theta)
        position = offset / geometry.bin_spacing + (geometry.num_bins - 1) / 2
        image += np.interp(position, bin_index, row, left=0.0, right=0.0)
    return np.maximum(image * angular_step, 0.0)


# --------------------------------------------------------------------------------------------------
def _ramp_filter(projections: np.ndarray, bin_spacing: float) -> np.ndarray:
    """Ram-Lak filtering of every row, with the band-limited spatial kernel and zero padding."""
    num_bins = projections.shape[1]
    padded_size = max(64, int(2 ** math.ceil(math.log2(2 * num_bins))))
    lags = np.fft.fftfreq(padded_size, d=1.0 / padded_size).astype(np.int64)
    kernel = np.zeros(padded_size)
    kernel[lags == 0] = 1.0 / (4.0 * bin_spacing**2)
    odd = lags % 2 == 1
    kernel[odd] = -1.0 / (np.pi * lags[odd] * bin_spacing) ** 2
    response = np.real(fft.fft(kernel)) * bin_spacing
    spectrum = fft.fft(projections, n=padded_size, axis=1)
    return np.real(fft.ifft(spectrum * response, axis=1))[:, :num_bins]


def _trace_ray(
    offset: float,
    cos_theta: float,
    sin_theta: float,
    x_edges: np.ndarray,
    z_edges: np.ndarray,
    nx: int,
    nz: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Pixels intersected by a ray and the intersection lengths.

    The ray is parametrized as p(s) = t (cos θ, sin θ) + s (-sin θ, cos θ).
    """
    origin_x, origin_z = offset * cos_theta, offset * sin_theta
    direction_x, direction_z = -sin_theta, cos_theta
    s_min, s_max = -np.inf, np.inf
    crossings = []
    for origin, direction, edges in (
        (origin_x, direction_x, x_edges),
        (origin_z, direction_z, z_edges),
    ):
        if abs(direction) < 1e-14:
            if not edges[0] <= origin < edges[-1]:
                return np.zeros(0, dtype=np.int64), np.zeros(0)
            continue
        parameters = (edges - origin) / direction
        s_min = max(s_min, parameters.min())
        s_max = min(s_max, parameters.max())
        crossings.append(parameters)
    if s_max <= s_min:
        return np.zeros(0, dtype=np.int64), np.zeros(0)

    breakpoints = np.concatenate([[s_min, s_max], *crossings])
    breakpoints = np.unique(breakpoints[(breakpoints >= s_min) & (breakpoints <= s_max)])
    lengths = np.diff(breakpoints)
    midpoints = 0.5 * (breakpoints[:-1] + breakpoints[1:])
    pitch_x = x_edges[1] - x_edges[0]
    pitch_z = z_edges[1] - z_edges[0]
    ix = np.floor((origin_x + midpoints * direction_x - x_edges[0]) / pitch_x).astype(np.int64)
    iz = np.floor((origin_z + midpoints * direction_z - z_edges[0]) / pitch_z).astype(np.int64)
    valid = (lengths > 1e-12 * pitch_x) & (ix >= 0) & (ix < nx) & (iz >= 0) & (iz < nz)
    return iz[valid] * nx + ix[valid], lengths[valid]


def _likelihood_from_residual(
    residual: np.ndarray, sigma: float, tilt_series: TiltSeries, huber: HuberParams
) -> float:
    normalized = residual * np.sqrt(tilt_series.weights) / sigma
    return 0.5 * float(np.sum(generalized_huber(normalized, huber))) + residual.size * math.log(
        sigma
    )


def _prox_cost(
    x: np.ndarray, x_tilde: np.ndarray, sigma_lambda: float, likelihood: float
) -> float:
    return likelihood + float(np.sum((x - x_tilde) ** 2)) / (2.0 * sigma_lambda**2)


def _update_sigma(
    residual: np.ndarray, sigma: float, tilt_series: TiltSeries, huber: HuberParams
) -> float:
    """Minimize the exact likelihood in σ by a bounded search on log σ.

    The new value is only accepted if it does not increase the likelihood.
    """
    residual = residual.reshape(tilt_series.measurements.shape)

    def _objective(log_sigma: float) -> float:
        return _likelihood_from_residual(residual, math.exp(log_sigma), tilt_series, huber)

    log_sigma = math.log(sigma)
    bounds = (log_sigma + math.log(1e-6), log_sigma + math.log(1e3))
    solution = optimize.minimize_scalar(
        _objective, bounds=bounds, method="bounded", options={"xatol": 1e-10}
    )
    if solution.fun <= _objective(log_sigma):
        return math.exp(solution.x)
    return sigma


@jit(**_numba_params)
def _icd_sweeps(
    indptr: np.ndarray,
    indices: np.ndarray,
    data: np.ndarray,
    weights: np.ndarray,
    error: np.ndarray,
    x: np.ndarray,
    x_tilde: np.ndarray,
    prior_precision: float,
    num_sweeps: int,
) -> None:
    """Coordinate descent sweeps on 1/2 Σ b_i (e_i)² + ||x - x̃||² prior_precision / 2, x ≥ 0.

    The error e = r - A x and the image x are updated in place.
    """
    num_pixels = x.size
    for _ in range(num_sweeps):
        for pixel in range(num_pixels):
            theta_1 = 0.0
            theta_2 = 0.0
            for entry in range(indptr[pixel], indptr[pixel + 1]):
                ray = indices[entry]
                weighted = weights[ray] * data[entry]
                theta_1 -= weighted * error[ray]
                theta_2 += weighted * data[entry]
            gradient = theta_1 + (x[pixel] - x_tilde[pixel]) * prior_precision
            updated = x[pixel] - gradient / (theta_2 + prior_precision)
            updated = max(updated, 0.0)
            step = updated - x[pixel]
            if step != 0.0:
                for entry in range(indptr[pixel], indptr[pixel + 1]):
                    error[indices[entry]] -= data[entry] * step
                x[pixel] = updated
