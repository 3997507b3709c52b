"""Checks of the convergence conditions of a denoising operator.

Plug-and-play ADMM converges if the denoiser's gradient is a symmetric, doubly stochastic matrix
with nonnegative entries. This module measures how far a denoiser's weight matrix deviates from
these conditions. If the denoiser exposes its weight matrix, that matrix is inspected directly.
Otherwise the Jacobian is assembled column by column with central finite differences, which is
only feasible for small probe images.

Classes:
    ConditionReport: Measured deviations and pass/fail per condition

Functions:
    verify_operator_conditions: Measure the convergence conditions of a denoiser
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from dsgpnp.core import operators


# ==================================================================================================
@dataclass(frozen=True)
class ConditionReport:
    """Measured deviations of a weight matrix from the convergence conditions.

    Attributes:
        row_sum_deviation (float): Maximum |row sum - 1|
        column_sum_deviation (float): Maximum |column sum - 1|
        asymmetry (float): Maximum |W - W^T|
        negative_entries (int): Number of negative entries
        spectral_norm (float): Power iteration estimate of the 2-norm of W
        min_eigenvalue (float | None): Smallest eigenvalue of the symmetric part of W, only
            computed for small probes
        tolerance (float): Tolerance the deviations are checked against
        source (str): `weight_matrix` or `finite_differences`
    """

    row_sum_deviation: float
    column_sum_deviation: float
    asymmetry: float
    negative_entries: int
    spectral_norm: float
    min_eigenvalue: float | None
    tolerance: float
    source: str

    @property
    def checks(self) -> dict[str, bool]:
        """Pass/fail of every condition."""
        return {
            "row_stochastic": self.row_sum_deviation <= self.tolerance,
            "column_stochastic": self.column_sum_deviation <= self.tolerance,
            "symmetric": self.asymmetry <= self.tolerance,
            "nonnegative": self.negative_entries == 0,
            "nonexpansive": self.spectral_norm <= 1.0 + self.tolerance,
        }

    @property
    def passed(self) -> bool:
        """Whether all conditions hold."""
        return all(self.checks.values())

    def as_dict(self) -> dict[str, object]:
        """Flat key-value representation for summaries."""
        entries: dict[str, object] = {
            "source": self.source,
            "tolerance": self.tolerance,
            "row_sum_deviation": self.row_sum_deviation,
            "column_sum_deviation": self.column_sum_deviation,
            "asymmetry": self.asymmetry,
            "negative_entries": self.negative_entries,
            "spectral_norm": self.spectral_norm,
            "min_eigenvalue": "n/a" if self.min_eigenvalue is None else self.min_eigenvalue,
        }
        entries.update({f"pass_{name}": passed for name, passed in self.checks.items()})
        entries["pass"] = self.passed
        return entries


# ==================================================================================================
def verify_operator_conditions(
    denoiser: operators.DenoisingOperator,
    probe: np.ndarray,
    tol: float = 1e-10,
    sigma_n: float = 1.0,
    max_finite_difference_pixels: int = 1024,
    max_eigenvalue_pixels: int = 4096,
    seed: int = 0,
) -> ConditionReport:
    """Measure the convergence conditions of a denoiser at a probe image.

    Args:
        denoiser (operators.DenoisingOperator): Denoiser to check
        probe (np.ndarray): Image at which the weight matrix or Jacobian is evaluated
        tol (float, optional): Tolerance for the pass/fail decisions. Defaults to 1e-10.
        sigma_n (float, optional): Noise level handed to the denoiser. Defaults to 1.0.
        max_finite_difference_pixels (int, optional): Largest probe for which the Jacobian is
            assembled by finite differences. Defaults to 1024.
        max_eigenvalue_pixels (int, optional): Largest probe for which the minimum eigenvalue is
            computed. Defaults to 4096.
        seed (int, optional): Seed of the power iteration start vector. Defaults to 0.

    Raises:
        ValueError: If the denoiser does not expose a weight matrix and the probe is too large for
            finite differencing

    Returns:
        ConditionReport: Measured deviations
    """
    probe = np.asarray(probe, dtype=np.float64)
    if denoiser.exposes_weight_matrix:
        matrix = denoiser.weight_matrix(probe, sigma_n).to_sparse()
        source = "weight_matrix"
        negative_threshold = 0.0
    else:
        if probe.size > max_finite_difference_pixels:
            raise ValueError(
                f"Probe with {probe.size} pixels is too large for finite differencing "
                f"(limit {max_finite_difference_pixels}), use a denoiser that exposes its "
                "weight matrix"
            )
        matrix = sparse.csr_matrix(_finite_difference_jacobian(denoiser, probe, sigma_n))
        source = "finite_differences"
        negative_threshold = tol

    matrix = sparse.csr_matrix(matrix)
    ones = np.ones(matrix.shape[0])
    row_sums = matrix @ ones
    column_sums = matrix.T @ ones
    difference = abs(matrix - matrix.T)
    asymmetry = float(difference.max()) if difference.nnz > 0 else 0.0
    negative_entries = int(np.count_nonzero(matrix.data < -negative_threshold))

    min_eigenvalue = None
    if matrix.shape[0] <= max_eigenvalue_pixels:
        symmetric_part = 0.5 * (matrix + matrix.T).toarray()
        min_eigenvalue = float(linalg.eigvalsh(symmetric_part, subset_by_index=[0, 0])[0])

    return ConditionReport(
        row_sum_deviation=float(np.max(np.abs(row_sums - 1.0))),
        column_sum_deviation=float(np.max(np.abs(column_sums - 1.0))),
        asymmetry=asymmetry,
        negative_entries=negative_entries,
        spectral_norm=_spectral_norm(matrix, seed),
        min_eigenvalue=min_eigenvalue,
        tolerance=tol,
        source=source,
    )


# --------------------------------------------------------------------------------------------------
def _finite_difference_jacobian(
    denoiser: operators.DenoisingOperator, probe: np.ndarray, sigma_n: float
) -> np.ndarray:
    """Jacobian of the denoiser at the probe by central differences, one column per pixel."""
    step = 1e-6 * max(1.0, float(np.max(np.abs(probe))))
    jacobian = np.zeros((probe.size, probe.size))
    flat_probe = probe.ravel()
    for column in range(probe.size):
        direction = np.zeros(probe.size)
        direction[column] = step
        forward = denoiser((flat_probe + direction).reshape(probe.shape), sigma_n)
        backward = denoiser((flat_probe - direction).reshape(probe.shape), sigma_n)
        jacobian[:, column] = (np.ravel(forward) - np.ravel(backward)) / (2.0 * step)
    return jacobian


def _spectral_norm(
    matrix: sparse.csr_matrix, seed: int, max_iterations: int = 500, rel_tol: float = 1e-13
) -> float:
    """Power iteration on W^T W."""
    rng = np.random.default_rng(seed)
    vector = rng.standard_normal(matrix.shape[1])
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(max_iterations):
        image = matrix @ vector
        new_estimate = float(np.linalg.norm(image))
        if new_estimate == 0:
            return 0.0
        vector = matrix.T @ image
        vector /= np.linalg.norm(vector)
        if abs(new_estimate - estimate) <= rel_tol * new_estimate:
            return new_estimate
        estimate = new_estimate
    return estimate
