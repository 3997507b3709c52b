"""Main component of the dsgpnp library.

This module implements the plug-and-play ADMM loop. It is generic in the forward model and the
prior: the loop only evaluates an inversion operator F and a denoising operator H, as prescribed by
the interfaces in `dsgpnp.core.operators`. One iteration performs, in this order,

    x̃ ← v̂ - u;  x̂ ← F(x̃; σλ);  ṽ ← x̂ + u;
    v̂ ← H(ṽ; σn);  u ← u + (x̂ - v̂).

Convergence is monitored through the normalized primal and dual residuals. During a run, raw norms
are recorded; the primal residual is normalized by the norm of the final reconstruction once the
run terminates.

Classes:
    PnPConfig: Parameters of the plug-and-play algorithm
    ResidualRecord: Raw residual norms of one iteration
    PnPState: Complete iterate of the algorithm
    ResidualLog: Normalized residual history of a run
    SigmaLambdaEstimate: Result of the sigma_lambda heuristic

Functions:
    pnp_iterate: Perform one plug-and-play iteration
    run_pnp: Run the plug-and-play algorithm
    primal_residual: Normalized primal residual of a state
    dual_residual: Normalized dual residual between consecutive states
    estimate_sigma_lambda: Choose sigma_lambda from a baseline reconstruction
"""

import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dsgpnp import utilities as utils
from dsgpnp.core import logging, operators


# ==================================================================================================
@dataclass
class PnPConfig:
    """Parameters of the plug-and-play algorithm.

    Attributes:
        beta (float): Unitless regularization strength, default is 1.0
        sigma_lambda (float): Augmented Lagrangian parameter, in units of the image, default is 1.0
        max_iterations (int): Number of iterations, default is 150
        primal_tolerance (float): Tolerance on the normalized primal residual, default is 0.0
        dual_tolerance (float): Tolerance on the normalized dual residual, default is 0.0
        weight_freeze_iteration (int | None): Iteration at which denoiser weights are frozen,
            `None` means never, default is None
        early_stopping (bool): Stop once both residuals are within tolerance, default is False
    """

    beta: float = 1.0
    sigma_lambda: float = 1.0
    max_iterations: int = 150
    primal_tolerance: float = 0.0
    dual_tolerance: float = 0.0
    weight_freeze_iteration: int | None = None
    early_stopping: bool = False

    def __post_init__(self) -> None:
        """Validate settings.

        Raises:
            ValueError: If any parameter is out of range
        """
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.sigma_lambda > 0:
            raise ValueError(f"sigma_lambda must be positive, got {self.sigma_lambda}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be nonnegative, got {self.max_iterations}")
        if self.primal_tolerance < 0 or self.dual_tolerance < 0:
            raise ValueError("Residual tolerances must be nonnegative")
        if self.weight_freeze_iteration is not None and self.weight_freeze_iteration < 0:
            raise ValueError(
                f"weight_freeze_iteration must be nonnegative or None, "
                f"got {self.weight_freeze_iteration}"
            )

    @property
    def sigma_n(self) -> float:
        """Assumed noise standard deviation of the denoiser, σn = sqrt(β) σλ."""
        return math.sqrt(self.beta) * self.sigma_lambda


# ==================================================================================================
@dataclass(frozen=True)
class ResidualRecord:
    """Raw residual norms after one iteration.

    Attributes:
        iteration (int): Iteration count after the update
        primal_norm (float): ||x̂ - v̂||
        x_hat_norm (float): ||x̂||
        dual_norm (float): ||v̂ - v̂_previous||
        u_norm (float): ||u||
    """

    iteration: int
    primal_norm: float
    x_hat_norm: float
    dual_norm: float
    u_norm: float


# ==================================================================================================
@dataclass(frozen=True)
class PnPState:
    """Complete iterate of the plug-and-play algorithm.

    States are values: `pnp_iterate` returns a new state and never modifies its input.

    Attributes:
        x_hat (np.ndarray): Reconstruction variable
        v_hat (np.ndarray): Splitting variable, output of the denoiser
        u (np.ndarray): Scaled dual variable
        k (int): Iteration counter
        residual_log (tuple[ResidualRecord, ...]): Raw residual norms of all iterations
    """

    x_hat: np.ndarray
    v_hat: np.ndarray
    u: np.ndarray
    k: int = 0
    residual_log: tuple[ResidualRecord, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        """Check consistency of shapes."""
        if not self.x_hat.shape == self.v_hat.shape == self.u.shape:
            raise ValueError(
                f"Inconsistent state shapes: x_hat {self.x_hat.shape}, v_hat {self.v_hat.shape}, "
                f"u {self.u.shape}"
            )

    @classmethod
    def initial(cls, x_init: np.ndarray) -> "PnPState":
        """Initial state with v̂ = x̂ = x_init and u = 0."""
        x_init = np.array(x_init, dtype=np.float64, copy=True)
        return cls(x_hat=x_init, v_hat=x_init.copy(), u=np.zeros_like(x_init))


# ==================================================================================================
class ResidualLog:
    """Normalized residual history of a run.

    The primal residual of every iteration is normalized by the norm of a reference image, by
    default the final reconstruction. The dual residual is normalized by the norm of the dual
    variable of the same iteration.

    Methods:
        rows: Rows (iteration, primal residual, dual residual)
        write_csv: Write the log as CSV
    """

    def __init__(
        self, records: tuple[ResidualRecord, ...], reference_norm: float | None = None
    ) -> None:
        """Constructor.

        Args:
            records (tuple[ResidualRecord, ...]): Raw residual norms
            reference_norm (float | None, optional): Norm to normalize primal residuals by, the
                norm of the last recorded x̂ if not given. Defaults to None.
        """
        self.records = tuple(records)
        if reference_norm is None:
            reference_norm = self.records[-1].x_hat_norm if self.records else 1.0
        self.reference_norm = reference_norm

    def __len__(self) -> int:
        """Number of recorded iterations."""
        return len(self.records)

    @property
    def primal(self) -> np.ndarray:
        """Normalized primal residuals."""
        return np.array(
            [_safe_ratio(record.primal_norm, self.reference_norm) for record in self.records]
        )

    @property
    def dual(self) -> np.ndarray:
        """Normalized dual residuals."""
        return np.array([_safe_ratio(record.dual_norm, record.u_norm) for record in self.records])

    @property
    def final_primal(self) -> float:
        """Normalized primal residual of the last iteration, NaN for an empty log."""
        return float(self.primal[-1]) if self.records else math.nan

    @property
    def final_dual(self) -> float:
        """Normalized dual residual of the last iteration, NaN for an empty log."""
        return float(self.dual[-1]) if self.records else math.nan

    def rows(self) -> list[tuple[int, float, float]]:
        """Rows (iteration, primal residual, dual residual)."""
        return [
            (record.iteration, float(primal), float(dual))
            for record, primal, dual in zip(self.records, self.primal, self.dual, strict=True)
        ]

    def write_csv(self, path: Path) -> None:
        """Write the log as CSV with header `iteration,primal_residual,dual_residual`."""
        utils.write_residual_csv(path, self.rows())


# ==================================================================================================
@dataclass(frozen=True)
class SigmaLambdaEstimate:
    """Result of the sigma_lambda heuristic.

    Attributes:
        value (float): Chosen sigma_lambda
        floored (bool): Whether the sample standard deviation fell below the floor
    """

    value: float
    floored: bool


# ==================================================================================================
def pnp_iterate(
    state: PnPState,
    inversion: operators.InversionOperator,
    denoiser: operators.DenoisingOperator,
    config: PnPConfig,
) -> PnPState:
    """Perform one plug-and-play iteration.

    Args:
        state (PnPState): Current iterate
        inversion (operators.InversionOperator): Inversion operator F
        denoiser (operators.DenoisingOperator): Denoising operator H, called with the current
            iteration index
        config (PnPConfig): Algorithm parameters

    Raises:
        ValueError: If an operator returns an image of the wrong shape

    Returns:
        PnPState: Next iterate, with counter incremented and residual norms appended
    """
    x_tilde = state.v_hat - state.u
    x_hat = _checked_output(inversion(x_tilde, config.sigma_lambda), state.u.shape, inversion)
    v_tilde = x_hat + state.u
    v_hat = _checked_output(
        denoiser(v_tilde, config.sigma_n, iteration=state.k), state.u.shape, denoiser
    )
    u = state.u + (x_hat - v_hat)

    record = ResidualRecord(
        iteration=state.k + 1,
        primal_norm=float(np.linalg.norm(x_hat - v_hat)),
        x_hat_norm=float(np.linalg.norm(x_hat)),
        dual_norm=float(np.linalg.norm(v_hat - state.v_hat)),
        u_norm=float(np.linalg.norm(u)),
    )
    return PnPState(
        x_hat=x_hat,
        v_hat=v_hat,
        u=u,
        k=state.k + 1,
        residual_log=(*state.residual_log, record),
    )


# --------------------------------------------------------------------------------------------------
def run_pnp(
    x_init: np.ndarray,
    inversion: operators.InversionOperator,
    denoiser: operators.DenoisingOperator,
    config: PnPConfig,
    logger: logging.PnPLogger | None = None,
) -> tuple[PnPState, ResidualLog]:
    """Run the plug-and-play algorithm.

    The splitting variable v̂ is initialized with `x_init`, the dual variable with zero. If a
    freeze iteration is configured and the denoiser exposes a weight matrix, the denoiser is
    instructed to freeze its weights at that iteration. The loop runs for `max_iterations`
    iterations, or until both residuals are within tolerance if early stopping is enabled.

    Args:
        x_init (np.ndarray): Initial image, e.g. a baseline reconstruction
        inversion (operators.InversionOperator): Inversion operator F
        denoiser (operators.DenoisingOperator): Denoising operator H
        config (PnPConfig): Algorithm parameters
        logger (logging.PnPLogger | None, optional): Logger for the run table. Defaults to None.

    Raises:
        ValueError: If the initial image is not finite
        FloatingPointError: If an iterate contains non-finite values

    Returns:
        tuple[PnPState, ResidualLog]: Final state and residual log, with primal residuals
            normalized by the final reconstruction
    """
    if not np.all(np.isfinite(x_init)):
        raise ValueError("Initial image contains non-finite values")
    if config.weight_freeze_iteration is not None and denoiser.exposes_weight_matrix:
        denoiser.freeze_at(config.weight_freeze_iteration)

    state = PnPState.initial(x_init)
    run_statistics = _init_statistics()
    start_time = time.time()
    if logger is not None:
        logger.log_header(run_statistics)

    try:
        for _ in range(config.max_iterations):
            state = pnp_iterate(state, inversion, denoiser, config)
            if not (
                np.all(np.isfinite(state.x_hat))
                and np.all(np.isfinite(state.v_hat))
                and np.all(np.isfinite(state.u))
            ):
                raise FloatingPointError(f"Non-finite values in plug-and-play iterate {state.k}")

            record = state.residual_log[-1]
            live_primal = _safe_ratio(record.primal_norm, record.x_hat_norm)
            live_dual = _safe_ratio(record.dual_norm, record.u_norm)
            if logger is not None and (
                state.k % logger.print_interval == 0 or state.k == config.max_iterations
            ):
                run_statistics["iteration"].set_value(state.k)
                run_statistics["time"].set_value(time.time() - start_time)
                run_statistics["primal"].set_value(live_primal)
                run_statistics["dual"].set_value(live_dual)
                logger.log_run_statistics(run_statistics)

            if (
                config.early_stopping
                and live_primal <= config.primal_tolerance
                and live_dual <= config.dual_tolerance
            ):
                if logger is not None:
                    logger.info(f"Residuals within tolerance after {state.k} iterations")
                break
    except BaseException:
        if logger is not None:
            logger.exception(f"Plug-and-play run aborted after {state.k} iterations")
        raise

    reference_norm = float(np.linalg.norm(state.x_hat))
    residual_log = ResidualLog(state.residual_log, reference_norm=reference_norm)
    return state, residual_log


# --------------------------------------------------------------------------------------------------
def primal_residual(state: PnPState, x_hat_ref: np.ndarray) -> float:
    """Normalized primal residual ||x̂ - v̂|| / ||x_ref||.

    Raises:
        ValueError: If the reference image is zero

    Returns:
        float: Normalized primal residual
    """
    reference_norm = float(np.linalg.norm(x_hat_ref))
    if reference_norm == 0:
        raise ValueError("degenerate reference: the reference image has zero norm")
    return float(np.linalg.norm(state.x_hat - state.v_hat)) / reference_norm


# --------------------------------------------------------------------------------------------------
def dual_residual(
    state_k: PnPState, state_km1: PnPState, u_k: np.ndarray | None = None
) -> float:
    """Normalized dual residual ||v̂_k - v̂_{k-1}|| / ||u_k||.

    If the dual variable is zero, the residual is 0 for an unchanged v̂ and +inf otherwise.

    Args:
        state_k (PnPState): State after iteration k
        state_km1 (PnPState): State after iteration k - 1
        u_k (np.ndarray | None, optional): Dual variable, defaults to `state_k.u`

    Raises:
        ValueError: If `state_k` is the initial state

    Returns:
        float: Normalized dual residual
    """
    if state_k.k < 1:
        raise ValueError("The dual residual is only defined from the first iteration on")
    u_k = state_k.u if u_k is None else u_k
    return _safe_ratio(
        float(np.linalg.norm(state_k.v_hat - state_km1.v_hat)), float(np.linalg.norm(u_k))
    )


# --------------------------------------------------------------------------------------------------
def estimate_sigma_lambda(
    baseline_recon: np.ndarray, data_range: float | None = None, floor_fraction: float = 1e-6
) -> SigmaLambdaEstimate:
    """Choose sigma_lambda as the sample standard deviation of a baseline reconstruction.

    The value is bounded from below by `floor_fraction` times the dynamic range of the data, which
    defaults to the largest absolute value of the baseline (or one for a zero baseline).

    Args:
        baseline_recon (np.ndarray): Approximate reconstruction, e.g. FBP or Shepard interpolation
        data_range (float | None, optional): Dynamic range of the data. Defaults to None.
        floor_fraction (float, optional): Floor relative to the dynamic range. Defaults to 1e-6.

    Raises:
        ValueError: If the baseline is not finite

    Returns:
        SigmaLambdaEstimate: Chosen value and whether it was floored
    """
    baseline_recon = np.asarray(baseline_recon, dtype=np.float64)
    if not np.all(np.isfinite(baseline_recon)):
        raise ValueError("Baseline reconstruction contains non-finite values")
    if data_range is None:
        data_range = float(np.max(np.abs(baseline_recon))) if baseline_recon.size else 0.0
        data_range = data_range if data_range > 0 else 1.0
    floor = floor_fraction * data_range
    standard_deviation = float(np.sqrt(np.var(baseline_recon)))
    if standard_deviation < floor:
        return SigmaLambdaEstimate(value=floor, floored=True)
    return SigmaLambdaEstimate(value=standard_deviation, floored=False)


# --------------------------------------------------------------------------------------------------
def _checked_output(output: np.ndarray, shape: tuple[int, ...], operator: object) -> np.ndarray:
    output = np.asarray(output, dtype=np.float64)
    if output.shape != shape:
        raise ValueError(
            f"Operator {type(operator).__name__} returned shape {output.shape}, expected {shape}"
        )
    return output


def _safe_ratio(numerator: float, denominator: float) -> float:
    if denominator == 0:
        return 0.0 if numerator == 0 else math.inf
    return numerator / denominator


def _init_statistics() -> dict[str, logging.Statistic]:
    run_statistics = {}
    run_statistics["iteration"] = logging.Statistic(f"{'Iteration':<12}", "<12d")
    run_statistics["time"] = logging.Statistic(f"{'Time[s]':<12}", "<12.3e")
    run_statistics["primal"] = logging.Statistic(f"{'Primal res.':<12}", "<12.3e")
    run_statistics["dual"] = logging.Statistic(f"{'Dual res.':<12}", "<12.3e")
    return run_statistics
