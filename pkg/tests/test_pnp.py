import math
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dsgpnp.components import denoisers
from dsgpnp.core import operators, pnp


class QuadraticInversion(operators.InversionOperator):
    """Proximal map of l(x) = ||x - target||² / 2."""

    def __init__(self, target: float) -> None:
        self.target = target

    def __call__(self, x_tilde, sigma_lambda):
        precision = 1.0 / sigma_lambda**2
        return (self.target + precision * x_tilde) / (1.0 + precision)


class HalvingDenoiser(operators.DenoisingOperator):
    def __call__(self, v_tilde, sigma_n, iteration=0):  # noqa: ARG002
        return 0.5 * v_tilde


class WrongShapeDenoiser(operators.DenoisingOperator):
    def __call__(self, v_tilde, sigma_n, iteration=0):  # noqa: ARG002
        return np.zeros(v_tilde.size + 1)


# ==================================================================================================
def test_config_sigma_n_binds_beta_and_sigma_lambda():
    config = pnp.PnPConfig(beta=4.0, sigma_lambda=1.5)
    assert config.sigma_n == pytest.approx(3.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"beta": 0.0},
        {"sigma_lambda": -1.0},
        {"max_iterations": -1},
        {"primal_tolerance": -1e-3},
        {"weight_freeze_iteration": -2},
    ],
)
def test_config_rejects_invalid_settings(kwargs):
    with pytest.raises(ValueError):
        pnp.PnPConfig(**kwargs)


def test_state_rejects_inconsistent_shapes():
    with pytest.raises(ValueError, match="Inconsistent state shapes"):
        pnp.PnPState(x_hat=np.zeros(3), v_hat=np.zeros(3), u=np.zeros(4))


# --------------------------------------------------------------------------------------------------
def test_identity_operators_leave_state_fixed():
    x0 = np.arange(12.0).reshape(3, 4)
    state = pnp.PnPState.initial(x0)
    config = pnp.PnPConfig()
    new_state = pnp.pnp_iterate(
        state, operators.IdentityInversion(), denoisers.IdentityDenoiser(), config
    )
    assert_array_equal(new_state.x_hat, x0)
    assert_array_equal(new_state.v_hat, x0)
    assert_array_equal(new_state.u, np.zeros_like(x0))
    assert new_state.k == 1
    assert state.k == 0
    assert len(state.residual_log) == 0


def test_iteration_applies_updates_in_order():
    state = pnp.PnPState.initial(np.zeros(1))
    inversion, denoiser = QuadraticInversion(4.0), HalvingDenoiser()
    config = pnp.PnPConfig(sigma_lambda=1.0)

    state = pnp.pnp_iterate(state, inversion, denoiser, config)
    assert_allclose(state.x_hat, [2.0])
    assert_allclose(state.v_hat, [1.0])
    assert_allclose(state.u, [1.0])

    state = pnp.pnp_iterate(state, inversion, denoiser, config)
    assert_allclose(state.x_hat, [2.0])
    assert_allclose(state.v_hat, [1.5])
    assert_allclose(state.u, [1.5])


def test_quadratic_likelihood_with_identity_denoiser_converges_to_minimizer():
    config = pnp.PnPConfig(sigma_lambda=1.0, max_iterations=80)
    state, _ = pnp.run_pnp(
        np.zeros(1), QuadraticInversion(4.0), denoisers.IdentityDenoiser(), config
    )
    assert_allclose(state.x_hat, [4.0], atol=1e-12)


def test_zero_iterations_return_initial_state():
    x0 = np.linspace(0.0, 1.0, 5)
    config = pnp.PnPConfig(max_iterations=0)
    state, residual_log = pnp.run_pnp(
        x0, operators.IdentityInversion(), denoisers.IdentityDenoiser(), config
    )
    assert state.k == 0
    assert_array_equal(state.x_hat, x0)
    assert_array_equal(state.v_hat, x0)
    assert_array_equal(state.u, np.zeros_like(x0))
    assert len(residual_log) == 0
    assert math.isnan(residual_log.final_primal)


def test_run_rejects_non_finite_initialization():
    config = pnp.PnPConfig(max_iterations=1)
    with pytest.raises(ValueError, match="non-finite"):
        pnp.run_pnp(
            np.array([0.0, np.nan]),
            operators.IdentityInversion(),
            denoisers.IdentityDenoiser(),
            config,
        )


def test_operator_with_wrong_output_shape_is_reported():
    config = pnp.PnPConfig(max_iterations=1)
    with pytest.raises(ValueError, match="WrongShapeDenoiser"):
        pnp.run_pnp(np.zeros(3), operators.IdentityInversion(), WrongShapeDenoiser(), config)


def test_early_stopping_terminates_before_iteration_limit():
    config = pnp.PnPConfig(
        sigma_lambda=1.0,
        max_iterations=1000,
        primal_tolerance=1e-8,
        dual_tolerance=1e-8,
        early_stopping=True,
    )
    state, residual_log = pnp.run_pnp(
        np.zeros(1), QuadraticInversion(4.0), denoisers.IdentityDenoiser(), config
    )
    assert len(residual_log) < config.max_iterations
    assert state.k == len(residual_log)
    assert_allclose(state.x_hat, [4.0])


# --------------------------------------------------------------------------------------------------
def test_residual_log_is_normalized_by_final_reconstruction():
    x0 = np.random.default_rng(3).uniform(0.0, 1.0, size=6)
    inversion, denoiser = QuadraticInversion(2.0), HalvingDenoiser()
    config = pnp.PnPConfig(sigma_lambda=0.7, max_iterations=8)

    states = [pnp.PnPState.initial(x0)]
    for _ in range(config.max_iterations):
        states.append(pnp.pnp_iterate(states[-1], inversion, denoiser, config))
    final_state, residual_log = pnp.run_pnp(x0, inversion, denoiser, config)

    final_norm = np.linalg.norm(final_state.x_hat)
    expected = [np.linalg.norm(state.x_hat - state.v_hat) / final_norm for state in states[1:]]
    assert_allclose(residual_log.primal, expected, rtol=1e-12)
    assert_allclose(residual_log.final_primal, pnp.primal_residual(final_state, final_state.x_hat))
    expected_dual = [
        pnp.dual_residual(current, previous)
        for previous, current in zip(states[:-1], states[1:], strict=True)
    ]
    assert_allclose(residual_log.dual, expected_dual, rtol=1e-12)
    assert [row[0] for row in residual_log.rows()] == list(range(1, 9))


def test_residual_log_writes_csv(tmp_path):
    config = pnp.PnPConfig(sigma_lambda=1.0, max_iterations=3)
    _, residual_log = pnp.run_pnp(np.ones(2), QuadraticInversion(3.0), HalvingDenoiser(), config)
    path = tmp_path / "residuals.csv"
    residual_log.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,primal_residual,dual_residual"
    assert len(lines) == 4
    assert lines[1].startswith("1,")


# --------------------------------------------------------------------------------------------------
def test_primal_residual_example():
    state = pnp.PnPState(x_hat=np.array([3.0, 0.0]), v_hat=np.zeros(2), u=np.zeros(2))
    assert pnp.primal_residual(state, np.array([3.0, 0.0])) == pytest.approx(1.0)


def test_primal_residual_rejects_zero_reference():
    state = pnp.PnPState.initial(np.ones(2))
    with pytest.raises(ValueError, match="degenerate reference"):
        pnp.primal_residual(state, np.zeros(2))


def test_dual_residual_example():
    previous = pnp.PnPState(x_hat=np.zeros(2), v_hat=np.zeros(2), u=np.zeros(2))
    current = pnp.PnPState(
        x_hat=np.zeros(2), v_hat=np.array([1.0, 0.0]), u=np.array([2.0, 0.0]), k=1
    )
    assert pnp.dual_residual(current, previous) == pytest.approx(0.5)


def test_dual_residual_with_zero_dual_variable():
    previous = pnp.PnPState(x_hat=np.zeros(2), v_hat=np.zeros(2), u=np.zeros(2))
    unchanged = pnp.PnPState(x_hat=np.zeros(2), v_hat=np.zeros(2), u=np.zeros(2), k=1)
    changed = pnp.PnPState(x_hat=np.zeros(2), v_hat=np.ones(2), u=np.zeros(2), k=1)
    assert pnp.dual_residual(unchanged, previous) == 0.0
    assert pnp.dual_residual(changed, previous) == math.inf


def test_dual_residual_requires_an_iteration():
    state = pnp.PnPState.initial(np.ones(2))
    with pytest.raises(ValueError):
        pnp.dual_residual(state, state)


# --------------------------------------------------------------------------------------------------
def test_sigma_lambda_is_sample_standard_deviation():
    baseline = np.concatenate([np.zeros(50), np.ones(50)])
    estimate = pnp.estimate_sigma_lambda(baseline)
    assert estimate.value == pytest.approx(0.5)
    assert not estimate.floored


def test_sigma_lambda_of_constant_baseline_is_floored():
    estimate = pnp.estimate_sigma_lambda(np.full((8, 8), 5.0))
    assert estimate.floored
    assert estimate.value == pytest.approx(5e-6)
    assert pnp.estimate_sigma_lambda(np.zeros(4)).value == pytest.approx(1e-6)


def test_sigma_lambda_rejects_non_finite_baseline():
    with pytest.raises(ValueError):
        pnp.estimate_sigma_lambda(np.array([1.0, np.inf]))


# --------------------------------------------------------------------------------------------------
def test_core_does_not_import_components():
    code = (
        "import sys\n"
        "import dsgpnp.core.conditions, dsgpnp.core.operators, dsgpnp.core.pnp\n"
        "loaded = [name for name in sys.modules if name.startswith('dsgpnp.components')]\n"
        "assert not loaded, loaded\n"
    )
    completed = subprocess.run(  # noqa: S603
        [sys.executable, "-c", code], capture_output=True, text=True, check=False
    )
    assert completed.returncode == 0, completed.stderr
