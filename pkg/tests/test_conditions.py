import numpy as np
import pytest

from dsgpnp.components import denoisers, nlm
from dsgpnp.core import conditions, operators

PARAMS = nlm.NlmParams(patch_radius=1, search_radius=3)


class MeanBlendDenoiser(operators.DenoisingOperator):
    """Linear denoiser 0.5 v + 0.5 mean(v), symmetric and doubly stochastic."""

    def __call__(self, v_tilde, sigma_n, iteration=0):  # noqa: ARG002
        return 0.5 * v_tilde + 0.5 * np.mean(v_tilde)


class ScalingDenoiser(operators.DenoisingOperator):
    def __call__(self, v_tilde, sigma_n, iteration=0):  # noqa: ARG002
        return 1.5 * v_tilde


class OpaqueDenoiser(operators.DenoisingOperator):
    def __init__(self, denoiser):
        self._denoiser = denoiser

    def __call__(self, v_tilde, sigma_n, iteration=0):
        return self._denoiser(v_tilde, sigma_n, iteration)


def _probe(seed: int, size: int = 12) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 255.0, size=(size, size))


# ==================================================================================================
def test_identity_passes_with_unit_spectral_norm():
    report = conditions.verify_operator_conditions(denoisers.IdentityDenoiser(), _probe(0))
    assert report.passed
    assert report.row_sum_deviation == 0.0
    assert report.column_sum_deviation == 0.0
    assert report.asymmetry == 0.0
    assert report.spectral_norm == pytest.approx(1.0, abs=1e-12)
    assert report.min_eigenvalue == pytest.approx(1.0)
    assert report.source == "weight_matrix"


@pytest.mark.parametrize("seed", range(4))
def test_dsg_nlm_passes_all_checks(seed):
    denoiser = denoisers.DSGNLMDenoiser(PARAMS)
    probe = _probe(seed)
    report = conditions.verify_operator_conditions(denoiser, probe, sigma_n=float(np.std(probe)))
    assert report.passed, report.as_dict()
    assert report.spectral_norm <= 1.0 + 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_plain_nlm_fails_column_stochasticity(seed):
    denoiser = denoisers.NLMDenoiser(PARAMS)
    probe = _probe(seed)
    report = conditions.verify_operator_conditions(denoiser, probe, sigma_n=float(np.std(probe)))
    assert report.checks["row_stochastic"]
    assert not report.checks["column_stochastic"]
    assert report.column_sum_deviation > 1e-6
    assert not report.passed


def test_min_eigenvalue_is_only_computed_for_small_probes():
    report = conditions.verify_operator_conditions(
        denoisers.IdentityDenoiser(), _probe(1), max_eigenvalue_pixels=16
    )
    assert report.min_eigenvalue is None
    assert report.as_dict()["min_eigenvalue"] == "n/a"


# --------------------------------------------------------------------------------------------------
def test_finite_differences_for_opaque_denoisers():
    report = conditions.verify_operator_conditions(MeanBlendDenoiser(), _probe(2, 4), tol=1e-6)
    assert report.source == "finite_differences"
    assert report.passed
    assert report.spectral_norm == pytest.approx(1.0, abs=1e-6)
    assert report.min_eigenvalue == pytest.approx(0.5, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_finite_difference_jacobian_of_frozen_dsg_nlm_is_its_weight_matrix(seed):
    probe = _probe(seed, 6)
    sigma_n = float(np.std(probe))
    denoiser = denoisers.DSGNLMDenoiser(PARAMS, freeze_at=0)
    denoiser(probe, sigma_n, iteration=0)
    weights = denoiser.weight_matrix(probe, sigma_n).to_sparse().toarray()

    jacobian = np.zeros((probe.size, probe.size))
    for column in range(probe.size):
        direction = np.zeros(probe.size)
        direction[column] = 1.0
        direction = direction.reshape(probe.shape)
        forward = denoiser(probe + direction, sigma_n, iteration=3)
        backward = denoiser(probe - direction, sigma_n, iteration=3)
        jacobian[:, column] = ((forward - backward) / 2.0).ravel()
    np.testing.assert_allclose(jacobian, weights, atol=1e-9)

    report = conditions.verify_operator_conditions(
        OpaqueDenoiser(denoiser), probe, sigma_n=sigma_n, tol=1e-7
    )
    assert report.source == "finite_differences"
    assert report.passed, report.as_dict()


def test_finite_differences_detect_expansive_denoiser():
    report = conditions.verify_operator_conditions(ScalingDenoiser(), _probe(3, 4), tol=1e-6)
    assert not report.checks["nonexpansive"]
    assert not report.checks["row_stochastic"]
    assert report.checks["symmetric"]
    assert report.spectral_norm == pytest.approx(1.5, rel=1e-6)


def test_finite_differences_are_size_capped():
    with pytest.raises(ValueError, match="too large"):
        conditions.verify_operator_conditions(MeanBlendDenoiser(), _probe(0, 40))


def test_report_dictionary_lists_every_check():
    report = conditions.verify_operator_conditions(denoisers.IdentityDenoiser(), _probe(0, 4))
    entries = report.as_dict()
    for name in report.checks:
        assert entries[f"pass_{name}"] is True
    assert entries["pass"] is True
    assert entries["tolerance"] == 1e-10
