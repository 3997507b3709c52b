import os
import stat

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dsgpnp.components import denoisers, nlm
from dsgpnp.core import logging, operators, pnp

PARAMS = nlm.NlmParams(patch_radius=1, search_radius=2)

posix_only = pytest.mark.skipif(os.name != "posix", reason="plugin scripts require a POSIX shell")


def _image(seed: int, shape=(8, 8)) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 100.0, size=shape)


def _script(path, body: str):
    path.write_text(f"#!/bin/sh\n{body}\n")
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


# ==================================================================================================
@pytest.mark.parametrize(
    ("selector", "expected_type"),
    [
        ("nlm", denoisers.NLMDenoiser),
        ("dsg-nlm", denoisers.DSGNLMDenoiser),
        ("identity", denoisers.IdentityDenoiser),
        ("external:/opt/bm3d", denoisers.ExternalDenoiser),
    ],
)
def test_build_denoiser_from_selector(selector, expected_type):
    assert isinstance(denoisers.build_denoiser(selector, PARAMS), expected_type)


def test_build_denoiser_rejects_unknown_selector():
    with pytest.raises(ValueError, match="Unknown denoiser"):
        denoisers.build_denoiser("bm3d", PARAMS)


# --------------------------------------------------------------------------------------------------
def test_weighted_denoiser_applies_its_weight_matrix():
    image = _image(0)
    denoiser = denoisers.DSGNLMDenoiser(PARAMS)
    expected = nlm.apply_weights(denoiser.weight_matrix(image, 20.0), image)
    assert_array_equal(denoiser(image, 20.0), expected)
    assert denoiser.exposes_weight_matrix


def test_frozen_denoiser_is_linear():
    denoiser = denoisers.DSGNLMDenoiser(PARAMS, freeze_at=0)
    probe = _image(1)
    denoiser(probe, 20.0, iteration=0)
    assert denoiser.policy.frozen

    rng = np.random.default_rng(2)
    point, direction = rng.standard_normal((2, *probe.shape))
    step = 1e-3
    derivative = (
        denoiser(point + step * direction, 20.0, iteration=5)
        - denoiser(point - step * direction, 20.0, iteration=5)
    ) / (2 * step)
    expected = nlm.apply_weights(denoiser.weight_matrix(point, 20.0), direction)
    assert_allclose(derivative, expected, rtol=1e-6, atol=1e-9)


def test_frozen_denoiser_is_bit_identical_across_calls():
    denoiser = denoisers.NLMDenoiser(PARAMS, freeze_at=2)
    for iteration in range(3):
        denoiser(_image(iteration), 20.0, iteration=iteration)
    probe = _image(10)
    first = denoiser(probe, 20.0, iteration=12)
    second = denoiser(probe, 5.0, iteration=40)
    assert_array_equal(first, second)


def test_freeze_at_resets_the_policy():
    denoiser = denoisers.DSGNLMDenoiser(PARAMS, freeze_at=0)
    denoiser(_image(0), 20.0)
    assert denoiser.policy.frozen
    denoiser.freeze_at(3)
    assert not denoiser.policy.frozen
    assert denoiser.policy.freeze_at == 3


def test_plug_and_play_freezes_denoiser_weights():
    image = _image(3)
    denoiser = denoisers.DSGNLMDenoiser(PARAMS)
    config = pnp.PnPConfig(max_iterations=4, weight_freeze_iteration=2, sigma_lambda=10.0)
    pnp.run_pnp(image, operators.IdentityInversion(), denoiser, config)
    assert denoiser.policy.frozen
    assert denoiser.policy.freeze_at == 2


def test_freeze_event_is_logged(tmp_path):
    settings = logging.LoggerSettings(
        do_printing=False,
        logfile_path=tmp_path / "run.log",
        debugfile_path=tmp_path / "debug.log",
    )
    logger = logging.PnPLogger(settings, name="freeze-test")
    denoiser = denoisers.DSGNLMDenoiser(PARAMS, freeze_at=1, logger=logger)
    denoiser(_image(0), 20.0, iteration=0)
    denoiser(_image(0), 20.0, iteration=1)
    logger.close()
    assert "weights frozen at iteration 1" in (tmp_path / "debug.log").read_text()
    assert "frozen" not in (tmp_path / "run.log").read_text()


# --------------------------------------------------------------------------------------------------
@posix_only
def test_external_denoiser_exchanges_rasters(tmp_path):
    script = _script(tmp_path / "copy.sh", 'cp "$1" "$3"\ncp "$1.hdr" "$3.hdr"')
    denoiser = denoisers.build_denoiser(f"external:{script}", PARAMS)
    image = _image(4, (5, 7)).astype(np.float32).astype(np.float64)
    result = denoiser(image, 3.0)
    assert result.shape == image.shape
    assert_array_equal(result, image)
    assert not denoiser.exposes_weight_matrix


@posix_only
def test_external_denoiser_receives_noise_level(tmp_path):
    record = tmp_path / "sigma.txt"
    script = _script(
        tmp_path / "record.sh", f'echo "$2" > "{record}"\ncp "$1" "$3"\ncp "$1.hdr" "$3.hdr"'
    )
    denoisers.ExternalDenoiser(script)(np.zeros((2, 2)), 0.25)
    assert float(record.read_text()) == 0.25


@posix_only
def test_external_denoiser_failure_is_reported(tmp_path):
    script = _script(tmp_path / "fail.sh", "echo broken >&2\nexit 3")
    with pytest.raises(RuntimeError, match="exit code 3"):
        denoisers.ExternalDenoiser(script)(np.zeros((2, 2)), 1.0)


@posix_only
def test_external_denoiser_rejects_reshaped_output(tmp_path):
    script = _script(tmp_path / "reshape.sh", 'cp "$1" "$3"\necho "raster 8 2" > "$3.hdr"')
    with pytest.raises(ValueError, match=r"returned \(2, 8\), expected \(4, 4\)"):
        denoisers.ExternalDenoiser(script)(np.ones((4, 4)), 1.0)


def test_external_denoiser_cannot_expose_weights():
    denoiser = denoisers.ExternalDenoiser("/opt/bm3d")
    with pytest.raises(NotImplementedError):
        denoiser.weight_matrix(np.zeros((2, 2)), 1.0)
