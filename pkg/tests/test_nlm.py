import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dsgpnp.components import nlm


def _random_image(seed: int, shape=(16, 16)) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 255.0, size=shape)


# ==================================================================================================
def test_params_validation():
    assert nlm.NlmParams(patch_radius=2).patch_size == 5
    assert nlm.NlmParams().patch_pixel_count(3) == 125
    with pytest.raises(ValueError):
        nlm.NlmParams(patch_radius=-1)
    with pytest.raises(ValueError):
        nlm.NlmParams(search_radius=0)
    with pytest.raises(ValueError):
        nlm.NlmParams(dimensionality=4)


def test_search_offsets_are_lexicographically_positive():
    offsets = nlm.search_offsets((5, 5), 1)
    assert offsets == ((0, 1), (1, -1), (1, 0), (1, 1))
    assert nlm.search_offsets((3,), 10) == ((1,), (2,))


def test_pair_slices_select_pairs_within_lattice():
    source, target = nlm.pair_slices((4, 5), (1, -2))
    assert source == (slice(0, 3), slice(2, 5))
    assert target == (slice(1, 4), slice(0, 3))


# --------------------------------------------------------------------------------------------------
def test_raw_weight_of_an_edge_pair():
    image = np.array([0.0, 0.0, 10.0, 0.0, 0.0])
    params = nlm.NlmParams(patch_radius=0, search_radius=2)
    matrix = nlm.nlm_raw_weights(image, params, sigma_n=1.0).to_sparse().toarray()
    assert matrix[1, 2] == pytest.approx(math.exp(-50.0))
    assert matrix[2, 1] == matrix[1, 2]
    assert matrix[0, 1] == 1.0
    assert matrix[0, 3] == 0.0
    assert_array_equal(np.diag(matrix), np.ones(5))


def test_raw_weights_reject_invalid_input():
    params = nlm.NlmParams(dimensionality=2)
    with pytest.raises(ValueError):
        nlm.nlm_raw_weights(np.zeros(5), params)
    with pytest.raises(ValueError):
        nlm.nlm_raw_weights(np.array([[0.0, np.nan]]), nlm.NlmParams())
    with pytest.raises(ValueError):
        nlm.nlm_raw_weights(np.zeros((3, 3)), nlm.NlmParams(), sigma_n=0.0)


def test_raw_weights_do_not_depend_on_thread_count():
    image = _random_image(0)
    serial = nlm.nlm_raw_weights(image, nlm.NlmParams(patch_radius=1, search_radius=3), 50.0)
    threaded = nlm.nlm_raw_weights(
        image, nlm.NlmParams(patch_radius=1, search_radius=3, threads=4), 50.0
    )
    for serial_band, threaded_band in zip(serial.bands, threaded.bands, strict=True):
        assert_array_equal(serial_band, threaded_band)


# --------------------------------------------------------------------------------------------------
def test_nlm_weights_of_constant_image_average_the_window():
    image = np.full((9, 9), 3.0)
    weights = nlm.nlm_weights(image, nlm.NlmParams(patch_radius=1, search_radius=1))
    matrix = weights.to_sparse().toarray()
    center = 4 * 9 + 4
    row = matrix[center]
    assert np.count_nonzero(row) == 9
    assert_allclose(row[row > 0], np.full(9, 1.0 / 9.0))
    assert_allclose(weights.row_sums(), np.ones((9, 9)))
    assert not weights.is_symmetric


def test_dsg_weights_of_constant_signal_are_uniform():
    weights = nlm.dsg_nlm_weights(np.full(8, 2.0), nlm.NlmParams(patch_radius=1, search_radius=7))
    assert_allclose(weights.to_sparse().toarray(), np.full((8, 8), 1.0 / 8.0), atol=1e-15)


def test_dsg_weights_of_two_pixel_image():
    weights = nlm.dsg_nlm_weights(np.array([1.0, 1.0]), nlm.NlmParams(search_radius=1))
    matrix = weights.to_sparse().toarray()
    assert_allclose(matrix, [[0.5, 0.5], [0.5, 0.5]])
    assert_allclose(nlm.apply_weights(weights, np.array([2.0, 4.0])), [3.0, 3.0])


def test_apply_weights_rejects_size_mismatch():
    weights = nlm.WeightMatrix.identity((2, 2))
    with pytest.raises(ValueError, match="does not match"):
        nlm.apply_weights(weights, np.zeros(5))


def test_triplets_store_every_symmetric_pair_once():
    weights = nlm.dsg_nlm_weights(_random_image(1, (4, 4)), nlm.NlmParams(1, 1), 60.0)
    rows, cols, values = weights.triplets()
    assert np.all(rows <= cols)
    assert np.unique(np.stack([rows, cols]), axis=1).shape[1] == rows.size
    dense = np.zeros((16, 16))
    dense[rows, cols] = values
    dense = dense + np.triu(dense, 1).T
    assert_allclose(dense, weights.to_sparse().toarray())


# --------------------------------------------------------------------------------------------------
@pytest.mark.parametrize("noise_scale", [0.1, 1.0, 10.0])
@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_dsg_weights_are_symmetric_and_doubly_stochastic(seed, noise_scale):
    image = _random_image(seed)
    sigma_n = noise_scale * float(np.std(image))
    weights = nlm.dsg_nlm_weights(image, nlm.NlmParams(patch_radius=1, search_radius=4), sigma_n)
    matrix = weights.to_sparse()
    assert abs(matrix - matrix.T).max() == 0.0
    assert_allclose(weights.row_sums(), 1.0, atol=1e-10)
    assert_allclose(weights.column_sums(), 1.0, atol=1e-10)
    assert matrix.data.min() >= 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_plain_nlm_weights_are_not_column_stochastic(seed):
    image = _random_image(seed)
    weights = nlm.nlm_weights(image, nlm.NlmParams(patch_radius=1, search_radius=4), 30.0)
    assert_allclose(weights.row_sums(), 1.0, atol=1e-12)
    assert np.max(np.abs(weights.column_sums() - 1.0)) > 1e-6


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_dsg_weights_are_non_expansive(seed):
    image = _random_image(seed)
    weights = nlm.dsg_nlm_weights(image, nlm.NlmParams(patch_radius=1, search_radius=3), 70.0)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        a, b = rng.standard_normal((2, *image.shape))
        difference = nlm.apply_weights(weights, a) - nlm.apply_weights(weights, b)
        assert np.linalg.norm(difference) <= (1 + 1e-9) * np.linalg.norm(a - b)


def test_dsg_weights_commute_with_mirroring():
    image = _random_image(5)
    params = nlm.NlmParams(patch_radius=1, search_radius=3)
    weights = nlm.dsg_nlm_weights(image, params, 60.0)
    mirrored_weights = nlm.dsg_nlm_weights(image[:, ::-1], params, 60.0)
    assert_allclose(
        nlm.apply_weights(mirrored_weights, image[:, ::-1]),
        nlm.apply_weights(weights, image)[:, ::-1],
        rtol=1e-10,
        atol=1e-8,
    )


def test_dsg_weights_reduce_noise_on_piecewise_constant_image():
    truth = np.zeros((32, 32))
    truth[8:24, 8:24] = 100.0
    noisy = truth + np.random.default_rng(0).normal(0.0, 10.0, size=truth.shape)
    weights = nlm.dsg_nlm_weights(noisy, nlm.NlmParams(patch_radius=1, search_radius=3), 10.0)
    denoised = nlm.apply_weights(weights, noisy)
    assert np.mean((denoised - truth) ** 2) < np.mean((noisy - truth) ** 2)


# --------------------------------------------------------------------------------------------------
def test_freeze_at_zero_reuses_initial_weights():
    params = nlm.NlmParams(patch_radius=1, search_radius=2)
    policy = nlm.FreezePolicy(freeze_at=0)
    first, second = _random_image(2, (8, 8)), _random_image(3, (8, 8))
    nlm.denoise(first, params, policy, iteration_index=0, sigma_n=40.0)
    assert policy.frozen
    expected = nlm.apply_weights(nlm.dsg_nlm_weights(first, params, 40.0), second)
    for iteration in range(1, 4):
        assert_array_equal(nlm.denoise(second, params, policy, iteration, sigma_n=40.0), expected)


def test_weights_adapt_until_the_freeze_iteration():
    params = nlm.NlmParams(patch_radius=1, search_radius=2)
    policy = nlm.FreezePolicy(freeze_at=12)
    image = _random_image(4, (8, 8))
    for iteration in range(12):
        nlm.denoise(image, params, policy, iteration, sigma_n=40.0)
        assert not policy.frozen
    nlm.denoise(image, params, policy, 12, sigma_n=40.0)
    assert policy.frozen
    assert policy.cached is not None


def test_never_freezing_policy_stays_adaptive():
    params = nlm.NlmParams(patch_radius=1, search_radius=2)
    policy = nlm.FreezePolicy()
    for iteration in range(3):
        nlm.denoise(_random_image(iteration, (6, 6)), params, policy, iteration, sigma_n=40.0)
    assert not policy.frozen


def test_constant_image_is_left_unchanged():
    params = nlm.NlmParams(patch_radius=1, search_radius=2)
    image = np.full((7, 7), 42.0)
    assert_allclose(nlm.denoise(image, params, nlm.FreezePolicy(), 0, sigma_n=1.0), image)


def test_frozen_policy_without_weights_is_an_error():
    with pytest.raises(RuntimeError):
        nlm.denoise(np.zeros((3, 3)), nlm.NlmParams(), nlm.FreezePolicy(frozen=True), 0)
