import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dsgpnp import utilities as utils


# ==================================================================================================
def test_spawned_seeds_are_deterministic_and_distinct():
    seeds = utils.spawn_seeds(42, 4)
    assert seeds == utils.spawn_seeds(42, 4)
    assert len(set(seeds)) == 4
    assert seeds != utils.spawn_seeds(43, 4)


def test_spawn_seeds_rejects_negative_seed():
    with pytest.raises(AssertionError):
        utils.spawn_seeds(-1, 2)


# --------------------------------------------------------------------------------------------------
def test_raster_layout(tmp_path):
    path = tmp_path / "image.raw"
    utils.write_raster(path, np.zeros((2, 3)))
    assert utils.header_path(path).name == "image.raw.hdr"
    assert utils.header_path(path).read_text() == "raster 3 2\n"
    assert path.stat().st_size == 24


def test_raster_payload_is_little_endian_float32(tmp_path):
    path = tmp_path / "image.raw"
    utils.write_raster(path, np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert path.stat().st_size == 16
    assert path.read_bytes()[:4] == np.float32(1.0).tobytes()
    assert_array_equal(np.fromfile(path, dtype="<f4"), [1.0, 2.0, 3.0, 4.0])


def test_raster_round_trip_in_float32(tmp_path):
    image = np.random.default_rng(0).uniform(0.0, 255.0, size=(5, 7))
    utils.write_raster(tmp_path / "image.raw", image)
    loaded = utils.read_raster(tmp_path / "image.raw")
    assert loaded.dtype == np.float32
    assert_array_equal(loaded, image.astype(np.float32))


def test_volume_raster_round_trip(tmp_path):
    volume = np.arange(24.0).reshape(2, 3, 4)
    utils.write_raster(tmp_path / "volume.raw", volume)
    assert utils.header_path(tmp_path / "volume.raw").read_text() == "raster 4 3 2\n"
    assert_array_equal(utils.read_raster(tmp_path / "volume.raw"), volume)


def test_signal_raster_is_read_as_single_row(tmp_path):
    utils.write_raster(tmp_path / "signal.raw", np.arange(5.0))
    loaded = utils.read_raster(tmp_path / "signal.raw")
    assert loaded.shape == (1, 5)
    assert_array_equal(loaded[0], np.arange(5.0))


def test_raster_size_mismatch(tmp_path):
    path = tmp_path / "image.raw"
    utils.write_raster(path, np.zeros((4, 4)))
    path.write_bytes(path.read_bytes()[:63])
    with pytest.raises(ValueError, match="size mismatch"):
        utils.read_raster(path)


def test_raster_rejects_malformed_header_and_high_dimensions(tmp_path):
    path = tmp_path / "image.raw"
    utils.write_raster(path, np.zeros((2, 2)))
    utils.header_path(path).write_text("image 2 2\n")
    with pytest.raises(ValueError, match="Malformed"):
        utils.read_raster(path)
    with pytest.raises(ValueError):
        utils.write_raster(path, np.zeros((1, 1, 1, 1)))


# --------------------------------------------------------------------------------------------------
def test_mask_file_layout(tmp_path):
    path = tmp_path / "mask.txt"
    utils.write_mask_file(path, (2, 3), np.array([0, 4]), np.array([1.5, 2.0]))
    assert path.read_text() == "mask 3 2 2\n0 1.5\n4 2\n"
    shape, indices, values = utils.read_mask_file(path)
    assert shape == (2, 3)
    assert_array_equal(indices, [0, 4])
    assert_array_equal(values, [1.5, 2.0])


def test_mask_file_count_mismatch(tmp_path):
    path = tmp_path / "mask.txt"
    path.write_text("mask 3 2 3\n0 1.0\n")
    with pytest.raises(ValueError, match="announces 3 samples"):
        utils.read_mask_file(path)


def test_sinogram_round_trip(tmp_path):
    angles = np.array([-60.0, 0.0, 59.5])
    rows = np.random.default_rng(1).standard_normal((3, 4))
    utils.write_sinogram(tmp_path / "sinogram.txt", angles, rows)
    assert (tmp_path / "sinogram.txt").read_text().startswith("tilts 3 4\n")
    loaded_angles, loaded_rows = utils.read_sinogram(tmp_path / "sinogram.txt")
    assert_array_equal(loaded_angles, angles)
    assert_array_equal(loaded_rows, rows)


def test_sinogram_shape_mismatch(tmp_path):
    path = tmp_path / "sinogram.txt"
    path.write_text("tilts 2 3\n0 1 2 3\n")
    with pytest.raises(ValueError, match="announces"):
        utils.read_sinogram(path)


def test_key_value_round_trip(tmp_path):
    path = tmp_path / "config.txt"
    utils.write_key_value(path, {"beta": 0.79, "denoiser": "dsg-nlm", "shape": "4,4"})
    assert path.read_text() == "beta=0.79\ndenoiser=dsg-nlm\nshape=4,4\n"
    with path.open("a") as config_file:
        config_file.write("\n# comment\n beta = 1.5 \n")
    assert utils.read_key_value(path) == {"beta": "1.5", "denoiser": "dsg-nlm", "shape": "4,4"}


def test_key_value_requires_separator(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text("beta 0.79\n")
    with pytest.raises(ValueError, match="Line 1"):
        utils.read_key_value(path)


def test_residual_csv_round_trip(tmp_path):
    path = tmp_path / "residuals.csv"
    utils.write_residual_csv(path, [(1, 0.5, 0.0), (2, 0.125, 1.0 / 3.0)])
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,primal_residual,dual_residual"
    assert lines[1] == "1,5.000000000000e-01,0.000000000000e+00"
    table = utils.read_residual_csv(path)
    assert table.shape == (2, 3)
    assert_allclose(table[1], [2.0, 0.125, 1.0 / 3.0], rtol=1e-12)


def test_residual_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "residuals.csv"
    path.write_text("k,primal,dual\n")
    with pytest.raises(ValueError, match="header"):
        utils.read_residual_csv(path)


def test_weight_triplets(tmp_path):
    path = tmp_path / "weights.txt"
    utils.write_weight_triplets(path, np.array([0, 0]), np.array([0, 3]), np.array([0.5, 0.25]))
    assert path.read_text() == "0 0 0.5\n0 3 0.25\n"


@pytest.mark.parametrize(
    "reader", [utils.read_mask_file, utils.read_sinogram, utils.read_key_value]
)
def test_undecodable_text_files_raise_value_error(tmp_path, reader):
    path = tmp_path / "binary.txt"
    path.write_bytes(b"\xff\xfe\x00mask")
    with pytest.raises(ValueError, match="not a UTF-8 text file"):
        reader(path)
