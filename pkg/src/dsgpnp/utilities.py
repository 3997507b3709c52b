"""Collection of utility functions for reconstruction runs.

These utility functions are not part of the reconstruction core, they are concerned with reading
and writing the plain file formats that runs consume and produce, and with seeding.

Functions:
    spawn_seeds: Derive independent RNG seeds from a single experiment seed
    header_path: Sidecar header path of a raster file
    write_raster: Write an image as raw little-endian float32 payload with text header
    read_raster: Read an image written by `write_raster`
    write_mask_file: Write sampled pixel indices and values of a sampling mask
    read_mask_file: Read a sampling mask file
    write_sinogram: Write per-tilt measurement rows
    read_sinogram: Read per-tilt measurement rows
    write_key_value: Write a flat key=value file
    read_key_value: Read a flat key=value file
    write_residual_csv: Write a residual log as CSV
    read_residual_csv: Read a residual CSV
    write_weight_triplets: Write `row col weight` triplets of a weight matrix
"""

import csv
from collections.abc import Iterable, Mapping
from pathlib import Path

import numpy as np

_RASTER_DTYPE = np.dtype("<f4")
_RESIDUAL_HEADER = ("iteration", "primal_residual", "dual_residual")


# ==================================================================================================
def spawn_seeds(seed: int, num_seeds: int) -> list[int]:
    """Derive independent RNG seeds from a single experiment seed.

    Every component of an experiment (phantom, mask, measurement noise, ...) receives its own seed,
    so that changing one of them does not alter the random streams of the others.

    Args:
        seed (int): Experiment seed
        num_seeds (int): Number of seeds to derive

    Returns:
        list[int]: Derived seeds
    """
    assert isinstance(seed, int | np.integer) and seed >= 0, "Seed must be a nonnegative integer"
    children = np.random.SeedSequence(int(seed)).spawn(num_seeds)
    return [int(child.generate_state(1, dtype=np.uint64)[0]) for child in children]


# --------------------------------------------------------------------------------------------------
def header_path(path: Path) -> Path:
    """Sidecar header path of a raster file, `<name>.hdr` next to the payload."""
    path = Path(path)
    return path.with_name(f"{path.name}.hdr")


def _read_text(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as error:
        raise ValueError(f"{path} is not a UTF-8 text file") from error


# --------------------------------------------------------------------------------------------------
def write_raster(path: Path, image: np.ndarray) -> None:
    """Write an image as raw little-endian float32 payload with a text header.

    The payload is stored row-major, the sidecar header reads `raster <width> <height> [depth]`.
    1D images are written as a single row and read back with shape (1, width).

    Args:
        path (Path): Payload file path
        image (np.ndarray): 1D, 2D or 3D image

    Raises:
        ValueError: If the image has more than three dimensions
    """
    path = Path(path)
    image = np.asarray(image)
    if image.ndim not in (1, 2, 3):
        raise ValueError(f"Rasters must have 1, 2 or 3 dimensions, got {image.ndim}")
    dims = image.shape[::-1] if image.ndim > 1 else (image.shape[0], 1)
    path.parent.mkdir(parents=True, exist_ok=True)
    header_path(path).write_text(f"raster {' '.join(str(dim) for dim in dims)}\n")
    np.ascontiguousarray(image, dtype=_RASTER_DTYPE).tofile(path)


# --------------------------------------------------------------------------------------------------
def read_raster(path: Path) -> np.ndarray:
    """Read an image written by `write_raster`.

    Args:
        path (Path): Payload file path

    Raises:
        ValueError: If the header is malformed or payload size and header do not match

    Returns:
        np.ndarray: Image of shape (height, width) or (depth, height, width), dtype float32
    """
    path = Path(path)
    tokens = _read_text(header_path(path)).split()
    if len(tokens) not in (3, 4) or tokens[0] != "raster":
        raise ValueError(f"Malformed raster header in {header_path(path)}: {' '.join(tokens)}")
    dims = [int(token) for token in tokens[1:]]
    shape = tuple(reversed(dims))
    expected_bytes = int(np.prod(shape)) * _RASTER_DTYPE.itemsize
    payload = path.read_bytes()
    if len(payload) != expected_bytes:
        raise ValueError(
            f"Raster payload size mismatch for {path}: header implies {expected_bytes} bytes, "
            f"found {len(payload)}"
        )
    return np.frombuffer(payload, dtype=_RASTER_DTYPE).reshape(shape).copy()


# --------------------------------------------------------------------------------------------------
def write_mask_file(
    path: Path, shape: tuple[int, int], indices: np.ndarray, values: np.ndarray
) -> None:
    """Write a sampling mask file.

    The file starts with `mask <width> <height> <count>`, followed by one `index value` line per
    sampled pixel, with row-major indices.

    Args:
        path (Path): File path
        shape (tuple[int, int]): Image shape (height, width)
        indices (np.ndarray): Row-major indices of sampled pixels
        values (np.ndarray): Measured values at the sampled pixels
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = shape
    lines = [f"mask {width} {height} {len(indices)}"]
    lines.extend(f"{index} {value:.17g}" for index, value in zip(indices, values, strict=True))
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------------------------------
def read_mask_file(path: Path) -> tuple[tuple[int, int], np.ndarray, np.ndarray]:
    """Read a sampling mask file written by `write_mask_file`.

    Args:
        path (Path): File path

    Raises:
        ValueError: If the header is malformed or the number of entries does not match

    Returns:
        tuple[tuple[int, int], np.ndarray, np.ndarray]: Shape, sampled indices and values
    """
    lines = _read_text(path).splitlines()
    header = lines[0].split()
    if len(header) != 4 or header[0] != "mask":  # noqa: PLR2004
        raise ValueError(f"Malformed mask header in {path}: {lines[0]}")
    width, height, count = (int(token) for token in header[1:])
    entries = [line.split() for line in lines[1:] if line.strip()]
    if len(entries) != count:
        raise ValueError(f"Mask file {path} announces {count} samples but holds {len(entries)}")
    indices = np.array([int(entry[0]) for entry in entries], dtype=np.int64)
    values = np.array([float(entry[1]) for entry in entries], dtype=np.float64)
    return (height, width), indices, values


# --------------------------------------------------------------------------------------------------
def write_sinogram(path: Path, angles: np.ndarray, rows: np.ndarray) -> None:
    """Write per-tilt measurement rows.

    The file starts with `tilts <K> <M>`, followed by one line `angle_deg y_1 ... y_M` per tilt.
    The same layout is used for the companion file of weight diagonals.

    Args:
        path (Path): File path
        angles (np.ndarray): Tilt angles in degrees, shape (K,)
        rows (np.ndarray): Measurements, shape (K, M)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.atleast_2d(rows)
    lines = [f"tilts {rows.shape[0]} {rows.shape[1]}"]
    for angle, row in zip(angles, rows, strict=True):
        lines.append(" ".join([f"{angle:.17g}", *(f"{value:.17g}" for value in row)]))
    path.write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------------------------------
def read_sinogram(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Read per-tilt measurement rows written by `write_sinogram`.

    Raises:
        ValueError: If the header is malformed or rows do not match the announced size

    Returns:
        tuple[np.ndarray, np.ndarray]: Angles in degrees (K,) and measurements (K, M)
    """
    lines = [line for line in _read_text(path).splitlines() if line.strip()]
    header = lines[0].split()
    if len(header) != 3 or header[0] != "tilts":  # noqa: PLR2004
        raise ValueError(f"Malformed sinogram header in {path}: {lines[0]}")
    num_tilts, num_bins = int(header[1]), int(header[2])
    table = np.array([[float(token) for token in line.split()] for line in lines[1:]])
    if table.shape != (num_tilts, num_bins + 1) and not (num_tilts == 0 and table.size == 0):
        raise ValueError(
            f"Sinogram {path} announces {num_tilts} x {num_bins} values, found {table.shape}"
        )
    if num_tilts == 0:
        return np.zeros(0), np.zeros((0, num_bins))
    return table[:, 0], table[:, 1:]


# --------------------------------------------------------------------------------------------------
def write_key_value(path: Path, entries: Mapping[str, object]) -> None:
    """Write a flat key=value file, one entry per line, in the given order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{key}={value}\n" for key, value in entries.items()))


# --------------------------------------------------------------------------------------------------
def read_key_value(path: Path) -> dict[str, str]:
    """Read a flat key=value file.

    Blank lines and lines starting with `#` are ignored, later keys overwrite earlier ones.

    Raises:
        ValueError: If a line has no `=` separator

    Returns:
        dict[str, str]: Entries as strings
    """
    entries = {}
    for number, raw_line in enumerate(_read_text(path).splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"Line {number} of {path} is not of the form key=value: {raw_line}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


# --------------------------------------------------------------------------------------------------
def write_residual_csv(path: Path, rows: Iterable[tuple[int, float, float]]) -> None:
    """Write a residual log as CSV with twelve significant digits.

    Args:
        path (Path): File path
        rows (Iterable[tuple[int, float, float]]): Rows (iteration, primal, dual)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as csv_file:
        writer = csv.writer(csv_file, lineterminator="\n")
        writer.writerow(_RESIDUAL_HEADER)
        for iteration, primal, dual in rows:
            writer.writerow([iteration, f"{primal:.12e}", f"{dual:.12e}"])


# --------------------------------------------------------------------------------------------------
def read_residual_csv(path: Path) -> np.ndarray:
    """Read a residual CSV into an array of shape (num_rows, 3)."""
    with Path(path).open(newline="") as csv_file:
        reader = csv.reader(csv_file)
        header = tuple(next(reader))
        if header != _RESIDUAL_HEADER:
            raise ValueError(f"Unexpected residual CSV header in {path}: {header}")
        rows = [[float(value) for value in row] for row in reader]
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


# --------------------------------------------------------------------------------------------------
def write_weight_triplets(
    path: Path, rows: np.ndarray, cols: np.ndarray, weights: np.ndarray
) -> None:
    """Write `row col weight` triplets, one stored entry per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as triplet_file:
        for row, col, weight in zip(rows, cols, weights, strict=True):
            triplet_file.write(f"{row} {col} {weight:.17g}\n")
