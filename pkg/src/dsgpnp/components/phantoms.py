"""Phantoms and measurement simulation.

Phantoms are synthetic ground truth images. Super-ellipse phantoms mimic material grains and serve
the interpolation experiments, with gray levels in [0, 255]. Disk phantoms are 2D slices through
spheres of constant attenuation in nm⁻¹ and serve the tomography experiments. Every phantom
carries a flat manifest from which it can be regenerated exactly.

Tilt series are simulated from a phantom with the bright-field noise model: counts are Gaussian
with variance equal to their mean, and a random subset of measurements is strongly attenuated to
mimic Bragg scatter.

Classes:
    Phantom: Ground truth image with generation manifest

Functions:
    superellipse_phantom: Non-overlapping super-ellipses at random positions
    disk_phantom: Sum of disks of constant attenuation
    random_disks: Non-overlapping disks of random radii
    regenerate_phantom: Rebuild a phantom from its manifest
    simulate_tilt_series: Simulate bright-field measurements of a phantom
"""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from dsgpnp import utilities as utils
from dsgpnp.components import tomography

ALUMINUM_ATTENUATION = 7.45e-3
FILL_LEVELS = (64, 128, 192, 255)


# ==================================================================================================
@dataclass(frozen=True)
class Phantom:
    """Ground truth image together with the parameters it was generated from.

    Attributes:
        image (np.ndarray): Phantom image
        manifest (dict[str, str]): Flat generation parameters, see `regenerate_phantom`
    """

    image: np.ndarray
    manifest: dict[str, str] = field(default_factory=dict)

    def write_manifest(self, path: Path) -> None:
        """Write the manifest as key=value file."""
        utils.write_key_value(path, self.manifest)


# ==================================================================================================
def superellipse_phantom(
    shape: tuple[int, int],
    count: int,
    exponent_range: tuple[float, float] = (2.0, 6.0),
    size_range: tuple[float, float] = (8.0, 24.0),
    seed: int = 0,
    fill_levels: Sequence[int] = FILL_LEVELS,
    max_attempts: int = 1000,
) -> Phantom:
    """Non-overlapping super-ellipses on a zero background.

    A super-ellipse with semi-axes a, b and exponent n is the set |u/a|ⁿ + |w/b|ⁿ ≤ 1 in
    coordinates (u, w) rotated by a random angle about its center. Every shape is filled with a
    gray level drawn from `fill_levels` and kept at least one pixel apart from all other shapes.

    Args:
        shape (tuple[int, int]): Image shape
        count (int): Number of super-ellipses
        exponent_range (tuple[float, float], optional): Range of n. Defaults to (2, 6).
        size_range (tuple[float, float], optional): Range of the semi-axes in pixels.
            Defaults to (8, 24).
        seed (int, optional): Seed of the random generator. Defaults to 0.
        fill_levels (Sequence[int], optional): Gray levels. Defaults to (64, 128, 192, 255).
        max_attempts (int, optional): Placement attempts per shape. Defaults to 1000.

    Raises:
        ValueError: If count < 1 or the shapes cannot be placed without overlap

    Returns:
        Phantom: Phantom with values in [0, 255]
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    rng = np.random.default_rng(seed)
    rows, cols = np.indices(shape, dtype=np.float64)
    image = np.zeros(shape)
    occupied = np.zeros(shape, dtype=bool)
    placed = []

    for _ in range(count):
        for _ in range(max_attempts):
            semi_axes = rng.uniform(*size_range, size=2)
            exponent = rng.uniform(*exponent_range)
            orientation = rng.uniform(0.0, np.pi)
            level = int(rng.choice(np.asarray(fill_levels)))
            reach = float(semi_axes.max()) + 1.0
            if 2 * reach >= min(shape):
                continue
            center_row = rng.uniform(reach, shape[0] - 1 - reach)
            center_col = rng.uniform(reach, shape[1] - 1 - reach)
            candidate = _superellipse_indicator(
                rows, cols, center_row, center_col, semi_axes, exponent, orientation
            )
            if not np.any(candidate):
                continue
            if np.any(ndimage.binary_dilation(candidate) & occupied):
                continue
            occupied |= candidate
            image[candidate] = level
            placed.append(
                (center_row, center_col, semi_axes[0], semi_axes[1], exponent, orientation, level)
            )
            break
        else:
            raise ValueError(
                f"Could only place {len(placed)} of {count} super-ellipses without overlap"
            )

    manifest = {
        "kind": "superellipse",
        "shape": _format_tuple(shape),
        "count": str(count),
        "exponent_range": _format_tuple(exponent_range),
        "size_range": _format_tuple(size_range),
        "seed": str(seed),
        "fill_levels": _format_tuple(fill_levels),
        "max_attempts": str(max_attempts),
        "shapes": ";".join(" ".join(f"{value:.17g}" for value in entry) for entry in placed),
    }
    return Phantom(image=image, manifest=manifest)


# --------------------------------------------------------------------------------------------------
def disk_phantom(
    shape: tuple[int, int],
    disks: Sequence[Sequence[float]],
    pixel_pitch: float = 1.0,
) -> Phantom:
    """Sum of disks of constant attenuation.

    Disk centers are given in nm relative to the image center, with x along columns and z along
    rows, as in `tomography.ProjectionGeometry`. A pixel belongs to a disk if its center does.

    Args:
        shape (tuple[int, int]): Image shape (nz, nx)
        disks (Sequence[Sequence[float]]): Disks (cx, cz, r) or (cx, cz, r, mu) in nm and nm⁻¹,
            mu defaults to the attenuation of aluminum, 7.45e-3 nm⁻¹
        pixel_pitch (float, optional): Pixel side length in nm. Defaults to 1.

    Raises:
        ValueError: If a disk extends beyond the image

    Returns:
        Phantom: Attenuation image in nm⁻¹
    """
    geometry = tomography.ProjectionGeometry(nx=shape[1], nz=shape[0], pixel_pitch=pixel_pitch)
    x_grid, z_grid = geometry.pixel_centers()
    half_width = shape[1] * pixel_pitch / 2
    half_height = shape[0] * pixel_pitch / 2
    image = np.zeros(shape)
    normalized = []
    for disk in disks:
        center_x, center_z, radius = (float(value) for value in disk[:3])
        attenuation = float(disk[3]) if len(disk) > 3 else ALUMINUM_ATTENUATION  # noqa: PLR2004
        if abs(center_x) + radius > half_width or abs(center_z) + radius > half_height:
            raise ValueError(f"Disk ({center_x}, {center_z}, {radius}) exceeds the image bounds")
        inside = (x_grid - center_x) ** 2 + (z_grid - center_z) ** 2 <= radius**2
        image += attenuation * inside
        normalized.append((center_x, center_z, radius, attenuation))

    manifest = {
        "kind": "disk",
        "shape": _format_tuple(shape),
        "pixel_pitch": f"{pixel_pitch:.17g}",
        "disks": ";".join(" ".join(f"{value:.17g}" for value in disk) for disk in normalized),
    }
    return Phantom(image=image, manifest=manifest)


# --------------------------------------------------------------------------------------------------
def random_disks(
    shape: tuple[int, int],
    count: int,
    radius_range: tuple[float, float],
    seed: int,
    pixel_pitch: float = 1.0,
    attenuation: float = ALUMINUM_ATTENUATION,
    max_attempts: int = 1000,
) -> list[tuple[float, float, float, float]]:
    """Non-overlapping disks of random radii for `disk_phantom`.

    Raises:
        ValueError: If the disks cannot be placed without overlap

    Returns:
        list[tuple[float, float, float, float]]: Disks (cx, cz, r, mu) in nm and nm⁻¹
    """
    rng = np.random.default_rng(seed)
    half_width = shape[1] * pixel_pitch / 2
    half_height = shape[0] * pixel_pitch / 2
    disks: list[tuple[float, float, float, float]] = []
    for _ in range(count):
        for _ in range(max_attempts):
            radius = float(rng.uniform(*radius_range))
            if radius >= min(half_width, half_height):
                continue
            center_x = float(rng.uniform(-half_width + radius, half_width - radius))
            center_z = float(rng.uniform(-half_height + radius, half_height - radius))
            gaps = [
                math.hypot(center_x - other[0], center_z - other[1]) - radius - other[2]
                for other in disks
            ]
            if all(gap > pixel_pitch for gap in gaps):
                disks.append((center_x, center_z, radius, attenuation))
                break
        else:
            raise ValueError(f"Could only place {len(disks)} of {count} disks without overlap")
    return disks


# --------------------------------------------------------------------------------------------------
def regenerate_phantom(manifest: Mapping[str, str]) -> Phantom:
    """Rebuild a phantom from its manifest, bit-identical to the original.

    Raises:
        ValueError: If the manifest kind is unknown

    Returns:
        Phantom: Regenerated phantom
    """
    kind = manifest.get("kind")
    shape = tuple(int(value) for value in _parse_tuple(manifest["shape"]))
    if kind == "superellipse":
        return superellipse_phantom(
            shape,
            count=int(manifest["count"]),
            exponent_range=tuple(_parse_tuple(manifest["exponent_range"])),
            size_range=tuple(_parse_tuple(manifest["size_range"])),
            seed=int(manifest["seed"]),
            fill_levels=tuple(int(value) for value in _parse_tuple(manifest["fill_levels"])),
            max_attempts=int(manifest["max_attempts"]),
        )
    if kind == "disk":
        disks = [
            tuple(float(value) for value in entry.split())
            for entry in manifest["disks"].split(";")
            if entry.strip()
        ]
        return disk_phantom(shape, disks, pixel_pitch=float(manifest["pixel_pitch"]))
    raise ValueError(f"Unknown phantom kind in manifest: {kind}")


# --------------------------------------------------------------------------------------------------
def simulate_tilt_series(
    phantom: np.ndarray,
    geometry: tomography.ProjectionGeometry,
    angles: Sequence[float],
    dose: float = 1e4,
    outlier_fraction: float = 0.0,
    seed: int = 0,
    noise: bool = True,
) -> tomography.TiltSeries:
    """Simulate bright-field measurements of a phantom.

    Clean counts are dose * exp(-A x). Noisy counts add Gaussian noise with variance equal to the
    clean counts. Exactly round(outlier_fraction * K * M) randomly chosen counts are multiplied by
    a factor drawn uniformly from [0.1, 0.5]. Counts below one are clamped to one before the
    log transform. The weights are the final counts.

    Args:
        phantom (np.ndarray): Attenuation image in nm⁻¹
        geometry (tomography.ProjectionGeometry): Image grid and detector layout
        angles (Sequence[float]): Tilt angles in degrees
        dose (float, optional): Blank scan counts per bin. Defaults to 1e4.
        outlier_fraction (float, optional): Fraction of corrupted measurements. Defaults to 0.
        seed (int, optional): Seed of the random generator. Defaults to 0.
        noise (bool, optional): Whether to add counting noise. Defaults to True.

    Raises:
        ValueError: If the dose is not positive or the outlier fraction is not in [0, 1]

    Returns:
        tomography.TiltSeries: Measurements with counts, outlier flags and clamp count
    """
    if not dose > 0:
        raise ValueError(f"dose must be positive, got {dose}")
    if not 0 <= outlier_fraction <= 1:
        raise ValueError(f"outlier_fraction must be in [0, 1], got {outlier_fraction}")
    angle_key = tuple(float(angle) for angle in angles)
    matrix = tomography.stacked_system_matrix(geometry, angle_key)
    line_integrals = (matrix @ np.asarray(phantom, dtype=np.float64).ravel()).reshape(
        len(angle_key), geometry.num_bins
    )
    noise_seed, outlier_seed = utils.spawn_seeds(seed, 2)

    clean_counts = dose * np.exp(-line_integrals)
    counts = clean_counts.copy()
    if noise:
        counts += np.random.default_rng(noise_seed).normal(0.0, np.sqrt(clean_counts))

    outlier_flags = np.zeros(counts.shape, dtype=bool)
    num_outliers = round(outlier_fraction * counts.size)
    if num_outliers > 0:
        rng = np.random.default_rng(outlier_seed)
        corrupted = rng.choice(counts.size, size=num_outliers, replace=False)
        counts.ravel()[corrupted] *= rng.uniform(0.1, 0.5, size=num_outliers)
        outlier_flags.ravel()[corrupted] = True

    clamped = counts < 1.0
    counts = np.where(clamped, 1.0, counts)
    if noise or num_outliers > 0 or np.any(clamped):
        measurements = -np.log(counts)
    else:
        measurements = line_integrals - math.log(dose)
    return tomography.TiltSeries(
        angles=np.asarray(angle_key),
        measurements=measurements,
        weights=counts,
        counts=counts,
        outlier_flags=outlier_flags,
        clamped_counts=int(np.count_nonzero(clamped)),
    )


# --------------------------------------------------------------------------------------------------
def _superellipse_indicator(
    rows: np.ndarray,
    cols: np.ndarray,
    center_row: float,
    center_col: float,
    semi_axes: np.ndarray,
    exponent: float,
    orientation: float,
) -> np.ndarray:
    delta_row, delta_col = rows - center_row, cols - center_col
    along = delta_col * math.cos(orientation) + delta_row * math.sin(orientation)
    across = -delta_col * math.sin(orientation) + delta_row * math.cos(orientation)
    return np.abs(along / semi_axes[0]) ** exponent + np.abs(across / semi_axes[1]) ** exponent <= 1


def _format_tuple(values: Sequence[float]) -> str:
    return ",".join(f"{value:.17g}" if isinstance(value, float) else str(value) for value in values)


def _parse_tuple(text: str) -> list[float]:
    return [float(token) for token in text.split(",") if token.strip()]
