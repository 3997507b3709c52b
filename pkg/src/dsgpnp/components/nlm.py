"""Non-local means weights.

This module constructs the weight matrices of the non-local means (NLM) denoiser and of its doubly
stochastic variant (DSG-NLM). Weights are only nonzero within a search window, the l-infinity ball
of radius `search_radius` around every pixel. A `WeightMatrix` stores every pixel pair once: one
band per search-window offset with lexicographically positive sign, plus the diagonal. This
storage is symmetric by construction. Plain NLM, which is only row-normalized, is represented as
the symmetric kernel together with a row scaling, W = diag(row_scale) K.

Patch distances are computed per offset on the mirror-padded image with a box filter. The work is
distributed over offsets with a thread pool and reduced in a fixed order, so results do not depend
on the number of threads.

Classes:
    NlmParams: Patch and search window settings
    WeightMatrix: Sparse NLM weight matrix with exact symmetric storage
    FreezePolicy: State of weight freezing for adaptive denoising

Functions:
    search_offsets: Lexicographically positive offsets of a search window
    nlm_raw_weights: Gaussian patch-similarity weights, unnormalized
    nlm_weights: Row-normalized NLM weights
    dsg_nlm_weights: Symmetric, doubly stochastic NLM weights
    apply_weights: Apply a weight matrix to an image
    denoise: Adaptive denoising with weight freezing
"""

import itertools
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse


# ==================================================================================================
@dataclass
class NlmParams:
    """Patch and search window settings of the NLM denoisers.

    Attributes:
        patch_radius (int): Patch radius, patches have side length 2 * patch_radius + 1,
            default is 2
        search_radius (int): Radius of the l-infinity search window, default is 10
        sigma_n (float): Noise level used in the weights when not supplied by the caller,
            default is 1.0
        dimensionality (int): Expected image dimension (1, 2 or 3), `None` accepts any of these,
            default is None
        threads (int): Number of threads for weight construction, default is 1
    """

    patch_radius: int = 2
    search_radius: int = 10
    sigma_n: float = 1.0
    dimensionality: int | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        """Validate settings.

        Raises:
            ValueError: If any of the settings is out of range
        """
        if self.patch_radius < 0:
            raise ValueError(f"patch_radius must be nonnegative, got {self.patch_radius}")
        if self.search_radius < 1:
            raise ValueError(f"search_radius must be positive, got {self.search_radius}")
        if self.sigma_n <= 0:
            raise ValueError(f"sigma_n must be positive, got {self.sigma_n}")
        if self.dimensionality not in (None, 1, 2, 3):
            raise ValueError(f"dimensionality must be 1, 2 or 3, got {self.dimensionality}")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")

    @property
    def patch_size(self) -> int:
        """Side length N_p of a patch."""
        return 2 * self.patch_radius + 1

    def patch_pixel_count(self, ndim: int) -> int:
        """Number of pixels in a patch of the given dimension."""
        return self.patch_size**ndim


# ==================================================================================================
@dataclass
class WeightMatrix:
    """Sparse NLM weight matrix with exact symmetric storage.

    Entry w_{s,r} with r = s + offset is stored at position s of the band belonging to `offset`.
    Band entries whose partner pixel lies outside the lattice are zero. The matrix is never
    modified after construction.

    Attributes:
        shape (tuple[int, ...]): Shape of the images the matrix acts on
        offsets (tuple[tuple[int, ...], ...]): Lexicographically positive search-window offsets
        diagonal (np.ndarray): Diagonal entries w_{s,s}, image-shaped
        bands (tuple[np.ndarray, ...]): Off-diagonal entries, one image-shaped array per offset
        row_scale (np.ndarray | None): Row scaling of a non-symmetric matrix, `None` if symmetric
        clamped_diagonals (int): Number of diagonal entries clamped during symmetric normalization
    """

    shape: tuple[int, ...]
    offsets: tuple[tuple[int, ...], ...]
    diagonal: np.ndarray
    bands: tuple[np.ndarray, ...]
    row_scale: np.ndarray | None = None
    clamped_diagonals: int = 0

    # ----------------------------------------------------------------------------------------------
    @classmethod
    def identity(cls, shape: tuple[int, ...]) -> "WeightMatrix":
        """Identity matrix for images of the given shape."""
        return cls(shape=tuple(shape), offsets=(), diagonal=np.ones(shape), bands=())

    # ----------------------------------------------------------------------------------------------
    @property
    def size(self) -> int:
        """Number of pixels N, the matrix is N x N."""
        return int(np.prod(self.shape))

    @property
    def is_symmetric(self) -> bool:
        """Whether the matrix is symmetric by storage."""
        return self.row_scale is None

    # ----------------------------------------------------------------------------------------------
    def kernel_matvec(self, image: np.ndarray) -> np.ndarray:
        """Apply the symmetric kernel K, i.e. the matrix without row scaling."""
        result = self.diagonal * image
        for offset, band in zip(self.offsets, self.bands, strict=True):
            source, target = pair_slices(self.shape, offset)
            weights = band[source]
            result[source] += weights * image[target]
            result[target] += weights * image[source]
        return result

    def matvec(self, image: np.ndarray) -> np.ndarray:
        """Compute W x for an image-shaped x."""
        result = self.kernel_matvec(image)
        if self.row_scale is not None:
            result *= self.row_scale
        return result

    def rmatvec(self, image: np.ndarray) -> np.ndarray:
        """Compute W^T x for an image-shaped x."""
        if self.row_scale is None:
            return self.kernel_matvec(image)
        return self.kernel_matvec(self.row_scale * image)

    # ----------------------------------------------------------------------------------------------
    def row_sums(self) -> np.ndarray:
        """Row sums of the matrix, image-shaped."""
        return self.matvec(np.ones(self.shape))

    def column_sums(self) -> np.ndarray:
        """Column sums of the matrix, image-shaped."""
        return self.rmatvec(np.ones(self.shape))

    # ----------------------------------------------------------------------------------------------
    def to_sparse(self) -> sparse.csr_matrix:
        """Assemble the full N x N matrix in compressed sparse row format."""
        flat_index = np.arange(self.size).reshape(self.shape)
        rows = [flat_index.ravel()]
        cols = [flat_index.ravel()]
        values = [self.diagonal.ravel()]
        for offset, band in zip(self.offsets, self.bands, strict=True):
            source, target = pair_slices(self.shape, offset)
            source_index = flat_index[source].ravel()
            target_index = flat_index[target].ravel()
            weights = band[source].ravel()
            rows.extend([source_index, target_index])
            cols.extend([target_index, source_index])
            values.extend([weights, weights])
        kernel = sparse.coo_matrix(
            (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.size, self.size),
        ).tocsr()
        if self.row_scale is not None:
            kernel = sparse.diags(self.row_scale.ravel()) @ kernel
        return kernel.tocsr()

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stored entries as (row, col, weight) arrays in row-major order.

        Symmetric matrices yield every pair once (row <= col), others yield all nonzero entries.
        """
        matrix = self.to_sparse()
        if self.is_symmetric:
            matrix = sparse.triu(matrix)
        matrix = matrix.tocoo()
        order = np.lexsort((matrix.col, matrix.row))
        return matrix.row[order], matrix.col[order], matrix.data[order]


# ==================================================================================================
@dataclass
class FreezePolicy:
    """State of weight freezing for adaptive denoising.

    Attributes:
        freeze_at (int | None): Iteration at which weights are frozen, `None` means never
        frozen (bool): Whether the weights have been frozen
        cached (WeightMatrix | None): Frozen weight matrix
    """

    freeze_at: int | None = None
    frozen: bool = False
    cached: WeightMatrix | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        """Validate settings."""
        if self.freeze_at is not None and self.freeze_at < 0:
            raise ValueError(f"freeze_at must be nonnegative or None, got {self.freeze_at}")


# ==================================================================================================
def pair_slices(
    shape: tuple[int, ...], offset: tuple[int, ...]
) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    """Slices selecting all pixel pairs (s, s + offset) that lie within the lattice.

    Args:
        shape (tuple[int, ...]): Image shape
        offset (tuple[int, ...]): Offset between the pixels of a pair

    Returns:
        tuple[tuple[slice, ...], tuple[slice, ...]]: Slices for s and for s + offset
    """
    pairs = list(zip(shape, offset, strict=True))
    source = tuple(slice(max(0, -delta), size - max(0, delta)) for size, delta in pairs)
    target = tuple(slice(max(0, delta), size + min(0, delta)) for size, delta in pairs)
    return source, target


# --------------------------------------------------------------------------------------------------
def search_offsets(shape: tuple[int, ...], search_radius: int) -> tuple[tuple[int, ...], ...]:
    """Lexicographically positive offsets of the l-infinity search window.

    Offsets that do not connect any pair of pixels of the given shape are omitted.

    Args:
        shape (tuple[int, ...]): Image shape
        search_radius (int): Radius of the search window

    Returns:
        tuple[tuple[int, ...], ...]: Offsets in lexicographic order
    """
    reach = [min(search_radius, size - 1) for size in shape]
    ranges = [range(-radius, radius + 1) for radius in reach]
    offsets = []
    for offset in itertools.product(*ranges):
        nonzero = [delta for delta in offset if delta != 0]
        if nonzero and nonzero[0] > 0:
            offsets.append(offset)
    return tuple(offsets)


# --------------------------------------------------------------------------------------------------
def nlm_raw_weights(
    image: np.ndarray, params: NlmParams, sigma_n: float | None = None
) -> WeightMatrix:
    """Gaussian patch-similarity weights.

    Computes w_{s,r} = exp(-||P_r - P_s||² / (2 N σn²)) for all pairs within the search window,
    where N is the number of pixels in a patch. Patches at the boundary are taken from the
    mirror-padded image. The diagonal is exactly one.

    Args:
        image (np.ndarray): Image to compute the weights from
        params (NlmParams): Patch and window settings
        sigma_n (float, optional): Noise level, defaults to `params.sigma_n`

    Raises:
        ValueError: If the noise level is not positive, the image is not finite or has an
            unexpected dimension

    Returns:
        WeightMatrix: Symmetric, unnormalized weight matrix
    """
    sigma_n = params.sigma_n if sigma_n is None else sigma_n
    if not sigma_n > 0:
        raise ValueError(f"sigma_n must be positive, got {sigma_n}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim not in (1, 2, 3):
        raise ValueError(f"Images must have 1, 2 or 3 dimensions, got {image.ndim}")
    if params.dimensionality is not None and image.ndim != params.dimensionality:
        raise ValueError(
            f"Image dimension {image.ndim} does not match dimensionality {params.dimensionality}"
        )
    if not np.all(np.isfinite(image)):
        raise ValueError("Image contains non-finite values")

    offsets = search_offsets(image.shape, params.search_radius)
    padded = np.pad(image, params.patch_radius, mode="symmetric")
    scale = 2.0 * params.patch_pixel_count(image.ndim) * sigma_n**2

    def _band(offset: tuple[int, ...]) -> np.ndarray:
        distances = _patch_distances(padded, image.shape, offset, params)
        band = np.zeros(image.shape)
        source, _ = pair_slices(image.shape, offset)
        band[source] = np.exp(-distances / scale)
        return band

    if params.threads > 1 and len(offsets) > 1:
        with ThreadPoolExecutor(max_workers=params.threads) as executor:
            bands = tuple(executor.map(_band, offsets))
    else:
        bands = tuple(_band(offset) for offset in offsets)

    return WeightMatrix(
        shape=image.shape, offsets=offsets, diagonal=np.ones(image.shape), bands=bands
    )


# --------------------------------------------------------------------------------------------------
def nlm_weights(image: np.ndarray, params: NlmParams, sigma_n: float | None = None) -> WeightMatrix:
    """Classic NLM weights, normalized so that every row sums to one.

    Column sums generally differ from one, so the matrix is not doubly stochastic.
    """
    kernel = nlm_raw_weights(image, params, sigma_n)
    row_sums = kernel.kernel_matvec(np.ones(kernel.shape))
    return WeightMatrix(
        shape=kernel.shape,
        offsets=kernel.offsets,
        diagonal=kernel.diagonal,
        bands=kernel.bands,
        row_scale=1.0 / row_sums,
    )


# --------------------------------------------------------------------------------------------------
def dsg_nlm_weights(
    image: np.ndarray, params: NlmParams, sigma_n: float | None = None
) -> WeightMatrix:
    """Doubly stochastic gradient NLM weights.

    Starting from the Gaussian weights, every entry is divided by the geometric mean of the sums of
    its row and its column, and the diagonal is then shifted so that each row sums to one. All
    steps are symmetric in s and r, so the result is symmetric with unit row and column sums.

    If the diagonal shift produces negative entries, those diagonals are clamped to zero and the
    off-diagonal entries of their rows and columns are rescaled symmetrically, so that the matrix
    stays symmetric, stochastic and nonnegative. The number of clamped rows is recorded in the
    returned matrix.

    Args:
        image (np.ndarray): Image to compute the weights from
        params (NlmParams): Patch and window settings
        sigma_n (float, optional): Noise level, defaults to `params.sigma_n`

    Returns:
        WeightMatrix: Symmetric, doubly stochastic weight matrix
    """
    kernel = nlm_raw_weights(image, params, sigma_n)
    shape = kernel.shape
    sums = kernel.kernel_matvec(np.ones(shape))

    inverse_root = 1.0 / np.sqrt(sums)
    diagonal = kernel.diagonal / sums
    bands = []
    for offset, band in zip(kernel.offsets, kernel.bands, strict=True):
        source, target = pair_slices(shape, offset)
        scaled = np.zeros(shape)
        scaled[source] = band[source] * inverse_root[source] * inverse_root[target]
        bands.append(scaled)

    off_diagonal_sums = _off_diagonal_sums(shape, kernel.offsets, bands)
    diagonal = diagonal - (diagonal + off_diagonal_sums - 1.0)
    clamped = diagonal < 0
    num_clamped = int(np.count_nonzero(clamped))

    if num_clamped > 0:
        row_factor = np.ones(shape)
        row_factor[clamped] = 1.0 / off_diagonal_sums[clamped]
        for offset, band in zip(kernel.offsets, bands, strict=True):
            source, target = pair_slices(shape, offset)
            band[source] *= row_factor[source] * row_factor[target]
        off_diagonal_sums = _off_diagonal_sums(shape, kernel.offsets, bands)
        diagonal = np.maximum(1.0 - off_diagonal_sums, 0.0)

    return WeightMatrix(
        shape=shape,
        offsets=kernel.offsets,
        diagonal=diagonal,
        bands=tuple(bands),
        clamped_diagonals=num_clamped,
    )


# --------------------------------------------------------------------------------------------------
def apply_weights(weights: WeightMatrix, image: np.ndarray) -> np.ndarray:
    """Apply a weight matrix to an image, v_s = sum_r w_{s,r} image_r.

    Args:
        weights (WeightMatrix): Weight matrix
        image (np.ndarray): Image with as many pixels as the matrix has columns

    Raises:
        ValueError: If the number of pixels does not match the matrix dimension

    Returns:
        np.ndarray: Weighted image, same shape as the input
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size != weights.size:
        raise ValueError(
            f"Image with {image.size} pixels does not match weight matrix of dimension "
            f"{weights.size}"
        )
    return weights.matvec(image.reshape(weights.shape)).reshape(image.shape)


# --------------------------------------------------------------------------------------------------
def denoise(
    image: np.ndarray,
    params: NlmParams,
    policy: FreezePolicy,
    iteration_index: int,
    sigma_n: float | None = None,
    weight_function: Callable[..., WeightMatrix] = dsg_nlm_weights,
) -> np.ndarray:
    """Adaptive NLM denoising with weight freezing.

    Before the freeze iteration, weights are recomputed from the current image every call. At the
    freeze iteration the weights are computed one last time and cached, afterwards the cached
    matrix is applied, which makes the denoiser a linear operator.

    Args:
        image (np.ndarray): Image to denoise
        params (NlmParams): Patch and window settings
        policy (FreezePolicy): Freezing state, updated in place when the weights are frozen
        iteration_index (int): Index of the calling iteration
        sigma_n (float, optional): Noise level, defaults to `params.sigma_n`
        weight_function (Callable, optional): Weight construction, defaults to `dsg_nlm_weights`

    Raises:
        RuntimeError: If the policy is frozen but holds no cached matrix

    Returns:
        np.ndarray: Denoised image
    """
    if policy.frozen:
        if policy.cached is None:
            raise RuntimeError("Weight freeze policy is frozen, but no weight matrix is cached")
        return apply_weights(policy.cached, image)

    weights = weight_function(image, params, sigma_n)
    if policy.freeze_at is not None and iteration_index >= policy.freeze_at:
        policy.cached = weights
        policy.frozen = True
    return apply_weights(weights, image)


# --------------------------------------------------------------------------------------------------
def _patch_distances(
    padded: np.ndarray, shape: tuple[int, ...], offset: tuple[int, ...], params: NlmParams
) -> np.ndarray:
    """Squared patch distances ||P_s - P_{s+offset}||² for all valid s.

    Args:
        padded (np.ndarray): Image padded by the patch radius
        shape (tuple[int, ...]): Shape of the unpadded image
        offset (tuple[int, ...]): Pair offset
        params (NlmParams): Patch settings

    Returns:
        np.ndarray: Distances on the region selected by the source slice of `pair_slices`
    """
    radius = params.patch_radius
    lower = [max(0, -delta) for delta in offset]
    upper = [size - max(0, delta) for size, delta in zip(shape, offset, strict=True)]
    region = tuple(slice(lo, hi + 2 * radius) for lo, hi in zip(lower, upper, strict=True))
    shifted = tuple(
        slice(lo + delta, hi + 2 * radius + delta)
        for lo, hi, delta in zip(lower, upper, offset, strict=True)
    )
    squared_difference = (padded[region] - padded[shifted]) ** 2

    if radius > 0:
        window_sums = ndimage.uniform_filter(
            squared_difference, size=params.patch_size, mode="constant"
        ) * params.patch_pixel_count(len(shape))
        centers = tuple(
            slice(radius, radius + hi - lo) for lo, hi in zip(lower, upper, strict=True)
        )
        window_sums = window_sums[centers]
    else:
        window_sums = squared_difference
    return np.maximum(window_sums, 0.0)


def _off_diagonal_sums(
    shape: tuple[int, ...], offsets: tuple[tuple[int, ...], ...], bands: list[np.ndarray]
) -> np.ndarray:
    sums = np.zeros(shape)
    for offset, band in zip(offsets, bands, strict=True):
        source, target = pair_slices(shape, offset)
        sums[source] += band[source]
        sums[target] += band[source]
    return sums
