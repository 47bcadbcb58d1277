"""
Random Binning (RB) and Random Fourier (RF) feature generation.

RB draws R random grids; every sample lands in exactly one bin per grid, and each
non-empty bin becomes one column of the sparse feature matrix Z (values 1/sqrt(R)).
Z @ Z.T is an unbiased estimate of the Laplacian kernel exp(-||x - y||_1 / sigma).
"""
import concurrent.futures as cf
import math
import struct
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp
from loguru import logger
from scipy.spatial.distance import cdist
from threadpoolctl import ThreadpoolController

import config
from datasets import Dataset

KERNEL_FAMILIES = ("laplacian", "gaussian")
BINARY_MAGIC = b"RBZ1"

# spawn_key prefixes keep RB grid streams and RF streams disjoint for one seed
_RB_STREAM = 0
_RF_STREAM = 1


class UnsupportedKernelError(ValueError):
    pass


@dataclass(frozen=True)
class KernelParams:
    family: str = "laplacian"
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise UnsupportedKernelError(
                f"kernel family must be one of {KERNEL_FAMILIES}, got {self.family!r}"
            )
        if not self.sigma > 0:
            raise ValueError(f"kernel sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True)
class GridParams:
    widths: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        if self.widths.shape != self.biases.shape or self.widths.ndim != 1:
            raise ValueError("grid widths and biases must be 1-d vectors of equal length")
        if np.any(self.widths <= 0):
            raise ValueError("grid widths must be strictly positive")
        if np.any(self.biases < 0) or np.any(self.biases > self.widths):
            raise ValueError("grid biases must lie in [0, width]")

    @property
    def dimension(self) -> int:
        return self.widths.size


class RBFeatures(NamedTuple):
    Z: sp.csr_matrix
    grids: List[GridParams]


def _as_matrix(X: Union[Dataset, np.ndarray]) -> np.ndarray:
    if isinstance(X, Dataset):
        return X.X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected an N x d matrix, got shape {X.shape}")
    return X


def grid_stream(seed: int, grid_index: int) -> np.random.Generator:
    """Counter-based stream owned by one grid, derived from (seed, grid_index)"""
    ss = np.random.SeedSequence(seed, spawn_key=(_RB_STREAM, grid_index))
    return np.random.Generator(np.random.Philox(ss))


def _sample_widths(kernel: KernelParams, size: int, rng: np.random.Generator) -> np.ndarray:
    if kernel.family != "laplacian":
        raise UnsupportedKernelError(
            f"random binning needs a kernel whose w*k''(w) is a density; "
            f"{kernel.family!r} is not supported (use 'laplacian')"
        )
    # Gamma(shape=2, scale=sigma) as the sum of two exponentials
    widths = rng.exponential(kernel.sigma, size=size) + rng.exponential(kernel.sigma, size=size)
    underflow = widths <= 0.0
    while np.any(underflow):
        count = int(underflow.sum())
        widths[underflow] = (rng.exponential(kernel.sigma, size=count)
                             + rng.exponential(kernel.sigma, size=count))
        underflow = widths <= 0.0
    return widths


def sample_width(kernel: KernelParams, rng: np.random.Generator) -> float:
    """Draw one bin width from p(w) = (w / sigma^2) exp(-w / sigma)"""
    return float(_sample_widths(kernel, 1, rng)[0])


def sample_grid(kernel: KernelParams, d: int, rng: np.random.Generator) -> GridParams:
    """Draw per-dimension widths and uniform biases u_l in [0, w_l]"""
    if d < 1:
        raise ValueError(f"grid dimension must be >= 1, got {d}")
    widths = _sample_widths(kernel, d, rng)
    biases = rng.uniform(0.0, 1.0, size=d) * widths
    return GridParams(widths, biases)


def bin_index(x: np.ndarray, grid: GridParams) -> np.ndarray:
    """
    Integer bin coordinates floor((x - u) / w), rounding toward -inf.

    Accepts a single length-d vector or an N x d matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != grid.dimension:
        raise ValueError(f"point dimension {x.shape[-1]} != grid dimension {grid.dimension}")
    return np.floor((x - grid.biases) / grid.widths).astype(np.int64)


def _bin_grid(X: np.ndarray, grid: GridParams) -> Tuple[np.ndarray, int]:
    """
    Local column id per row and the number of occupied bins.

    A bin is identified by (grid, coordinate row); rows with equal coordinates share a
    column, and columns are numbered in order of first appearance.
    """
    coords = bin_index(X, grid)
    _, first, inverse = np.unique(coords, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return rank[inverse], order.size


def generate_rb_features(
    X: Union[Dataset, np.ndarray],
    R: int,
    kernel: KernelParams,
    seed: int,
    n_threads: Optional[int] = None,
) -> RBFeatures:
    """
    Random Binning feature matrix.

    Args:
        X: Dataset or N x d matrix
        R: Number of grids (non-zeros per row)
        kernel: Laplacian kernel parameters
        seed: Base seed; grid j draws from its own stream (seed, j)
        n_threads: Worker threads for per-grid binning (defaults to RBSC_NUM_THREADS)

    Returns:
        RBFeatures(Z, grids) with Z an N x D CSR matrix; columns are allocated per
        distinct (grid, bin) in grid-major, then row, first-appearance order
    """
    if R < 1:
        raise ValueError(f"number of grids R must be >= 1, got {R}")
    Xm = _as_matrix(X)
    n, d = Xm.shape
    workers = config.num_threads(n_threads)

    def build(j: int) -> Tuple[GridParams, np.ndarray, int]:
        grid = sample_grid(kernel, d, grid_stream(seed, j))
        local, count = _bin_grid(Xm, grid)
        return grid, local, count

    if workers == 1 or R == 1:
        per_grid = [build(j) for j in range(R)]
    else:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex, \
                ThreadpoolController().limit(limits=1):
            per_grid = list(ex.map(build, range(R)))

    grids = [g for g, _, _ in per_grid]
    counts = np.array([c for _, _, c in per_grid], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(counts)[:-1]))

    indices = np.empty((n, R), dtype=np.int64)
    for j, (_, local, _) in enumerate(per_grid):
        indices[:, j] = local + offsets[j]

    D = int(counts.sum())
    data = np.full(n * R, 1.0 / math.sqrt(R))
    indptr = np.arange(0, n * R + 1, R, dtype=np.int64)
    Z = sp.csr_matrix((data, indices.ravel(), indptr), shape=(n, D))
    Z.has_sorted_indices = True

    logger.debug(f"rb features n={n} d={d} R={R} D={D} sigma={kernel.sigma} threads={workers}")
    return RBFeatures(Z, grids)


def estimate_kappa(Z: sp.csr_matrix, grids: List[GridParams]) -> float:
    """
    Mean over grids of 1 / (largest bin occupancy / N).

    Z must carry the RB layout: exactly one entry per grid per row, in grid order.
    """
    n = Z.shape[0]
    R = len(grids)
    if R < 1 or Z.nnz != n * R:
        raise ValueError(f"expected {n} x {R} RB non-zeros, got nnz={Z.nnz}")
    cols = Z.indices.reshape(n, R)
    occupancy = np.bincount(Z.indices, minlength=Z.shape[1])
    max_occupancy = occupancy[cols].max(axis=0)
    return float(np.mean(n / max_occupancy))


def generate_rff_features(
    X: Union[Dataset, np.ndarray],
    R: int,
    kernel: KernelParams,
    seed: int,
) -> np.ndarray:
    """
    Random Fourier features sqrt(2/R) cos(X W + b).

    laplacian: W entries standard Cauchy scaled by 1/sigma (product-form L1 kernel)
    gaussian:  W entries normal with standard deviation 1/sigma
    """
    if R < 1:
        raise ValueError(f"number of features R must be >= 1, got {R}")
    Xm = _as_matrix(X)
    d = Xm.shape[1]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_RF_STREAM,))))
    if kernel.family == "laplacian":
        W = rng.standard_cauchy((d, R)) / kernel.sigma
    else:
        W = rng.standard_normal((d, R)) / kernel.sigma
    b = rng.uniform(0.0, 2.0 * math.pi, size=R)
    return math.sqrt(2.0 / R) * np.cos(Xm @ W + b)


def exact_kernel_matrix(X: Union[Dataset, np.ndarray], kernel: KernelParams) -> np.ndarray:
    """Dense N x N kernel matrix (laplacian: exp(-||x-y||_1/sigma), gaussian: exp(-||x-y||^2/(2 sigma^2)))"""
    Xm = _as_matrix(X)
    if kernel.family == "laplacian":
        return np.exp(-cdist(Xm, Xm, metric="cityblock") / kernel.sigma)
    return np.exp(-cdist(Xm, Xm, metric="sqeuclidean") / (2.0 * kernel.sigma ** 2))


def save_features_binary(Z: sp.csr_matrix, R: int, path: str) -> None:
    """
    Write an RB matrix as: magic b'RBZ1', int64 header (N, D, R), then the N x R
    int64 column indices row by row. Values are implicit (1/sqrt(R)).
    """
    n, D = Z.shape
    if Z.nnz != n * R:
        raise ValueError(f"not an RB matrix with R={R}: nnz={Z.nnz}, N={n}")
    with open(path, "wb") as f:
        f.write(BINARY_MAGIC)
        f.write(struct.pack("<qqq", n, D, R))
        f.write(Z.indices.astype("<i8", copy=False).tobytes())


def load_features_binary(path: str) -> Tuple[sp.csr_matrix, int]:
    """Read a file written by save_features_binary; returns (Z, R)"""
    with open(path, "rb") as f:
        magic = f.read(len(BINARY_MAGIC))
        if magic != BINARY_MAGIC:
            raise ValueError(f"not an RB feature file (bad magic {magic!r}): {path}")
        n, D, R = struct.unpack("<qqq", f.read(24))
        indices = np.frombuffer(f.read(), dtype="<i8").astype(np.int64)
    if indices.size != n * R:
        raise ValueError(f"truncated RB feature file: expected {n * R} indices, got {indices.size}")
    data = np.full(n * R, 1.0 / math.sqrt(R))
    indptr = np.arange(0, n * R + 1, R, dtype=np.int64)
    return sp.csr_matrix((data, indices, indptr), shape=(n, D)), R


def save_features_mtx(Z: sp.spmatrix, path: str) -> None:
    """MatrixMarket coordinate text, for debugging"""
    scipy.io.mmwrite(path, sp.coo_matrix(Z), comment="random binning feature matrix")
