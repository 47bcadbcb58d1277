"""
Implicit normalized graph Laplacian.

The affinity W = Z Z^T is never formed. Degrees come from two matvecs,
D = diag(Z (Z^T 1)), and the Laplacian is represented by the weighted feature
matrix Zhat = D^{-1/2} Z with L = I - Zhat Zhat^T.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from loguru import logger

from config import DEGREE_FLOOR

FeatureMatrix = Union[sp.spmatrix, np.ndarray]


@dataclass(frozen=True)
class DegreeVector:
    values: np.ndarray
    n_clamped: int = 0

    def __len__(self) -> int:
        return self.values.size


def compute_degrees(Z: FeatureMatrix, floor: float = DEGREE_FLOOR,
                    relative_floor: float = 0.0) -> DegreeVector:
    """
    Row sums of Z Z^T computed as Z @ (Z^T @ 1).

    Entries below the effective floor, max(floor, relative_floor * median degree), are
    clamped to it. RB degrees are sums of non-negative collisions and only need the
    absolute floor; signed RF features give noisy estimates that can be negative or
    near zero, so the RF pipelines pass a relative floor to bound the row weights.
    """
    if relative_floor < 0:
        raise ValueError(f"relative_floor must be >= 0, got {relative_floor}")
    ones = np.ones(Z.shape[0])
    degrees = np.asarray(Z @ (Z.T @ ones)).reshape(-1)
    if relative_floor > 0 and degrees.size:
        floor = max(floor, relative_floor * float(np.median(degrees)))
    low = degrees < floor
    n_clamped = int(low.sum())
    if n_clamped:
        logger.warning(f"clamped {n_clamped} degree(s) below {floor:g}")
        degrees = np.where(low, floor, degrees)
    return DegreeVector(degrees, n_clamped)


def weight_rows(Z: FeatureMatrix, deg: DegreeVector) -> FeatureMatrix:
    """Zhat = D^{-1/2} Z; the sparsity pattern of Z is preserved"""
    values = deg.values
    if values.size != Z.shape[0]:
        raise ValueError(f"degree vector length {values.size} != rows {Z.shape[0]}")
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        raise ValueError("degrees must be strictly positive and finite")
    scale = 1.0 / np.sqrt(values)
    if sp.issparse(Z):
        Zc = sp.csr_matrix(Z, copy=True)
        Zc.data *= np.repeat(scale, np.diff(Zc.indptr))
        return Zc
    return np.asarray(Z) * scale[:, None]


def laplacian_quadratic_form(Zhat: FeatureMatrix, U: np.ndarray) -> float:
    """trace(U^T (I - Zhat Zhat^T) U) = K - ||Zhat^T U||_F^2 for column-orthonormal U"""
    U = np.asarray(U, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    projected = np.asarray(Zhat.T @ U)
    return float(U.shape[1] - np.sum(projected * projected))


def dense_normalized_laplacian(W: np.ndarray, floor: float = DEGREE_FLOOR) -> np.ndarray:
    """L = I - D^{-1/2} W D^{-1/2} from a dense affinity matrix"""
    degrees = np.maximum(W.sum(axis=1), floor)
    scale = 1.0 / np.sqrt(degrees)
    L = -(scale[:, None] * W * scale[None, :])
    L[np.diag_indices_from(L)] += 1.0
    return (L + L.T) / 2.0


def save_degrees_csv(deg: DegreeVector, path: str) -> None:
    pd.DataFrame({"index": np.arange(deg.values.size), "degree": deg.values}).to_csv(
        path, index=False, float_format="%.17g"
    )
