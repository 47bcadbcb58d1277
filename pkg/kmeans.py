"""
Lloyd K-means with k-means++ seeding and independent replicates.

Used on the row-normalized spectral embedding and, directly on raw features, as the
plain K-means baseline.
"""
import concurrent.futures as cf
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from loguru import logger
from sklearn.cluster import kmeans_plusplus
from threadpoolctl import ThreadpoolController

import config


@dataclass(frozen=True)
class KMeansConfig:
    k: int
    replicates: int = config.DEFAULT_REPLICATES
    max_iters: int = 300
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    inertia: float
    centroids: np.ndarray
    iterations_used: int
    replicate_chosen: int
    inertia_history: List[float] = field(default_factory=list)
    provenance: Dict[str, Any] = field(default_factory=dict)
    embedding: Optional[np.ndarray] = None

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def _assign(points: np.ndarray, sq_norms: np.ndarray, centers: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest centroid per point (lowest index on ties) and the squared distance to it"""
    d2 = sq_norms[:, None] - 2.0 * (points @ centers.T) + np.sum(centers * centers, axis=1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _repair_empty(labels: np.ndarray, d2: np.ndarray, centers: np.ndarray,
                  points: np.ndarray, k: int) -> int:
    """Give each empty cluster the point farthest from its centroid (among clusters of size > 1)"""
    counts = np.bincount(labels, minlength=k)
    repaired = 0
    for c in np.flatnonzero(counts == 0):
        donors = counts[labels] > 1
        p = int(np.argmax(np.where(donors, d2, -1.0)))
        counts[labels[p]] -= 1
        labels[p] = c
        counts[c] = 1
        d2[p] = 0.0
        centers[c] = points[p]
        repaired += 1
    return repaired


def _centroids(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    n = points.shape[0]
    membership = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
    counts = np.asarray(membership.sum(axis=1)).reshape(-1)
    return np.asarray(membership @ points) / counts[:, None]


def _lloyd(points: np.ndarray, cfg: KMeansConfig, replicate: int,
           seed_seq: np.random.SeedSequence) -> ClusterAssignment:
    k = cfg.k
    sq_norms = np.sum(points * points, axis=1)
    init_seed = int(seed_seq.generate_state(1)[0])
    centers, _ = kmeans_plusplus(points, k, x_squared_norms=sq_norms, random_state=init_seed)
    centers = np.array(centers, dtype=np.float64)

    history = []
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        labels, d2 = _assign(points, sq_norms, centers)
        _repair_empty(labels, d2, centers, points, k)
        history.append(float(d2.sum()))
        updated = _centroids(points, labels, k)
        shift = np.linalg.norm(updated - centers)
        centers = updated
        if shift <= cfg.tol * max(np.linalg.norm(centers), np.finfo(float).tiny):
            break

    labels, d2 = _assign(points, sq_norms, centers)
    _repair_empty(labels, d2, centers, points, k)
    inertia = float(d2.sum())
    history.append(inertia)
    return ClusterAssignment(labels, inertia, centers, iterations, replicate, history)


def kmeans(points: np.ndarray, cfg: KMeansConfig, n_threads: Optional[int] = None) -> ClusterAssignment:
    """
    Best-inertia K-means over cfg.replicates independent runs.

    Args:
        points: N x m matrix
        cfg: K-means configuration
        n_threads: Replicates run in parallel on this many threads

    Returns:
        ClusterAssignment of the winning replicate, chosen by (inertia, replicate index)

    Raises:
        ValueError: if N < k or the input contains NaN / inf
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be an N x m matrix, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain NaN or inf")
    if points.shape[0] < cfg.k:
        raise ValueError(f"need at least k={cfg.k} points, got {points.shape[0]}")

    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.replicates)
    workers = min(config.num_threads(n_threads), cfg.replicates)

    # BLAS stays single-threaded on both paths so the replicates see identical arithmetic
    with ThreadpoolController().limit(limits=1, user_api="blas"):
        if workers == 1:
            runs = [_lloyd(points, cfg, r, streams[r]) for r in range(cfg.replicates)]
        else:
            with cf.ThreadPoolExecutor(max_workers=workers) as ex:
                runs = list(ex.map(lambda r: _lloyd(points, cfg, r, streams[r]), range(cfg.replicates)))

    best = min(runs, key=lambda run: (run.inertia, run.replicate_chosen))
    logger.debug(f"kmeans k={cfg.k} n={points.shape[0]} replicates={cfg.replicates} "
                 f"best={best.replicate_chosen} inertia={best.inertia:.6g} iters={best.iterations_used}")
    return best
