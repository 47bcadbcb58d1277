"""
End-to-end clustering pipelines.

sc_rb      RB features -> degrees -> Zhat -> top-K singular vectors -> row normalize -> K-means
sc_rf      same pipeline on dense Random Fourier features
sv_rf      K-means on the top-K left singular vectors of the raw RF matrix (approximates W, not L)
exact_sc   dense kernel, dense normalized Laplacian, dense eigendecomposition
kmeans_raw K-means on the input features
"""
import dataclasses
import json
from dataclasses import dataclass
from typing import Any, Callable, Dict, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from loguru import logger

from config import EXACT_SC_MAX_N, RF_DEGREE_FLOOR_RATIO
from datasets import Dataset
from eigensolver import SvdConfig, SvdResult, _fix_signs, row_normalize, top_k_left_singular_vectors
from graph import compute_degrees, dense_normalized_laplacian, weight_rows
from kmeans import ClusterAssignment, KMeansConfig, kmeans
from rb_features import (
    KernelParams,
    estimate_kappa,
    exact_kernel_matrix,
    generate_rb_features,
    generate_rff_features,
)
from timing import StageTimings

METHODS = ("sc_rb", "sc_rf", "sv_rf", "exact_sc", "kmeans_raw")


class ExactClusteringTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class PipelineSeeds:
    features: int = 0
    svd: int = 0
    kmeans: int = 0

    @classmethod
    def from_seed(cls, seed: int) -> "PipelineSeeds":
        return cls(seed, seed, seed)


class ExactSpectrum(NamedTuple):
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    U: np.ndarray


def _svd_config(template: Optional[SvdConfig], K: int, seed: int) -> SvdConfig:
    if template is None:
        return SvdConfig(k=K, seed=seed)
    restart = template.restart_dim if template.restart_dim > 2 * K else max(4 * K, 32)
    return dataclasses.replace(template, k=K, seed=seed, block_size=template.block_size
                               if template.k == K else K, restart_dim=restart)


def _kmeans_config(template: Optional[KMeansConfig], K: int, seed: int) -> KMeansConfig:
    if template is None:
        return KMeansConfig(k=K, seed=seed)
    return dataclasses.replace(template, k=K, seed=seed)


def _check_solver(svd: SvdResult, cfg: SvdConfig) -> None:
    if svd.all_converged:
        return
    ratio = svd.max_residual_ratio(cfg.tol)
    if ratio <= 10.0:
        logger.warning(f"svd stopped before full convergence (max residual {ratio:.2f} x tol); "
                       f"continuing with the current triplets")
        return
    raise RuntimeError(
        f"svd did not converge: max residual {ratio:.3g} x tol after {svd.matvec_count} matvecs "
        f"(raise max_matvecs or loosen tol)"
    )


def _embed(Z, K: int, seed: int, svd_cfg: Optional[SvdConfig], timings: StageTimings,
           normalize_graph: bool = True, degree_floor_ratio: float = 0.0) -> Tuple[SvdResult, int]:
    n_clamped = 0
    if normalize_graph:
        with timings.stage("degrees"):
            deg = compute_degrees(Z, relative_floor=degree_floor_ratio)
            Zhat = weight_rows(Z, deg)
        n_clamped = deg.n_clamped
    else:
        Zhat = Z

    cfg = _svd_config(svd_cfg, K, seed)
    with timings.stage("svd"):
        svd = top_k_left_singular_vectors(Zhat, cfg)
    _check_solver(svd, cfg)
    return svd, n_clamped


def _cluster_features(
    Z,
    K: int,
    seeds: PipelineSeeds,
    svd_cfg: Optional[SvdConfig],
    km_cfg: Optional[KMeansConfig],
    timings: StageTimings,
    normalize_graph: bool = True,
    normalize_rows: bool = True,
    n_threads: Optional[int] = None,
    degree_floor_ratio: float = 0.0,
) -> ClusterAssignment:
    """Shared tail of the feature-based pipelines"""
    svd, n_clamped = _embed(Z, K, seeds.svd, svd_cfg, timings, normalize_graph, degree_floor_ratio)

    with timings.stage("kmeans"):
        if normalize_rows:
            normalized = row_normalize(svd.U)
            points, n_zero = normalized.rows, normalized.n_zero_rows
        else:
            points, n_zero = svd.U, 0
        assignment = kmeans(points, _kmeans_config(km_cfg, K, seeds.kmeans), n_threads)

    assignment.embedding = svd.U
    assignment.provenance.update({
        "svd_solver": svd.solver,
        "matvecs": svd.matvec_count,
        "svd_iterations": svd.iterations,
        "svd_converged": svd.all_converged,
        "degenerate_gap": svd.degenerate_gap,
        "singular_values": [float(s) for s in svd.singular_values],
        "clamped_degrees": n_clamped,
        "zero_rows": n_zero,
    })
    return assignment


def _finish(assignment: ClusterAssignment, method: str, K: int, seeds: PipelineSeeds,
            timings: StageTimings, **extra: Any) -> ClusterAssignment:
    assignment.provenance.update({
        "method": method,
        "K": K,
        "seeds": dataclasses.asdict(seeds),
        "timings": timings.as_dict(),
        **extra,
    })
    logger.info(f"{method} K={K} total={timings.total:.3f}s inertia={assignment.inertia:.6g}")
    return assignment


def spectral_cluster_rb(
    ds: Dataset,
    K: int,
    R: int,
    kernel: KernelParams,
    seeds: PipelineSeeds = PipelineSeeds(),
    svd_cfg: Optional[SvdConfig] = None,
    km_cfg: Optional[KMeansConfig] = None,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """
    Scalable spectral clustering with Random Binning features.

    The provenance block records R, the kappa estimate, D, matvec count and the
    per-stage timings; `embedding` holds the column-orthonormal U before row normalization.
    """
    timings = StageTimings()
    with timings.stage("total"):
        with timings.stage("features"):
            Z, grids = generate_rb_features(ds, R, kernel, seeds.features, n_threads)
            kappa = estimate_kappa(Z, grids)
        assignment = _cluster_features(Z, K, seeds, svd_cfg, km_cfg, timings, n_threads=n_threads)
    return _finish(assignment, "sc_rb", K, seeds, timings, R=R, kappa=kappa,
                   n_features=int(Z.shape[1]), kernel=dataclasses.asdict(kernel))


def spectral_cluster_rf(
    ds: Dataset,
    K: int,
    R: int,
    kernel: KernelParams,
    seeds: PipelineSeeds = PipelineSeeds(),
    svd_cfg: Optional[SvdConfig] = None,
    km_cfg: Optional[KMeansConfig] = None,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """Spectral clustering on Random Fourier features (degrees by the same two-matvec trick)"""
    timings = StageTimings()
    with timings.stage("total"):
        with timings.stage("features"):
            Z = generate_rff_features(ds, R, kernel, seeds.features)
        assignment = _cluster_features(Z, K, seeds, svd_cfg, km_cfg, timings, n_threads=n_threads,
                                       degree_floor_ratio=RF_DEGREE_FLOOR_RATIO)
    return _finish(assignment, "sc_rf", K, seeds, timings, R=R, kappa=None,
                   n_features=R, kernel=dataclasses.asdict(kernel))


def singular_vector_cluster_rf(
    ds: Dataset,
    K: int,
    R: int,
    kernel: KernelParams,
    seeds: PipelineSeeds = PipelineSeeds(),
    svd_cfg: Optional[SvdConfig] = None,
    km_cfg: Optional[KMeansConfig] = None,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """K-means on the top-K left singular vectors of the unweighted RF matrix"""
    timings = StageTimings()
    with timings.stage("total"):
        with timings.stage("features"):
            Z = generate_rff_features(ds, R, kernel, seeds.features)
        assignment = _cluster_features(Z, K, seeds, svd_cfg, km_cfg, timings,
                                       normalize_graph=False, normalize_rows=False,
                                       n_threads=n_threads)
    return _finish(assignment, "sv_rf", K, seeds, timings, R=R, kappa=None,
                   n_features=R, kernel=dataclasses.asdict(kernel))


def exact_spectrum(ds: Dataset, K: int, kernel: KernelParams) -> ExactSpectrum:
    """Dense normalized Laplacian and its K smallest eigenpairs"""
    if ds.n_samples > EXACT_SC_MAX_N:
        raise ExactClusteringTooLarge(
            f"exact spectral clustering materializes an N x N matrix; "
            f"N={ds.n_samples} exceeds the limit of {EXACT_SC_MAX_N}"
        )
    if not 1 <= K <= ds.n_samples:
        raise ValueError(f"K must be in [1, {ds.n_samples}], got {K}")
    W = exact_kernel_matrix(ds, kernel)
    L = dense_normalized_laplacian(W)
    eigenvalues, U = scipy.linalg.eigh(L, subset_by_index=[0, K - 1])
    return ExactSpectrum(L, eigenvalues, _fix_signs(U))


def exact_spectral_cluster(
    ds: Dataset,
    K: int,
    kernel: KernelParams,
    km_cfg: Optional[KMeansConfig] = None,
    seed: int = 0,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """Exact normalized spectral clustering (N <= EXACT_SC_MAX_N)"""
    timings = StageTimings()
    with timings.stage("total"):
        with timings.stage("features"):
            spectrum = exact_spectrum(ds, K, kernel)
        with timings.stage("kmeans"):
            normalized = row_normalize(spectrum.U)
            assignment = kmeans(normalized.rows, _kmeans_config(km_cfg, K, seed), n_threads)
    assignment.embedding = spectrum.U
    seeds = PipelineSeeds(kmeans=seed)
    return _finish(assignment, "exact_sc", K, seeds, timings, R=None, kappa=None,
                   n_features=None, eigenvalues=[float(v) for v in spectrum.eigenvalues],
                   kernel=dataclasses.asdict(kernel))


def kmeans_raw(
    ds: Dataset,
    K: int,
    km_cfg: Optional[KMeansConfig] = None,
    seed: int = 0,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """Plain K-means on the input features"""
    timings = StageTimings()
    with timings.stage("total"):
        with timings.stage("kmeans"):
            assignment = kmeans(ds.X, _kmeans_config(km_cfg, K, seed), n_threads)
    return _finish(assignment, "kmeans_raw", K, PipelineSeeds(kmeans=seed), timings,
                   R=None, kappa=None, n_features=ds.n_features)


def spectral_embedding(
    ds: Dataset,
    K: int,
    R: int,
    kernel: KernelParams,
    method: str = "sc_rb",
    seed: int = 0,
    svd_cfg: Optional[SvdConfig] = None,
    n_threads: Optional[int] = None,
) -> SvdResult:
    """Top-K singular vectors of the degree-weighted RB or RF matrix, without the K-means stage"""
    ratio = 0.0
    if method == "sc_rb":
        Z, _ = generate_rb_features(ds, R, kernel, seed, n_threads)
    elif method == "sc_rf":
        Z = generate_rff_features(ds, R, kernel, seed)
        ratio = RF_DEGREE_FLOOR_RATIO
    else:
        raise ValueError(f"spectral_embedding supports sc_rb and sc_rf, got {method!r}")
    svd, _ = _embed(Z, K, seed, svd_cfg, StageTimings(), degree_floor_ratio=ratio)
    return svd


def trace_gap(U: np.ndarray, L: np.ndarray, exact_eigenvalues: np.ndarray) -> float:
    """trace(U^T L U) minus the sum of the K smallest eigenvalues of L"""
    U = np.asarray(U, dtype=np.float64)
    objective = float(np.trace(U.T @ L @ U))
    return objective - float(np.sum(np.sort(exact_eigenvalues)[:U.shape[1]]))


def run_method(
    method: str,
    ds: Dataset,
    K: int,
    R: int,
    kernel: KernelParams,
    seed: int,
    svd_cfg: Optional[SvdConfig] = None,
    km_cfg: Optional[KMeansConfig] = None,
    n_threads: Optional[int] = None,
) -> ClusterAssignment:
    """Dispatch one pipeline by method name with all stages sharing `seed`"""
    seeds = PipelineSeeds.from_seed(seed)
    runners: Dict[str, Callable[[], ClusterAssignment]] = {
        "sc_rb": lambda: spectral_cluster_rb(ds, K, R, kernel, seeds, svd_cfg, km_cfg, n_threads),
        "sc_rf": lambda: spectral_cluster_rf(ds, K, R, kernel, seeds, svd_cfg, km_cfg, n_threads),
        "sv_rf": lambda: singular_vector_cluster_rf(ds, K, R, kernel, seeds, svd_cfg, km_cfg, n_threads),
        "exact_sc": lambda: exact_spectral_cluster(ds, K, kernel, km_cfg, seed, n_threads),
        "kmeans_raw": lambda: kmeans_raw(ds, K, km_cfg, seed, n_threads),
    }
    if method not in runners:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return runners[method]()


def write_assignment_csv(assignment: ClusterAssignment, path: str) -> None:
    """`index,label` rows"""
    pd.DataFrame({"index": np.arange(assignment.labels.size), "label": assignment.labels}).to_csv(
        path, index=False
    )


def write_assignment_json(
    assignment: ClusterAssignment,
    path: str,
    dataset: Optional[str] = None,
    metrics: Optional[Dict[str, float]] = None,
) -> None:
    """Labels plus the full provenance block"""
    document = {
        "dataset": dataset,
        "labels": [int(v) for v in assignment.labels],
        "inertia": assignment.inertia,
        "iterations_used": assignment.iterations_used,
        "replicate_chosen": assignment.replicate_chosen,
        "provenance": assignment.provenance,
    }
    if metrics is not None:
        document["metrics"] = metrics
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, default=float)
