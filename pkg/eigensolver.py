"""
Top-K left singular vectors of the weighted feature matrix.

The solver works on the Gram operator G = Zhat Zhat^T, applied through two products
with Zhat, using a block Davidson iteration with thick restarting. The largest
eigenpairs (theta_i, u_i) of G give sigma_i = sqrt(theta_i); the same vectors are the
eigenvectors of L = I - G for its smallest eigenvalues 1 - sigma_i^2.

SvdConfig.solver = "eigsh" swaps the iteration for scipy's ARPACK eigsh on the same
operator, for solver comparisons; matvec accounting and the convergence test are shared.
"""
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
from loguru import logger
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, aslinearoperator, eigsh

from config import DEFAULT_SVD_TOL, ROW_NORM_FLOOR

LINDEP = 1e-10
RANK_DEFICIENT_RATIO = 1e-12
DEGENERATE_GAP = 1e-6
SVD_SOLVERS = ("davidson", "eigsh")
# below this many rows eigsh falls back to a dense eigendecomposition of G
EIGSH_MIN_N = 64


@dataclass(frozen=True)
class SvdConfig:
    k: int
    tol: float = DEFAULT_SVD_TOL
    max_matvecs: int = 20000
    block_size: Optional[int] = None
    restart_dim: Optional[int] = None
    seed: int = 0
    solver: str = "davidson"

    def __post_init__(self):
        if self.solver not in SVD_SOLVERS:
            raise ValueError(f"solver must be one of {SVD_SOLVERS}, got {self.solver!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_matvecs < 1:
            raise ValueError(f"max_matvecs must be >= 1, got {self.max_matvecs}")
        if self.block_size is None:
            object.__setattr__(self, "block_size", self.k)
        if self.restart_dim is None:
            object.__setattr__(self, "restart_dim", max(4 * self.k, 32))
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if self.restart_dim <= 2 * self.k:
            raise ValueError(f"restart_dim must exceed 2k = {2 * self.k}, got {self.restart_dim}")


@dataclass
class SvdResult:
    U: np.ndarray
    singular_values: np.ndarray
    matvec_count: int
    converged: np.ndarray
    residuals: np.ndarray
    rank_deficient: np.ndarray
    iterations: int = 0
    degenerate_gap: bool = False
    trace: list = field(default_factory=list)
    solver: str = "davidson"

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))

    def max_residual_ratio(self, tol: float) -> float:
        """Largest residual relative to tol * sigma_max^2"""
        scale = tol * max(self.singular_values[0], 0.0) ** 2
        if scale == 0.0:
            return float("inf") if np.any(self.residuals > 0) else 0.0
        return float(np.max(self.residuals) / scale)


class GramOperator:
    """G = Zhat Zhat^T through matvec access only; one G-product per vector costs 2 matvecs"""

    def __init__(self, Zhat):
        self.op = aslinearoperator(Zhat)
        self.shape = (self.op.shape[0], self.op.shape[0])
        self.matvecs = 0
        self.calls = 0

    def __call__(self, V: np.ndarray) -> np.ndarray:
        self.matvecs += 2 * V.shape[1]
        self.calls += 1
        return np.asarray(self.op.matmat(np.asarray(self.op.rmatmat(V))))


def _orthonormal_block(W: np.ndarray, V: Optional[np.ndarray]) -> np.ndarray:
    """Project W off span(V) twice, then keep its numerically independent directions"""
    scale = np.linalg.norm(W, axis=0).max(initial=0.0)
    if scale == 0.0:
        return W[:, :0]
    if V is not None and V.shape[1]:
        for _ in range(2):
            W = W - V @ (V.T @ W)
    Q, Rm, _ = scipy.linalg.qr(W, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rm))
    rank = int(np.sum(diag > LINDEP * scale))
    Q = Q[:, :rank]
    if V is not None and V.shape[1] and rank:
        Q = Q - V @ (V.T @ Q)
        Q, _ = np.linalg.qr(Q)
    return Q


def _fix_signs(U: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of every column positive"""
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[rows, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def _convergence(res: np.ndarray, theta: np.ndarray, theta_max: float, tol: float):
    """Per-triplet converged and rank-deficient flags for residuals of G"""
    sigma_max = np.sqrt(theta_max)
    sigma = np.sqrt(np.clip(theta, 0.0, None))
    deficient = theta <= RANK_DEFICIENT_RATIO * theta_max
    thresh = np.where(deficient, (tol * sigma_max) ** 2, tol * sigma_max * sigma)
    return res <= thresh, deficient


def _result(k: int, theta: np.ndarray, X: np.ndarray, res: np.ndarray, conv: np.ndarray,
            deficient: np.ndarray, next_theta: Optional[float], G: GramOperator,
            iterations: int, trace: list, solver: str) -> SvdResult:
    U = _fix_signs(X)
    singular_values = np.sqrt(np.clip(theta, 0.0, None))

    degenerate = False
    if next_theta is not None and singular_values[-1] > 0:
        next_sigma = np.sqrt(max(next_theta, 0.0))
        if next_sigma > 0 and singular_values[-1] / next_sigma < 1.0 + DEGENERATE_GAP:
            degenerate = True
            logger.warning(f"degenerate singular gap at k={k}: "
                           f"sigma_k={singular_values[-1]:.8f} sigma_k+1~{next_sigma:.8f}")
    if np.any(deficient):
        logger.warning(f"k={k} exceeds the numerical rank: "
                       f"{int(deficient.sum())} trailing singular value(s) are zero")

    return SvdResult(
        U=U,
        singular_values=singular_values,
        matvec_count=G.matvecs,
        converged=conv,
        residuals=res,
        rank_deficient=deficient,
        iterations=iterations,
        degenerate_gap=degenerate,
        trace=trace,
        solver=solver,
    )


def top_k_left_singular_vectors(Zhat, cfg: SvdConfig) -> SvdResult:
    """
    Largest k singular triplets of Zhat (left vectors only).

    cfg.solver picks the block Davidson iteration ("davidson") or ARPACK's implicitly
    restarted Lanczos through scipy's eigsh ("eigsh"). Both run on the same Gram
    operator and report residuals and convergence by the same test.

    Args:
        Zhat: N x D sparse or dense matrix
        cfg: Solver configuration

    Returns:
        SvdResult; when the matvec budget runs out the best iterate seen so far is
        returned with converged=False on the unconverged triplets
    """
    n, D = Zhat.shape
    k = cfg.k
    if n == 0 or D == 0:
        raise ValueError("cannot decompose an empty matrix")
    if k > min(n, D):
        raise ValueError(f"k={k} exceeds min(N, D) = {min(n, D)}")

    G = GramOperator(Zhat)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    if cfg.solver == "eigsh":
        return _eigsh(G, cfg, rng)
    return _davidson(G, cfg, rng)


def _eigsh(G: GramOperator, cfg: SvdConfig, rng: np.random.Generator) -> SvdResult:
    n, k = G.shape[0], cfg.k
    # one extra eigenpair feeds the degenerate-gap check
    want = min(k + 1, n - 1)
    if n <= EIGSH_MIN_N or want < k:
        theta, Y = scipy.linalg.eigh(G(np.eye(n)))
        ncv = n
    else:
        op = LinearOperator((n, n), matvec=lambda v: G(v.reshape(-1, 1)).reshape(-1),
                            matmat=G, dtype=np.float64)
        ncv = min(n, max(2 * want + 1, 20))
        maxiter = max(1, cfg.max_matvecs // (2 * ncv))
        try:
            theta, Y = eigsh(op, k=want, which="LA", tol=cfg.tol, v0=rng.standard_normal(n),
                             ncv=ncv, maxiter=maxiter)
        except ArpackNoConvergence as e:
            theta, Y = e.eigenvalues, e.eigenvectors
            logger.debug(f"eigsh stopped with {theta.size}/{want} eigenpairs matvecs={G.matvecs}")
            if theta.size < k:
                raise RuntimeError(f"eigsh found {theta.size} of {k} eigenpairs within "
                                   f"{G.matvecs} matvecs (raise max_matvecs or loosen tol)")
    order = np.argsort(theta)[::-1]
    theta, Y = theta[order], Y[:, order]

    X = Y[:, :k]
    res = np.linalg.norm(G(X) - X * theta[:k], axis=0)
    theta_max = max(theta[0], 0.0)
    conv, deficient = _convergence(res, theta[:k], theta_max, cfg.tol)
    trace = [{"iteration": G.calls, "matvecs": G.matvecs, "dim": ncv,
              "max_residual": float(res.max()), "n_converged": int(conv.sum())}]
    logger.debug(f"svd done solver=eigsh k={k} matvecs={G.matvecs} calls={G.calls} "
                 f"converged={int(conv.sum())}/{k}")
    return _result(k, theta[:k].copy(), X, res, conv, deficient,
                   theta[k] if theta.size > k else None, G, G.calls, trace, "eigsh")


def _davidson(G: GramOperator, cfg: SvdConfig, rng: np.random.Generator) -> SvdResult:
    n, k = G.shape[0], cfg.k
    max_dim = min(cfg.restart_dim, n)
    block = max(min(cfg.block_size, max_dim - k), 1)

    start = min(n, max_dim, max(k, block))
    V = _orthonormal_block(rng.standard_normal((n, start)), None)
    AV = G(V)

    best = None
    trace = []
    iteration = 0
    restarts = 0
    while True:
        iteration += 1
        H = V.T @ AV
        theta, Y = scipy.linalg.eigh((H + H.T) / 2.0)
        theta, Y = theta[::-1], Y[:, ::-1]

        X = V @ Y[:, :k]
        AX = AV @ Y[:, :k]
        residual = AX - X * theta[:k]
        res = np.linalg.norm(residual, axis=0)

        theta_max = max(theta[0], 0.0)
        conv, deficient = _convergence(res, theta[:k], theta_max, cfg.tol)
        score = float(res.max()) / theta_max if theta_max > 0 else np.inf

        trace.append({"iteration": iteration, "matvecs": G.matvecs, "dim": V.shape[1],
                      "max_residual": float(res.max()), "n_converged": int(conv.sum())})
        logger.debug(f"svd iter={iteration} dim={V.shape[1]} matvecs={G.matvecs} "
                     f"max_res={res.max():.3e} converged={int(conv.sum())}/{k}")

        if best is None or score <= best["score"] or conv.all():
            best = {"score": score, "theta": theta[:k].copy(), "X": X.copy(), "res": res,
                    "conv": conv, "deficient": deficient,
                    "next": theta[k] if theta.size > k else None}

        if conv.all():
            break
        if V.shape[1] >= n:
            break

        pending = np.flatnonzero(~conv)[:block]
        if G.matvecs + 2 * pending.size > cfg.max_matvecs:
            logger.debug(f"svd budget exhausted matvecs={G.matvecs} max={cfg.max_matvecs}")
            break

        if V.shape[1] + pending.size > max_dim:
            keep = min(V.shape[1], max(k + 1, max_dim // 2), max_dim - pending.size)
            keep = max(keep, k)
            V = V @ Y[:, :keep]
            AV = AV @ Y[:, :keep]
            restarts += 1
            logger.debug(f"svd restart={restarts} keep={keep} matvecs={G.matvecs}")
            if np.abs(V.T @ V - np.eye(keep)).max() > 1e-10:
                V, _ = np.linalg.qr(V)
                AV = G(V)
                continue

        W = _orthonormal_block(residual[:, pending], V)
        if W.shape[1] == 0:
            W = _orthonormal_block(rng.standard_normal((n, pending.size)), V)
            if W.shape[1] == 0:
                break
        V = np.hstack([V, W])
        AV = np.hstack([AV, G(W)])

    logger.debug(f"svd done k={k} matvecs={G.matvecs} iterations={iteration} "
                 f"restarts={restarts} converged={int(best['conv'].sum())}/{k}")
    return _result(k, best["theta"], best["X"], best["res"], best["conv"], best["deficient"],
                   best["next"], G, iteration, trace, "davidson")


def right_singular_vectors(Zhat, result: SvdResult) -> np.ndarray:
    """V = Zhat^T U / sigma (zero columns where sigma == 0)"""
    projected = np.asarray(aslinearoperator(Zhat).rmatmat(result.U))
    sigma = result.singular_values
    safe = np.where(sigma > 0, sigma, 1.0)
    return np.where(sigma > 0, projected / safe, 0.0)


def residual_certificates(Zhat, result: SvdResult) -> Tuple[np.ndarray, np.ndarray]:
    """Per-triplet ||Zhat v - sigma u|| and ||Zhat^T u - sigma v||, recomputed from scratch"""
    op = aslinearoperator(Zhat)
    V = right_singular_vectors(Zhat, result)
    sigma = result.singular_values
    left = np.linalg.norm(np.asarray(op.matmat(V)) - result.U * sigma, axis=0)
    right = np.linalg.norm(np.asarray(op.rmatmat(result.U)) - V * sigma, axis=0)
    return left, right


class NormalizedEmbedding(NamedTuple):
    rows: np.ndarray
    n_zero_rows: int


def row_normalize(U: np.ndarray, floor: float = ROW_NORM_FLOOR) -> NormalizedEmbedding:
    """Scale every row to unit Euclidean norm; rows with norm below `floor` become zero rows"""
    U = np.asarray(U, dtype=np.float64)
    if U.size == 0:
        raise ValueError("cannot normalize an empty embedding")
    norms = np.linalg.norm(U, axis=1)
    small = norms < floor
    safe = np.where(small, 1.0, norms)
    rows = U / safe[:, None]
    rows[small] = 0.0
    n_zero = int(small.sum())
    if n_zero:
        logger.warning(f"{n_zero} embedding row(s) have norm below {floor:g}; left as zero rows")
    return NormalizedEmbedding(rows, n_zero)
