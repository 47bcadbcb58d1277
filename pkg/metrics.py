"""
Clustering quality metrics: NMI, Rand index, F-measure, accuracy, and the
average-rank aggregation across methods.

All metrics are in [0, 1], higher is better, and invariant under relabeling of
either partition.
"""
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Mapping, Union

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import normalized_mutual_info_score, rand_score
from sklearn.metrics.cluster import contingency_matrix

METRIC_NAMES = ("nmi", "ri", "fm", "acc")

Labels = Union[np.ndarray, Iterable[int]]


def _check_labels(pred: Labels, truth: Labels):
    pred = np.asarray(pred).reshape(-1)
    truth = np.asarray(truth).reshape(-1)
    if pred.size != truth.size:
        raise ValueError(f"label length mismatch: pred has {pred.size}, truth has {truth.size}")
    if pred.size == 0:
        raise ValueError("labels are empty")
    return pred, truth


@dataclass(frozen=True)
class ContingencyTable:
    """counts[i, j] = number of samples in predicted cluster i and true cluster j"""
    counts: np.ndarray

    @classmethod
    def from_labels(cls, pred: Labels, truth: Labels) -> "ContingencyTable":
        pred, truth = _check_labels(pred, truth)
        return cls(np.asarray(contingency_matrix(pred, truth), dtype=np.int64))

    @property
    def N(self) -> int:
        return int(self.counts.sum())

    @property
    def pred_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def true_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass(frozen=True)
class MetricReport:
    nmi: float
    ri: float
    fm: float
    acc: float

    def __post_init__(self):
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not -1e-12 <= value <= 1.0 + 1e-12:
                raise ValueError(f"{name}={value} is outside [0, 1]")
            object.__setattr__(self, name, float(min(max(value, 0.0), 1.0)))

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def nmi(pred: Labels, truth: Labels) -> float:
    """2 I(P;T) / (H(P) + H(T)) in nats; 1.0 when both partitions are a single cluster"""
    pred, truth = _check_labels(pred, truth)
    return float(normalized_mutual_info_score(truth, pred, average_method="arithmetic"))


def rand_index(pred: Labels, truth: Labels) -> float:
    """(TP + TN) / number of unordered pairs"""
    pred, truth = _check_labels(pred, truth)
    if pred.size == 1:
        return 1.0
    return float(rand_score(truth, pred))


def f_measure(pred: Labels, truth: Labels) -> float:
    """
    Mean over true clusters of the best F-measure against any predicted cluster.

    F(i, j) = 2 |P_i & T_j| / (|P_i| + |T_j|), which equals the harmonic mean of
    precision and recall and is 0 when the overlap is empty.
    """
    table = ContingencyTable.from_labels(pred, truth)
    denom = table.pred_sizes[:, None] + table.true_sizes[None, :]
    scores = 2.0 * table.counts / denom
    return float(scores.max(axis=0).mean())


def accuracy(pred: Labels, truth: Labels) -> float:
    """Fraction of samples matched under the optimal one-to-one cluster mapping"""
    table = ContingencyTable.from_labels(pred, truth)
    rows, cols = linear_sum_assignment(table.counts, maximize=True)
    return float(table.counts[rows, cols].sum() / table.N)


def evaluate(pred: Labels, truth: Labels) -> MetricReport:
    return MetricReport(
        nmi=nmi(pred, truth),
        ri=rand_index(pred, truth),
        fm=f_measure(pred, truth),
        acc=accuracy(pred, truth),
    )


def average_rank(reports: Union[pd.DataFrame, Mapping[str, MetricReport]]) -> pd.Series:
    """
    Rank methods per metric (best = 1, ties share the mean rank) and average the ranks.

    Args:
        reports: DataFrame indexed by method with one column per metric, or a
            mapping of method name to MetricReport

    Returns:
        Series of average rank per method, lower is better

    Raises:
        ValueError: fewer than two methods, or a missing / NaN metric
    """
    if isinstance(reports, Mapping):
        table = pd.DataFrame({name: r.to_dict() for name, r in reports.items()}).T
    else:
        table = reports
    missing = [m for m in METRIC_NAMES if m not in table.columns]
    if missing:
        raise ValueError(f"metric table is missing {missing}")
    table = table[list(METRIC_NAMES)].astype(float)
    if len(table) < 2:
        raise ValueError(f"average rank needs at least 2 methods, got {len(table)}")
    if table.isna().any().any():
        raise ValueError("metric table contains missing values")
    ranks = table.rank(axis=0, ascending=False, method="average")
    return ranks.mean(axis=1).rename("average_rank")
