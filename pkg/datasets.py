"""
Dataset ingestion and synthesis.

Reads and writes LIBSVM text files (`label idx:val idx:val ...`, 1-based indices),
generates labelled synthetic data (Gaussian blobs, concentric rings) and provides
the opt-in column standardization used before kernel evaluation.
"""
import json
import math
import os
import re
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger

import config


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input; carries the 1-based line number"""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    labels: Optional[np.ndarray] = None
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be a 2-d matrix, got shape {X.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"dataset needs N >= 1 and d >= 1, got shape {X.shape}")
        object.__setattr__(self, "X", X)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (X.shape[0],):
                raise ValueError(
                    f"labels must have length {X.shape[0]}, got shape {labels.shape}"
                )
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_clusters(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(np.unique(self.labels).size)

    def subsample(self, n: int, seed: int) -> "Dataset":
        """
        Deterministic subsample of n rows (without replacement).

        Args:
            n: Number of rows to keep (1 <= n <= N)
            seed: Seed of the row permutation

        Returns:
            New Dataset whose rows keep their original relative order
        """
        if not 1 <= n <= self.n_samples:
            raise ValueError(f"subsample size must be in [1, {self.n_samples}], got {n}")
        if n == self.n_samples:
            return self
        rng = np.random.default_rng(seed)
        rows = np.sort(rng.permutation(self.n_samples)[:n])
        labels = None if self.labels is None else self.labels[rows]
        return Dataset(self.X[rows], labels, f"{self.name}[n={n}]")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "blobs"
    K: int = 3
    N: int = 3000
    d: int = 2
    separation: float = 6.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("blobs", "rings"):
            raise ValueError(f"synthetic kind must be 'blobs' or 'rings', got {self.kind!r}")
        if self.K < 2:
            raise ValueError(f"synthetic K must be >= 2, got {self.K}")
        if self.N < self.K:
            raise ValueError(f"synthetic N must be >= K ({self.K}), got {self.N}")
        if self.d < 1:
            raise ValueError(f"synthetic d must be >= 1, got {self.d}")
        if self.kind == "rings" and self.d < 2:
            raise ValueError("rings need d >= 2")
        if not self.separation > 0:
            raise ValueError(f"separation must be > 0, got {self.separation}")

    @classmethod
    def from_dict(cls, block: Dict[str, Any]) -> "SyntheticSpec":
        known = {"kind", "K", "N", "d", "separation", "seed"}
        unknown = set(block) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**block)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "K": self.K,
            "N": self.N,
            "d": self.d,
            "separation": self.separation,
            "seed": self.seed,
        }

    def with_n(self, n: int) -> "SyntheticSpec":
        return SyntheticSpec(self.kind, self.K, n, self.d, self.separation, self.seed)


LABEL_DIRECTIVE = re.compile(r"^\s*#\s*labels:\s*(verbatim|none)\s*$")


def _parse_float(token: str, line_number: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise LibsvmParseError(line_number, f"non-numeric {what} {token!r}")
    if not math.isfinite(value):
        raise LibsvmParseError(line_number, f"non-finite {what} {token!r}")
    return value


def parse_libsvm(path: str, name: Optional[str] = None) -> Dataset:
    """
    Read a LIBSVM-format file into a dense Dataset.

    A `# labels: verbatim` header keeps the integer labels as written and
    `# labels: none` yields an unlabelled Dataset; `write_libsvm` emits one of the two.

    Args:
        path: Path to the file
        name: Dataset name (defaults to the file name without extension)

    Returns:
        Dataset with d = max index observed and labels remapped to 0..K-1 in
        first-appearance order unless a header says otherwise

    Raises:
        LibsvmParseError: on malformed lines (with the line number)
        ValueError: if the file holds no samples
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    raw_labels: List[float] = []
    max_index = 0
    label_mode = "remap"

    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            directive = LABEL_DIRECTIVE.match(line)
            if directive:
                label_mode = directive.group(1)
                continue
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            tokens = stripped.split()
            raw_labels.append(_parse_float(tokens[0], line_number, "label"))

            indices = np.empty(len(tokens) - 1, dtype=np.int64)
            values = np.empty(len(tokens) - 1, dtype=np.float64)
            previous = 0
            for k, token in enumerate(tokens[1:]):
                idx_str, sep, val_str = token.partition(":")
                if not sep:
                    raise LibsvmParseError(line_number, f"expected idx:val, got {token!r}")
                try:
                    idx = int(idx_str)
                except ValueError:
                    raise LibsvmParseError(line_number, f"non-numeric index {idx_str!r}")
                if idx < 1:
                    raise LibsvmParseError(line_number, f"indices are 1-based, got {idx}")
                if idx <= previous:
                    raise LibsvmParseError(
                        line_number, f"indices must be increasing, got {idx} after {previous}"
                    )
                previous = idx
                indices[k] = idx - 1
                values[k] = _parse_float(val_str, line_number, "value")

            rows.append(np.full(indices.size, len(raw_labels) - 1, dtype=np.int64))
            cols.append(indices)
            vals.append(values)
            max_index = max(max_index, previous)

    if not raw_labels:
        raise ValueError(f"LIBSVM file has no samples: {path}")
    if max_index == 0:
        raise ValueError(f"LIBSVM file has no feature entries: {path}")

    X = np.zeros((len(raw_labels), max_index), dtype=np.float64)
    X[np.concatenate(rows), np.concatenate(cols)] = np.concatenate(vals)

    raw = np.asarray(raw_labels)
    if label_mode == "none":
        labels = None
    elif label_mode == "verbatim":
        if not np.all(raw == np.round(raw)):
            raise ValueError(f"verbatim labels must be integers: {path}")
        labels = raw.astype(np.int64)
    else:
        labels, _ = pd.factorize(raw, sort=False)
    if name is None:
        name = os.path.splitext(os.path.basename(path))[0]
    k = None if labels is None else np.unique(labels).size
    logger.debug(f"parsed libsvm path={path} n={X.shape[0]} d={X.shape[1]} k={k} labels={label_mode}")
    return Dataset(X, labels, name)


def write_libsvm(ds: Dataset, path: str) -> None:
    """
    Write a Dataset in LIBSVM format (zeros omitted, values in round-trip precision).

    An explicit `d:0` entry is written on the first row when the last column is all
    zeros so the dimension survives a parse. A `# labels:` header makes the labels
    read back unchanged; unlabelled datasets carry placeholder 0 labels under
    `# labels: none`.
    """
    X = ds.X
    d = ds.n_features
    keep_last = not np.any(X[:, d - 1] != 0.0)
    labelled = ds.labels is not None
    labels = ds.labels if labelled else np.zeros(ds.n_samples, dtype=np.int64)

    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# labels: {'verbatim' if labelled else 'none'}\n")
        for i in range(ds.n_samples):
            nz = np.flatnonzero(X[i])
            parts = [str(int(labels[i]))]
            parts.extend(f"{j + 1}:{float(X[i, j])!r}" for j in nz)
            if i == 0 and keep_last:
                parts.append(f"{d}:0.0")
            f.write(" ".join(parts) + "\n")


def _blob_means(K: int, d: int, spacing: float) -> np.ndarray:
    """K means whose nearest neighbours are `spacing` apart"""
    means = np.zeros((K, d))
    if d == 1:
        means[:, 0] = spacing * np.arange(K)
        return means
    radius = spacing / (2.0 * math.sin(math.pi / K))
    angles = 2.0 * math.pi * np.arange(K) / K
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    Generate a labelled synthetic dataset.

    blobs: K isotropic unit-variance Gaussians whose adjacent means are
           `separation` standard deviations apart.
    rings: K concentric annuli in the first two dimensions with radii
           separation * (k + 1) and unit radial noise; extra dimensions are unit noise.

    Samples are assigned to components round-robin (label i % K). Output is a pure
    function of the spec.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(spec.seed)))
    labels = np.arange(spec.N, dtype=np.int64) % spec.K
    std = 1.0

    if spec.kind == "blobs":
        means = _blob_means(spec.K, spec.d, spec.separation * std)
        X = means[labels] + std * rng.standard_normal((spec.N, spec.d))
    else:
        radii = spec.separation * std * (labels + 1.0)
        radii = radii + std * rng.standard_normal(spec.N)
        angles = rng.uniform(0.0, 2.0 * math.pi, size=spec.N)
        X = std * rng.standard_normal((spec.N, spec.d))
        X[:, 0] = radii * np.cos(angles)
        X[:, 1] = radii * np.sin(angles)

    name = f"{spec.kind}-K{spec.K}-N{spec.N}-d{spec.d}-sep{spec.separation:g}-s{spec.seed}"
    return Dataset(X, labels, name)


def standardize(ds: Dataset) -> Dataset:
    """Shift each column to mean 0 and scale to unit variance; constant columns become 0"""
    if ds.n_samples < 2:
        raise ValueError(f"standardize needs N >= 2, got {ds.n_samples}")
    mean = ds.X.mean(axis=0)
    centered = ds.X - mean
    std = np.sqrt(np.mean(centered ** 2, axis=0))
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(flat, 1.0, std)
    Xs = centered / scale
    Xs[:, flat] = 0.0
    return Dataset(Xs, ds.labels, ds.name)


def read_label_file(path: str) -> np.ndarray:
    """
    Read labels from an `index,label` CSV (with header) or a one-label-per-line file.

    Returns:
        Integer label vector ordered by index
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"File not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
    if "," in first:
        frame = pd.read_csv(path)
        if "label" not in frame.columns:
            raise ValueError(f"label CSV needs a 'label' column: {path}")
        if "index" in frame.columns:
            frame = frame.sort_values("index")
        return frame["label"].to_numpy(dtype=np.int64)
    labels = pd.read_csv(path, header=None, names=["label"])["label"]
    return labels.to_numpy(dtype=np.int64)


def load_dataset(
    path: Optional[str] = None,
    synthetic: Optional[SyntheticSpec] = None,
    do_standardize: bool = False,
) -> Dataset:
    """Load a LIBSVM file or synthesize data, then optionally standardize"""
    if (path is None) == (synthetic is None):
        raise ValueError("give exactly one of a dataset path or a synthetic spec")
    if synthetic is not None:
        ds = make_synthetic(synthetic)
    else:
        candidate = os.path.join(config.DATA_DIR, path)
        if not os.path.exists(path) and os.path.exists(candidate):
            path = candidate
        ds = parse_libsvm(path)
    return standardize(ds) if do_standardize else ds
