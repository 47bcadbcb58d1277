"""
Experiment harness: rank sweeps, sample sweeps, scaling fits and report tables.

An ExperimentSpec (JSON) names a dataset or a synthetic block, the methods to run,
one sweep variable (R or N) with its values, the seeds and optionally several top-K
solvers. run_experiment executes the Cartesian product of (sweep value, seed, method,
solver), sharing seeds across methods, and appends one row per run to a CSV as soon as
the run finishes. Cells already present in the CSV are not run again, so rerunning an
experiment resumes it.
"""
import concurrent.futures as cf
import dataclasses
import itertools
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from threadpoolctl import ThreadpoolController

import config
from datasets import Dataset, SyntheticSpec, load_dataset, make_synthetic, standardize
from eigensolver import SVD_SOLVERS, SvdConfig
from kmeans import KMeansConfig
from metrics import METRIC_NAMES, average_rank, evaluate
from rb_features import KernelParams
from spectral import METHODS, exact_spectrum, run_method, spectral_embedding, trace_gap
from timing import StageTimings

SWEEP_VARIABLES = ("R", "N")
# methods whose cells are repeated per solver
ITERATIVE_METHODS = ("sc_rb", "sc_rf", "sv_rf")
RECORDS_FILE = "records.csv"

RECORD_COLUMNS = [
    "method", "solver", "variable", "value", "seed", "N", "K", "R",
    "nmi", "ri", "fm", "acc",
    "t_features", "t_degrees", "t_svd", "t_kmeans", "t_total",
    "matvecs", "kappa", "D", "error",
]

_SPEC_KEYS = {
    "name", "dataset", "synthetic", "standardize", "methods", "sweep", "seeds", "K", "R",
    "kernel", "svd", "kmeans", "output_dir", "warmup", "parallel", "subsample_seed", "solvers",
}


@dataclass(frozen=True)
class ExperimentSpec:
    methods: List[str]
    variable: str
    values: List[int]
    seeds: List[int]
    dataset: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    do_standardize: bool = False
    K: Optional[int] = None
    R: int = 256
    kernel: KernelParams = KernelParams()
    svd: Dict[str, Any] = field(default_factory=dict)
    kmeans: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = config.OUTPUT_DIR
    warmup: bool = True
    parallel: bool = False
    subsample_seed: int = 0
    name: str = "experiment"
    solvers: List[str] = field(default_factory=lambda: ["davidson"])

    def __post_init__(self):
        if not self.solvers:
            raise ValueError("solver list is empty")
        bad = [s for s in self.solvers if s not in SVD_SOLVERS]
        if bad:
            raise ValueError(f"unknown solvers {bad}; expected a subset of {SVD_SOLVERS}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ValueError(f"duplicate solvers in {self.solvers}")
        if "solver" in self.svd:
            raise ValueError("set the solver through 'solvers', not the svd block")
        if not self.methods:
            raise ValueError("experiment needs at least one method")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected a subset of {METHODS}")
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        if not self.values:
            raise ValueError("sweep values are empty")
        if any(v < 1 for v in self.values):
            raise ValueError(f"sweep values must be >= 1, got {self.values}")
        if not self.seeds:
            raise ValueError("seed list is empty")
        if (self.dataset is None) == (self.synthetic is None):
            raise ValueError("give exactly one of 'dataset' or 'synthetic'")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if "exact_sc" in self.methods:
            n_max = self.max_n()
            if n_max is not None and n_max > config.EXACT_SC_MAX_N:
                raise ValueError(
                    f"exact_sc needs N <= {config.EXACT_SC_MAX_N}, sweep reaches N={n_max}"
                )

    def max_n(self) -> Optional[int]:
        """Largest N the sweep touches, when it is known without loading data"""
        if self.variable == "N":
            return max(self.values)
        if self.synthetic is not None:
            return self.synthetic.N
        return None

    @classmethod
    def from_dict(cls, block: Dict[str, Any]) -> "ExperimentSpec":
        unknown = set(block) - _SPEC_KEYS
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        sweep = block.get("sweep") or {}
        if "variable" not in sweep or "values" not in sweep:
            raise ValueError("'sweep' needs 'variable' and 'values'")
        synthetic = block.get("synthetic")
        kernel = block.get("kernel") or {}
        svd = dict(block.get("svd") or {})
        if "solvers" in block and "solver" in svd:
            raise ValueError("give the solver either as 'solvers' or as 'svd.solver', not both")
        solvers = [str(s) for s in block.get("solvers", [svd.pop("solver", "davidson")])]
        return cls(
            methods=list(block.get("methods", [])),
            variable=sweep["variable"],
            values=[int(v) for v in sweep["values"]],
            seeds=[int(s) for s in block.get("seeds", [0])],
            dataset=block.get("dataset"),
            synthetic=SyntheticSpec.from_dict(synthetic) if synthetic is not None else None,
            do_standardize=bool(block.get("standardize", False)),
            K=block.get("K"),
            R=int(block.get("R", 256)),
            kernel=KernelParams(**kernel),
            svd=svd,
            kmeans=dict(block.get("kmeans") or {}),
            output_dir=block.get("output_dir", config.OUTPUT_DIR),
            warmup=bool(block.get("warmup", True)),
            parallel=bool(block.get("parallel", False)),
            subsample_seed=int(block.get("subsample_seed", 0)),
            name=block.get("name", "experiment"),
            solvers=solvers,
        )

    @classmethod
    def load(cls, path: str) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def svd_config(self, K: int, solver: Optional[str] = None) -> SvdConfig:
        return SvdConfig(k=K, solver=solver or self.solvers[0], **self.svd)

    def cells(self) -> List[Tuple[int, int, str, Optional[str]]]:
        """(value, seed, method, solver) in run order; methods without a top-K solve get solver None"""
        cells = []
        for value, seed, method in itertools.product(self.values, self.seeds, self.methods):
            for solver in (self.solvers if method in ITERATIVE_METHODS else [None]):
                cells.append((value, seed, method, solver))
        return cells

    def kmeans_config(self, K: int) -> KMeansConfig:
        return KMeansConfig(k=K, **self.kmeans)


@dataclass
class RunRecord:
    method: str
    variable: str
    value: int
    seed: int
    solver: Optional[str] = None
    N: int = 0
    K: int = 0
    R: Optional[int] = None
    nmi: float = math.nan
    ri: float = math.nan
    fm: float = math.nan
    acc: float = math.nan
    t_features: float = 0.0
    t_degrees: float = 0.0
    t_svd: float = 0.0
    t_kmeans: float = 0.0
    t_total: float = 0.0
    matvecs: Optional[int] = None
    kappa: Optional[float] = None
    D: Optional[int] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def cell(self) -> Tuple[str, Optional[str], str, int, int]:
        return (self.method, self.solver, self.variable, self.value, self.seed)

    def to_row(self) -> Dict[str, Any]:
        row = dataclasses.asdict(self)
        return {name: row[name] for name in RECORD_COLUMNS}

    @classmethod
    def from_row(cls, row: Mapping[str, Any]) -> "RunRecord":
        """Inverse of to_row for a row read back by load_records"""
        values = {}
        for f in dataclasses.fields(cls):
            value = row.get(f.name)
            if value is None or (isinstance(value, float) and math.isnan(value)) or value == "":
                if f.default is not dataclasses.MISSING:
                    values[f.name] = f.default
                continue
            if f.name in _INT_FIELDS:
                value = int(value)
            elif f.name in _STR_FIELDS:
                value = str(value)
            else:
                value = float(value)
            values[f.name] = value
        return cls(**values)


_INT_FIELDS = {"value", "seed", "N", "K", "R", "matvecs", "D"}
_STR_FIELDS = {"method", "solver", "variable", "error"}


def _datasets_for(spec: ExperimentSpec) -> Dict[int, Dataset]:
    """One dataset per sweep value (the same dataset for every value of an R sweep)"""
    if spec.variable == "R":
        ds = load_dataset(spec.dataset, spec.synthetic, spec.do_standardize)
        if "exact_sc" in spec.methods and ds.n_samples > config.EXACT_SC_MAX_N:
            raise ValueError(f"exact_sc needs N <= {config.EXACT_SC_MAX_N}, dataset has N={ds.n_samples}")
        return {v: ds for v in spec.values}

    if spec.synthetic is not None:
        built = {}
        for n in spec.values:
            ds = make_synthetic(spec.synthetic.with_n(n))
            built[n] = standardize(ds) if spec.do_standardize else ds
        return built

    base = load_dataset(spec.dataset, None, spec.do_standardize)
    return {n: base.subsample(n, spec.subsample_seed) for n in spec.values}


def run_cell(spec: ExperimentSpec, ds: Dataset, value: int, seed: int, method: str,
             n_threads: Optional[int] = None, solver: Optional[str] = None) -> RunRecord:
    """One (method, solver, sweep value, seed) run; failures land in the record's error field"""
    R = value if spec.variable == "R" else spec.R
    record = RunRecord(method, spec.variable, value, seed, solver=solver, N=ds.n_samples, R=R)
    try:
        K = spec.K or ds.n_clusters
        if K is None:
            raise ValueError("K is not set and the dataset carries no labels")
        record.K = K
        assignment = run_method(method, ds, K, R, spec.kernel, seed,
                                spec.svd_config(K, solver), spec.kmeans_config(K), n_threads)
    except Exception as e:
        record.error = f"{type(e).__name__}: {e}"
        logger.warning(f"run failed method={method} solver={solver} {spec.variable}={value} "
                       f"seed={seed}: {record.error}")
        return record

    prov = assignment.provenance
    timings = prov.get("timings", {})
    for name in StageTimings().as_dict():
        setattr(record, name, float(timings.get(name, 0.0)))
    record.matvecs = prov.get("matvecs")
    record.kappa = prov.get("kappa")
    record.D = prov.get("n_features")
    if method in ("exact_sc", "kmeans_raw"):
        record.R = None
    if ds.labels is not None:
        report = evaluate(assignment.labels, ds.labels)
        for name in METRIC_NAMES:
            setattr(record, name, getattr(report, name))
    return record


def append_record(record: RunRecord, path: str) -> None:
    """Append one row; the header is written only when the file is new or empty"""
    write_header = not os.path.exists(path) or os.path.getsize(path) == 0
    pd.DataFrame([record.to_row()], columns=RECORD_COLUMNS).to_csv(
        path, mode="a", header=write_header, index=False
    )


def recorded_cells(path: str) -> Dict[tuple, RunRecord]:
    """Records already in a CSV, keyed by cell; empty when the file does not exist yet"""
    if not os.path.exists(path) or os.path.getsize(path) == 0:
        return {}
    header = list(pd.read_csv(path, nrows=0).columns)
    if header != RECORD_COLUMNS:
        raise ValueError(f"{path} has columns {header}, expected {RECORD_COLUMNS}; use a new records file")
    frame = load_records(path)
    done = {}
    for row in frame.to_dict("records"):
        record = RunRecord.from_row(row)
        done[record.cell] = record
    return done


def run_experiment(spec: ExperimentSpec, records_path: Optional[str] = None,
                   n_threads: Optional[int] = None) -> List[RunRecord]:
    """
    Run every (sweep value, seed, method, solver) cell of the experiment.

    Cells already present in the records file are read back instead of run again,
    so every cell appears in the file exactly once.

    Args:
        spec: Experiment description
        records_path: CSV the records are appended to (defaults to <output_dir>/records.csv)
        n_threads: Worker threads; cells run in parallel only when spec.parallel is set

    Returns:
        Records in cell order (value, seed, method, solver)
    """
    if records_path is None:
        os.makedirs(spec.output_dir, exist_ok=True)
        records_path = os.path.join(spec.output_dir, RECORDS_FILE)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(records_path)), exist_ok=True)

    cells = spec.cells()
    done = recorded_cells(records_path)
    key = {c: (c[2], c[3], spec.variable, c[0], c[1]) for c in cells}
    pending = [c for c in cells if key[c] not in done]
    logger.info(f"experiment {spec.name}: {len(cells)} runs "
                f"({len(spec.methods)} methods x {len(spec.solvers)} solvers x "
                f"{len(spec.values)} {spec.variable} values x {len(spec.seeds)} seeds) -> {records_path}")
    if len(pending) < len(cells):
        logger.info(f"resuming: {len(cells) - len(pending)} of {len(cells)} runs already recorded")
    if not pending:
        return [done[key[c]] for c in cells]

    data = _datasets_for(spec)
    by_cell: Dict[tuple, RunRecord] = {key[c]: done[key[c]] for c in cells if key[c] in done}

    if spec.parallel:
        workers = config.num_threads(n_threads)
        with cf.ThreadPoolExecutor(max_workers=workers) as ex, \
                ThreadpoolController().limit(limits=1):
            futures = {ex.submit(run_cell, spec, data[v], v, s, m, 1, solver): (v, s, m, solver)
                       for v, s, m, solver in pending}
            for future in cf.as_completed(futures):
                record = future.result()
                append_record(record, records_path)
                by_cell[key[futures[future]]] = record
        return [by_cell[key[c]] for c in cells]

    warmed = set()
    for value, seed, method, solver in pending:
        if spec.warmup and (method, solver, value) not in warmed:
            run_cell(spec, data[value], value, seed, method, n_threads, solver)
            warmed.add((method, solver, value))
        record = run_cell(spec, data[value], value, seed, method, n_threads, solver)
        append_record(record, records_path)
        by_cell[key[(value, seed, method, solver)]] = record
        logger.info(f"{method}{'/' + solver if solver else ''} {spec.variable}={value} seed={seed} "
                    f"acc={record.acc:.4f} t_total={record.t_total:.3f}s"
                    + (f" error={record.error}" if record.error else ""))
    return [by_cell[key[c]] for c in cells]


_NUMERIC_COLUMNS = [c for c in RECORD_COLUMNS if c not in ("method", "solver", "variable", "error")]


def records_frame(records: Union[pd.DataFrame, Sequence[RunRecord]]) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        frame = records.copy()
    else:
        frame = pd.DataFrame([r.to_row() for r in records], columns=RECORD_COLUMNS)
    present = [c for c in _NUMERIC_COLUMNS if c in frame.columns]
    frame[present] = frame[present].apply(pd.to_numeric, errors="coerce")
    if "error" not in frame.columns:
        frame["error"] = np.nan
    # "" marks methods without a top-K solve so that groupby keeps them
    if "solver" not in frame.columns:
        frame["solver"] = ""
    frame["solver"] = frame["solver"].fillna("").astype(str)
    return frame


def load_records(path: str) -> pd.DataFrame:
    """Read a records CSV; a row torn by an interrupted write is skipped"""
    frame = pd.read_csv(path, on_bad_lines="skip")
    missing = [c for c in ("method", "value", "seed", "t_total") if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is not a records file (missing {missing})")
    return records_frame(frame)


def _successful(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[frame["error"].isna()]


def fit_scaling_exponent(records: Union[pd.DataFrame, Sequence[RunRecord]], variable: str = "N",
                         method: Optional[str] = None, min_points: int = 4, min_seeds: int = 3,
                         solver: Optional[str] = None) -> float:
    """
    Least-squares slope of log(median total time) against log(sweep value).

    Raises:
        ValueError: fewer than `min_points` sweep values with `min_seeds` successful
            runs each, mixed methods without `method`, mixed solvers without `solver`,
            or non-positive values / times
    """
    frame = _successful(records_frame(records))
    if "variable" in frame.columns:
        frame = frame[frame["variable"].isna() | (frame["variable"] == variable)]
    if method is not None:
        frame = frame[frame["method"] == method]
    elif frame["method"].nunique() > 1:
        raise ValueError("records mix several methods; pass method=")
    if solver is not None:
        frame = frame[frame["solver"] == solver]
    elif frame["solver"].nunique() > 1:
        raise ValueError("records mix several solvers; pass solver=")

    counts = frame.groupby("value")["t_total"].count()
    usable = counts[counts >= min_seeds].index
    if len(usable) < min_points:
        raise ValueError(
            f"scaling fit needs >= {min_points} {variable} values with >= {min_seeds} runs each, "
            f"got {len(usable)}"
        )
    medians = frame[frame["value"].isin(usable)].groupby("value")["t_total"].median()
    x = medians.index.to_numpy(dtype=np.float64)
    y = medians.to_numpy(dtype=np.float64)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("scaling fit needs positive sweep values and times")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


_CURVE_KEYS = ["method", "solver", "value"]


def aggregate_records(records: Union[pd.DataFrame, Sequence[RunRecord]]) -> pd.DataFrame:
    """Median curve per (method, solver, value) over seeds, with run and error counts"""
    frame = records_frame(records)
    numeric = list(METRIC_NAMES) + [c for c in StageTimings().as_dict()] + ["matvecs", "kappa", "D"]
    ok = _successful(frame)
    medians = ok.groupby(_CURVE_KEYS)[numeric].median()
    runs = frame.groupby(_CURVE_KEYS).size().rename("runs")
    errors = frame[frame["error"].notna()].groupby(_CURVE_KEYS).size().rename("errors")
    curve = medians.join(runs, how="right").join(errors).fillna({"errors": 0})
    curve["errors"] = curve["errors"].astype(int)
    return curve.reset_index().sort_values(_CURVE_KEYS, kind="stable")


def scaling_table(records: Union[pd.DataFrame, Sequence[RunRecord]], variable: str = "N") -> pd.DataFrame:
    """Fitted time exponent per (method, solver) (NaN where the sweep is too short)"""
    frame = records_frame(records)
    rows = []
    for (method, solver), _ in frame.groupby(["method", "solver"], sort=True):
        try:
            slope = fit_scaling_exponent(frame, variable, method, solver=solver)
        except ValueError as e:
            logger.debug(f"no scaling fit for {method} {solver}: {e}")
            slope = math.nan
        rows.append({"method": method, "solver": solver, "variable": variable, "slope": slope})
    return pd.DataFrame(rows, columns=["method", "solver", "variable", "slope"])


def _curve_labels(curve: pd.DataFrame) -> pd.Series:
    """Method name, suffixed with [solver] when a curve holds one method under several solvers"""
    if "solver" not in curve.columns:
        return curve["method"]
    solvers = curve["solver"].fillna("").astype(str)
    mixed = solvers[solvers != ""].nunique() > 1
    if not mixed:
        return curve["method"]
    return curve["method"].where(solvers == "", curve["method"] + "[" + solvers + "]")


def rank_table(curve: pd.DataFrame) -> pd.DataFrame:
    """Average rank of each method (and solver) at every sweep value, from median metrics"""
    labelled = curve.assign(method=_curve_labels(curve))
    rows = []
    for value, group in labelled.groupby("value"):
        table = group.set_index("method")[list(METRIC_NAMES)].dropna()
        if len(table) < 2:
            continue
        for method, score in average_rank(table).items():
            rows.append({"value": value, "method": method, "average_rank": score})
    return pd.DataFrame(rows, columns=["value", "method", "average_rank"])


def write_report(records_path: str, out_dir: str) -> Dict[str, str]:
    """Write curves.csv, scaling.csv and ranks.csv; returns name -> path"""
    frame = load_records(records_path)
    os.makedirs(out_dir, exist_ok=True)
    variable = frame["variable"].dropna().iloc[0] if frame["variable"].notna().any() else "N"

    curve = aggregate_records(frame)
    paths = {
        "curves": os.path.join(out_dir, "curves.csv"),
        "scaling": os.path.join(out_dir, "scaling.csv"),
        "ranks": os.path.join(out_dir, "ranks.csv"),
    }
    curve.to_csv(paths["curves"], index=False)
    scaling_table(frame, variable).to_csv(paths["scaling"], index=False)
    rank_table(curve).to_csv(paths["ranks"], index=False)
    logger.info(f"report from {records_path}: {len(frame)} records, {len(curve)} curve points")
    return paths


def rank_sweep_trace_gaps(
    ds: Dataset,
    K: int,
    R_values: Sequence[int],
    seeds: Sequence[int],
    kernel: KernelParams,
    methods: Sequence[str] = ("sc_rb", "sc_rf"),
    svd_cfg: Optional[SvdConfig] = None,
    n_threads: Optional[int] = None,
) -> pd.DataFrame:
    """
    Trace gap of approximate embeddings under the exact dense Laplacian.

    Returns:
        DataFrame with columns method, R, seed, trace_gap
    """
    spectrum = exact_spectrum(ds, K, kernel)
    rows = []
    for method, R, seed in itertools.product(methods, R_values, seeds):
        svd = spectral_embedding(ds, K, R, kernel, method, seed, svd_cfg, n_threads)
        gap = trace_gap(svd.U, spectrum.laplacian, spectrum.eigenvalues)
        rows.append({"method": method, "R": R, "seed": seed, "trace_gap": gap})
        logger.debug(f"trace gap method={method} R={R} seed={seed} gap={gap:.6g}")
    return pd.DataFrame(rows, columns=["method", "R", "seed", "trace_gap"])
