#!/usr/bin/env python3
"""
RB Spectral Clustering Command Line

Scalable spectral clustering with Random Binning features, the RF and exact
baselines, clustering metrics and the benchmark harness.

USAGE:
    python rbsc.py <command> [options]

COMMANDS:
    cluster     Run one pipeline on a LIBSVM file or a synthetic dataset
    bench       Run an experiment described by a JSON file, append records to CSV
    metrics     Score a predicted label file against a ground-truth label file
    report      Aggregate a records CSV into plot-ready curves, scaling slopes and ranks
    check       Validate the local setup

EXAMPLES:
    # SC_RB on a LIBSVM file with 10 clusters and 1024 grids
    python rbsc.py cluster --data pendigits -K 10 -R 1024 --sigma 0.5 --standardize

    # Same pipeline with ARPACK as the top-K solver
    python rbsc.py cluster --data pendigits -K 10 -R 1024 --sigma 0.5 --standardize --solver eigsh

    # Exact spectral clustering on synthetic rings
    python rbsc.py cluster --synthetic '{"kind": "rings", "K": 2, "N": 1000}' --method exact_sc --sigma 0.3

    # Keep the RB feature matrix and the degree vector of a run
    python rbsc.py cluster --data usps -K 10 --save-features usps.rbz --save-degrees usps_deg.csv

    # Rank sweep from a JSON experiment, then the report tables
    python rbsc.py bench experiments/rank_sweep.json
    python rbsc.py report results/records.csv --out-dir results/report

    # Davidson against eigsh over a rank sweep; rerunning resumes into the same records
    python rbsc.py bench experiments/solver_sweep.json --report

    # Score labels
    python rbsc.py metrics --pred results/pendigits_sc_rb_labels.csv --truth data/pendigits.labels

ENVIRONMENT:
    RBSC_NUM_THREADS    Worker threads (grids, K-means replicates, parallel bench cells)
    RBSC_BLAS_THREADS   BLAS thread cap for the main thread (default 1)
    RBSC_OUTPUT_DIR     Default output directory (default: results)
    RBSC_DATA_DIR       Where bare dataset names are looked up (default: data)
    RBSC_LOG_LEVEL      Log level for stderr (default: INFO)
    RBSC_LOG_FILE       Optional log file receiving every solver trace line
"""

import argparse
import json
import os
import sys
from typing import List, Optional

from threadpoolctl import ThreadpoolController

import config
from datasets import Dataset, SyntheticSpec, load_dataset, read_label_file
from eigensolver import SVD_SOLVERS, SvdConfig
from graph import compute_degrees, save_degrees_csv
from kmeans import KMeansConfig
from metrics import METRIC_NAMES, evaluate
from rb_features import KernelParams, generate_rb_features, save_features_binary, save_features_mtx
from spectral import METHODS, PipelineSeeds, run_method, write_assignment_csv, write_assignment_json


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments"""
    parser = argparse.ArgumentParser(
        description="Scalable spectral clustering with Random Binning features",
        epilog="""
Examples:
  %(prog)s cluster --data pendigits -K 10 -R 1024 --standardize
  %(prog)s cluster --synthetic '{"kind": "blobs", "K": 3, "N": 3000}' --method sc_rf
  %(prog)s bench experiments/rank_sweep.json --report
  %(prog)s metrics --pred labels.csv --truth truth.csv
  %(prog)s check
        """,
        formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument(
        '-v', '--verbose',
        action='store_true',
        help='Log solver traces (DEBUG level)'
    )
    parser.add_argument(
        '--threads',
        type=int,
        default=None,
        help=f'Worker threads (default: RBSC_NUM_THREADS={config.NUM_THREADS})'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    cluster = sub.add_parser('cluster', help='Run one clustering pipeline')
    source = cluster.add_mutually_exclusive_group(required=True)
    source.add_argument('--data', help='LIBSVM file (path, or name under RBSC_DATA_DIR)')
    source.add_argument('--synthetic', help='Synthetic spec as JSON text or @file.json')
    cluster.add_argument('--method', choices=METHODS, default='sc_rb', help='Pipeline (default: sc_rb)')
    cluster.add_argument('-K', '--clusters', type=int, default=None,
                         help='Number of clusters (default: number of distinct labels)')
    cluster.add_argument('-R', '--grids', type=int, default=256, help='Number of RB grids / RF features (default: 256)')
    cluster.add_argument('--kernel', choices=['laplacian', 'gaussian'], default='laplacian',
                         help='Kernel family (RB supports laplacian only)')
    cluster.add_argument('--sigma', type=float, default=1.0, help='Kernel bandwidth (default: 1.0)')
    cluster.add_argument('--seed', type=int, default=0, help='Seed shared by every stage (default: 0)')
    cluster.add_argument('--tol', type=float, default=config.DEFAULT_SVD_TOL,
                         help=f'SVD stopping tolerance (default: {config.DEFAULT_SVD_TOL:g})')
    cluster.add_argument('--max-matvecs', type=int, default=20000, help='SVD matvec budget (default: 20000)')
    cluster.add_argument('--solver', choices=SVD_SOLVERS, default='davidson',
                         help='Top-K solver: block Davidson or ARPACK eigsh (default: davidson)')
    cluster.add_argument('--replicates', type=int, default=config.DEFAULT_REPLICATES,
                         help=f'K-means replicates (default: {config.DEFAULT_REPLICATES})')
    cluster.add_argument('--standardize', action='store_true', help='Z-score every feature first')
    cluster.add_argument('--output-dir', default=config.OUTPUT_DIR, help='Where labels and provenance go')
    cluster.add_argument('--save-features', metavar='PATH', help='Write the RB matrix in the binary index format')
    cluster.add_argument('--features-mtx', metavar='PATH', help='Write the RB matrix as MatrixMarket')
    cluster.add_argument('--save-degrees', metavar='PATH', help='Write the RB degree vector as CSV')

    bench = sub.add_parser('bench', help='Run an experiment JSON')
    bench.add_argument('spec', help='ExperimentSpec JSON file')
    bench.add_argument('--records', default=None, help='Records CSV (default: <output_dir>/records.csv)')
    bench.add_argument('--report', action='store_true', help='Write the report tables after the run')

    metrics = sub.add_parser('metrics', help='Score a label file')
    metrics.add_argument('--pred', required=True, help='Predicted labels (index,label CSV or one per line)')
    metrics.add_argument('--truth', required=True, help='Ground-truth labels (same formats)')
    metrics.add_argument('--json', metavar='PATH', help='Also write the report as JSON')

    report = sub.add_parser('report', help='Aggregate a records CSV')
    report.add_argument('records', help='Records CSV written by bench')
    report.add_argument('--out-dir', default=None, help='Output directory (default: next to the records)')

    sub.add_parser('check', help='Validate the local setup')

    return parser.parse_args(argv)


def validate_arguments(args: argparse.Namespace) -> bool:
    """Validate parsed arguments; prints the first problem to stderr"""
    if args.threads is not None and args.threads < 1:
        print(f"Error: --threads must be >= 1, got {args.threads}", file=sys.stderr)
        return False
    if args.command == 'cluster':
        if args.clusters is not None and args.clusters < 1:
            print(f"Error: -K must be >= 1, got {args.clusters}", file=sys.stderr)
            return False
        if args.grids < 1:
            print(f"Error: -R must be >= 1, got {args.grids}", file=sys.stderr)
            return False
        if not args.sigma > 0:
            print(f"Error: --sigma must be > 0, got {args.sigma}", file=sys.stderr)
            return False
        if args.method == 'sc_rb' and args.kernel != 'laplacian':
            print("Error: Random Binning supports the laplacian kernel only", file=sys.stderr)
            return False
        if (args.save_features or args.features_mtx or args.save_degrees) and args.method != 'sc_rb':
            print("Error: --save-features / --features-mtx / --save-degrees need --method sc_rb", file=sys.stderr)
            return False
    if args.command == 'bench' and not os.path.exists(args.spec):
        print(f"Error: experiment file not found: {args.spec}", file=sys.stderr)
        return False
    if args.command == 'metrics':
        for path in (args.pred, args.truth):
            if not os.path.exists(path):
                print(f"Error: label file not found: {path}", file=sys.stderr)
                return False
    if args.command == 'report' and not os.path.exists(args.records):
        print(f"Error: records file not found: {args.records}", file=sys.stderr)
        return False
    return True


def _synthetic_spec(text: str) -> SyntheticSpec:
    if text.startswith('@'):
        with open(text[1:], 'r', encoding='utf-8') as f:
            text = f.read()
    return SyntheticSpec.from_json(text)


def _print_metrics(report) -> None:
    for name in METRIC_NAMES:
        print(f"  {name.upper():<4} {getattr(report, name):.4f}")


def cmd_cluster(args: argparse.Namespace) -> int:
    synthetic = _synthetic_spec(args.synthetic) if args.synthetic else None
    ds: Dataset = load_dataset(args.data, synthetic, args.standardize)
    K = args.clusters or ds.n_clusters
    if K is None:
        print("Error: -K is required for unlabelled data", file=sys.stderr)
        return 1

    kernel = KernelParams(args.kernel, args.sigma)
    svd_cfg = SvdConfig(k=K, tol=args.tol, max_matvecs=args.max_matvecs, solver=args.solver)
    km_cfg = KMeansConfig(k=K, replicates=args.replicates)

    print("=" * 70)
    print(f"{args.method} on {ds.name}: N={ds.n_samples} d={ds.n_features} K={K}"
          + (f" R={args.grids}" if args.method in ('sc_rb', 'sc_rf', 'sv_rf') else ""))
    print("=" * 70)

    assignment = run_method(args.method, ds, K, args.grids, kernel, args.seed, svd_cfg, km_cfg, args.threads)

    if args.save_features or args.features_mtx or args.save_degrees:
        seeds = PipelineSeeds.from_seed(args.seed)
        Z, _ = generate_rb_features(ds, args.grids, kernel, seeds.features, args.threads)
        if args.save_features:
            save_features_binary(Z, args.grids, args.save_features)
            print(f"✓ RB features written to {args.save_features}")
        if args.features_mtx:
            save_features_mtx(Z, args.features_mtx)
            print(f"✓ RB features written to {args.features_mtx}")
        if args.save_degrees:
            save_degrees_csv(compute_degrees(Z), args.save_degrees)
            print(f"✓ Degrees written to {args.save_degrees}")

    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.join(args.output_dir, f"{ds.name}_{args.method}")
    report = evaluate(assignment.labels, ds.labels) if ds.labels is not None else None
    write_assignment_csv(assignment, f"{stem}_labels.csv")
    write_assignment_json(assignment, f"{stem}.json", ds.name, report.to_dict() if report else None)

    prov = assignment.provenance
    print("\nSummary:")
    print(f"  Inertia:   {assignment.inertia:.6g} (replicate {assignment.replicate_chosen})")
    if prov.get("matvecs") is not None:
        print(f"  Matvecs:   {prov['matvecs']}")
    if prov.get("kappa") is not None:
        print(f"  Kappa:     {prov['kappa']:.2f}  D={prov['n_features']}")
    print(f"  Time:      {prov['timings']['t_total']:.3f}s")
    if report is not None:
        _print_metrics(report)
    print(f"  Labels:    {stem}_labels.csv")
    print("=" * 70)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    from bench import ExperimentSpec, run_experiment, write_report

    spec = ExperimentSpec.load(args.spec)
    records = run_experiment(spec, args.records, args.threads)
    failed = [r for r in records if not r.ok]

    print("\n" + "=" * 70)
    print(f"Experiment {spec.name}:")
    print(f"  Runs:     {len(records)}")
    print(f"  Failed:   {len(failed)}")
    for r in failed[:5]:
        solver = f"/{r.solver}" if r.solver else ""
        print(f"  ❌ {r.method}{solver} {r.variable}={r.value} seed={r.seed}: {r.error}")
    print("=" * 70)

    if args.report:
        records_path = args.records or os.path.join(spec.output_dir, "records.csv")
        paths = write_report(records_path, os.path.join(os.path.dirname(records_path) or ".", "report"))
        for name, path in paths.items():
            print(f"✓ {name}: {path}")
    return 0


def cmd_metrics(args: argparse.Namespace) -> int:
    pred = read_label_file(args.pred)
    truth = read_label_file(args.truth)
    report = evaluate(pred, truth)
    print(f"{args.pred} vs {args.truth} (N={pred.size})")
    _print_metrics(report)
    if args.json:
        with open(args.json, 'w', encoding='utf-8') as f:
            json.dump(report.to_dict(), f, indent=2)
        print(f"✓ Report written to {args.json}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from bench import write_report

    out_dir = args.out_dir or os.path.join(os.path.dirname(args.records) or ".", "report")
    paths = write_report(args.records, out_dir)
    for name, path in paths.items():
        print(f"✓ {name}: {path}")
    return 0


def cmd_check(args: argparse.Namespace) -> int:
    from check_setup import SetupValidator

    return 0 if SetupValidator().validate_all() else 1


COMMANDS = {
    'cluster': cmd_cluster,
    'bench': cmd_bench,
    'metrics': cmd_metrics,
    'report': cmd_report,
    'check': cmd_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the script"""
    args = parse_arguments(argv)
    if not validate_arguments(args):
        return 1

    config.configure_logging('DEBUG' if args.verbose else None)
    try:
        with ThreadpoolController().limit(limits=config.BLAS_THREADS, user_api='blas'):
            return COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
