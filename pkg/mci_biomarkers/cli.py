"""
mcibio CLI - MCI biomarker pipeline from feature tables to ANOVA reports.

Usage:
    mcibio extract <epochs>... [--modality MAG]     Relative band power features from epoch files
    mcibio harmonize --features F --covariates C --labels L --type residuals
    mcibio rank --features F --labels L             ReliefF feature ranking
    mcibio run <manifest> [--seed N] [--jobs N]     Run the experiment grid
    mcibio anova <results.csv>                      N-way ANOVA with post-hoc tests
    mcibio report <results.csv>                     Summary tables and SVG bar charts
    mcibio synth [--rows 324] [--seed N]            Synthetic two-site cohort
    mcibio --version                                Show version
    mcibio --help                                   Show help
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from mci_biomarkers.errors import ConvergenceError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_PARTIAL = 2


def get_version():
    from mci_biomarkers import __version__
    return __version__


def create_parser():
    parser = argparse.ArgumentParser(
        prog="mcibio",
        description="mcibio - MEG/MRI biomarker pipeline for MCI classification",
        epilog="Examples:\n"
               "  mcibio synth --modality MAG --seed 7\n"
               "  mcibio run experiment.json --jobs 4\n"
               "  mcibio anova mcibio-output/results.csv\n"
               "  mcibio report mcibio-output/results.csv\n",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument(
        "--version", "-v",
        action="version",
        version=f"mcibio {get_version()}"
    )

    parser.add_argument(
        "--json", "-j",
        action="store_true",
        help="Output in JSON format (for scripting)"
    )

    parser.add_argument(
        "--output-dir", "-o",
        default=None,
        help="Output directory (default: $MCIBIO_OUTPUT_DIR or ./mcibio-output)"
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    # extract command
    extract_parser = subparsers.add_parser("extract", help="Band power features from epoch files")
    extract_parser.add_argument("epochs", nargs="+", help="Epoch files (.f32 with .json sidecar); file stem is the participant id")
    extract_parser.add_argument("--modality", default="MAG", help="Modality tag for the columns (default: MAG)")
    extract_parser.add_argument("--out", default="features.csv", help="Output CSV (relative to the output dir)")

    # harmonize command
    harmonize_parser = subparsers.add_parser("harmonize", help="Remove covariate effects from a feature table")
    _add_dataset_args(harmonize_parser)
    harmonize_parser.add_argument("--type", dest="kind", choices=("residuals", "zscore"), default="residuals")
    harmonize_parser.add_argument("--degree", type=int, default=2, help="Polynomial degree for continuous covariates")
    harmonize_parser.add_argument("--interactions", action="store_true", help="Add categorical x continuous terms")
    harmonize_parser.add_argument("--model", default=None, help="Apply a saved model JSON instead of fitting")
    harmonize_parser.add_argument("--out", default="harmonized.csv", help="Output CSV (relative to the output dir)")

    # rank command
    rank_parser = subparsers.add_parser("rank", help="ReliefF feature ranking")
    rank_parser.add_argument("--features", required=True, help="Feature CSV")
    rank_parser.add_argument("--labels", required=True, help="Label CSV")
    rank_parser.add_argument("--columns", default=None, help="Column metadata sidecar")
    rank_parser.add_argument("--neighbors", "-J", type=int, default=10, help="Nearest hits/misses per sample")
    rank_parser.add_argument("--samples", "-L", type=int, default=None, help="Random samples (default: every row)")
    rank_parser.add_argument("--seed", type=int, default=0)
    rank_parser.add_argument("--out", default="ranking.csv", help="Output CSV (relative to the output dir)")

    # run command
    run_parser = subparsers.add_parser("run", help="Run an experiment manifest")
    run_parser.add_argument("manifest", help="Experiment manifest (JSON)")
    run_parser.add_argument("--seed", type=int, default=None, help="Override the manifest seed")
    run_parser.add_argument("--jobs", type=int, default=1,
                            help="Parallel workers for grid cells, or for the replicas of a lone cell (-1: all cores)")

    # anova command
    anova_parser = subparsers.add_parser("anova", help="N-way ANOVA with Bonferroni and Tukey post-hoc tests")
    anova_parser.add_argument("results", help="Long-format results CSV")
    anova_parser.add_argument("--factors", nargs="+", default=None,
                              help="Factor columns (default: every condition column with more than one level)")
    anova_parser.add_argument("--responses", nargs="+", default=["acc", "sens", "spec", "auc"])
    anova_parser.add_argument("--interaction", action="append", default=[], metavar="A:B",
                              help="Two-way interaction term (repeatable)")
    anova_parser.add_argument("--split", default="holdout", choices=("holdout", "crossval"))
    anova_parser.add_argument("--alpha", type=float, default=0.05)
    anova_parser.add_argument("--out", default="anova.csv", help="Output CSV (relative to the output dir)")

    # report command
    report_parser = subparsers.add_parser("report", help="Summary tables and SVG bar charts")
    report_parser.add_argument("results", help="Long-format results CSV")
    report_parser.add_argument("--formats", default="csv,json,svg", help="Comma-separated subset of csv,json,svg")
    report_parser.add_argument("--coefficients", default=None, help="Coefficient summary CSV to chart")
    report_parser.add_argument("--top", type=int, default=20, help="Coefficients in the bar chart")
    report_parser.add_argument("--out", default="report", help="Report directory (relative to the output dir)")

    # synth command
    synth_parser = subparsers.add_parser("synth", help="Generate a synthetic two-site cohort")
    synth_parser.add_argument("--rows", type=int, default=324)
    synth_parser.add_argument("--class1", type=int, default=158, help="Rows labelled MCI")
    synth_parser.add_argument("--informative", type=int, default=5)
    synth_parser.add_argument("--noise", type=int, default=200)
    synth_parser.add_argument("--effect", type=float, default=1.0, help="Class shift in SD units")
    synth_parser.add_argument("--site-shift", type=float, default=0.0)
    synth_parser.add_argument("--age-effect", type=float, default=0.0)
    synth_parser.add_argument("--nuisance-fraction", type=float, default=0.5,
                              help="Share of columns given the site and age effects")
    synth_parser.add_argument("--modality", default="MAG")
    synth_parser.add_argument("--regions", type=int, default=10)
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.add_argument("--out", default="synth", help="Directory (relative to the output dir)")

    return parser


def _add_dataset_args(parser):
    parser.add_argument("--features", required=True, help="Feature CSV")
    parser.add_argument("--covariates", required=True, help="Covariate CSV")
    parser.add_argument("--labels", required=True, help="Label CSV")
    parser.add_argument("--columns", default=None, help="Column metadata sidecar")


def print_error(message: str, json_output: bool = False):
    """Print error message"""
    if json_output:
        print(json.dumps({"success": False, "error": message}))
    else:
        print(f"Error: {message}", file=sys.stderr)


def print_success(message: str, data: Optional[dict] = None, json_output: bool = False):
    """Print success message"""
    if json_output:
        result = {"success": True, "message": message}
        if data:
            result["data"] = data
        print(json.dumps(result, indent=2))
    else:
        print(message)


def _output_dir(args) -> Path:
    from mci_biomarkers.config import get_output_dir
    from mci_biomarkers.logger import attach_file_log

    out = get_output_dir(args.output_dir)
    attach_file_log(out)
    return out


def _resolve(out: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else out / p


def cmd_extract(args):
    """Extract band power features"""
    from mci_biomarkers.dataset import save_features
    from mci_biomarkers.dsp import extract_features, load_epoch_file

    out = _output_dir(args)
    recordings = {}
    for name in args.epochs:
        path = Path(name)
        if path.stem in recordings:
            print_error(f"duplicate participant id {path.stem!r}", args.json)
            return EXIT_VALIDATION
        recordings[path.stem] = load_epoch_file(path)
    features = extract_features(recordings, modality=args.modality)
    target = save_features(features, _resolve(out, args.out))
    print_success(
        f"Extracted {features.n_features} features for {features.n_rows} participants -> {target}",
        {"path": str(target), "rows": features.n_rows, "features": features.n_features},
        args.json,
    )
    return EXIT_OK


def cmd_harmonize(args):
    """Fit (or apply) covariate harmonization"""
    from mci_biomarkers.dataset import load_dataset, save_features, write_atomic
    from mci_biomarkers.harmonize import (
        MEG_GROUP,
        MRI_GROUP,
        HarmonizationGroup,
        HarmonizationModel,
        apply_grouped,
        fit_grouped,
    )

    out = _output_dir(args)
    bundle = load_dataset(args.features, args.covariates, args.labels, args.columns)
    if args.model:
        with open(args.model, encoding='utf-8') as f:
            models = [HarmonizationModel.from_dict(m) for m in json.load(f)]
    else:
        groups = tuple(
            HarmonizationGroup(g.modalities, g.covariates, args.degree, args.interactions)
            for g in (MEG_GROUP, MRI_GROUP)
        )
        models = fit_grouped(bundle, args.kind, groups)
    corrected = apply_grouped(bundle, models)
    target = save_features(corrected, _resolve(out, args.out))
    model_path = target.with_suffix('.model.json')
    write_atomic(model_path, json.dumps([m.to_dict() for m in models], indent=2) + '\n')
    print_success(
        f"Harmonized {corrected.n_features} features -> {target}",
        {"path": str(target), "model": str(model_path), "digests": [m.digest() for m in models]},
        args.json,
    )
    return EXIT_OK


def cmd_rank(args):
    """Rank features with ReliefF"""
    from mci_biomarkers.dataset import load_features, load_labels, write_atomic
    from mci_biomarkers.relieff import ReliefFConfig, relieff_rank

    out = _output_dir(args)
    features = load_features(args.features, args.columns)
    labels = load_labels(args.labels)
    missing = [pid for pid in features.ids if pid not in labels]
    if missing:
        print_error(f"no label for participant(s) {', '.join(missing[:5])}", args.json)
        return EXIT_VALIDATION
    y = [labels[pid] for pid in features.ids]
    ranking = relieff_rank(features, y, ReliefFConfig(J=args.neighbors, L=args.samples, seed=args.seed))
    frame = ranking.to_frame()
    target = _resolve(out, args.out)
    write_atomic(target, frame.to_csv(index=False, float_format='%.10g', lineterminator='\n'))
    positive = int((frame['score'] > 0).sum())
    if args.json:
        print_success("ranked", {"path": str(target), "positive": positive,
                                 "top": frame.head(10).to_dict(orient='records')}, True)
    else:
        print(f"Ranked {len(frame)} features ({positive} positive) -> {target}")
        for _, row in frame.head(10).iterrows():
            print(f"  {row['score']:+.4f}  {row['feature']}")
    return EXIT_OK


def cmd_run(args):
    """Run an experiment manifest"""
    from mci_biomarkers.manifest import parse_manifest
    from mci_biomarkers.runner import run_experiment_grid

    manifest = parse_manifest(args.manifest)
    if args.output_dir is None and manifest.output_dir is not None:
        args.output_dir = str(manifest.output_dir)
    out = _output_dir(args)
    outcome = run_experiment_grid(manifest, out, jobs=args.jobs, seed=args.seed)
    message = (f"{len(outcome.completed)} cell(s) run, {len(outcome.skipped)} skipped, "
               f"{len(outcome.failed)} failed -> {out}")
    if outcome.failed:
        if args.json:
            print(json.dumps({"success": False, "error": message, "data": outcome.to_dict()}, indent=2))
        else:
            print_error(message)
            for label, reason in outcome.failed.items():
                print(f"  {label}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    print_success(message, outcome.to_dict(), args.json)
    return EXIT_OK


def cmd_anova(args):
    """N-way ANOVA over a results table"""
    from mci_biomarkers.anova import anova_report
    from mci_biomarkers.dataset import write_atomic
    from mci_biomarkers.report import CONDITION_COLUMNS, load_results

    out = _output_dir(args)
    frame = load_results(args.results)
    frame = frame[frame['split'] == args.split]
    factors = args.factors or [c for c in CONDITION_COLUMNS if frame[c].nunique() > 1]
    if not factors:
        print_error("no factor has more than one level", args.json)
        return EXIT_VALIDATION
    interactions = []
    for term in args.interaction:
        a, sep, b = term.partition(':')
        if not sep or not a or not b:
            print_error(f"interaction must look like A:B, got {term!r}", args.json)
            return EXIT_VALIDATION
        interactions.append((a, b))
    report = anova_report(frame, args.responses, factors, interactions, alpha=args.alpha)
    target = _resolve(out, args.out)
    write_atomic(target, report.to_csv(index=False, float_format='%.10g', lineterminator='\n'))
    anova_rows = report[report['method'] == 'ANOVA']
    if args.json:
        print_success("anova", {"path": str(target), "terms": anova_rows.to_dict(orient='records')}, True)
    else:
        print(f"ANOVA over {', '.join(factors)} ({len(frame)} {args.split} rows) -> {target}")
        for _, row in anova_rows.iterrows():
            print(f"  {row['response']:<5} {row['factor']:<24} F={row['statistic']:.4g} "
                  f"df={row['df']} p={row['p_value']}")
    return EXIT_OK


def cmd_report(args):
    """Write summary tables and figures"""
    import pandas as pd

    from mci_biomarkers.coefficients import CoefficientSummary
    from mci_biomarkers.report import emit_report, load_results

    out = _output_dir(args)
    frame = load_results(args.results)
    coefficients = None
    if args.coefficients:
        coefficients = CoefficientSummary.from_frame(pd.read_csv(args.coefficients))
    formats = [f.strip() for f in args.formats.split(',') if f.strip()]
    written = emit_report(frame, _resolve(out, args.out), formats, coefficients, args.top)
    print_success(f"Wrote {len(written)} report file(s) to {_resolve(out, args.out)}",
                  {"files": [str(p) for p in written]}, args.json)
    return EXIT_OK


def cmd_synth(args):
    """Generate a synthetic cohort"""
    from mci_biomarkers.synth import SynthSpec, write_synth

    out = _output_dir(args)
    spec = SynthSpec(
        n_rows=args.rows,
        n_class1=args.class1,
        informative=args.informative,
        noise=args.noise,
        effect=args.effect,
        site_shift=args.site_shift,
        age_effect=args.age_effect,
        nuisance_fraction=args.nuisance_fraction,
        modality=args.modality,
        n_regions=args.regions,
        seed=args.seed,
    )
    paths = write_synth(spec, _resolve(out, args.out))
    print_success(f"Synthetic {args.modality} cohort ({args.rows} rows) -> {paths['features'].parent}",
                  {k: str(v) for k, v in paths.items()}, args.json)
    return EXIT_OK


def run_cli(args=None):
    """Main CLI entry point"""
    parser = create_parser()
    parsed_args = parser.parse_args(args)

    if not parsed_args.command:
        parser.print_help()
        return EXIT_OK

    commands = {
        'extract': cmd_extract,
        'harmonize': cmd_harmonize,
        'rank': cmd_rank,
        'run': cmd_run,
        'anova': cmd_anova,
        'report': cmd_report,
        'synth': cmd_synth,
    }

    cmd_func = commands.get(parsed_args.command)
    if not cmd_func:
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return cmd_func(parsed_args)
    except (ValidationError, ConvergenceError) as e:
        print_error(str(e), parsed_args.json)
        return EXIT_VALIDATION
    except OSError as e:
        print_error(f"{e.filename or ''}: {e.strerror or e}".lstrip(': '), parsed_args.json)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(run_cli())
