"""Manifest-driven grid runner.

Each grid cell is one RunConfig evaluated by ``monte_carlo_run`` and stored
under ``cells/<config_id>/``. Completed cells whose inputs are unchanged are
skipped, so an interrupted run resumes where it stopped.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from mci_biomarkers.anova import anova_report
from mci_biomarkers.coefficients import TOP_N, aggregate_coefficients, region_band_table
from mci_biomarkers.config import get_output_dir
from mci_biomarkers.cv import RESULT_COLUMNS, RunConfig, monte_carlo_run
from mci_biomarkers.dataset import DatasetBundle, combine_features, load_dataset, write_atomic
from mci_biomarkers.errors import ConvergenceError, ReplicaError, ValidationError
from mci_biomarkers.logger import get_logger
from mci_biomarkers.manifest import DatasetEntry, ExperimentManifest, GridCell
from mci_biomarkers.metrics import STAT_NAMES
from mci_biomarkers.store import FAILURES_FILE, CellStore, file_digest

_log = get_logger('runner')

RESULTS_FILE = 'results.csv'
ANOVA_FILE = 'anova.csv'
SUMMARY_FILE = 'coefficient_summary.csv'
TOP_FILE = 'coefficient_top.csv'
REGION_FILE = 'region_band_z.csv'
ANOVA_FACTORS = ('classifier', 'sensor', 'correction', 'localization', 'combination')

_CELL_ERRORS = (ValidationError, ConvergenceError, ReplicaError, np.linalg.LinAlgError, OSError)


@dataclass
class GridOutcome:
    output_dir: Path
    completed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)
    results_path: Path | None = None
    anova_path: Path | None = None
    coefficient_paths: dict[str, Path] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return 2 if self.failed else 0

    def to_dict(self) -> dict:
        return {
            'output_dir': str(self.output_dir),
            'completed': self.completed,
            'skipped': self.skipped,
            'failed': self.failed,
            'results': str(self.results_path) if self.results_path else None,
            'anova': str(self.anova_path) if self.anova_path else None,
            'coefficients': {k: str(v) for k, v in self.coefficient_paths.items()},
        }


class _DatasetCache:
    def __init__(self, manifest: ExperimentManifest):
        self.manifest = manifest
        self._bundles: dict[str, DatasetBundle] = {}
        self._digests: dict[Path, str] = {}

    def bundle(self, entry: DatasetEntry) -> DatasetBundle:
        if entry.name not in self._bundles:
            _log.debug("loading dataset %s", entry.name)
            self._bundles[entry.name] = load_dataset(
                entry.features, entry.covariates, entry.labels, entry.columns,
                site_levels=self.manifest.site_levels,
                default_modality=entry.modality,
            )
        return self._bundles[entry.name]

    def combined(self, cell: GridCell) -> DatasetBundle:
        entries = self.manifest.datasets_for(cell)
        return combine_features([self.bundle(e) for e in entries], cell.combination)

    def digest(self, path: Path) -> str:
        if path not in self._digests:
            try:
                self._digests[path] = file_digest(path)
            except OSError as exc:
                raise ValidationError(f"cannot read {path}: {exc}") from exc
        return self._digests[path]


def input_digest(config: RunConfig, file_digests: list[tuple[str, str]]) -> str:
    payload = {
        'config': config.to_dict(),
        'files': [list(pair) for pair in file_digests],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode('utf-8')).hexdigest()


def _cell_label(cell: GridCell) -> str:
    parts = [cell.classifier, cell.combination, cell.correction]
    if cell.localization:
        parts.append(cell.localization)
    return '/'.join(parts)


def _distinct_factors(frame: pd.DataFrame) -> list[str]:
    """Factors with more than one level, dropping ones that repeat an earlier grouping."""
    kept, codes = [], []
    for factor in ANOVA_FACTORS:
        if frame[factor].nunique() < 2:
            continue
        code = tuple(pd.factorize(frame[factor])[0])
        if code in codes:
            _log.debug("factor %s duplicates an earlier factor; left out of the ANOVA", factor)
            continue
        kept.append(factor)
        codes.append(code)
    return kept


def _write_anova(frame: pd.DataFrame, output_dir: Path) -> Path | None:
    holdout = frame[frame['split'] == 'holdout']
    factors = _distinct_factors(holdout)
    if not factors:
        _log.info("grid has a single condition; no ANOVA")
        return None
    try:
        report = anova_report(holdout, STAT_NAMES, factors)
    except ValidationError as exc:
        _log.warning("ANOVA skipped: %s", exc)
        return None
    path = output_dir / ANOVA_FILE
    write_atomic(path, report.to_csv(index=False, float_format='%.10g', lineterminator='\n'))
    return path


def _write_coefficients(store: CellStore, config_id: str, bundle: DatasetBundle) -> Path | None:
    traces = store.read_coefficients(config_id)
    if traces is None:
        return None
    if len(traces) < 2:
        _log.info("%s: one replica; coefficient summary needs at least two", config_id)
        return None
    names = [c for c in traces.columns if c != 'replica']
    summary = aggregate_coefficients(traces[names].to_numpy(), names)
    d = store.cell_dir(config_id)
    fmt = dict(index=False, float_format='%.10g', lineterminator='\n')
    write_atomic(d / SUMMARY_FILE, summary.to_frame().to_csv(**fmt))
    write_atomic(d / TOP_FILE, summary.top(TOP_N).to_csv(**fmt))
    write_atomic(d / REGION_FILE, region_band_table(summary, bundle.features.columns).to_csv(**fmt))
    return d / SUMMARY_FILE


@dataclass(frozen=True, eq=False)
class _PendingCell:
    index: int
    cell: GridCell
    config: RunConfig
    digest: str
    bundle: DatasetBundle


def _run_cell(store: CellStore, pending: _PendingCell, jobs: int) -> str | None:
    """Evaluate and store one cell; returns an error description instead of raising."""
    try:
        result = monte_carlo_run(pending.config, pending.bundle, jobs=jobs)
        store.write_cell(result, pending.digest)
    except _CELL_ERRORS as exc:
        return f"{type(exc).__name__}: {exc}"
    return None


def run_experiment_grid(manifest: ExperimentManifest, output_dir=None, jobs: int = 1,
                        seed: int | None = None) -> GridOutcome:
    """Run every grid cell, then write the combined table, ANOVA and coefficient summaries.

    Up to ``jobs`` cells run at once; a single pending cell spreads its
    replicas over the workers instead. A failing cell is logged and recorded
    in failures.json; the others still run.
    """
    out = get_output_dir(output_dir or manifest.output_dir)
    store = CellStore(out)
    cache = _DatasetCache(manifest)
    outcome = GridOutcome(out)
    cells = manifest.cells()
    finished: list[tuple[int, str, GridCell]] = []
    pending: list[_PendingCell] = []

    for i, cell in enumerate(cells, start=1):
        label = _cell_label(cell)
        try:
            config = manifest.run_config(cell, seed)
            config_id = config.config_id
            files = sorted(
                (p.name, cache.digest(p))
                for entry in manifest.datasets_for(cell) for p in entry.paths()
            )
            digest = input_digest(config, files)
            if store.is_complete(config_id, digest):
                _log.info("[%d/%d] %s skipped (complete)", i, len(cells), config_id)
                outcome.skipped.append(config_id)
                finished.append((i, config_id, cell))
                continue
            bundle = cache.combined(cell)
        except _CELL_ERRORS as exc:
            _log.error("[%d/%d] %s failed: %s", i, len(cells), label, exc)
            outcome.failed[label] = f"{type(exc).__name__}: {exc}"
            continue
        _log.info("[%d/%d] %s started", i, len(cells), config_id)
        pending.append(_PendingCell(i, cell, config, digest, bundle))

    if len(pending) > 1 and jobs != 1:
        errors = Parallel(n_jobs=jobs)(delayed(_run_cell)(store, p, 1) for p in pending)
    else:
        errors = [_run_cell(store, p, jobs) for p in pending]

    for p, error in zip(pending, errors):
        config_id = p.config.config_id
        if error is not None:
            _log.error("[%d/%d] %s failed: %s", p.index, len(cells), _cell_label(p.cell), error)
            outcome.failed[_cell_label(p.cell)] = error
            continue
        _log.info("[%d/%d] %s done", p.index, len(cells), config_id)
        outcome.completed.append(config_id)
        finished.append((p.index, config_id, p.cell))
    finished.sort(key=lambda item: item[0])

    store.write_failures(outcome.failed)

    frames = [store.read_results(config_id) for _, config_id, _ in finished]
    frames = [f for f in frames if f is not None and not f.empty]
    if frames:
        combined = pd.concat(frames, ignore_index=True)[list(RESULT_COLUMNS)]
        combined = combined.sort_values(['config_id', 'replica', 'split'], kind='mergesort')
        combined = combined.reset_index(drop=True)
        outcome.results_path = out / RESULTS_FILE
        write_atomic(outcome.results_path,
                     combined.to_csv(index=False, float_format='%.17g', lineterminator='\n'))
        outcome.anova_path = _write_anova(combined, out)

    for _, config_id, cell in finished:
        if cell.classifier != 'GLMNET':
            continue
        try:
            path = _write_coefficients(store, config_id, cache.combined(cell))
        except _CELL_ERRORS as exc:
            _log.error("%s: coefficient summary failed: %s", config_id, exc)
            outcome.failed[f"{_cell_label(cell)}:coefficients"] = f"{type(exc).__name__}: {exc}"
            continue
        if path is not None:
            outcome.coefficient_paths[config_id] = path

    if outcome.failed:
        store.write_failures(outcome.failed)
        _log.warning("%d of %d cells failed; see %s", len(outcome.failed), len(cells),
                     out / FAILURES_FILE)
    return outcome
