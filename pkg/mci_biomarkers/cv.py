"""Nested K-fold evaluation under Monte-Carlo replication.

Each replica draws its own stratified fold plan. For every outer fold the
remaining rows ("bus" data) alone drive correction, feature selection,
hyperparameter search and the final refit; the held-out fold is only
transformed and scored.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from mci_biomarkers.classifiers import (
    ClassifierSpec,
    candidate_grid,
    candidate_scores,
    fit_candidate,
    select_best,
)
from mci_biomarkers.dataset import CombinationMode, DatasetBundle
from mci_biomarkers.errors import ConvergenceError, ReplicaError, ValidationError
from mci_biomarkers.folds import FoldPlan, partition
from mci_biomarkers.harmonize import (
    CORRECTION_MODES,
    DEFAULT_GROUPS,
    HarmonizationGroup,
    apply_grouped,
    apply_plain_zscore,
    fit_grouped,
    fit_plain_zscore,
)
from mci_biomarkers.logger import get_logger
from mci_biomarkers.metrics import STAT_NAMES, StatBlock, compute_metrics
from mci_biomarkers.relieff import DEFAULT_NEIGHBORS, ReliefFConfig, relieff_rank, select_positive

_log = get_logger('cv')

DEFAULT_K = 10
DEFAULT_R = 100
RESULT_COLUMNS = (
    'config_id', 'classifier', 'sensor', 'correction', 'localization', 'combination',
    'replica', 'split',
) + STAT_NAMES


def stable_hash(master: int, index: int) -> int:
    """Platform-independent 64-bit seed derived from (master, index)."""
    digest = hashlib.sha256(f"{master}:{index}".encode('ascii')).digest()
    return int.from_bytes(digest[:8], 'big')


@dataclass(frozen=True)
class RunConfig:
    classifier: ClassifierSpec
    combination: str = CombinationMode.MAG_ONLY.value
    correction: str = 'none'
    groups: tuple[HarmonizationGroup, ...] = field(default=DEFAULT_GROUPS)
    sensor: str = ''
    localization: str = ''
    ffsel: bool = False
    K: int = DEFAULT_K
    R: int = DEFAULT_R
    seed: int = 0
    relieff_J: int = DEFAULT_NEIGHBORS
    relieff_L: int | None = None

    def __post_init__(self):
        if self.K < 3:
            raise ValidationError(f"K must be >= 3 so the inner loop has training folds, got {self.K}")
        if self.R < 1:
            raise ValidationError(f"replica count R must be >= 1, got {self.R}")
        if self.correction not in CORRECTION_MODES:
            raise ValidationError(f"correction must be one of {CORRECTION_MODES}, got {self.correction!r}")
        object.__setattr__(self, 'combination', CombinationMode(self.combination).value)

    def to_dict(self) -> dict:
        return {
            'classifier': self.classifier.to_dict(),
            'combination': self.combination,
            'correction': self.correction,
            'groups': [
                {'modalities': list(g.modalities), 'covariates': list(g.covariates),
                 'degree': g.degree, 'interactions': g.interactions}
                for g in self.groups
            ],
            'sensor': self.sensor,
            'localization': self.localization,
            'ffsel': self.ffsel,
            'K': self.K,
            'R': self.R,
            'seed': self.seed,
            'relieff_J': self.relieff_J,
            'relieff_L': self.relieff_L,
        }

    @property
    def config_id(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')
        digest = hashlib.sha256(payload).hexdigest()[:10]
        parts = [self.classifier.kind, self.combination.replace('+', '-'), self.correction]
        if self.localization:
            parts.append(self.localization)
        return '_'.join(parts + [digest])


@dataclass(frozen=True, eq=False)
class ReplicaResult:
    replica: int
    seed: int
    crossval: StatBlock
    holdout: StatBlock
    coefficients: np.ndarray | None = None  # GLMNET: mean outer-fold refit coefficients
    n_selected: float | None = None          # mean features kept by ReliefF


@dataclass(frozen=True, eq=False)
class RunResultSet:
    config: RunConfig
    feature_names: tuple[str, ...]
    replicas: tuple[ReplicaResult, ...]

    def to_frame(self) -> pd.DataFrame:
        cfg = self.config
        rows = []
        for rep in self.replicas:
            for split, block in (('crossval', rep.crossval), ('holdout', rep.holdout)):
                rows.append({
                    'config_id': cfg.config_id,
                    'classifier': cfg.classifier.kind,
                    'sensor': cfg.sensor,
                    'correction': cfg.correction,
                    'localization': cfg.localization,
                    'combination': cfg.combination,
                    'replica': rep.replica,
                    'split': split,
                    **block.to_dict(),
                })
        return pd.DataFrame(rows, columns=list(RESULT_COLUMNS))

    def coefficient_frame(self) -> pd.DataFrame | None:
        """Replica x feature coefficient traces, or None for non-GLMNET runs."""
        if self.config.classifier.kind != 'GLMNET':
            return None
        frame = pd.DataFrame(
            np.vstack([rep.coefficients for rep in self.replicas]),
            columns=list(self.feature_names),
        )
        frame.insert(0, 'replica', [rep.replica for rep in self.replicas])
        return frame


def _correct(config: RunConfig, bus: DatasetBundle, holdout: DatasetBundle):
    if config.correction == 'none':
        params = fit_plain_zscore(bus.features)
        return apply_plain_zscore(bus.features, params), apply_plain_zscore(holdout.features, params)
    models = fit_grouped(bus, config.correction, config.groups)
    return apply_grouped(bus, models), apply_grouped(holdout, models)


def _inner_select(spec: ClassifierSpec, grid, plan: FoldPlan, k: int, bus_rows, x, y) -> int:
    """Average inner-fold stats per candidate over folds l != k; pick the best."""
    bus_fold = plan.assignment[bus_rows]
    sums = np.zeros((len(grid), len(STAT_NAMES)))
    n_inner = 0
    for l in range(plan.K):
        if l == k:
            continue
        train = np.flatnonzero(bus_fold != l)
        test = np.flatnonzero(bus_fold == l)
        scores = candidate_scores(spec, grid, x[train], y[train], x[test])
        for c, s in enumerate(scores):
            if np.isnan(s).any():
                # Past the saturation point of this fold's path.
                sums[c] = np.nan
                continue
            block = compute_metrics(y[test], s)
            sums[c] += [getattr(block, name) for name in STAT_NAMES]
        n_inner += 1
    means = sums / n_inner
    return select_best(means[:, STAT_NAMES.index(spec.criterion)])


def nested_cv_run(config: RunConfig, data: DatasetBundle, seed: int, replica: int = 0) -> ReplicaResult:
    y_all = data.labels.astype(int)
    plan = partition(data.n_rows, config.K, seed, y_all)
    spec = config.classifier
    all_names = data.features.names
    position = {name: j for j, name in enumerate(all_names)}

    crossval, holdout, traces, kept = [], [], [], []
    for k in range(config.K):
        test_rows = plan.test_rows(k)
        bus_rows = plan.train_rows(k)
        bus = data.select_rows(bus_rows)
        held = data.select_rows(test_rows)
        bus_x, held_x = _correct(config, bus, held)

        if config.ffsel:
            ranking = relieff_rank(
                bus_x, bus.labels,
                ReliefFConfig(J=config.relieff_J, L=config.relieff_L, seed=stable_hash(seed, k)),
            )
            cols = select_positive(ranking)
            if not cols:
                _log.warning("replica %d fold %d: ReliefF kept no features; using all %d",
                             replica, k + 1, bus_x.n_features)
                cols = list(range(bus_x.n_features))
            bus_x = bus_x.select_columns(cols)
            held_x = held_x.select_columns(cols)
        kept.append(bus_x.n_features)

        x, y = bus_x.values, bus.labels.astype(int)
        try:
            grid = candidate_grid(spec, x, y)
            best = _inner_select(spec, grid, plan, k, bus_rows, x, y) if len(grid) > 1 else 0
            model = fit_candidate(spec, grid, best, x, y, bus_x.names)
        except ConvergenceError as exc:
            raise ConvergenceError(f"outer fold {k + 1}: {exc}") from exc

        crossval.append(compute_metrics(y, model.scores(x)))
        holdout.append(compute_metrics(held.labels, model.scores(held_x.values)))
        if spec.kind == 'GLMNET':
            full = np.zeros(len(all_names))
            full[[position[n] for n in bus_x.names]] = model.coef
            traces.append(full)

    return ReplicaResult(
        replica=replica,
        seed=seed,
        crossval=StatBlock.mean(crossval),
        holdout=StatBlock.mean(holdout),
        coefficients=np.mean(traces, axis=0) if traces else None,
        n_selected=float(np.mean(kept)),
    )


def _run_replica(config: RunConfig, data: DatasetBundle, r: int):
    seed = stable_hash(config.seed, r)
    try:
        with threadpool_limits(1):
            return nested_cv_run(config, data, seed, replica=r)
    except (ValidationError, ConvergenceError, ArithmeticError, np.linalg.LinAlgError) as exc:
        # Returned rather than raised so the failure crosses process boundaries intact.
        return r, f"{type(exc).__name__}: {exc}"


def monte_carlo_run(config: RunConfig, data: DatasetBundle, jobs: int = 1) -> RunResultSet:
    """Run replicas 1..R; the result does not depend on ``jobs``."""
    replicas = range(1, config.R + 1)
    if jobs == 1:
        outcomes = [_run_replica(config, data, r) for r in replicas]
    else:
        outcomes = Parallel(n_jobs=jobs)(delayed(_run_replica)(config, data, r) for r in replicas)
    for outcome in outcomes:
        if isinstance(outcome, tuple):
            r, message = outcome
            raise ReplicaError(r, RuntimeError(message))
    results = tuple(sorted(outcomes, key=lambda rep: rep.replica))
    _log.info("%s: %d replicas, mean holdout acc %.3f", config.config_id, len(results),
              np.mean([rep.holdout.acc for rep in results]))
    return RunResultSet(config, data.features.names, results)
