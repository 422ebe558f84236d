"""Nuisance-covariate correction by multivariate polynomial regression.

Models are fit on training rows only and applied unchanged to any other rows.
"residuals" keeps ``x - E[x | covariates]``; "zscore" also divides by a
covariate-predicted standard deviation obtained by regressing squared
residuals on the same design.
"""

import hashlib
import json
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from mci_biomarkers.dataset import (
    CATEGORICAL_COVARIATES,
    CONTINUOUS_COVARIATES,
    CovariateTable,
    DatasetBundle,
    FeatureMatrix,
)
from mci_biomarkers.errors import ValidationError

HARMONIZATION_TYPES = ('residuals', 'zscore')
CORRECTION_MODES = ('none',) + HARMONIZATION_TYPES
DEFAULT_DEGREE = 2
ZSCORE_STD_FLOOR = 1e-12
VARIANCE_FLOOR = 1e-12
VARIANCE_FLOOR_FRACTION = 0.05


@dataclass(frozen=True)
class HarmonizationGroup:
    """Covariate roster applied to the columns of some modalities."""

    modalities: tuple[str, ...]
    covariates: tuple[str, ...]
    degree: int = DEFAULT_DEGREE
    interactions: bool = False


MEG_GROUP = HarmonizationGroup(('MAG', 'GRAD', 'OTHER'), ('age', 'site', 'movement'))
MRI_GROUP = HarmonizationGroup(('MRI',), ('age', 'sex', 'tiv'))
DEFAULT_GROUPS = (MEG_GROUP, MRI_GROUP)


@dataclass(frozen=True, eq=False)
class HarmonizationModel:
    kind: str
    covariates: tuple[str, ...]
    degree: int
    interactions: bool
    feature_names: tuple[str, ...]
    centers: dict
    scales: dict
    levels: dict
    terms: tuple[str, ...]
    mean_coef: np.ndarray
    var_coef: np.ndarray | None = None
    var_floor: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'covariates': list(self.covariates),
            'degree': self.degree,
            'interactions': self.interactions,
            'feature_names': list(self.feature_names),
            'centers': dict(self.centers),
            'scales': dict(self.scales),
            'levels': {k: list(v) for k, v in self.levels.items()},
            'terms': list(self.terms),
            'mean_coef': self.mean_coef.tolist(),
            'var_coef': None if self.var_coef is None else self.var_coef.tolist(),
            'var_floor': None if self.var_floor is None else self.var_floor.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'HarmonizationModel':
        return cls(
            kind=data['kind'],
            covariates=tuple(data['covariates']),
            degree=int(data['degree']),
            interactions=bool(data['interactions']),
            feature_names=tuple(data['feature_names']),
            centers=dict(data['centers']),
            scales=dict(data['scales']),
            levels={k: tuple(v) for k, v in data['levels'].items()},
            terms=tuple(data['terms']),
            mean_coef=np.array(data['mean_coef'], dtype=float),
            var_coef=None if data['var_coef'] is None else np.array(data['var_coef'], dtype=float),
            var_floor=None if data['var_floor'] is None else np.array(data['var_floor'], dtype=float),
        )

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()


def _split_roster(covariates) -> tuple[list[str], list[str]]:
    unknown = [c for c in covariates if c not in CONTINUOUS_COVARIATES + CATEGORICAL_COVARIATES]
    if unknown:
        raise ValidationError(f"unknown covariate(s): {', '.join(unknown)}")
    continuous = [c for c in covariates if c in CONTINUOUS_COVARIATES]
    categorical = [c for c in covariates if c in CATEGORICAL_COVARIATES]
    return continuous, categorical


def build_design(table: CovariateTable, model: HarmonizationModel) -> np.ndarray:
    """Design matrix for ``table`` using the model's encoding (no refitting)."""
    design, _ = _design(
        table, model.covariates, model.degree, model.interactions,
        model.centers, model.scales, model.levels,
    )
    return design


def _design(table, covariates, degree, interactions, centers, scales, levels):
    continuous, categorical = _split_roster(covariates)
    n = len(table.ids)
    cols = [np.ones(n)]
    terms = ['1']
    z = {}
    for name in continuous:
        x = table.column(name)
        if np.isnan(x).any():
            pid = table.ids[int(np.flatnonzero(np.isnan(x))[0])]
            raise ValidationError(f"covariate {name!r} missing for participant {pid!r}")
        z[name] = (x - centers[name]) / scales[name]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(continuous, d):
            cols.append(np.prod([z[c] for c in combo], axis=0))
            terms.append('*'.join(combo))
    for name in categorical:
        values = table.column(name)
        for pid, v in zip(table.ids, values):
            if v is None:
                raise ValidationError(f"covariate {name!r} missing for participant {pid!r}")
            if v not in levels[name]:
                raise ValidationError(
                    f"covariate {name!r} has level {v!r} unseen at fit time "
                    f"(participant {pid!r}; fitted levels: {', '.join(levels[name])})"
                )
        # First level is the reference and gets no column.
        for level in levels[name][1:]:
            dummy = (values == level).astype(float)
            cols.append(dummy)
            terms.append(f"{name}[{level}]")
            if interactions:
                for c in continuous:
                    cols.append(dummy * z[c])
                    terms.append(f"{name}[{level}]*{c}")
    return np.column_stack(cols), tuple(terms)


def fit_harmonization(
    train: DatasetBundle,
    kind: str,
    covariates,
    degree: int = DEFAULT_DEGREE,
    interactions: bool = False,
    features=None,
) -> HarmonizationModel:
    if kind not in HARMONIZATION_TYPES:
        raise ValidationError(f"harmonization type must be one of {HARMONIZATION_TYPES}, got {kind!r}")
    if int(degree) != degree or degree < 1:
        raise ValidationError(f"polynomial degree must be >= 1, got {degree}")
    covariates = tuple(covariates)
    if not covariates:
        raise ValidationError("harmonization needs at least one covariate")
    continuous, categorical = _split_roster(covariates)

    table = train.covariates
    centers, scales, levels = {}, {}, {}
    for name in continuous:
        x = table.column(name)
        if np.isnan(x).any():
            raise ValidationError(f"covariate {name!r} has missing values in the training rows")
        sd = x.std()
        if sd == 0:
            raise ValidationError(f"covariate {name!r} is constant on the training rows")
        centers[name] = float(x.mean())
        scales[name] = float(sd)
    for name in categorical:
        values = table.column(name)
        if any(v is None for v in values):
            raise ValidationError(f"covariate {name!r} has missing values in the training rows")
        observed = set(values)
        levels[name] = tuple(lv for lv in table.levels(name) if lv in observed)
        if len(levels[name]) < 2:
            raise ValidationError(f"covariate {name!r} is constant on the training rows")

    design, terms = _design(table, covariates, degree, interactions, centers, scales, levels)
    n, p = design.shape
    if n < p:
        raise ValidationError(f"fewer training rows ({n}) than design columns ({p})")
    if np.linalg.matrix_rank(design) < p:
        raise ValidationError(f"rank-deficient covariate design ({p} columns: {', '.join(terms)})")

    fm = train.features if features is None else train.features.select_names(features)
    y = fm.values
    mean_coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    var_coef = var_floor = None
    if kind == 'zscore':
        resid = y - design @ mean_coef
        var_coef, *_ = np.linalg.lstsq(design, resid ** 2, rcond=None)
        var_floor = np.maximum(VARIANCE_FLOOR, VARIANCE_FLOOR_FRACTION * np.mean(resid ** 2, axis=0))

    return HarmonizationModel(
        kind=kind,
        covariates=covariates,
        degree=int(degree),
        interactions=bool(interactions),
        feature_names=fm.names,
        centers=centers,
        scales=scales,
        levels=levels,
        terms=terms,
        mean_coef=mean_coef,
        var_coef=var_coef,
        var_floor=var_floor,
    )


def apply_harmonization(data: DatasetBundle, model: HarmonizationModel) -> FeatureMatrix:
    fm = data.features.select_names(model.feature_names)
    design = build_design(data.covariates, model)
    corrected = fm.values - design @ model.mean_coef
    if model.kind == 'zscore':
        var = np.maximum(design @ model.var_coef, model.var_floor)
        corrected = corrected / np.sqrt(var)
    return fm.with_values(corrected)


def fit_grouped(train: DatasetBundle, kind: str, groups=DEFAULT_GROUPS) -> list[HarmonizationModel]:
    """One model per modality group, each with its own covariate roster."""
    models = []
    covered = set()
    for group in groups:
        names = [c.key for c in train.features.columns if c.modality in group.modalities]
        if not names:
            continue
        covered.update(names)
        models.append(fit_harmonization(
            train, kind, group.covariates, group.degree, group.interactions, names,
        ))
    orphans = [n for n in train.features.names if n not in covered]
    if orphans:
        raise ValidationError(f"no harmonization group covers column(s) {', '.join(orphans[:5])}")
    return models


def apply_grouped(data: DatasetBundle, models) -> FeatureMatrix:
    blocks = {}
    for model in models:
        out = apply_harmonization(data, model)
        for j, name in enumerate(out.names):
            blocks[name] = out.values[:, j]
    names = data.features.names
    return data.features.with_values(np.column_stack([blocks[n] for n in names]))


# ---------------------------------------------------------------------------
# Plain per-column z-score
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ZScoreParams:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {
            'feature_names': list(self.feature_names),
            'mean': self.mean.tolist(),
            'std': self.std.tolist(),
        }

    def digest(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()


def fit_plain_zscore(train: FeatureMatrix) -> ZScoreParams:
    if train.n_rows < 2:
        raise ValidationError(f"z-score needs at least 2 rows, got {train.n_rows}")
    x = train.values
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    constant = np.ptp(x, axis=0) == 0
    # Constant columns map to exactly zero.
    mean = np.where(constant, x[0], mean)
    std = np.where(constant, ZSCORE_STD_FLOOR, np.maximum(std, ZSCORE_STD_FLOOR))
    return ZScoreParams(train.names, mean, std)


def apply_plain_zscore(data: FeatureMatrix, params: ZScoreParams) -> FeatureMatrix:
    fm = data.select_names(params.feature_names)
    return fm.with_values((fm.values - params.mean) / params.std)
