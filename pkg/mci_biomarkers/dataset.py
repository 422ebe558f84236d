"""Tabular data model: feature matrices, covariates and labels keyed by participant ID.

Participants are always held in lexicographic ID order so every seeded
downstream step depends only on the data, never on file row order.
"""

import json
import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd

from mci_biomarkers.errors import ValidationError

MODALITIES = ('MAG', 'GRAD', 'MRI', 'OTHER')
ID_COLUMN = 'participant_id'
COVARIATE_COLUMNS = ('age', 'sex', 'site', 'tiv', 'movement')
CATEGORICAL_COVARIATES = ('sex', 'site')
CONTINUOUS_COVARIATES = ('age', 'tiv', 'movement')
SEX_LEVELS = ('F', 'M')

_FLOAT_FORMAT = '%.17g'


@dataclass(frozen=True)
class FeatureColumn:
    name: str
    modality: str = 'OTHER'
    band: str | None = None
    region: str | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValidationError(
                f"column {self.name!r}: unknown modality {self.modality!r} "
                f"(expected one of {', '.join(MODALITIES)})"
            )

    @property
    def key(self) -> str:
        # MAG and GRAD share sensor-name stems, so the modality is part of the identity.
        return f"{self.modality}/{self.name}"

    def to_dict(self) -> dict:
        return {'modality': self.modality, 'band': self.band, 'region': self.region}


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    ids: tuple[str, ...]
    columns: tuple[FeatureColumn, ...]
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        columns = tuple(self.columns)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape != (len(ids), len(columns)):
            raise ValidationError(
                f"feature values have shape {values.shape}, expected "
                f"({len(ids)}, {len(columns)})"
            )
        _check_unique(ids, 'participant ID')
        _check_unique([c.key for c in columns], 'feature column')
        bad = ~np.isfinite(values)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(
                f"non-finite feature value at participant {ids[r]!r} column {columns[c].key!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, 'ids', ids)
        object.__setattr__(self, 'columns', columns)
        object.__setattr__(self, 'values', values)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.key for c in self.columns)

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def select_rows(self, rows) -> 'FeatureMatrix':
        rows = np.asarray(rows, dtype=int)
        return FeatureMatrix(tuple(self.ids[i] for i in rows), self.columns, self.values[rows])

    def select_columns(self, cols) -> 'FeatureMatrix':
        cols = np.asarray(cols, dtype=int)
        return FeatureMatrix(
            self.ids, tuple(self.columns[j] for j in cols), self.values[:, cols]
        )

    def select_names(self, names) -> 'FeatureMatrix':
        index = {k: j for j, k in enumerate(self.names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise ValidationError(f"missing feature column(s): {', '.join(missing[:5])}")
        return self.select_columns([index[n] for n in names])

    def with_values(self, values) -> 'FeatureMatrix':
        return FeatureMatrix(self.ids, self.columns, values)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.values, index=list(self.ids), columns=list(self.names))
        frame.index.name = ID_COLUMN
        return frame


@dataclass(frozen=True, eq=False)
class CovariateTable:
    """Per-participant nuisance variables; blank cells are NaN / None."""

    frame: pd.DataFrame

    def __post_init__(self):
        frame = self.frame.copy()
        missing = [c for c in COVARIATE_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(f"covariate table lacks column(s): {', '.join(missing)}")
        frame = frame[list(COVARIATE_COLUMNS)]
        frame.index = frame.index.map(str)
        frame.index.name = ID_COLUMN
        _check_unique(list(frame.index), 'participant ID')
        for name in CONTINUOUS_COVARIATES:
            frame[name] = frame[name].astype(float)
        for name in CATEGORICAL_COVARIATES:
            if not isinstance(frame[name].dtype, pd.CategoricalDtype):
                values = frame[name].astype(object).where(frame[name].notna(), None)
                levels = sorted({str(v) for v in values if v is not None})
                frame[name] = pd.Categorical(
                    [None if v is None else str(v) for v in values], categories=levels
                )
        object.__setattr__(self, 'frame', frame)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.frame.index)

    def column(self, name: str) -> np.ndarray:
        if name in CONTINUOUS_COVARIATES:
            return self.frame[name].to_numpy(dtype=float)
        if name in CATEGORICAL_COVARIATES:
            return np.array(
                [None if pd.isna(v) else str(v) for v in self.frame[name]], dtype=object
            )
        raise ValidationError(f"unknown covariate {name!r}")

    def levels(self, name: str) -> tuple[str, ...]:
        if name not in CATEGORICAL_COVARIATES:
            raise ValidationError(f"covariate {name!r} is not categorical")
        return tuple(str(c) for c in self.frame[name].cat.categories)

    def select_rows(self, rows) -> 'CovariateTable':
        return CovariateTable(self.frame.iloc[np.asarray(rows, dtype=int)])


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    features: FeatureMatrix
    covariates: CovariateTable
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels)
        if labels.ndim != 1 or labels.shape[0] != self.features.n_rows:
            raise ValidationError(
                f"{labels.shape[0] if labels.ndim else 0} labels for "
                f"{self.features.n_rows} participants"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must be 0 (HC) or 1 (MCI)")
        labels = labels.astype(np.int8)
        labels.setflags(write=False)
        if self.covariates.ids != self.features.ids:
            raise ValidationError("covariates and features list different participants")
        object.__setattr__(self, 'labels', labels)

    @property
    def ids(self) -> tuple[str, ...]:
        return self.features.ids

    @property
    def n_rows(self) -> int:
        return self.features.n_rows

    def select_rows(self, rows) -> 'DatasetBundle':
        return DatasetBundle(
            self.features.select_rows(rows),
            self.covariates.select_rows(rows),
            self.labels[np.asarray(rows, dtype=int)],
        )

    def with_features(self, features: FeatureMatrix) -> 'DatasetBundle':
        return DatasetBundle(features, self.covariates, self.labels)


class CombinationMode(str, Enum):
    MAG_ONLY = 'MAG_ONLY'
    GRAD_ONLY = 'GRAD_ONLY'
    MRI_ONLY = 'MRI_ONLY'
    MAG_MRI = 'MAG+MRI'
    GRAD_MRI = 'GRAD+MRI'
    MAG_GRAD_MRI = 'MAG+GRAD+MRI'

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(self.value.removesuffix('_ONLY').split('+'))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _check_unique(items, what: str):
    seen = set()
    for i, item in enumerate(items):
        if item in seen:
            raise ValidationError(f"duplicate {what} {item!r} (position {i + 1})")
        seen.add(item)


def _read_table(path: Path) -> tuple[list[str], pd.DataFrame]:
    """Read a CSV as strings; return (header, body) with body rows numbered from 1."""
    try:
        raw = pd.read_csv(
            path, dtype=str, header=None, keep_default_na=False, encoding='utf-8'
        )
    except pd.errors.EmptyDataError:
        return [], pd.DataFrame()
    except pd.errors.ParserError as e:
        raise ValidationError(f"{path.name}: malformed CSV: {e}") from e
    raw = raw.fillna('')
    header = [h.strip() for h in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)
    body.index = body.index + 1
    return header, body


def _parse_float(text: str, path: Path, row: int, column: str, allow_blank: bool) -> float:
    text = text.strip()
    if not text:
        if allow_blank:
            return np.nan
        raise ValidationError(f"{path.name}: missing value at row {row} column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(
            f"{path.name}: non-numeric value {text!r} at row {row} column {column!r}"
        ) from None
    if not np.isfinite(value):
        raise ValidationError(
            f"{path.name}: non-finite value {text!r} at row {row} column {column!r}"
        )
    return value


def _read_ids(path: Path, header: list[str], body: pd.DataFrame) -> list[str]:
    if not header or header[0] != ID_COLUMN:
        raise ValidationError(f"{path.name}: first header cell must be {ID_COLUMN!r}")
    ids = []
    for row, value in body[0].items():
        value = value.strip()
        if not value:
            raise ValidationError(f"{path.name}: blank participant ID at row {row}")
        ids.append(value)
    seen = {}
    for row, pid in enumerate(ids, start=1):
        if pid in seen:
            raise ValidationError(
                f"{path.name}: duplicate participant ID {pid!r} at rows {seen[pid]} and {row}"
            )
        seen[pid] = row
    return ids


def _split_key(header_name: str) -> tuple[str | None, str]:
    prefix, sep, rest = header_name.partition('/')
    if sep and prefix in MODALITIES:
        return prefix, rest
    return None, header_name


def _load_columns(header: list[str], sidecar_path: Path | None, default_modality: str = 'OTHER') -> list[FeatureColumn]:
    meta = {}
    if sidecar_path is not None:
        with open(sidecar_path, encoding='utf-8') as f:
            meta = json.load(f)
        if not isinstance(meta, dict):
            raise ValidationError(f"{sidecar_path.name}: expected a JSON object")
        unknown = [k for k in meta if k not in header]
        if unknown:
            raise ValidationError(
                f"{sidecar_path.name}: metadata for unknown column(s) {', '.join(unknown[:5])}"
            )
    columns = []
    for name in header:
        prefix, stem = _split_key(name)
        info = meta.get(name, {})
        modality = info.get('modality') or prefix or default_modality
        if prefix is not None and modality != prefix:
            raise ValidationError(
                f"column {name!r}: sidecar modality {modality!r} contradicts the prefix"
            )
        columns.append(FeatureColumn(stem, modality, info.get('band'), info.get('region')))
    return columns


def load_features(path, columns_path=None, default_modality='OTHER') -> FeatureMatrix:
    path = Path(path)
    header, body = _read_table(path)
    if len(header) < 2:
        raise ValidationError(f"{path.name}: no feature columns")
    ids = _read_ids(path, header, body)
    names = header[1:]
    _check_unique(names, 'feature column')
    if columns_path is None:
        candidate = path.with_suffix('.columns.json')
        columns_path = candidate if candidate.exists() else None
    columns = _load_columns(names, Path(columns_path) if columns_path else None, default_modality)
    values = np.empty((len(ids), len(names)))
    for j, name in enumerate(names, start=1):
        col = body[j]
        for row, text in col.items():
            values[row - 1, j - 1] = _parse_float(text, path, row, name, allow_blank=False)
    return FeatureMatrix(tuple(ids), tuple(columns), values)


def load_covariates(path, site_levels=None, sex_levels=SEX_LEVELS) -> CovariateTable:
    path = Path(path)
    header, body = _read_table(path)
    ids = _read_ids(path, header, body)
    expected = {ID_COLUMN, *COVARIATE_COLUMNS}
    if set(header) != expected or len(header) != len(expected):
        raise ValidationError(
            f"{path.name}: header must be {ID_COLUMN}, {', '.join(COVARIATE_COLUMNS)}; "
            f"got {', '.join(header)}"
        )
    position = {name: j for j, name in enumerate(header)}
    declared = {'sex': tuple(sex_levels), 'site': tuple(site_levels) if site_levels else None}
    data = {}
    for name in CONTINUOUS_COVARIATES:
        data[name] = [
            _parse_float(text, path, row, name, allow_blank=True)
            for row, text in body[position[name]].items()
        ]
    for name in CATEGORICAL_COVARIATES:
        cells = []
        for row, text in body[position[name]].items():
            text = text.strip()
            if text and declared[name] is not None and text not in declared[name]:
                raise ValidationError(
                    f"{path.name}: unknown {name} level {text!r} at row {row} "
                    f"(declared: {', '.join(declared[name])})"
                )
            cells.append(text or None)
        levels = declared[name] or tuple(sorted({c for c in cells if c is not None}))
        data[name] = pd.Categorical(cells, categories=list(levels))
    frame = pd.DataFrame(data, index=pd.Index(ids, name=ID_COLUMN))
    return CovariateTable(frame)


def load_labels(path) -> dict[str, int]:
    path = Path(path)
    header, body = _read_table(path)
    ids = _read_ids(path, header, body)
    if header != [ID_COLUMN, 'label']:
        raise ValidationError(f"{path.name}: header must be {ID_COLUMN}, label")
    labels = {}
    for (row, text), pid in zip(body[1].items(), ids):
        text = text.strip()
        if text not in ('0', '1'):
            raise ValidationError(f"{path.name}: label must be 0 or 1, got {text!r} at row {row}")
        labels[pid] = int(text)
    return labels


def _report_mismatch(reference: set, other: set, name: str):
    missing = sorted(reference - other)
    extra = sorted(other - reference)
    parts = []
    if missing:
        parts.append(f"missing from {name}: {', '.join(missing[:5])}")
    if extra:
        parts.append(f"only in {name}: {', '.join(extra[:5])}")
    if parts:
        raise ValidationError("participant sets differ; " + '; '.join(parts))


def load_dataset(
    features_path,
    covariates_path,
    labels_path,
    columns_path=None,
    site_levels=None,
    sex_levels=SEX_LEVELS,
    default_modality='OTHER',
) -> DatasetBundle:
    """Load and cross-validate the three CSV files.

    Participants absent from any file are rejected rather than dropped.
    """
    features = load_features(features_path, columns_path, default_modality)
    covariates = load_covariates(covariates_path, site_levels, sex_levels)
    labels = load_labels(labels_path)

    ids = set(features.ids)
    _report_mismatch(ids, set(covariates.ids), Path(covariates_path).name)
    _report_mismatch(ids, set(labels), Path(labels_path).name)

    order = sorted(features.ids)
    feature_pos = {pid: i for i, pid in enumerate(features.ids)}
    features = features.select_rows([feature_pos[pid] for pid in order])
    covariates = CovariateTable(covariates.frame.loc[order])
    return DatasetBundle(features, covariates, np.array([labels[pid] for pid in order]))


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'w', encoding='utf-8', newline='') as f:
        f.write(text)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_features(features: FeatureMatrix, path) -> Path:
    path = Path(path)
    frame = features.to_frame()
    write_atomic(path, frame.to_csv(float_format=_FLOAT_FORMAT, lineterminator='\n'))
    sidecar = {c.key: c.to_dict() for c in features.columns}
    write_atomic(path.with_suffix('.columns.json'), json.dumps(sidecar, indent=2))
    return path


def save_dataset(bundle: DatasetBundle, directory, stem: str = '') -> dict[str, Path]:
    directory = Path(directory)
    prefix = f"{stem}_" if stem else ''
    paths = {
        'features': directory / f"{prefix}features.csv",
        'covariates': directory / f"{prefix}covariates.csv",
        'labels': directory / f"{prefix}labels.csv",
    }
    save_features(bundle.features, paths['features'])
    paths['columns'] = paths['features'].with_suffix('.columns.json')
    cov = bundle.covariates.frame.copy()
    for name in CATEGORICAL_COVARIATES:
        cov[name] = cov[name].astype(object)
    write_atomic(
        paths['covariates'],
        cov.to_csv(float_format=_FLOAT_FORMAT, na_rep='', lineterminator='\n'),
    )
    labels = pd.DataFrame(
        {'label': bundle.labels.astype(int)}, index=pd.Index(bundle.ids, name=ID_COLUMN)
    )
    write_atomic(paths['labels'], labels.to_csv(lineterminator='\n'))
    return paths


# ---------------------------------------------------------------------------
# Modality combination
# ---------------------------------------------------------------------------

def _merge_covariates(tables: list[CovariateTable]) -> CovariateTable:
    merged = tables[0].frame.copy()
    for table in tables[1:]:
        other = table.frame
        for name in CONTINUOUS_COVARIATES:
            a, b = merged[name], other[name]
            both = a.notna() & b.notna()
            if (a[both] != b[both]).any():
                pid = a[both][a[both] != b[both]].index[0]
                raise ValidationError(f"covariate {name!r} disagrees for participant {pid!r}")
            merged[name] = a.where(a.notna(), b)
        for name in CATEGORICAL_COVARIATES:
            levels = list(merged[name].cat.categories)
            levels += [lv for lv in other[name].cat.categories if lv not in levels]
            a = merged[name].astype(object)
            b = other[name].astype(object)
            both = a.notna() & b.notna()
            if (a[both] != b[both]).any():
                pid = a[both][a[both] != b[both]].index[0]
                raise ValidationError(f"covariate {name!r} disagrees for participant {pid!r}")
            merged[name] = pd.Categorical(a.where(a.notna(), b), categories=levels)
    return CovariateTable(merged)


def combine_features(bundles: list[DatasetBundle], mode) -> DatasetBundle:
    """Concatenate the columns of the modalities selected by ``mode``."""
    mode = CombinationMode(mode)
    if not bundles:
        raise ValidationError("no bundles to combine")
    first = bundles[0]
    for b in bundles[1:]:
        if b.ids != first.ids:
            _report_mismatch(set(first.ids), set(b.ids), 'a combined bundle')
            raise ValidationError("bundles list participants in a different order")
        if not np.array_equal(b.labels, first.labels):
            raise ValidationError("bundles disagree on labels")

    blocks = []
    columns = []
    for b in bundles:
        picked = [j for j, c in enumerate(b.features.columns) if c.modality in mode.modalities]
        if picked:
            blocks.append(b.features.values[:, picked])
            columns.extend(b.features.columns[j] for j in picked)
    for modality in mode.modalities:
        if not any(c.modality == modality for c in columns):
            raise ValidationError(f"mode {mode.value} needs {modality} columns; none supplied")
    keys = [c.key for c in columns]
    if len(set(keys)) != len(keys):
        dup = next(k for k in keys if keys.count(k) > 1)
        raise ValidationError(f"column name collision after modality prefixing: {dup!r}")

    features = FeatureMatrix(first.ids, tuple(columns), np.hstack(blocks))
    covariates = _merge_covariates([b.covariates for b in bundles])
    return DatasetBundle(features, covariates, first.labels)


def project_modality(bundle: DatasetBundle, modality: str) -> DatasetBundle:
    picked = [j for j, c in enumerate(bundle.features.columns) if c.modality == modality]
    if not picked:
        raise ValidationError(f"bundle has no {modality} columns")
    return bundle.with_features(bundle.features.select_columns(picked))
