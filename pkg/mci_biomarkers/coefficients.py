"""Across-replica summaries of GLMNET coefficient traces."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from mci_biomarkers.dataset import FeatureColumn
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.logger import get_logger

_log = get_logger('coefficients')

SD_FLOOR = 1e-12
TOP_N = 20


@dataclass(frozen=True, eq=False)
class CoefficientSummary:
    names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    z: np.ndarray
    frequency: np.ndarray
    degenerate: np.ndarray  # SD hit the floor while the mean is nonzero

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'feature': list(self.names),
            'mean': self.mean,
            'sd': self.sd,
            'z': self.z,
            'frequency': self.frequency,
            'degenerate_sd': self.degenerate,
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'CoefficientSummary':
        missing = [c for c in ('feature', 'mean', 'sd', 'z', 'frequency', 'degenerate_sd')
                   if c not in frame.columns]
        if missing:
            raise ValidationError(f"coefficient summary is missing column(s) {', '.join(missing)}")
        return cls(
            tuple(frame['feature'].astype(str)),
            frame['mean'].to_numpy(dtype=float),
            frame['sd'].to_numpy(dtype=float),
            frame['z'].to_numpy(dtype=float),
            frame['frequency'].to_numpy(dtype=float),
            frame['degenerate_sd'].astype(str).str.lower().eq('true').to_numpy(),
        )

    def top(self, n: int = TOP_N) -> pd.DataFrame:
        """Largest |z| first; feature name breaks ties."""
        frame = self.to_frame()
        frame['abs_z'] = np.abs(self.z)
        frame = frame.sort_values(['abs_z', 'feature'], ascending=[False, True], kind='mergesort')
        return frame.drop(columns='abs_z').head(n).reset_index(drop=True)


def aggregate_coefficients(traces, names) -> CoefficientSummary:
    names = tuple(names)
    rows = [np.asarray(t, dtype=float) for t in traces]
    if len(rows) < 2:
        raise ValidationError(f"coefficient summary needs at least 2 replicas, got {len(rows)}")
    for i, row in enumerate(rows):
        if row.shape != (len(names),):
            raise ValidationError(
                f"coefficient trace {i + 1} has {row.shape[0]} values, expected {len(names)}"
            )
    stack = np.vstack(rows)
    mean = stack.mean(axis=0)
    sd = stack.std(axis=0, ddof=1)
    z = mean / np.maximum(sd, SD_FLOOR)
    degenerate = (sd < SD_FLOOR) & (mean != 0)
    if degenerate.any():
        _log.warning("%d coefficient(s) have zero SD across replicas; z uses the SD floor",
                     int(degenerate.sum()))
    frequency = (stack != 0).mean(axis=0)
    return CoefficientSummary(names, mean, sd, z, frequency, degenerate)


def region_band_table(summary: CoefficientSummary, columns) -> pd.DataFrame:
    """(region, band, z) rows for columns that carry region metadata."""
    meta: dict[str, FeatureColumn] = {c.key: c for c in columns}
    rows = []
    for name, z, freq in zip(summary.names, summary.z, summary.frequency):
        col = meta.get(name)
        if col is None or col.region is None:
            continue
        rows.append({
            'modality': col.modality,
            'region': col.region,
            'band': col.band or '',
            'z': z,
            'frequency': freq,
        })
    frame = pd.DataFrame(rows, columns=['modality', 'region', 'band', 'z', 'frequency'])
    return frame.sort_values(['modality', 'region', 'band'], kind='mergesort').reset_index(drop=True)
