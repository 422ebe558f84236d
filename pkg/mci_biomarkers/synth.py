"""Two-site synthetic cohort with planted informative features."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from mci_biomarkers.dataset import (
    COVARIATE_COLUMNS,
    MODALITIES,
    SEX_LEVELS,
    CovariateTable,
    DatasetBundle,
    FeatureColumn,
    FeatureMatrix,
    save_dataset,
    write_atomic,
)
from mci_biomarkers.dsp import DEFAULT_BANDS
from mci_biomarkers.errors import ValidationError

SITE_LEVELS = ('A', 'B')
GROUND_TRUTH_FILE = 'ground_truth.json'


@dataclass(frozen=True)
class SynthSpec:
    n_rows: int = 324
    n_class1: int = 158
    informative: int = 5
    noise: int = 200
    effect: float = 1.0        # class-1 mean shift on informative columns, in SD units
    site_shift: float = 0.0    # added to the nuisance columns for site B
    age_effect: float = 0.0    # per SD of age, added to the nuisance columns
    nuisance_fraction: float = 0.5  # share of columns carrying site and age effects
    modality: str = 'MAG'
    n_regions: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_rows < 4:
            raise ValidationError(f"synthetic cohort needs at least 4 rows, got {self.n_rows}")
        if not 0 < self.n_class1 < self.n_rows:
            raise ValidationError(f"n_class1 must be between 1 and {self.n_rows - 1}, got {self.n_class1}")
        if self.informative < 0 or self.noise < 0 or self.informative + self.noise == 0:
            raise ValidationError("synthetic cohort needs at least one feature column")
        if self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if self.n_regions < 1:
            raise ValidationError("n_regions must be >= 1")
        if not 0.0 <= self.nuisance_fraction <= 1.0:
            raise ValidationError(f"nuisance_fraction must be in [0, 1], got {self.nuisance_fraction}")


def _columns(spec: SynthSpec) -> list[FeatureColumn]:
    names = [f"inf{i:02d}" for i in range(spec.informative)] + \
            [f"noise{j:03d}" for j in range(spec.noise)]
    return [
        FeatureColumn(
            name, spec.modality,
            band=DEFAULT_BANDS[j % len(DEFAULT_BANDS)].name,
            region=f"region{j % spec.n_regions:02d}",
        )
        for j, name in enumerate(names)
    ]


def nuisance_columns(spec: SynthSpec) -> np.ndarray:
    """Sorted indices of the columns that receive site and age effects."""
    n_cols = spec.informative + spec.noise
    k = int(round(spec.nuisance_fraction * n_cols))
    return np.sort(np.random.default_rng([spec.seed, 2]).choice(n_cols, size=k, replace=False))


def synth_dataset(spec: SynthSpec) -> tuple[DatasetBundle, dict]:
    """Build the cohort and its ground truth.

    Participants, labels and covariates depend only on the seed, not on the
    modality, so cohorts generated for different modalities can be combined.
    """
    n = spec.n_rows
    ids = [f"sub-{i + 1:04d}" for i in range(n)]
    cohort = np.random.default_rng([spec.seed, 0])
    labels = np.zeros(n, dtype=int)
    labels[cohort.permutation(n)[:spec.n_class1]] = 1
    site = np.array(SITE_LEVELS)[cohort.permutation(np.arange(n) % 2)]
    covariates = pd.DataFrame({
        'age': cohort.normal(72.0, 7.0, n),
        'sex': pd.Categorical(cohort.choice(SEX_LEVELS, n), categories=SEX_LEVELS),
        'site': pd.Categorical(site, categories=SITE_LEVELS),
        'tiv': cohort.normal(1500.0, 150.0, n),
        'movement': np.abs(cohort.normal(0.5, 0.2, n)),
    }, index=pd.Index(ids, name='participant_id'))[list(COVARIATE_COLUMNS)]

    feat = np.random.default_rng([spec.seed, 1, MODALITIES.index(spec.modality)])
    columns = _columns(spec)
    values = feat.standard_normal((n, len(columns)))
    values[:, :spec.informative] += spec.effect * labels[:, None]
    age_z = (covariates['age'].to_numpy() - 72.0) / 7.0
    nuisance = nuisance_columns(spec)
    values[:, nuisance] += spec.age_effect * age_z[:, None]
    values[:, nuisance] += spec.site_shift * (site == 'B')[:, None]

    bundle = DatasetBundle(
        FeatureMatrix(ids, columns, values), CovariateTable(covariates), labels,
    )
    truth = {
        'spec': asdict(spec),
        'informative': [c.key for c in columns[:spec.informative]],
        'nuisance': [columns[j].key for j in nuisance],
        'class_counts': {'0': int((labels == 0).sum()), '1': int(labels.sum())},
    }
    return bundle, truth


def write_synth(spec: SynthSpec, directory) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bundle, truth = synth_dataset(spec)
    stem = spec.modality.lower()
    paths = save_dataset(bundle, directory, stem=stem)
    truth_path = directory / f"{stem}_{GROUND_TRUTH_FILE}"
    write_atomic(truth_path, json.dumps(truth, indent=2, sort_keys=True) + '\n')
    paths['ground_truth'] = truth_path
    return paths
