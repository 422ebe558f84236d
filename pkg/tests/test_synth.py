import json

import numpy as np
import pytest

from mci_biomarkers.dataset import combine_features, load_dataset
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.synth import SynthSpec, nuisance_columns, synth_dataset, write_synth


def test_cohort_shape_and_class_counts():
    bundle, truth = synth_dataset(SynthSpec(n_rows=60, n_class1=25, informative=3, noise=7))

    assert bundle.n_rows == 60
    assert bundle.features.n_features == 10
    assert int(bundle.labels.sum()) == 25
    assert truth["class_counts"] == {"0": 35, "1": 25}
    assert truth["informative"] == ["MAG/inf00", "MAG/inf01", "MAG/inf02"]


def test_informative_columns_carry_the_effect():
    bundle, _ = synth_dataset(SynthSpec(n_rows=400, n_class1=200, informative=2, noise=2, effect=1.5, seed=3))
    x, y = bundle.features.values, bundle.labels
    gap = x[y == 1].mean(axis=0) - x[y == 0].mean(axis=0)
    assert np.all(gap[:2] > 1.0)
    assert np.all(np.abs(gap[2:]) < 0.4)


def test_site_shift_moves_only_the_nuisance_columns():
    spec = SynthSpec(n_rows=400, n_class1=200, informative=2, noise=8, site_shift=2.0, nuisance_fraction=0.5)
    bundle, truth = synth_dataset(spec)
    site_b = bundle.covariates.column("site") == "B"
    gap = bundle.features.values[site_b].mean(axis=0) - bundle.features.values[~site_b].mean(axis=0)
    shifted = np.isin(bundle.features.names, truth["nuisance"])

    assert list(nuisance_columns(spec)) == list(np.flatnonzero(shifted))
    assert shifted.sum() == 5
    assert np.all(gap[shifted] > 1.5)
    assert np.all(np.abs(gap[~shifted]) < 0.4)


def test_age_effect_follows_the_nuisance_fraction():
    bundle, truth = synth_dataset(SynthSpec(n_rows=400, n_class1=200, informative=1, noise=3,
                                            age_effect=1.5, nuisance_fraction=1.0))
    age = bundle.covariates.column("age")
    slopes = np.polyfit((age - 72.0) / 7.0, bundle.features.values, 1)[0]

    assert len(truth["nuisance"]) == 4
    assert np.all(np.abs(slopes - 1.5) < 0.2)
    untouched, _ = synth_dataset(SynthSpec(n_rows=40, n_class1=20, noise=4, age_effect=1.5, nuisance_fraction=0.0))
    plain, _ = synth_dataset(SynthSpec(n_rows=40, n_class1=20, noise=4))
    assert np.array_equal(untouched.features.values, plain.features.values)


def test_cohorts_of_different_modalities_combine():
    mag, _ = synth_dataset(SynthSpec(n_rows=40, n_class1=20, noise=4, modality="MAG", seed=2))
    mri, _ = synth_dataset(SynthSpec(n_rows=40, n_class1=20, noise=4, modality="MRI", seed=2))

    combined = combine_features([mag, mri], "MAG+MRI")

    assert combined.features.n_features == 18
    assert np.array_equal(combined.labels, mag.labels)
    assert not np.allclose(mag.features.values, mri.features.values)


def test_generation_is_seeded():
    a, _ = synth_dataset(SynthSpec(n_rows=30, n_class1=15, noise=3, seed=9))
    b, _ = synth_dataset(SynthSpec(n_rows=30, n_class1=15, noise=3, seed=9))
    assert np.array_equal(a.features.values, b.features.values)


def test_written_files_load_back(tmp_path):
    spec = SynthSpec(n_rows=30, n_class1=12, informative=2, noise=3, modality="GRAD")

    paths = write_synth(spec, tmp_path)
    bundle = load_dataset(paths["features"], paths["covariates"], paths["labels"])
    truth = json.loads(paths["ground_truth"].read_text())

    original, _ = synth_dataset(spec)
    assert bundle.ids == original.ids
    assert bundle.features.names == original.features.names
    np.testing.assert_allclose(bundle.features.values, original.features.values, rtol=1e-15)
    assert truth["spec"]["modality"] == "GRAD"
    assert paths["features"].name == "grad_features.csv"


@pytest.mark.parametrize("options, message", [
    ({"n_rows": 3}, "at least 4 rows"),
    ({"n_rows": 10, "n_class1": 10}, "n_class1 must be between 1 and 9"),
    ({"informative": 0, "noise": 0}, "at least one feature column"),
    ({"modality": "EEG"}, "unknown modality 'EEG'"),
    ({"nuisance_fraction": 1.5}, r"nuisance_fraction must be in \[0, 1\]"),
])
def test_spec_validation(options, message):
    with pytest.raises(ValidationError, match=message):
        SynthSpec(**options)
