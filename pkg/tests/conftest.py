import numpy as np
import pandas as pd
import pytest

from mci_biomarkers.dataset import CovariateTable, DatasetBundle, FeatureColumn, FeatureMatrix


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Point MCIBIO_OUTPUT_DIR at a temporary directory for the test."""
    out = tmp_path / "out"
    monkeypatch.setenv("MCIBIO_OUTPUT_DIR", str(out))
    return out


def make_bundle(n=40, n_features=4, seed=0, modality="MAG", shift=0.0):
    """Small cohort with balanced labels and two sites; ``shift`` separates the classes."""
    rng = np.random.default_rng(seed)
    ids = [f"p{i:03d}" for i in range(n)]
    labels = np.arange(n) % 2
    site = np.where(np.arange(n) % 4 < 2, "A", "B")
    frame = pd.DataFrame({
        "age": rng.normal(70.0, 6.0, n),
        "sex": pd.Categorical(np.where(np.arange(n) % 3 == 0, "F", "M"), categories=["F", "M"]),
        "site": pd.Categorical(site, categories=["A", "B"]),
        "tiv": rng.normal(1500.0, 120.0, n),
        "movement": np.abs(rng.normal(0.5, 0.2, n)),
    }, index=pd.Index(ids, name="participant_id"))
    values = rng.standard_normal((n, n_features)) + shift * labels[:, None]
    columns = [FeatureColumn(f"f{j}", modality, band="alpha", region=f"r{j}") for j in range(n_features)]
    return DatasetBundle(FeatureMatrix(ids, columns, values), CovariateTable(frame), labels)


@pytest.fixture
def bundle():
    return make_bundle()
