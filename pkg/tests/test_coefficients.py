import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from mci_biomarkers.classifiers import ClassifierSpec
from mci_biomarkers.coefficients import (
    SD_FLOOR,
    CoefficientSummary,
    aggregate_coefficients,
    region_band_table,
)
from mci_biomarkers.cv import RunConfig, monte_carlo_run
from mci_biomarkers.dataset import FeatureColumn
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.synth import SynthSpec, synth_dataset

NAMES = ("MAG/a", "MAG/b", "MAG/c")


def test_mean_sd_and_z_across_replicas():
    traces = [[1.0, 0.0, -2.0], [3.0, 0.0, -4.0], [2.0, 0.0, -3.0]]

    summary = aggregate_coefficients(traces, NAMES)

    assert_allclose(summary.mean, [2.0, 0.0, -3.0])
    assert_allclose(summary.sd, [1.0, 0.0, 1.0])
    assert_allclose(summary.z, [2.0, 0.0, -3.0])
    assert_array_equal(summary.frequency, [1.0, 0.0, 1.0])


def test_constant_nonzero_coefficient_is_flagged():
    summary = aggregate_coefficients([[0.5, 0.0], [0.5, 0.0]], NAMES[:2])

    assert summary.z[0] == pytest.approx(0.5 / SD_FLOOR)
    assert summary.degenerate.tolist() == [True, False]
    assert summary.z[1] == 0.0


def test_selection_frequency_counts_nonzero_replicas():
    summary = aggregate_coefficients([[0.0, 1.0], [0.2, 1.0], [0.0, 1.1], [0.0, 0.9]], NAMES[:2])
    assert_allclose(summary.frequency, [0.25, 1.0])


def test_needs_two_replicas_of_matching_width():
    with pytest.raises(ValidationError, match="at least 2 replicas, got 1"):
        aggregate_coefficients([[1.0, 2.0, 3.0]], NAMES)
    with pytest.raises(ValidationError, match="trace 2 has 2 values, expected 3"):
        aggregate_coefficients([[1.0, 2.0, 3.0], [1.0, 2.0]], NAMES)


def test_top_orders_by_absolute_z_then_name():
    summary = CoefficientSummary(
        ("d", "c", "b", "a"),
        mean=np.array([1.0, -3.0, 2.0, 2.0]),
        sd=np.ones(4),
        z=np.array([1.0, -3.0, 2.0, 2.0]),
        frequency=np.ones(4),
        degenerate=np.zeros(4, dtype=bool),
    )
    assert list(summary.top(3)["feature"]) == ["c", "a", "b"]


def test_frame_round_trip_restores_flags():
    summary = aggregate_coefficients([[0.5, 1.0], [0.5, 2.0]], NAMES[:2])
    frame = summary.to_frame()
    frame["degenerate_sd"] = frame["degenerate_sd"].map({True: "True", False: "False"})

    restored = CoefficientSummary.from_frame(frame)

    assert restored.names == summary.names
    assert restored.degenerate.tolist() == [True, False]
    with pytest.raises(ValidationError, match="missing column"):
        CoefficientSummary.from_frame(frame.drop(columns="z"))


def test_region_band_table_skips_columns_without_regions():
    columns = [
        FeatureColumn("a", "MAG", band="theta", region="frontal"),
        FeatureColumn("b", "MAG"),
        FeatureColumn("c", "MAG", band="alpha", region="frontal"),
    ]
    summary = aggregate_coefficients([[1.0, 1.0, 0.0], [3.0, 2.0, 1.0]], NAMES)

    table = region_band_table(summary, columns)

    assert list(table["band"]) == ["alpha", "theta"]
    assert list(table["region"]) == ["frontal", "frontal"]
    assert table["frequency"].tolist() == [0.5, 1.0]


def test_glmnet_recovers_planted_features_among_two_hundred_noise_columns():
    bundle, truth = synth_dataset(SynthSpec(informative=5, noise=200, effect=1.0, seed=11))
    planted = set(truth["informative"])
    config = RunConfig(classifier=ClassifierSpec("GLMNET", n_lambda=20, lambda_min_ratio=0.01),
                       K=3, R=20, seed=3)

    traces = monte_carlo_run(config, bundle, jobs=4).coefficient_frame()
    names = [c for c in traces.columns if c != "replica"]

    hits = 0
    for _, row in traces.iterrows():
        top5 = row[names].abs().sort_values(ascending=False).index[:5]
        hits += len(planted & set(top5)) >= 4
    assert hits >= 18
    summary = aggregate_coefficients(traces[names].to_numpy(), names)
    assert len(planted & set(summary.top(5)["feature"])) >= 4
