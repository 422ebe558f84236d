import json

import pytest

from mci_biomarkers.classifiers import ClassifierSpec
from mci_biomarkers.cv import RunConfig, monte_carlo_run
from mci_biomarkers.store import (
    COEFFICIENTS_FILE,
    META_FILE,
    RESULTS_FILE,
    CellStore,
    file_digest,
)
from tests.conftest import make_bundle


@pytest.fixture(scope="module")
def gnb_result():
    config = RunConfig(classifier=ClassifierSpec("GNB"), K=3, R=2, seed=1)
    return monte_carlo_run(config, make_bundle(shift=1.0))


@pytest.fixture(scope="module")
def glmnet_result():
    config = RunConfig(classifier=ClassifierSpec("GLMNET", n_lambda=8), K=3, R=2, seed=1)
    return monte_carlo_run(config, make_bundle(shift=1.0))


def test_write_cell_creates_results_and_meta(output_dir, gnb_result):
    store = CellStore(output_dir)

    d = store.write_cell(gnb_result, "digest-1")

    assert d == output_dir / "cells" / gnb_result.config.config_id
    assert (d / RESULTS_FILE).exists()
    assert not (d / COEFFICIENTS_FILE).exists()
    with open(d / META_FILE, encoding="utf-8") as f:
        meta = json.load(f)
    assert meta["input_digest"] == "digest-1"
    assert meta["replicas"] == 2
    assert meta["results_sha256"] == file_digest(d / RESULTS_FILE)
    assert store.list_cells() == [gnb_result.config.config_id]


def test_glmnet_cell_stores_coefficient_traces(output_dir, glmnet_result):
    store = CellStore(output_dir)
    config_id = glmnet_result.config.config_id
    store.write_cell(glmnet_result, "d")

    traces = store.read_coefficients(config_id)

    assert list(traces["replica"]) == [1, 2]
    assert traces.shape[1] == 1 + len(glmnet_result.feature_names)


def test_results_read_back_exactly(output_dir, gnb_result):
    store = CellStore(output_dir)
    config_id = gnb_result.config.config_id
    store.write_cell(gnb_result, "d")

    frame = store.read_results(config_id)

    expected = gnb_result.to_frame()
    assert list(frame.columns) == list(expected.columns)
    assert (frame["auc"] == expected["auc"]).all()
    assert (frame["sensor"] == "").all()


def test_complete_only_with_matching_digest_and_intact_results(output_dir, gnb_result):
    store = CellStore(output_dir)
    config_id = gnb_result.config.config_id
    assert not store.is_complete(config_id, "d")

    store.write_cell(gnb_result, "d")

    assert store.is_complete(config_id, "d")
    assert not store.is_complete(config_id, "other inputs")
    results = store.cell_dir(config_id) / RESULTS_FILE
    results.write_text(results.read_text() + "tampered\n")
    assert not store.is_complete(config_id, "d")


def test_rewriting_a_cell_is_byte_identical(output_dir, gnb_result):
    store = CellStore(output_dir)
    d = store.write_cell(gnb_result, "d")
    first = (d / RESULTS_FILE).read_bytes(), (d / META_FILE).read_bytes()

    store.write_cell(gnb_result, "d")

    assert ((d / RESULTS_FILE).read_bytes(), (d / META_FILE).read_bytes()) == first


def test_unreadable_meta_counts_as_incomplete(output_dir, gnb_result):
    store = CellStore(output_dir)
    config_id = gnb_result.config.config_id
    d = store.write_cell(gnb_result, "d")
    (d / META_FILE).write_text("{broken")

    assert store.get_meta(config_id) is None
    assert not store.is_complete(config_id, "d")


def test_delete_removes_the_cell(output_dir, gnb_result):
    store = CellStore(output_dir)
    config_id = gnb_result.config.config_id
    store.write_cell(gnb_result, "d")

    assert store.delete(config_id) is True
    assert store.delete(config_id) is False
    assert store.list_cells() == []
    assert store.read_results(config_id) is None


def test_failures_file_is_written_and_cleared(output_dir):
    store = CellStore(output_dir)

    path = store.write_failures({"KSVM/MAG_ONLY/none/Sensor": "ReplicaError: replica 3 failed: boom"})
    assert store.read_failures() == {"KSVM/MAG_ONLY/none/Sensor": "ReplicaError: replica 3 failed: boom"}

    store.write_failures({})
    assert not path.exists()
    assert store.read_failures() == {}
