import json
import logging

import pandas as pd
import pytest

from mci_biomarkers.cv import RESULT_COLUMNS
from mci_biomarkers.manifest import manifest_from_dict
from mci_biomarkers.runner import (
    ANOVA_FILE,
    REGION_FILE,
    RESULTS_FILE,
    SUMMARY_FILE,
    TOP_FILE,
    input_digest,
    run_experiment_grid,
)
from mci_biomarkers.store import FAILURES_FILE, CellStore
from mci_biomarkers.synth import SynthSpec, write_synth


@pytest.fixture
def study(tmp_path):
    """A MAG cohort on disk plus a 2x2 manifest (GNB/GLMNET x none/residuals)."""
    d = tmp_path / "study"
    write_synth(SynthSpec(n_rows=40, n_class1=20, informative=2, noise=3, effect=1.5, seed=5), d)
    data = {
        "seed": 3, "K": 3, "R": 2,
        "datasets": [{"name": "mag", "modality": "MAG", "localization": "Sensor",
                      "features": "mag_features.csv", "covariates": "mag_covariates.csv",
                      "labels": "mag_labels.csv"}],
        "grid": {"classifiers": ["GNB", "GLMNET"], "sensors": ["MAG"],
                 "corrections": ["none", "residuals"]},
        "classifier_options": {"GLMNET": {"n_lambda": 8}},
    }
    return d, data


def load(study, **changes):
    d, data = study
    data = {**data, **changes}
    return manifest_from_dict(data, d / "manifest.json")


def test_grid_writes_cells_results_and_anova(study, tmp_path):
    out = tmp_path / "out"

    outcome = run_experiment_grid(load(study), out)

    assert outcome.exit_code == 0
    assert len(outcome.completed) == 4 and not outcome.skipped
    frame = pd.read_csv(out / RESULTS_FILE, keep_default_na=False)
    assert list(frame.columns) == list(RESULT_COLUMNS)
    assert len(frame) == 4 * 2 * 2
    assert list(frame["config_id"]) == sorted(frame["config_id"])
    anova = pd.read_csv(out / ANOVA_FILE)
    assert set(anova.loc[anova["method"] == "ANOVA", "factor"]) == {"classifier", "correction"}
    assert not (out / FAILURES_FILE).exists()


def test_glmnet_cells_get_coefficient_summaries(study, tmp_path):
    outcome = run_experiment_grid(load(study), tmp_path / "out")

    assert len(outcome.coefficient_paths) == 2
    for path in outcome.coefficient_paths.values():
        summary = pd.read_csv(path)
        assert len(summary) == 5
        assert (path.parent / TOP_FILE).exists()
        regions = pd.read_csv(path.parent / REGION_FILE)
        assert set(regions["modality"]) == {"MAG"}
        assert path.name == SUMMARY_FILE


def test_rerun_skips_complete_cells_and_reproduces_outputs(study, tmp_path, caplog):
    out = tmp_path / "out"
    run_experiment_grid(load(study), out)
    before = {name: (out / name).read_bytes() for name in (RESULTS_FILE, ANOVA_FILE)}

    caplog.set_level(logging.INFO, logger="mci_biomarkers")
    outcome = run_experiment_grid(load(study), out)

    assert len(outcome.skipped) == 4 and not outcome.completed
    assert {name: (out / name).read_bytes() for name in before} == before
    assert "[1/4]" in caplog.text and "skipped (complete)" in caplog.text


def test_damaged_cell_is_recomputed_identically(study, tmp_path):
    out = tmp_path / "out"
    first = run_experiment_grid(load(study), out)
    victim = first.completed[0]
    results = CellStore(out).cell_dir(victim) / RESULTS_FILE
    original = results.read_bytes()
    results.write_text("config_id\n")

    outcome = run_experiment_grid(load(study), out)

    assert outcome.completed == [victim]
    assert results.read_bytes() == original


def test_seed_override_changes_every_cell(study, tmp_path):
    out = tmp_path / "out"
    first = run_experiment_grid(load(study), out)
    second = run_experiment_grid(load(study), out, seed=99)
    assert not set(first.completed) & set(second.completed)
    assert len(second.completed) == 4


def test_failing_cells_are_isolated(study, tmp_path):
    out = tmp_path / "out"
    manifest = load(study, ffsel={"GNB": True}, relieff={"J": 50})

    outcome = run_experiment_grid(manifest, out)

    assert outcome.exit_code == 2
    assert sorted(outcome.failed) == ["GNB/MAG_ONLY/none/Sensor", "GNB/MAG_ONLY/residuals/Sensor"]
    assert all("ReplicaError" in reason for reason in outcome.failed.values())
    assert len(outcome.completed) == 2
    with open(out / FAILURES_FILE, encoding="utf-8") as f:
        assert json.load(f) == outcome.failed
    frame = pd.read_csv(out / RESULTS_FILE, keep_default_na=False)
    assert set(frame["classifier"]) == {"GLMNET"}


def test_missing_input_file_fails_its_cells(study, tmp_path):
    d, _ = study
    (d / "mag_labels.csv").unlink()

    outcome = run_experiment_grid(load(study), tmp_path / "out")

    assert outcome.exit_code == 2
    assert len(outcome.failed) == 4
    assert outcome.results_path is None


def test_input_digest_tracks_files_and_config(study):
    manifest = load(study)
    config = manifest.run_config(manifest.cells()[0])
    base = input_digest(config, [("a.csv", "1")])
    assert input_digest(config, [("a.csv", "1")]) == base
    assert input_digest(config, [("a.csv", "2")]) != base
    assert input_digest(manifest.run_config(manifest.cells()[1]), [("a.csv", "1")]) != base


@pytest.mark.parametrize("jobs", [2, 8])
def test_parallel_cells_match_a_serial_run_byte_for_byte(study, tmp_path, jobs):
    serial = run_experiment_grid(load(study), tmp_path / "serial", jobs=1)
    parallel = run_experiment_grid(load(study), tmp_path / "parallel", jobs=jobs)

    assert parallel.completed == serial.completed
    for name in (RESULTS_FILE, ANOVA_FILE):
        assert (tmp_path / "parallel" / name).read_bytes() == (tmp_path / "serial" / name).read_bytes()
    for config_id in serial.completed:
        for name in ("results.csv", "meta.json"):
            a = CellStore(tmp_path / "serial").cell_dir(config_id) / name
            b = CellStore(tmp_path / "parallel").cell_dir(config_id) / name
            assert a.read_bytes() == b.read_bytes()


def test_parallel_grid_isolates_failing_cells(study, tmp_path):
    outcome = run_experiment_grid(load(study, ffsel={"GNB": True}, relieff={"J": 50}),
                                  tmp_path / "out", jobs=2)

    assert sorted(outcome.failed) == ["GNB/MAG_ONLY/none/Sensor", "GNB/MAG_ONLY/residuals/Sensor"]
    assert len(outcome.completed) == 2
