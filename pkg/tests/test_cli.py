import json

import numpy as np
import pytest

from mci_biomarkers.cli import EXIT_OK, EXIT_PARTIAL, EXIT_VALIDATION, run_cli
from mci_biomarkers.dataset import load_features
from mci_biomarkers.dsp import EpochSet, save_epoch_file
from mci_biomarkers.synth import SynthSpec, write_synth


@pytest.fixture
def cohort(tmp_path):
    paths = write_synth(SynthSpec(n_rows=40, n_class1=20, informative=2, noise=3, effect=3.0, seed=4),
                        tmp_path / "cohort")
    return paths


def write_manifest(directory, **extra):
    data = {
        "seed": 1, "K": 3, "R": 2,
        "datasets": [{"name": "mag", "modality": "MAG", "features": "mag_features.csv",
                      "covariates": "mag_covariates.csv", "labels": "mag_labels.csv"}],
        "grid": {"classifiers": ["GNB"], "sensors": ["MAG"], "corrections": ["none", "zscore"]},
        **extra,
    }
    path = directory / "experiment.json"
    path.write_text(json.dumps(data))
    return path


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        run_cli(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == "mcibio 0.3.0"


def test_no_command_prints_help(capsys):
    assert run_cli([]) == EXIT_OK
    assert "usage: mcibio" in capsys.readouterr().out


def test_synth_json_output(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(["-o", str(out), "--json", "synth", "--rows", "20", "--class1", "8",
                    "--noise", "2", "--modality", "MRI"])

    assert code == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert payload["success"] is True
    assert payload["data"]["features"] == str(out / "synth" / "mri_features.csv")
    assert (out / "mcibio.log").exists()


def test_synth_records_the_nuisance_columns(tmp_path):
    code = run_cli(["-o", str(tmp_path), "synth", "--rows", "20", "--class1", "10", "--informative", "2",
                    "--noise", "6", "--site-shift", "1.0", "--nuisance-fraction", "0.25"])

    truth = json.loads((tmp_path / "synth" / "mag_ground_truth.json").read_text())
    assert code == EXIT_OK
    assert len(truth["nuisance"]) == 2
    assert truth["spec"]["nuisance_fraction"] == 0.25


def test_synth_rejects_bad_counts(tmp_path, capsys):
    code = run_cli(["-o", str(tmp_path), "synth", "--rows", "10", "--class1", "10"])
    assert code == EXIT_VALIDATION
    assert "Error: n_class1 must be between 1 and 9" in capsys.readouterr().err


def test_extract_writes_a_feature_table(tmp_path, capsys):
    rng = np.random.default_rng(0)
    for pid in ("sub-01", "sub-02"):
        save_epoch_file(EpochSet(rng.standard_normal((2, 4, 250)), 250.0, ("c1", "c2")),
                        tmp_path / f"{pid}.f32")
    out = tmp_path / "out"

    code = run_cli(["-o", str(out), "extract", str(tmp_path / "sub-01.f32"), str(tmp_path / "sub-02.f32"),
                    "--modality", "GRAD"])

    assert code == EXIT_OK
    features = load_features(out / "features.csv")
    assert features.ids == ("sub-01", "sub-02")
    assert features.names[0] == "GRAD/c1_delta"
    assert "Extracted 12 features for 2 participants" in capsys.readouterr().out


def test_harmonize_fits_then_reapplies_the_saved_model(cohort, tmp_path):
    out = tmp_path / "out"
    common = ["--features", str(cohort["features"]), "--covariates", str(cohort["covariates"]),
              "--labels", str(cohort["labels"])]

    assert run_cli(["-o", str(out), "harmonize", *common, "--type", "zscore"]) == EXIT_OK
    model = out / "harmonized.model.json"
    assert model.exists()
    assert run_cli(["-o", str(out), "harmonize", *common, "--model", str(model),
                    "--out", "again.csv"]) == EXIT_OK

    first = load_features(out / "harmonized.csv")
    again = load_features(out / "again.csv")
    np.testing.assert_array_equal(first.values, again.values)
    assert first.names == load_features(cohort["features"]).names


def test_rank_puts_informative_features_first(cohort, tmp_path, capsys):
    code = run_cli(["-o", str(tmp_path / "out"), "--json", "rank", "--features", str(cohort["features"]),
                    "--labels", str(cohort["labels"]), "-J", "3"])

    assert code == EXIT_OK
    top = json.loads(capsys.readouterr().out)["data"]["top"]
    assert {row["feature"] for row in top[:2]} == {"MAG/inf00", "MAG/inf01"}


def test_run_anova_and_report(cohort, tmp_path, capsys):
    out = tmp_path / "out"
    manifest = write_manifest(cohort["features"].parent)

    assert run_cli(["-o", str(out), "run", str(manifest)]) == EXIT_OK
    results = out / "results.csv"
    assert results.exists()

    assert run_cli(["-o", str(out), "anova", str(results), "--responses", "auc"]) == EXIT_OK
    assert "ANOVA over correction" in capsys.readouterr().out
    assert (out / "anova.csv").exists()

    assert run_cli(["-o", str(out), "report", str(results), "--formats", "csv,json"]) == EXIT_OK
    assert sorted(p.name for p in (out / "report").iterdir()) == ["summary.csv", "summary.json"]


def test_run_uses_the_manifest_output_dir(cohort, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    manifest = write_manifest(cohort["features"].parent, output_dir="results")
    assert run_cli(["run", str(manifest)]) == EXIT_OK
    assert (cohort["features"].parent / "results" / "results.csv").exists()


def test_run_with_failing_cells_exits_partial(cohort, tmp_path, capsys):
    manifest = write_manifest(cohort["features"].parent, ffsel={"GNB": True}, relieff={"J": 50})

    code = run_cli(["-o", str(tmp_path / "out"), "run", str(manifest)])

    assert code == EXIT_PARTIAL
    err = capsys.readouterr().err
    assert "2 failed" in err
    assert "GNB/MAG_ONLY/zscore/Sensor: ReplicaError" in err


def test_missing_manifest_is_a_validation_error(tmp_path, capsys):
    code = run_cli(["-o", str(tmp_path), "run", str(tmp_path / "missing.json")])
    assert code == EXIT_VALIDATION
    assert "Error: cannot read manifest" in capsys.readouterr().err


def test_anova_rejects_malformed_interaction(cohort, tmp_path, capsys):
    out = tmp_path / "out"
    run_cli(["-o", str(out), "run", str(write_manifest(cohort["features"].parent))])
    capsys.readouterr()

    code = run_cli(["-o", str(out), "anova", str(out / "results.csv"), "--interaction", "classifier"])

    assert code == EXIT_VALIDATION
    assert "interaction must look like A:B" in capsys.readouterr().err


def test_report_on_missing_results(tmp_path, capsys):
    code = run_cli(["-o", str(tmp_path), "--json", "report", str(tmp_path / "results.csv")])
    assert code == EXIT_VALIDATION
    payload = json.loads(capsys.readouterr().out)
    assert payload == {"success": False, "error": f"results file {tmp_path / 'results.csv'} does not exist"}
