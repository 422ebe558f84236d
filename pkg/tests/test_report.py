import json

import numpy as np
import pandas as pd
import pytest

from mci_biomarkers.coefficients import aggregate_coefficients
from mci_biomarkers.cv import RESULT_COLUMNS
from mci_biomarkers.errors import ValidationError
from mci_biomarkers.report import (
    COEFFICIENT_FIGURE,
    condition_label,
    emit_report,
    load_results,
    summarize,
)


def results_frame(replicas=3, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for kind in ("GNB", "GLMNET"):
        for correction in ("none", "residuals"):
            for r in range(1, replicas + 1):
                for split in ("crossval", "holdout"):
                    rows.append({
                        "config_id": f"{kind}_MAG_ONLY_{correction}_abc", "classifier": kind,
                        "sensor": "MAG", "correction": correction, "localization": "Sensor",
                        "combination": "MAG_ONLY", "replica": r, "split": split,
                        "acc": rng.uniform(0.5, 1), "sens": rng.uniform(0.5, 1),
                        "spec": rng.uniform(0.5, 1), "auc": rng.uniform(0.5, 1),
                    })
    return pd.DataFrame(rows, columns=list(RESULT_COLUMNS))


def test_summary_has_mean_and_sd_per_condition_and_split():
    frame = results_frame()
    summary = summarize(frame)

    assert len(summary) == 8
    row = summary[(summary["condition"] == "GNB/MAG_ONLY/none/Sensor") & (summary["split"] == "holdout")].iloc[0]
    values = frame[(frame["classifier"] == "GNB") & (frame["correction"] == "none")
                   & (frame["split"] == "holdout")]["auc"]
    assert row["n"] == 3
    assert row["auc_mean"] == pytest.approx(values.mean())
    assert row["auc_sd"] == pytest.approx(values.std(ddof=1))


def test_condition_label_omits_empty_localization():
    row = {"classifier": "KSVM", "combination": "MRI_ONLY", "correction": "zscore", "localization": ""}
    assert condition_label(row) == "KSVM/MRI_ONLY/zscore"


def test_emit_report_writes_tables_and_figures(tmp_path):
    written = emit_report(results_frame(), tmp_path / "report")

    names = sorted(p.name for p in written)
    assert names == ["acc_bars.svg", "auc_bars.svg", "sens_bars.svg", "spec_bars.svg",
                     "summary.csv", "summary.json"]
    records = json.loads((tmp_path / "report" / "summary.json").read_text())
    assert len(records) == 8
    assert (tmp_path / "report" / "auc_bars.svg").read_text().lstrip().startswith("<?xml")


def test_single_replica_sd_is_null_in_json(tmp_path):
    emit_report(results_frame(replicas=1), tmp_path, formats=["json"])
    records = json.loads((tmp_path / "summary.json").read_text())
    assert all(r["auc_sd"] is None for r in records)


def test_svg_output_is_deterministic(tmp_path):
    frame = results_frame()
    emit_report(frame, tmp_path / "a", formats=["svg"])
    emit_report(frame, tmp_path / "b", formats=["svg"])
    for name in ("acc_bars.svg", "auc_bars.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_coefficient_chart_is_drawn_when_given(tmp_path):
    summary = aggregate_coefficients([[0.5, -0.2, 0.0], [0.7, -0.1, 0.0]], ["MAG/a", "MAG/b", "MAG/c"])
    written = emit_report(results_frame(), tmp_path, formats=["svg"], coefficients=summary, top_n=2)
    assert tmp_path / COEFFICIENT_FIGURE in written


def test_empty_results_write_nothing(tmp_path):
    out = tmp_path / "report"
    with pytest.raises(ValidationError, match="result set is empty"):
        emit_report(results_frame().iloc[:0], out)
    assert not out.exists()


def test_unknown_format_is_rejected_before_writing(tmp_path):
    out = tmp_path / "report"
    with pytest.raises(ValidationError, match="unknown report format"):
        emit_report(results_frame(), out, formats=["csv", "pdf"])
    assert not out.exists()


def test_load_results_checks_columns(tmp_path):
    path = tmp_path / "results.csv"
    results_frame().drop(columns="auc").to_csv(path, index=False)
    with pytest.raises(ValidationError, match="missing column"):
        load_results(path)
    with pytest.raises(ValidationError, match="does not exist"):
        load_results(tmp_path / "nope.csv")


def test_load_results_keeps_empty_localization(tmp_path):
    frame = results_frame()
    frame["localization"] = ""
    path = tmp_path / "results.csv"
    frame.to_csv(path, index=False)

    loaded = load_results(path)

    assert (loaded["localization"] == "").all()
    assert summarize(loaded)["condition"].iloc[0] == "GLMNET/MAG_ONLY/none"
