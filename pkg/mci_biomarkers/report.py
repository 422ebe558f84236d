"""Summary tables and SVG bar charts for a long-format results table."""

import json
from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from mci_biomarkers.coefficients import TOP_N, CoefficientSummary  # noqa: E402
from mci_biomarkers.cv import RESULT_COLUMNS  # noqa: E402
from mci_biomarkers.dataset import write_atomic  # noqa: E402
from mci_biomarkers.errors import ValidationError  # noqa: E402
from mci_biomarkers.logger import get_logger  # noqa: E402
from mci_biomarkers.metrics import STAT_NAMES  # noqa: E402

_log = get_logger('report')

REPORT_FORMATS = ('csv', 'json', 'svg')
CONDITION_COLUMNS = ('classifier', 'sensor', 'correction', 'localization', 'combination')
SUMMARY_FILE = 'summary'
COEFFICIENT_FIGURE = 'coefficients_bars.svg'
_SVG_SALT = 'mcibio'
_FIG_DPI = 100


def load_results(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"results file {path} does not exist")
    frame = pd.read_csv(path, keep_default_na=False, dtype={c: str for c in CONDITION_COLUMNS})
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"{path.name}: missing column(s) {', '.join(missing)}")
    return frame


def condition_label(row) -> str:
    parts = [row['classifier'], row['combination'], row['correction']]
    if row['localization']:
        parts.append(row['localization'])
    return '/'.join(str(p) for p in parts)


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and SD (ddof=1) of every statistic per condition and split."""
    keys = list(CONDITION_COLUMNS) + ['split']
    grouped = frame.groupby(keys, sort=True, dropna=False)
    out = grouped.size().rename('n').reset_index()
    for stat in STAT_NAMES:
        out[f"{stat}_mean"] = grouped[stat].mean().to_numpy()
        out[f"{stat}_sd"] = grouped[stat].std(ddof=1).to_numpy()
    out.insert(0, 'condition', [condition_label(r) for _, r in out.iterrows()])
    return out


def _bar_figure(labels, means, sds, colors, ylabel: str, title: str):
    width = max(4.0, 0.35 * len(labels) + 1.5)
    fig, ax = plt.subplots(figsize=(width, 4.0))
    x = np.arange(len(labels))
    ax.bar(x, means, color=colors, edgecolor='black', linewidth=0.5)
    ax.errorbar(x, means, yerr=np.nan_to_num(sds), fmt='none', ecolor='k', capsize=3)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=60, ha='right', fontsize=7)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    return fig


def _save_svg(fig, path: Path) -> Path:
    with matplotlib.rc_context({'svg.hashsalt': _SVG_SALT}):
        fig.savefig(path, format='svg', dpi=_FIG_DPI, metadata={'Date': None})
    plt.close(fig)
    return path


def _response_figures(summary: pd.DataFrame, out_dir: Path) -> list[Path]:
    rows = summary[summary['split'] == 'holdout']
    if rows.empty:
        rows = summary
    rows = rows.sort_values(['classifier', 'condition'], kind='mergesort')
    kinds = sorted(rows['classifier'].unique())
    palette = plt.get_cmap('tab10')
    color_of = {k: palette(i % 10) for i, k in enumerate(kinds)}
    colors = [color_of[k] for k in rows['classifier']]
    paths = []
    for stat in STAT_NAMES:
        fig = _bar_figure(
            list(rows['condition']), rows[f"{stat}_mean"].to_numpy(), rows[f"{stat}_sd"].to_numpy(),
            colors, stat, f"holdout {stat}: mean ± SD over replicas",
        )
        handles = [plt.Rectangle((0, 0), 1, 1, color=color_of[k]) for k in kinds]
        fig.axes[0].legend(handles, kinds, fontsize=7, loc='lower right')
        paths.append(_save_svg(fig, out_dir / f"{stat}_bars.svg"))
    return paths


def _coefficient_figure(summary: CoefficientSummary, out_dir: Path, n: int) -> Path:
    top = summary.top(n).sort_values('mean', ascending=False, kind='mergesort')
    colors = ['tab:red' if m > 0 else 'tab:blue' for m in top['mean']]
    fig = _bar_figure(
        list(top['feature']), top['mean'].to_numpy(), top['sd'].to_numpy(), colors,
        'coefficient', f"top {len(top)} GLMNET coefficients by |z|",
    )
    return _save_svg(fig, out_dir / COEFFICIENT_FIGURE)


def _json_ready(frame: pd.DataFrame) -> list[dict]:
    records = frame.to_dict(orient='records')
    return [
        {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in r.items()}
        for r in records
    ]


def emit_report(frame: pd.DataFrame, out_dir, formats=REPORT_FORMATS,
                coefficients: CoefficientSummary | None = None, top_n: int = TOP_N) -> list[Path]:
    """Write the summary table and figures; returns the written paths."""
    formats = tuple(dict.fromkeys(formats))
    unknown = [f for f in formats if f not in REPORT_FORMATS]
    if unknown:
        raise ValidationError(f"unknown report format(s) {', '.join(unknown)}; "
                              f"expected {', '.join(REPORT_FORMATS)}")
    if frame is None or frame.empty:
        raise ValidationError("result set is empty; nothing to report")
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise ValidationError(f"results are missing column(s) {', '.join(missing)}")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create report directory {out_dir}: {exc}") from exc

    summary = summarize(frame)
    written = []
    if 'csv' in formats:
        path = out_dir / f"{SUMMARY_FILE}.csv"
        write_atomic(path, summary.to_csv(index=False, float_format='%.10g', lineterminator='\n'))
        written.append(path)
    if 'json' in formats:
        path = out_dir / f"{SUMMARY_FILE}.json"
        write_atomic(path, json.dumps(_json_ready(summary), indent=2, sort_keys=True) + '\n')
        written.append(path)
    if 'svg' in formats:
        written.extend(_response_figures(summary, out_dir))
        if coefficients is not None:
            written.append(_coefficient_figure(coefficients, out_dir, top_n))
    _log.info("report: %d condition(s), %d file(s) in %s",
              summary['condition'].nunique(), len(written), out_dir)
    return written
