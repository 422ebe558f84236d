import hashlib
import json
import shutil
from pathlib import Path

import pandas as pd

from mci_biomarkers.config import get_cells_dir
from mci_biomarkers.cv import RunResultSet
from mci_biomarkers.dataset import write_atomic
from mci_biomarkers.logger import get_logger

_log = get_logger('store')

RESULTS_FILE = 'results.csv'
COEFFICIENTS_FILE = 'coefficients.csv'
META_FILE = 'meta.json'
FAILURES_FILE = 'failures.json'


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


class CellStore:
    """One directory per grid cell, named by its config id.

    A cell counts as complete only when meta.json records the same input
    digest and the results file still hashes to the recorded value.
    """

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.dir = get_cells_dir(self.output_dir)

    def cell_dir(self, config_id: str) -> Path:
        return self.dir / config_id

    def get_meta(self, config_id: str) -> dict | None:
        path = self.cell_dir(config_id) / META_FILE
        if not path.exists():
            return None
        try:
            with open(path, encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError):
            _log.warning("unreadable %s for cell %s", META_FILE, config_id)
            return None

    def is_complete(self, config_id: str, input_digest: str) -> bool:
        meta = self.get_meta(config_id)
        if meta is None or meta.get('input_digest') != input_digest:
            return False
        results = self.cell_dir(config_id) / RESULTS_FILE
        if not results.exists():
            return False
        return file_digest(results) == meta.get('results_sha256')

    def write_cell(self, result: RunResultSet, input_digest: str) -> Path:
        config_id = result.config.config_id
        d = self.cell_dir(config_id)
        d.mkdir(parents=True, exist_ok=True)
        results_path = d / RESULTS_FILE
        write_atomic(results_path, result.to_frame().to_csv(index=False, float_format='%.17g', lineterminator='\n'))
        coef = result.coefficient_frame()
        if coef is not None:
            write_atomic(d / COEFFICIENTS_FILE, coef.to_csv(index=False, float_format='%.17g', lineterminator='\n'))
        meta = {
            'config_id': config_id,
            'config': result.config.to_dict(),
            'input_digest': input_digest,
            'results_sha256': file_digest(results_path),
            'replicas': len(result.replicas),
        }
        # meta.json goes last: its presence marks the cell as done.
        write_atomic(d / META_FILE, json.dumps(meta, indent=2, sort_keys=True) + '\n')
        return d

    def read_results(self, config_id: str) -> pd.DataFrame | None:
        path = self.cell_dir(config_id) / RESULTS_FILE
        if not path.exists():
            return None
        return pd.read_csv(path, keep_default_na=False)

    def read_coefficients(self, config_id: str) -> pd.DataFrame | None:
        path = self.cell_dir(config_id) / COEFFICIENTS_FILE
        if not path.exists():
            return None
        return pd.read_csv(path)

    def list_cells(self) -> list[str]:
        return sorted(p.name for p in self.dir.iterdir() if (p / META_FILE).exists())

    def delete(self, config_id: str) -> bool:
        d = self.cell_dir(config_id)
        if d.exists():
            shutil.rmtree(d)
            return True
        return False

    def write_failures(self, failures: dict[str, str]) -> Path:
        path = self.output_dir / FAILURES_FILE
        if failures:
            write_atomic(path, json.dumps(failures, indent=2, sort_keys=True) + '\n')
        elif path.exists():
            path.unlink()
        return path

    def read_failures(self) -> dict[str, str]:
        path = self.output_dir / FAILURES_FILE
        if not path.exists():
            return {}
        with open(path, encoding='utf-8') as f:
            return json.load(f)
