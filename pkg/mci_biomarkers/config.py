import os
from pathlib import Path

OUTPUT_DIR_ENV = "MCIBIO_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR_NAME = "mcibio-output"
LOG_FILE_NAME = "mcibio.log"


def get_output_dir(override: str | os.PathLike | None = None) -> Path:
    """Resolve the output directory: explicit argument, then env var, then cwd."""
    if override:
        d = Path(override)
    else:
        env = os.environ.get(OUTPUT_DIR_ENV)
        d = Path(env) if env else Path.cwd() / DEFAULT_OUTPUT_DIR_NAME
    d.mkdir(parents=True, exist_ok=True)
    return d


def get_cells_dir(output_dir: Path) -> Path:
    d = output_dir / "cells"
    d.mkdir(parents=True, exist_ok=True)
    return d


def get_log_file(output_dir: Path) -> Path:
    return output_dir / LOG_FILE_NAME
