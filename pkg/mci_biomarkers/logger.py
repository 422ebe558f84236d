import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from mci_biomarkers.config import get_log_file

_ROOT = 'mci_biomarkers'
_MAX_BYTES = 1_000_000  # ~1 MB
_BACKUP_COUNT = 1
_FORMAT = '%(asctime)s [%(levelname)s] %(name)s: %(message)s'

_configured = False
_file_handler: RotatingFileHandler | None = None


def _configure():
    global _configured
    if _configured:
        return
    _configured = True
    root = logging.getLogger(_ROOT)
    root.setLevel(logging.DEBUG)
    stream = logging.StreamHandler(sys.stderr)
    stream.setLevel(logging.INFO)
    stream.setFormatter(logging.Formatter(_FORMAT))
    root.addHandler(stream)


def attach_file_log(output_dir: Path) -> Path | None:
    """Send DEBUG and above to a rotating log file under ``output_dir``."""
    global _file_handler
    _configure()
    path = get_log_file(output_dir)
    root = logging.getLogger(_ROOT)
    if _file_handler is not None:
        if Path(_file_handler.baseFilename) == path.resolve():
            return path
        root.removeHandler(_file_handler)
        _file_handler.close()
        _file_handler = None
    try:
        handler = RotatingFileHandler(
            path,
            maxBytes=_MAX_BYTES,
            backupCount=_BACKUP_COUNT,
            encoding='utf-8',
        )
    except OSError:
        # Read-only output location; stderr logging still works.
        return None
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(_FORMAT))
    root.addHandler(handler)
    _file_handler = handler
    return path


def get_logger(name: str) -> logging.Logger:
    _configure()
    return logging.getLogger(f'{_ROOT}.{name}')
