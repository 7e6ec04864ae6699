"""
Run-time settings for MFC Lab.

Defaults live here as module constants; the environment (optionally a .env
file) may override the worker count and the log level.
"""

import os
import logging

from dotenv import load_dotenv

load_dotenv()

# Constants
WORKERS_ENV = "MFCLAB_WORKERS"
LOG_LEVEL_ENV = "MFCLAB_LOG_LEVEL"
DEFAULT_WORKERS = 4
DEFAULT_P = 2.0
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def worker_count():
    """Number of threads used for replications and candidate evaluations."""
    raw = os.environ.get(WORKERS_ENV, "")
    if not raw.strip():
        return DEFAULT_WORKERS
    try:
        workers = int(raw)
    except ValueError:
        logging.getLogger(__name__).warning(f"Ignoring non-integer {WORKERS_ENV}={raw!r}")
        return DEFAULT_WORKERS
    return max(1, workers)


def configure_logging(log_file=None):
    """
    Configure root logging with a stream handler and, optionally, a log file.

    Args:
        log_file: Path of the run log, or None for console output only
    """
    level_name = os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    handlers = [logging.StreamHandler()]
    if log_file:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True
    )
