"""
Runtime configuration for the RB spectral clustering toolkit.

Values come from environment variables (optionally loaded from a .env file at the
repository root). Every module imports its defaults from here.
"""
import os
import sys
from typing import Optional

from loguru import logger

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {raw!r}")


NUM_THREADS = _env_int("RBSC_NUM_THREADS", os.cpu_count() or 1)
BLAS_THREADS = _env_int("RBSC_BLAS_THREADS", 1)
OUTPUT_DIR = os.getenv("RBSC_OUTPUT_DIR", "results")
DATA_DIR = os.getenv("RBSC_DATA_DIR", "data")
LOG_LEVEL = os.getenv("RBSC_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("RBSC_LOG_FILE")

DEGREE_FLOOR = 1e-12
# RF degree estimates are signed; they are floored at this fraction of the median degree
RF_DEGREE_FLOOR_RATIO = 0.1
ROW_NORM_FLOOR = 1e-14
EXACT_SC_MAX_N = 20000
DEFAULT_SVD_TOL = 1e-5
DEFAULT_REPLICATES = 10

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function} - {message}"


def num_threads(override: Optional[int] = None) -> int:
    """Worker-pool size, either an explicit override or RBSC_NUM_THREADS"""
    value = NUM_THREADS if override is None else override
    if value < 1:
        raise ValueError(f"thread count must be >= 1, got {value}")
    return value


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Replace loguru's default sink with the configured stderr (and optional file) sinks"""
    logger.remove()
    logger.add(sys.stderr, level=level or LOG_LEVEL, format=LOG_FORMAT)
    path = log_file or LOG_FILE
    if path:
        logger.add(path, level="TRACE", format=LOG_FORMAT, colorize=False)
