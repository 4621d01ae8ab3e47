from __future__ import annotations

import logging
import os
import sys
from pathlib import Path
from typing import Dict, Optional

from dotenv import dotenv_values, load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def load_environment(dotenv_path: Optional[str] = None) -> None:
    """Load `.env` from the working directory (or `dotenv_path`) without overriding the real environment."""
    load_dotenv(dotenv_path=dotenv_path, override=False)


def env_flag(name: str, default: str = "false") -> bool:
    # Accept only 'true'/'false'
    return os.getenv(name, default).strip().lower() == "true"


def configure_logging(level: Optional[str] = None) -> None:
    name = (level or os.getenv("SPARSE_BENCH_LOG_LEVEL", "INFO")).strip().upper()
    resolved = logging.getLevelName(name)
    if not isinstance(resolved, int):
        resolved = logging.INFO
    logging.basicConfig(level=resolved, format=LOG_FORMAT, datefmt=LOG_DATEFMT, stream=sys.stderr, force=True)
    if not isinstance(logging.getLevelName(name), int):
        logging.getLogger(__name__).warning("Unknown SPARSE_BENCH_LOG_LEVEL=%r, using INFO", name)


class ConfigFileError(ValueError):
    pass


def read_config_file(path: str | Path, allowed: set[str]) -> Dict[str, str]:
    """KEY=VALUE pairs from `path`, keys normalized to argparse dests (dashes -> underscores)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"config file not found: {path}")
    values: Dict[str, str] = {}
    for key, value in dotenv_values(path).items():
        dest = key.strip().lower().replace("-", "_")
        if dest not in allowed:
            raise ConfigFileError(f"{path}: unknown key {key!r}")
        if value is None:
            raise ConfigFileError(f"{path}: key {key!r} has no value")
        values[dest] = value
    return values
