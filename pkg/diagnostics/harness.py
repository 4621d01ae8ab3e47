"""Script-mode runner shared by the diagnostics modules (pytest collects the same functions)."""
from __future__ import annotations

import logging
from typing import Callable, Sequence, Tuple

from infrastructure.settings import configure_logging, load_environment

logger = logging.getLogger("diagnostics")


def run_checks(checks: Sequence[Tuple[str, Callable[[], None]]]) -> bool:
    load_environment()
    configure_logging()
    all_ok = True
    for name, check in checks:
        try:
            check()
            ok = True
        except Exception:  # noqa: BLE001
            logger.exception("%s failed", name)
            ok = False
        all_ok &= ok
        print(f"Result ({name}):", "OK" if ok else "FAILED")
    return all_ok
