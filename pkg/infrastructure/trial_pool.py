from __future__ import annotations

import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")

logger = logging.getLogger(__name__)


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """Flag value, else SPARSE_BENCH_THREADS, else the machine's CPU count."""
    if requested is not None:
        if requested < 1:
            raise ValueError(f"thread count must be >= 1, got {requested}")
        return requested
    raw = os.getenv("SPARSE_BENCH_THREADS", "").strip()
    if raw:
        try:
            value = int(raw)
        except ValueError:
            logger.warning("TrialPool: ignoring non-integer SPARSE_BENCH_THREADS=%r", raw)
        else:
            if value >= 1:
                return value
            logger.warning("TrialPool: ignoring SPARSE_BENCH_THREADS=%d (< 1)", value)
    return os.cpu_count() or 1


class TrialPool:
    """Fan independent work units out to threads; results come back in submission order.

    `on_done(result, done, total)` runs once per finished unit, serialized by a lock.
    """

    def __init__(self, threads: int = 1, on_done: Optional[Callable[[object, int, int], None]] = None) -> None:
        if threads < 1:
            raise ValueError(f"thread count must be >= 1, got {threads}")
        self.threads = threads
        self._on_done = on_done
        self._lock = threading.Lock()

    def _report(self, result: object, done: int, total: int) -> None:
        if self._on_done is None:
            return
        with self._lock:
            try:
                self._on_done(result, done, total)
            except Exception:  # noqa: BLE001
                logger.exception("TrialPool: progress callback failed")

    def run(self, tasks: Sequence[Callable[[], T]]) -> List[T]:
        total = len(tasks)
        if self.threads == 1 or total <= 1:
            results: List[T] = []
            for i, task in enumerate(tasks):
                results.append(task())
                self._report(results[-1], i + 1, total)
            return results

        slots: List[Optional[T]] = [None] * total
        logger.debug("TrialPool: %d tasks on %d threads", total, self.threads)
        with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="trial-pool") as ex:
            futures = {ex.submit(task): i for i, task in enumerate(tasks)}
            done = 0
            for future in as_completed(futures):
                result = future.result()
                slots[futures[future]] = result
                done += 1
                self._report(result, done, total)
        return slots  # type: ignore[return-value]
