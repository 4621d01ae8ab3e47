"""CSV and JSON encoding of reconstruction curves.

Files are written to a temporary sibling and renamed into place, so an
interrupted run never leaves a half-written report behind.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

from service.experiment_service import SCHEMA_VERSION, Curve, CurvePoint, ExperimentSpec

logger = logging.getLogger(__name__)

CSV_HEADER = ("algorithm", "s", "trials", "successes", "rate")
FORMATS = ("csv", "json")


class ReportError(OSError):
    pass


def format_rate(rate: float) -> str:
    # locale-independent: format spec always uses '.'
    return f"{rate:.6f}"


def encode_csv(curves: Sequence[Curve]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for curve in curves:
        for p in curve.points:
            writer.writerow((curve.algorithm, p.s, p.trials, p.successes, format_rate(p.rate)))
    return buf.getvalue()


def encode_json(curves: Sequence[Curve], spec: Optional[ExperimentSpec] = None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec.metadata() if spec is not None else None,
        "master_seed": spec.master_seed if spec is not None else None,
        "curves": [
            {
                "algorithm": c.algorithm,
                "critical_sparsity": c.critical_sparsity,
                "near_critical_sparsity": c.near_critical_sparsity,
                "points": [
                    {"s": p.s, "trials": p.trials, "successes": p.successes, "errors": p.errors, "rate": p.rate}
                    for p in c.points
                ],
            }
            for c in curves
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def emit_report(
    curves: Sequence[Curve],
    path: str | Path,
    fmt: str = "csv",
    spec: Optional[ExperimentSpec] = None,
) -> Path:
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}; expected one of {FORMATS}")
    path = Path(path)
    text = encode_csv(curves) if fmt == "csv" else encode_json(curves, spec)
    try:
        _atomic_write(path, text)
    except OSError as exc:
        raise ReportError(f"cannot write report {path}: {exc.strerror or exc}") from exc
    logger.info("emit_report: wrote %d curve(s) to %s (%s)", len(curves), path, fmt)
    return path


def _decode_csv(text: str, path: Path) -> List[Curve]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ReportError(f"{path}: expected CSV header {','.join(CSV_HEADER)}")
    points: dict[str, List[CurvePoint]] = {}
    for row in reader:
        if not row:
            continue
        tag, s, trials, successes, _rate = row
        points.setdefault(tag, []).append(CurvePoint(s=int(s), trials=int(trials), successes=int(successes)))
    return [Curve(tag, pts) for tag, pts in points.items()]


def _decode_json(text: str, path: Path) -> List[Curve]:
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ReportError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    return [
        Curve(
            c["algorithm"],
            [CurvePoint(s=p["s"], trials=p["trials"], successes=p["successes"], errors=p.get("errors", 0)) for p in c["points"]],
        )
        for c in doc["curves"]
    ]


def load_report(path: str | Path) -> List[Curve]:
    """Curves from a report written by emit_report; the format follows the file suffix."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot read report {path}: {exc.strerror or exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return _decode_json(text, path)
        return _decode_csv(text, path)
    except (KeyError, TypeError, ValueError) as exc:
        raise ReportError(f"{path}: malformed report ({exc})") from exc
