"""Atomic file writers for CSV, JSON and JSONL outputs."""

import csv
import io
import json
import logging
import math
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)


def format_float(v: Any) -> str:
    """17 significant digits for floats; other values as str."""
    if isinstance(v, bool) or v is None:
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    logger.info("wrote %s", path)
    return path


def csv_text(rows: Iterable[Mapping[str, Any]], header: Sequence[str] | None = None) -> str:
    rows = list(rows)
    if header is None:
        header = list(rows[0].keys()) if rows else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(row.get(k, "")) for k in header])
    return buf.getvalue()


def write_csv(path: Path, rows: Iterable[Mapping[str, Any]],
              header: Sequence[str] | None = None) -> Path:
    return _atomic_write(path, csv_text(rows, header))


def _parse(cell: str) -> Any:
    try:
        return float(cell)
    except ValueError:
        return cell


def read_csv(path: Path) -> tuple[list[str], list[dict[str, Any]]]:
    """Header and rows; numeric cells come back as floats."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, [])
        rows = [{k: _parse(v) for k, v in zip(header, line)} for line in reader]
    return header, rows


def _clean(obj: Any) -> Any:
    # JSON has no inf/nan
    if isinstance(obj, float) and not math.isfinite(obj):
        return format_float(obj)
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, data: Any) -> Path:
    return _atomic_write(path, json.dumps(_clean(data), indent=2, default=str) + "\n")


def write_jsonl(path: Path, records: Iterable[Any]) -> Path:
    lines = [json.dumps(_clean(r), default=str) for r in records]
    return _atomic_write(path, "".join(line + "\n" for line in lines))
