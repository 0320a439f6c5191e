# orchestrator/csv_report.py
import csv
import io
import math
import sys
from typing import Any, Dict, List, Optional, Sequence

from common.data_models import ResultRow, RunHeader


def format_value(value: Any) -> str:
    """Cell text: floats round-trip via '.17g', booleans lower-case, None empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    if hasattr(value, "item"):  # numpy scalar
        return format_value(value.item())
    return str(value)


def render_report(header: RunHeader, columns: Sequence[str], rows: Sequence[ResultRow],
                  footer: Optional[Dict[str, Any]] = None, timings: bool = False) -> str:
    """
    CSV text: a '# {header json}' comment line, the column header, one line
    per row and optional '# name,value' footer lines.
    """
    buf = io.StringIO()
    # 1 行目はヘッダー JSON のコメント行
    buf.write(f"# {header.to_json()}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        cells = []
        for col in columns:
            # runtime_ms は --timings 指定時のみ (既定は空でバイト再現性を保つ)
            if col == "runtime_ms":
                cells.append(format_value(row.runtime_ms) if timings else "")
            else:
                cells.append(format_value(row.values.get(col)))
        writer.writerow(cells)
    # フッターは "# name,value" 形式
    for name, value in (footer or {}).items():
        buf.write(f"# {name},{format_value(value)}\n")
    return buf.getvalue()


def write_report(text: str, out_path: Optional[str] = None) -> None:
    # 出力先未指定なら標準出力
    if out_path is None or out_path == "-":
        sys.stdout.write(text)
        return
    with open(out_path, "w", encoding="utf-8", newline="") as f:
        f.write(text)


def read_report(text: str) -> List[Dict[str, str]]:
    """Data rows of a report as dicts of raw cell strings (comment lines skipped)."""
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))
