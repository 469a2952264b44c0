"""JSON/CSV writers that print every float with 17 significant digits."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17-significant-digit text for a float; NaN/inf become empty strings in CSV."""
    x = float(x)
    return f"{x:.17g}" if math.isfinite(x) else ""


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _emit(obj, out: list, indent: int, level: int) -> None:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        # JSON has no NaN/inf
        out.append(f"{obj:.17g}" if math.isfinite(obj) else "null")
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            out.append(("," if i else "") + pad + json.dumps(k, ensure_ascii=False) + ": ")
            _emit(v, out, indent, level + 1)
        out.append(end + "}")
    elif isinstance(obj, list):
        if not obj:
            out.append("[]")
            return
        flat = all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj)
        out.append("[")
        for i, v in enumerate(obj):
            out.append(("," if i else "") + (" " if flat and i else "" if flat else pad))
            _emit(v, out, indent, level + 1)
        out.append(("" if flat else end) + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out: list[str] = []
    _emit(_plain(obj), out, indent, 0)
    return "".join(out) + "\n"


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(header, rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows), encoding="utf-8")
    return path


def write_dat(header, rows, path) -> Path:
    """Whitespace-separated columns with a '#' header line, as gnuplot reads them."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# " + " ".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt(v) or "NaN")
            else:
                cells.append(str(v).replace(" ", "_"))
        lines.append(" ".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
