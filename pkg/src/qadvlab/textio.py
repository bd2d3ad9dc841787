"""Small helpers shared by the text file formats."""
from __future__ import annotations

import csv
import hashlib
import io
import os
from pathlib import Path
from typing import Iterable, Mapping, Sequence


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see half a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_scalar(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_header(lines: Iterable[str], where: str) -> dict[str, str]:
    out = {}
    for line in lines:
        if not line.strip() or line.startswith("#"):
            continue
        key, eq, value = line.partition(" = ")
        if not eq:
            raise ValueError(f"{where}: malformed line {line!r}")
        out[key.strip()] = value
    return out


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_scalar(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: parse_scalar(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def config_hash(mapping: Mapping) -> str:
    blob = "\n".join(f"{k}={mapping[k]}" for k in sorted(mapping))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]
