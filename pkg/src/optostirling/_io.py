"""Small helpers shared by the exporters."""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

from . import __version__


def fmt(x) -> str:
    """Round-trip exact text for a float; empty string for a missing value."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return "%.17g" % x


def parse(s: str) -> float:
    return math.nan if s == "" else float(s)


def json_value(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


def atomic_write(path: str | Path, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def provenance(**extra) -> dict:
    """Provenance record embedded in every exported file."""
    out = {"code": "optostirling", "version": __version__}
    out.update(extra)
    return out


def csv_header(prov: dict) -> str:
    return "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in prov.items())


def read_csv_header(lines: list[str]) -> tuple[dict, list[str]]:
    """Split leading ``# key: json`` lines from the remaining CSV lines."""
    prov = {}
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition(":")
        prov[key.strip()] = json.loads(value)
        i += 1
    return prov, lines[i:]


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"
