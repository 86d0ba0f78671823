"""Tiny ``key = value`` text format used for schemas, profiles and configs.

Blank lines and lines starting with ``#`` are ignored. Keys keep their file
order. Values are returned as stripped strings; callers convert.
"""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

from .errors import FormatError, MissingFile


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"{source}:{lineno}: empty key")
        if key in out:
            raise FormatError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def format_kv(items: Mapping[str, object] | Iterable[tuple[str, object]]) -> str:
    pairs = items.items() if isinstance(items, Mapping) else items
    lines = []
    for key, value in pairs:
        text = str(value)
        if "\n" in text:
            raise FormatError(f"value for {key!r} spans lines")
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def write_kv(path: str | Path, items, header: str | None = None) -> None:
    body = format_kv(items)
    if header:
        body = "".join(f"# {h}\n" for h in header.splitlines()) + body
    Path(path).write_text(body, encoding="utf-8")
