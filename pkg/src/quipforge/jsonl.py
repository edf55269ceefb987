"""Streaming JSONL and corpus-file helpers."""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import InputError


def dumps(obj) -> str:
    """Canonical single-line JSON: compact separators, raw unicode."""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def iter_records(source: str | Path | IO[str]) -> Iterator[dict]:
    """Yield one dict per non-blank line; malformed lines raise InputError."""
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from iter_records(fh)
        return
    for lineno, line in enumerate(source, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"line {lineno}: invalid JSON: {exc}", line=lineno) from exc
        if not isinstance(record, dict):
            raise InputError(f"line {lineno}: expected a JSON object", line=lineno)
        yield record


def write_records(sink: str | Path | IO[str], records: Iterable[dict]) -> int:
    """Write records one per line; returns the count written."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w", encoding="utf-8") as fh:
            return write_records(fh, records)
    count = 0
    for record in records:
        sink.write(dumps(record))
        sink.write("\n")
        count += 1
    return count


def iter_corpus_documents(path: str | Path, input_format: str = "auto") -> Iterator[str]:
    """Yield document texts from a corpus file.

    ``text`` format treats each line as one document; ``jsonl`` reads the
    "text" field of each record. ``auto`` picks jsonl for .jsonl/.ndjson
    extensions and plain text otherwise.
    """
    path = Path(path)
    if input_format == "auto":
        input_format = "jsonl" if path.suffix in (".jsonl", ".ndjson") else "text"
    if input_format == "jsonl":
        for lineno, record in enumerate(iter_records(path), start=1):
            if "text" not in record:
                raise InputError(
                    f"{path}: record {lineno} has no 'text' field",
                    field="text",
                    line=lineno,
                )
            yield record["text"]
    elif input_format == "text":
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                yield line.rstrip("\n")
    else:
        raise ValueError(f"unknown corpus format {input_format!r}")
