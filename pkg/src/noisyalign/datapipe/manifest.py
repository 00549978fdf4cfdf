"""Curated-clip manifest records, stored as UTF-8 JSON lines."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..exceptions import FormatError


@dataclass
class ManifestRecord:
    clip_id: str
    source_id: str
    start_s: float
    end_s: float
    sharpness: float
    caption: str
    confidence: float | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> ManifestRecord:
        data = json.loads(line)
        names = [f.name for f in dataclasses.fields(cls)]
        if sorted(data) != sorted(names):
            raise FormatError(f"manifest keys {sorted(data)} != {sorted(names)}")
        return cls(**data)


def dumps_manifest(records: Iterable[ManifestRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def write_manifest(path, records: Iterable[ManifestRecord]) -> None:
    Path(path).write_bytes(dumps_manifest(records).encode("utf-8"))


def read_manifest(path) -> list[ManifestRecord]:
    text = Path(path).read_text(encoding="utf-8")
    return [ManifestRecord.from_json(line) for line in text.splitlines() if line.strip()]
