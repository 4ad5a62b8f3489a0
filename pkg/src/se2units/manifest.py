"""Repo-wide manifest format: one record per line, tab-separated.

    utt_id<TAB>audio_path[<TAB>key=value ...]

Values may contain spaces but not tabs. Stages extend rows by adding keys;
no stage removes keys written by an earlier one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ManifestRow:
    utt_id: str
    path: str
    attrs: dict[str, str] = field(default_factory=dict)

    def with_attrs(self, **kv) -> "ManifestRow":
        merged = dict(self.attrs)
        merged.update({k: str(v) for k, v in kv.items()})
        return ManifestRow(self.utt_id, self.path, merged)


def parse_row(line: str) -> ManifestRow:
    parts = line.rstrip("\n").split("\t")
    if len(parts) < 2 or not parts[0] or not parts[1]:
        raise ValueError(f"malformed manifest line: {line!r}")
    attrs = {}
    for part in parts[2:]:
        if "=" not in part:
            raise ValueError(f"malformed key=value field {part!r} in line {line!r}")
        key, value = part.split("=", 1)
        attrs[key] = value
    return ManifestRow(parts[0], parts[1], attrs)


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(parse_row(line))
    return rows


def write_manifest(path, rows: list[ManifestRow]) -> None:
    """Write rows sorted by utt_id so parallel producers give identical files."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in sorted(rows, key=lambda r: r.utt_id):
            fields = [row.utt_id, row.path]
            fields += [f"{k}={v}" for k, v in sorted(row.attrs.items())]
            fh.write("\t".join(fields) + "\n")
