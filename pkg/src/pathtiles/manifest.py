"""JSON-lines slide manifests, validated eagerly at load time."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestParseError, ManifestValidationError, MissingMpp, UnsupportedFormat
from .slide import SlideHandle, open_slide


@dataclass
class ManifestEntry:
    path: str
    dataset: str
    mpp: float | None = None


class DatasetManifest:
    """Validated collection of slides grouped by dataset id."""

    def __init__(self, entries: list[ManifestEntry]):
        paths = [e.path for e in entries]
        if len(set(paths)) != len(paths):
            raise ManifestValidationError("duplicate slide paths in manifest")
        self.entries = entries
        self.by_dataset: dict[str, list[ManifestEntry]] = {}
        for e in entries:
            self.by_dataset.setdefault(e.dataset, []).append(e)

    @property
    def dataset_ids(self) -> list[str]:
        return sorted(self.by_dataset)

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.by_dataset.items()}

    def open_all(self) -> dict[str, list[SlideHandle]]:
        handles: dict[str, list[SlideHandle]] = {}
        for ds in self.dataset_ids:
            handles[ds] = [
                open_slide(e.path, dataset_id=ds, mpp_override=e.mpp)
                for e in self.by_dataset[ds]
            ]
        return handles


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a JSON-lines manifest.

    One object per line: {"path": str, "dataset": str, "mpp": float?}.
    Every slide is opened once here so bad entries fail fast with their
    line number or path.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestParseError(f"line {lineno}: {exc}", line=lineno)
        if not isinstance(obj, dict) or "path" not in obj or "dataset" not in obj:
            raise ManifestParseError(
                f"line {lineno}: expected keys 'path' and 'dataset'", line=lineno)
        entries.append(ManifestEntry(path=str(obj["path"]),
                                     dataset=str(obj["dataset"]),
                                     mpp=obj.get("mpp")))
    for entry in entries:
        try:
            open_slide(entry.path, dataset_id=entry.dataset, mpp_override=entry.mpp)
        except (FileNotFoundError, UnsupportedFormat, MissingMpp) as exc:
            raise ManifestValidationError(
                f"{entry.path}: {exc}", path=entry.path)
    return DatasetManifest(entries)
