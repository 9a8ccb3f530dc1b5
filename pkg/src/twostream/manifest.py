import json
import logging

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, TypedDict

from twostream.cache import region
from twostream.common import Dataset, VideoSample
from twostream.errors import (
    CorruptFileError,
    DuplicateIdError,
    ManifestNotFoundError,
    MissingFileError,
)
from twostream.fvs import read_fvs, write_fvs
from twostream.synthetic import SPLITS

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


class ManifestEntry(TypedDict):
    id: str
    label: int
    path: str
    """Relative to the manifest's directory"""


@dataclass
class Manifest:
    num_classes: int
    splits: dict[str, list[ManifestEntry]] = field(
        default_factory=lambda: {split: [] for split in SPLITS}
    )
    extra: dict[str, Any] = field(
        default_factory=dict,
        metadata={"description": "Free-form provenance written alongside the splits."},
    )

    def __post_init__(self):
        seen: set[str] = set()
        for split in SPLITS:
            entries = sorted(self.splits.get(split, []), key=lambda e: e['id'])
            for entry in entries:
                if entry['id'] in seen:
                    raise DuplicateIdError(entry['id'])
                seen.add(entry['id'])
            self.splits[split] = entries


def _entry(raw: Any) -> ManifestEntry:
    try:
        return ManifestEntry(id=str(raw['id']), label=int(raw['label']), path=str(raw['path']))
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptFileError(f'manifest entry {raw!r}') from e


def read_manifest(path: Path | str) -> Manifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestNotFoundError(str(path))
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CorruptFileError(f'{path}: {e}') from e

    splits = {split: [_entry(raw) for raw in data.get(split, [])] for split in SPLITS}
    num_classes = data.get('num_classes')
    if num_classes is None:
        labels = [e['label'] for entries in splits.values() for e in entries]
        num_classes = max(labels) + 1 if labels else 0
    return Manifest(int(num_classes), splits)


def write_manifest(path: Path | str, manifest: Manifest) -> None:
    data: dict[str, Any] = {'num_classes': manifest.num_classes}
    data.update(manifest.extra)
    for split in SPLITS:
        data[split] = [dict(e) for e in manifest.splits[split]]
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + '\n')


@region.cache_on_arguments()
def _decode_cached(path: str, mtime_ns: int) -> VideoSample:
    logger.debug('decoding %s', path)
    return read_fvs(path)


def load_sample(entry: ManifestEntry, root: Path) -> VideoSample:
    path = root / entry['path']
    if not path.is_file():
        raise MissingFileError(str(path))
    sample = _decode_cached(str(path), path.stat().st_mtime_ns)
    if sample.label != entry['label']:
        raise CorruptFileError(
            f"{entry['id']}: file label {sample.label}, manifest label {entry['label']}"
        )
    return replace(sample, id=entry['id'])


def load_dataset(path: Path | str) -> Dataset:
    """Every video a manifest references, grouped by split in id order."""
    path = Path(path)
    manifest = read_manifest(path)
    root = path.parent
    dataset = Dataset(num_classes=manifest.num_classes)
    for split in SPLITS:
        dataset.split(split).extend(
            load_sample(entry, root) for entry in manifest.splits[split]
        )
    return dataset


def save_dataset(out_dir: Path | str, dataset: Dataset, extra: dict[str, Any] | None = None) -> Path:
    """Write one FVS file per video under `videos/` plus the manifest."""
    out_dir = Path(out_dir)
    video_dir = out_dir / 'videos'
    video_dir.mkdir(parents=True, exist_ok=True)
    splits: dict[str, list[ManifestEntry]] = {}
    for split in SPLITS:
        entries: list[ManifestEntry] = []
        for sample in dataset.split(split):
            relative = f'videos/{sample.id}.fvs'
            write_fvs(out_dir / relative, sample)
            entries.append(ManifestEntry(id=sample.id, label=sample.label, path=relative))
        splits[split] = entries
    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(manifest_path, Manifest(dataset.num_classes, splits, extra or {}))
    return manifest_path
