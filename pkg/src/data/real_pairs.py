"""
Ingestion of real aligned pairs.

Two naming schemes are recognized inside a directory:

1. Suffix scheme: ``<stem>_I.<ext>`` (mixed), ``<stem>_T.<ext>`` (transmission)
   and optionally ``<stem>_R.<ext>`` (reflection). A bare ``I.png`` / ``T.png``
   is a single pair named after the directory.
2. Folder scheme: ``blended/``, ``transmission_layer/`` and optionally
   ``reflection_layer/`` holding files with matching names.

Records without a reflection file are kept; R-dependent losses skip them.
"""

import logging
import re
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Union

from PIL import Image

from src.data.image_io import is_image_file, list_images
from src.errors import IngestionError, ResourceError
from src.models.models import DatasetManifest, ManifestRecord, RecordKind

logger = logging.getLogger(__name__)

_ROLE_PATTERN = re.compile(r"^(?:(?P<stem>.+)_)?(?P<role>[ITR])$")

FOLDER_SCHEME = {"I": "blended", "T": "transmission_layer", "R": "reflection_layer"}


def _image_size(path: Path):
    try:
        with Image.open(path) as img:
            return img.size
    except OSError as e:
        raise ResourceError(f"Cannot read image {path}: {e}") from e


def _group_by_suffix(directory: Path, offenders: List[str]) -> Dict[str, Dict[str, str]]:
    groups: Dict[str, Dict[str, str]] = defaultdict(dict)
    for path in list_images(directory):
        match = _ROLE_PATTERN.match(path.stem)
        if not match:
            offenders.append(f"{path.name}: name does not follow <stem>_I/_T/_R")
            continue
        stem = match.group("stem") or directory.name
        role = match.group("role")
        if role in groups[stem]:
            offenders.append(f"{path.name}: duplicate {role} image for '{stem}'")
            continue
        groups[stem][role] = path.name
    return groups


def _group_by_folder(directory: Path, offenders: List[str]) -> Dict[str, Dict[str, str]]:
    groups: Dict[str, Dict[str, str]] = defaultdict(dict)
    for role, folder in FOLDER_SCHEME.items():
        sub = directory / folder
        if not sub.is_dir():
            continue
        for path in list_images(sub):
            groups[path.stem][role] = f"{folder}/{path.name}"
    return groups


def load_real_pairs(directory: Union[str, Path], split: str = "train") -> DatasetManifest:
    """
    Build a manifest of real pairs found in a directory.

    Args:
        directory: Folder following one of the two naming schemes
        split: Split tag stored on every record

    Returns:
        Manifest rooted at the directory (empty if it holds no images)

    Raises:
        ResourceError: If the directory does not exist
        IngestionError: If files cannot be paired or sizes differ within a pair
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ResourceError(f"Real-pair directory not found: {directory}")

    offenders: List[str] = []
    if (directory / FOLDER_SCHEME["I"]).is_dir():
        groups = _group_by_folder(directory, offenders)
    else:
        groups = _group_by_suffix(directory, offenders)

    records = []
    for stem in sorted(groups):
        roles = groups[stem]
        missing = [role for role in ("I", "T") if role not in roles]
        if missing:
            offenders.append(f"{stem}: missing {'/'.join(missing)} image "
                             f"(have {', '.join(sorted(roles.values()))})")
            continue
        sizes = {role: _image_size(directory / rel) for role, rel in roles.items()}
        if len(set(sizes.values())) > 1:
            offenders.append(f"{stem}: sizes differ within pair {sizes}")
            continue
        records.append(ManifestRecord(
            id=f"{directory.name}_{stem}",
            kind=RecordKind.REAL,
            mixed_path=roles["I"],
            t_path=roles["T"],
            r_path=roles.get("R"),
            split=split,
        ))

    if offenders:
        raise IngestionError(f"Cannot pair images in {directory}", offenders)

    logger.info("Ingested %d real pairs from %s (%d without reflection)",
                len(records), directory, sum(1 for r in records if not r.has_reflection))
    return DatasetManifest(records=records, root=directory)


def open_manifest(path: Union[str, Path], split: Optional[str] = None) -> DatasetManifest:
    """
    Open a JSON-lines manifest file, or ingest a directory of real pairs.

    Raises:
        ResourceError: If the path does not exist
    """
    path = Path(path)
    if path.is_dir():
        return load_real_pairs(path, split or "train")
    if is_image_file(path):
        raise ResourceError(f"{path} is an image, expected a manifest or directory")
    return DatasetManifest.load(str(path))
