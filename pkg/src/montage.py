"""
Comparison grids: one row per input with panels
input | T | R | residue | GT.

A panel kind is dropped for every row when any row lacks it, so columns stay
aligned.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

from PIL import Image

from src.data.image_io import open_rgb
from src.errors import DomainError, ResourceError

logger = logging.getLogger(__name__)

PANEL_ORDER = ("input", "transmission", "reflection", "residue", "ground_truth")
GAP = 4
BACKGROUND = (255, 255, 255)


@dataclass
class MontageRow:
    """Image paths for one row; optional panels may be None."""
    input: Path
    transmission: Path
    reflection: Path
    residue: Optional[Path] = None
    ground_truth: Optional[Path] = None


def rows_from_results(inputs: Sequence[Union[str, Path]], results_dir: Union[str, Path],
                      gt_dir: Optional[Union[str, Path]] = None) -> List[MontageRow]:
    """
    Locate inference outputs for each input.

    Expects <results_dir>/<stem>_T.png and _R.png, optionally _residue.png,
    and ground truth at <gt_dir>/<stem>_T.<ext> or <gt_dir>/<name>.

    Raises:
        ResourceError: If an input or its layer predictions are missing
    """
    results_dir = Path(results_dir)
    rows = []
    for raw in inputs:
        path = Path(raw)
        if not path.is_file():
            raise ResourceError(f"Input image not found: {path}")
        stem = path.stem
        t_path = results_dir / f"{stem}_T.png"
        r_path = results_dir / f"{stem}_R.png"
        for p in (t_path, r_path):
            if not p.is_file():
                raise ResourceError(f"Missing inference output: {p}")
        residue = results_dir / f"{stem}_residue.png"
        gt = None
        if gt_dir is not None:
            candidates = [Path(gt_dir) / f"{stem}_T{path.suffix}", Path(gt_dir) / f"{stem}_T.png",
                          Path(gt_dir) / path.name]
            gt = next((c for c in candidates if c.is_file()), None)
        rows.append(MontageRow(path, t_path, r_path, residue if residue.is_file() else None, gt))
    return rows


def build_montage(rows: Sequence[MontageRow]) -> Image.Image:
    """
    Compose rows into one RGB image.

    Raises:
        DomainError: If there are no rows
    """
    if not rows:
        raise DomainError("montage needs at least one row")
    columns = []
    for kind in PANEL_ORDER:
        present = [getattr(row, kind) is not None for row in rows]
        if all(present):
            columns.append(kind)
        elif any(present):
            logger.warning("⚠️  %s panel missing for some rows; column omitted", kind)
        else:
            logger.warning("⚠️  no %s panels; column omitted", kind)

    panels = [[open_rgb(getattr(row, kind)) for kind in columns] for row in rows]
    cell_w = max(img.width for row in panels for img in row)
    cell_h = max(img.height for row in panels for img in row)

    width = len(columns) * cell_w + (len(columns) - 1) * GAP
    height = len(rows) * cell_h + (len(rows) - 1) * GAP
    canvas = Image.new("RGB", (width, height), BACKGROUND)
    for r, row in enumerate(panels):
        for c, img in enumerate(row):
            canvas.paste(img, (c * (cell_w + GAP), r * (cell_h + GAP)))
    logger.info("Montage layout: %d rows x [%s]", len(rows), " | ".join(columns))
    return canvas


def save_montage(rows: Sequence[MontageRow], output_path: Union[str, Path]) -> str:
    """Build the montage and write it as PNG."""
    output_file = Path(output_path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    build_montage(rows).save(output_file, format="PNG")
    logger.info("✅ Wrote montage to %s", output_file)
    return str(output_file)
