"""
Data models for the reflection separation system.

Defines the core data structures for:
- Dual-stream features and layer decompositions
- Loss breakdowns reported by the training engine
- Synthetic pairs and dataset manifests
- Evaluation scores and reports
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from src.errors import DomainError, ResourceError, ShapeError


class RecordKind(Enum):
    """Where a training or evaluation pair comes from."""
    SYNTHETIC = "synthetic"
    REAL = "real"


@dataclass
class FeaturePair:
    """Two aligned feature grids, one per stream (N, C, H, W each)."""
    t_stream: torch.Tensor
    r_stream: torch.Tensor

    def __post_init__(self):
        if self.t_stream.shape != self.r_stream.shape:
            raise ShapeError(
                f"stream shapes differ: {tuple(self.t_stream.shape)} vs {tuple(self.r_stream.shape)}"
            )

    @property
    def channels(self) -> int:
        return self.t_stream.shape[1]

    @property
    def spatial(self) -> tuple:
        return tuple(self.t_stream.shape[-2:])

    def swap(self) -> 'FeaturePair':
        """Exchange the two streams."""
        return FeaturePair(self.r_stream, self.t_stream)

    def map(self, fn) -> 'FeaturePair':
        """Apply the same function to both streams."""
        return FeaturePair(fn(self.t_stream), fn(self.r_stream))


@dataclass
class Decomposition:
    """Transmission, reflection and residue predictions for one batch (N, 3, H, W)."""
    transmission: torch.Tensor
    reflection: torch.Tensor
    residue: torch.Tensor

    def crop(self, height: int, width: int) -> 'Decomposition':
        return Decomposition(
            self.transmission[..., :height, :width],
            self.reflection[..., :height, :width],
            self.residue[..., :height, :width],
        )

    def clipped(self) -> 'Decomposition':
        """Layer predictions clipped to [0, 1] for image emission."""
        return Decomposition(
            self.transmission.clamp(0.0, 1.0),
            self.reflection.clamp(0.0, 1.0),
            self.residue,
        )


@dataclass
class LossBreakdown:
    """Named loss terms and their weighted total (tensors keep the graph)."""
    pixel: torch.Tensor
    perceptual: torch.Tensor
    exclusion: torch.Tensor
    reconstruction: torch.Tensor
    total: torch.Tensor

    def to_dict(self) -> Dict[str, float]:
        """Convert to plain floats for logging."""
        return {
            "pixel": self.pixel.detach().item(),
            "perceptual": self.perceptual.detach().item(),
            "exclusion": self.exclusion.detach().item(),
            "reconstruction": self.reconstruction.detach().item(),
            "total": self.total.detach().item(),
        }

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.to_dict().values())


@dataclass
class SyntheticPair:
    """
    A screen-blended training pair.

    Images are H×W×3 float arrays in [0, 1].
    """
    mixed: np.ndarray
    gt_t: np.ndarray
    gt_r: np.ndarray
    gamma1: float
    gamma2: float
    t_source: str = ""
    r_source: str = ""

    def validate(self) -> List[str]:
        """
        Check the blend invariant and value range.

        Returns:
            List of error messages (empty if valid)
        """
        errors = []
        expected = (self.gamma1 * self.gt_t + self.gamma2 * self.gt_r
                    - self.gamma1 * self.gamma2 * self.gt_t * self.gt_r)
        if self.mixed.shape != expected.shape:
            errors.append("mixed image shape differs from layers")
        elif np.max(np.abs(self.mixed - expected)) > 1e-6:
            errors.append("mixed image violates the screen-blend model")
        if self.mixed.min() < 0.0 or self.mixed.max() > 1.0:
            errors.append("mixed image leaves [0, 1]")
        if not 0.8 <= self.gamma1 <= 1.0:
            errors.append(f"gamma1 {self.gamma1} outside [0.8, 1.0]")
        if not 0.4 <= self.gamma2 <= 1.0:
            errors.append(f"gamma2 {self.gamma2} outside [0.4, 1.0]")
        return errors

    def is_valid(self) -> bool:
        return len(self.validate()) == 0


@dataclass
class ManifestRecord:
    """One pair referenced by a dataset manifest; paths relative to the manifest."""
    id: str
    kind: RecordKind
    mixed_path: str
    t_path: str
    r_path: Optional[str] = None
    gamma1: Optional[float] = None
    gamma2: Optional[float] = None
    split: str = "train"
    extra: Dict[str, object] = field(default_factory=dict)  # provenance, synthesis settings

    @property
    def has_reflection(self) -> bool:
        return self.r_path is not None

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization (optional fields omitted)."""
        data = {
            "id": self.id,
            "kind": self.kind.value,
            "mixed_path": self.mixed_path,
            "t_path": self.t_path,
            "split": self.split,
        }
        if self.r_path is not None:
            data["r_path"] = self.r_path
        if self.gamma1 is not None:
            data["gamma1"] = self.gamma1
            data["gamma2"] = self.gamma2
        data.update(self.extra)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ManifestRecord':
        data = dict(data)
        return cls(
            id=data.pop("id"),
            kind=RecordKind(data.pop("kind")),
            mixed_path=data.pop("mixed_path"),
            t_path=data.pop("t_path"),
            r_path=data.pop("r_path", None),
            gamma1=data.pop("gamma1", None),
            gamma2=data.pop("gamma2", None),
            split=data.pop("split", "train"),
            extra=data,
        )


@dataclass
class DatasetManifest:
    """Ordered collection of records; one JSON object per line on disk."""
    records: List[ManifestRecord] = field(default_factory=list)
    root: Path = field(default_factory=Path)  # directory relative paths resolve against

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, relative: str) -> Path:
        return self.root / relative

    def validate(self) -> List[str]:
        """Check id uniqueness and that every referenced file exists."""
        errors = []
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            errors.append("manifest contains duplicate record ids")
        for record in self.records:
            for path in (record.mixed_path, record.t_path, record.r_path):
                if path is not None and not self.resolve(path).exists():
                    errors.append(f"{record.id}: missing file {path}")
        return errors

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def save(self, path: str) -> str:
        """Write the manifest as JSON lines and return its path."""
        output_file = Path(path)
        output_file.parent.mkdir(parents=True, exist_ok=True)
        output_file.write_text(self.to_jsonl(), encoding="utf-8")
        return str(output_file)

    @classmethod
    def load(cls, path: str, check_files: bool = True) -> 'DatasetManifest':
        """
        Load a JSON-lines manifest.

        Raises:
            ResourceError: If the manifest or any referenced file is missing
        """
        manifest_file = Path(path)
        if not manifest_file.is_file():
            raise ResourceError(f"Manifest not found: {manifest_file}")
        records = []
        for line in manifest_file.read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(ManifestRecord.from_dict(json.loads(line)))
        manifest = cls(records=records, root=manifest_file.parent)
        if check_files:
            errors = manifest.validate()
            if errors:
                raise ResourceError(f"Invalid manifest {manifest_file}: {'; '.join(errors)}")
        return manifest

    @classmethod
    def concatenate(cls, manifests: List['DatasetManifest']) -> 'DatasetManifest':
        """Merge manifests; records keep absolute paths so roots may differ."""
        records = []
        for manifest in manifests:
            for record in manifest.records:
                records.append(ManifestRecord(
                    id=record.id,
                    kind=record.kind,
                    mixed_path=str(manifest.resolve(record.mixed_path).resolve()),
                    t_path=str(manifest.resolve(record.t_path).resolve()),
                    r_path=(str(manifest.resolve(record.r_path).resolve())
                            if record.r_path is not None else None),
                    gamma1=record.gamma1,
                    gamma2=record.gamma2,
                    split=record.split,
                    extra=dict(record.extra),
                ))
        merged = cls(records=records, root=Path("/"))
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            raise DomainError("concatenated manifests share record ids")
        return merged


@dataclass
class ImageScore:
    """Per-image metric row."""
    dataset: str
    image_id: str
    psnr: float
    ssim: float

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "image_id": self.image_id,
                "psnr": self.psnr, "ssim": self.ssim}


@dataclass
class DatasetScore:
    """Per-dataset mean scores."""
    name: str
    image_count: int
    mean_psnr: float
    mean_ssim: float

    def to_dict(self) -> dict:
        return {"name": self.name, "image_count": self.image_count,
                "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim}


@dataclass
class EvalReport:
    """Benchmark report: per-dataset means, weighted aggregate and per-image rows."""
    datasets: List[DatasetScore]
    weighted_psnr: float
    weighted_ssim: float
    rows: List[ImageScore] = field(default_factory=list)
    ssim_mode: str = "color"

    def to_dict(self) -> dict:
        """Convert to dictionary for JSON serialization."""
        return {
            "datasets": [d.to_dict() for d in self.datasets],
            "aggregate": {
                "weighted_psnr": self.weighted_psnr,
                "weighted_ssim": self.weighted_ssim,
            },
            "ssim_mode": self.ssim_mode,
            "rows": [r.to_dict() for r in self.rows],
        }
