"""
Image file helpers.

Images travel through the data layer as H×W×3 float64 arrays in [0, 1] and
through the networks as (3, H, W) float32 tensors.
"""

from pathlib import Path
from typing import List, Union

import numpy as np
import torch
from PIL import Image

from src.errors import ResourceError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def is_image_file(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in IMAGE_EXTENSIONS


def list_images(directory: Union[str, Path]) -> List[Path]:
    """Sorted image files directly inside a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ResourceError(f"Image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if is_image_file(p))


def open_rgb(path: Union[str, Path]) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError) as e:
        raise ResourceError(f"Cannot read image {path}: {e}") from e


def pil_to_array(img: Image.Image) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) / 255.0


def load_image(path: Union[str, Path]) -> np.ndarray:
    """Read an RGB image as an H×W×3 float64 array in [0, 1]."""
    return pil_to_array(open_rgb(path))


def quantize(arr: np.ndarray) -> np.ndarray:
    """Round to the nearest 8-bit level, still as floats in [0, 1]."""
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0


def array_to_pil(arr: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8))


def save_image(path: Union[str, Path], arr: np.ndarray) -> str:
    """Write an H×W×3 array in [0, 1] as an 8-bit PNG and return its path."""
    output_file = Path(path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    array_to_pil(arr).save(output_file, format="PNG")
    return str(output_file)


def to_tensor(arr: np.ndarray) -> torch.Tensor:
    """H×W×3 array -> (3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).float()


def to_array(tensor: torch.Tensor) -> np.ndarray:
    """(3, H, W) tensor -> H×W×3 float64 array."""
    return tensor.detach().cpu().double().numpy().transpose(1, 2, 0)
