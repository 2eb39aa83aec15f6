"""MVTec-style dataset scanning and image / heatmap / report I/O."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import LayoutError, SGSFError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class ImageLoadError(SGSFError, OSError):
    pass


@dataclass(frozen=True)
class TestItem:
    image: Path
    mask: Path | None
    label: int  # 0 normal, 1 anomalous
    defect: str = "good"

    @property
    def mask_available(self) -> bool:
        return self.label == 0 or self.mask is not None


@dataclass
class DatasetIndex:
    category: str
    train_normals: list[Path]
    test_items: list[TestItem] = field(default_factory=list)
    aux_textures: list[Path] = field(default_factory=list)


def _images_in(folder: Path) -> list[Path]:
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def scan_dataset(root: str | Path, category: str = "", aux_dir: str | Path | None = None) -> DatasetIndex:
    """Index ``root/<category>/{train/good,test/<defect>,ground_truth/<defect>}``.

    ``category`` may be empty when ``root`` already points at the category folder.
    Test masks are paired by ``<stem>_mask.<ext>`` (or ``<stem>.<ext>``).
    """
    base = Path(root) / category if category else Path(root)
    train_dir = base / "train" / "good"
    if not train_dir.is_dir():
        raise LayoutError(f"missing training folder {train_dir}")
    train = _images_in(train_dir)

    items: list[TestItem] = []
    test_dir = base / "test"
    if test_dir.is_dir():
        for defect_dir in sorted(p for p in test_dir.iterdir() if p.is_dir()):
            defect = defect_dir.name
            gt_dir = base / "ground_truth" / defect
            masks = {}
            for m in _images_in(gt_dir):
                stem = m.stem[: -len("_mask")] if m.stem.endswith("_mask") else m.stem
                masks.setdefault(stem, m)
            for img in _images_in(defect_dir):
                if defect == "good":
                    items.append(TestItem(img, None, 0, defect))
                    continue
                mask = masks.get(img.stem)
                if mask is None:
                    log.info("no mask for %s, marked mask-unavailable", img)
                items.append(TestItem(img, mask, 1, defect))

    aux = []
    if aux_dir is not None:
        aux = sorted(p for p in Path(aux_dir).rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    return DatasetIndex(category or base.name, train, items, aux)


def load_image(path: str | Path, N: int, channels: int = 3) -> np.ndarray:
    """Load as an ``N x N x channels`` float32 array in [0, 1] (bilinear resize)."""
    try:
        with PILImage.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            if im.size != (N, N):
                im = im.resize((N, N), PILImage.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise ImageLoadError(f"cannot load image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return np.clip(arr, 0.0, 1.0)


def load_mask(path: str | Path | None, N: int) -> np.ndarray:
    """Binary ``N x N`` label map; nearest-neighbour resize keeps it binary."""
    if path is None:
        return np.zeros((N, N), dtype=np.float32)
    try:
        with PILImage.open(path) as im:
            im = im.convert("L")
            if im.size != (N, N):
                im = im.resize((N, N), PILImage.NEAREST)
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise ImageLoadError(f"cannot load mask {path}: {exc}") from exc
    return (arr > 127).astype(np.float32)


def save_image(img: np.ndarray, path: str | Path) -> None:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(quantize(arr)).save(path)


def quantize(values: np.ndarray) -> np.ndarray:
    """8-bit quantization, round(255 * p) with halves rounded up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_heatmap(amap: np.ndarray, path: str | Path) -> Path:
    """Write ``path`` as an 8-bit PNG plus a ``.f32`` float sidecar.

    Sidecar layout: little-endian uint32 H, uint32 W, then H*W float32 row-major.
    Returns the sidecar path.
    """
    amap = np.asarray(amap, dtype=np.float32)
    if amap.ndim != 2:
        raise ValueError(f"heatmap must be 2-D, got shape {amap.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(quantize(amap), mode="L").save(path)
    sidecar = path.with_suffix(".f32")
    h, w = amap.shape
    with open(sidecar, "wb") as fh:
        fh.write(struct.pack("<II", h, w))
        fh.write(amap.astype("<f4").tobytes(order="C"))
    return sidecar


def load_heatmap_sidecar(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    h, w = struct.unpack_from("<II", raw, 0)
    data = np.frombuffer(raw, dtype="<f4", offset=8, count=h * w)
    return data.reshape(h, w).astype(np.float32)


def write_report(report, path: str | Path) -> None:
    """Write a metrics report (dataclass or mapping) as indented JSON."""
    data = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
