"""Saliency maps: precomputed files or a contrast-from-median heuristic."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy.ndimage import uniform_filter

log = logging.getLogger(__name__)

HEURISTIC_WINDOW = 11
TEXTURELESS_P90 = 0.1


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[..., 0]
    return img @ np.array([0.299, 0.587, 0.114])


def heuristic_saliency(img: np.ndarray) -> np.ndarray:
    """Distance from the median gray level, scaled to [0, 1] and box-smoothed.

    Returns exact zeros when the scaled map's 90th percentile is below 0.1,
    which marks the image as textureless.
    """
    gray = to_gray(img)
    dev = np.abs(gray - np.median(gray))
    peak = dev.max()
    if peak <= 0:
        return np.zeros_like(dev)
    dev = dev / peak
    if np.percentile(dev, 90) < TEXTURELESS_P90:
        return np.zeros_like(dev)
    smoothed = uniform_filter(dev, size=HEURISTIC_WINDOW, mode="nearest")
    return np.clip(smoothed, 0.0, 1.0)


def load_saliency(directory: str | Path | None, stem: str, N: int,
                  img: np.ndarray | None = None) -> np.ndarray:
    """Load ``<directory>/<stem>.png``; fall back to the heuristic on ``img``."""
    path = Path(directory) / f"{stem}.png" if directory is not None else None
    if path is not None and path.is_file():
        with PILImage.open(path) as im:
            im = im.convert("L")
            if im.size != (N, N):
                im = im.resize((N, N), PILImage.NEAREST)
            return np.asarray(im, dtype=np.float64) / 255.0
    if path is not None:
        log.warning("saliency map %s missing, using heuristic", path)
    if img is None:
        raise FileNotFoundError(f"no saliency map for '{stem}' and no image for the heuristic")
    return heuristic_saliency(img)


def is_textureless(S: np.ndarray) -> bool:
    return float(np.sum(S)) == 0.0
