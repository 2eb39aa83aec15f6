"""Synthetic MVTec-layout dataset for desk-scale smoke runs.

Normal images are smooth two-colour gradients with a fixed disk object;
anomalous test images carry a random high-contrast elliptical blob.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset_io import save_image
from .perlin import make_random_grid, perlin_noise


def _gradient_background(rng: np.random.Generator, N: int) -> np.ndarray:
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[0:N, 0:N] / (N - 1)
    t = (np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)) / np.sqrt(0.5) + 0.5
    c0 = np.array([0.30, 0.35, 0.45]) + rng.uniform(-0.08, 0.08, 3)
    c1 = np.array([0.55, 0.60, 0.65]) + rng.uniform(-0.08, 0.08, 3)
    return c0 + np.clip(t, 0, 1)[..., None] * (c1 - c0)


def _disk(N: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:N, 0:N]
    return ((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r


def normal_image(rng: np.random.Generator, N: int = 64) -> np.ndarray:
    img = _gradient_background(rng, N)
    c = N / 2 + rng.uniform(-1.5, 1.5, 2)
    obj = _disk(N, c[0], c[1], N * 0.25)
    color = np.array([0.85, 0.55, 0.20]) + rng.uniform(-0.04, 0.04, 3)
    img[obj] = color
    img += rng.normal(0, 0.01, img.shape)
    return np.clip(img, 0, 1)


def add_blob(img: np.ndarray, rng: np.random.Generator,
             radius: tuple[float, float] = (3.0, 7.0)) -> tuple[np.ndarray, np.ndarray]:
    """Paint a random ellipse of a far-off colour; returns (image, mask)."""
    N = img.shape[0]
    cy, cx = rng.uniform(N * 0.2, N * 0.8, 2)
    ry, rx = rng.uniform(*radius, 2)
    phi = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:N, 0:N]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
    local = img[mask].mean(axis=0)
    color = np.where(local > 0.5, rng.uniform(0.0, 0.15, 3), rng.uniform(0.85, 1.0, 3))
    out = img.copy()
    out[mask] = color
    return out, mask.astype(np.float64)


def texture(rng: np.random.Generator, N: int = 64) -> np.ndarray:
    kind = rng.integers(3)
    yy, xx = np.mgrid[0:N, 0:N]
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    if kind == 0:
        period = rng.uniform(3, 12)
        theta = rng.uniform(0, np.pi)
        t = 0.5 + 0.5 * np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period)
    elif kind == 1:
        s = int(rng.integers(3, 10))
        t = ((yy // s + xx // s) % 2).astype(float)
    else:
        t = perlin_noise(make_random_grid(int(rng.choice([4, 8, 16])), rng), N)
    return np.clip(c0 + t[..., None] * (c1 - c0) + rng.normal(0, 0.03, (N, N, 3)), 0, 1)


def make_synthetic_dataset(root: str | Path, seed: int = 0, N: int = 64, n_train: int = 50,
                           n_test_good: int = 20, n_test_bad: int = 20,
                           n_aux: int = 12, category: str = "synthetic") -> tuple[Path, Path]:
    """Write train/test/ground_truth folders and an aux texture folder.

    Returns (category root, aux dir).
    """
    rng = np.random.default_rng(seed)
    base = Path(root) / category
    for i in range(n_train):
        save_image(normal_image(rng, N), base / "train" / "good" / f"{i:03d}.png")
    for i in range(n_test_good):
        save_image(normal_image(rng, N), base / "test" / "good" / f"{i:03d}.png")
    for i in range(n_test_bad):
        img, mask = add_blob(normal_image(rng, N), rng)
        save_image(img, base / "test" / "blob" / f"{i:03d}.png")
        save_image(mask, base / "ground_truth" / "blob" / f"{i:03d}_mask.png")
    aux = Path(root) / "aux"
    for i in range(n_aux):
        save_image(texture(rng, N), aux / f"tex_{i:02d}.png")
    return base, aux
