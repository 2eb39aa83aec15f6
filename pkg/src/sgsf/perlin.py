"""Lattice gradient (Perlin) noise and its saliency-gated variant."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import ValidationError

GRID_SIZES = (2, 4, 8, 16, 32)

# call counters, used by tests to check which code paths ran
CALLS: Counter = Counter()


@dataclass
class RandomGrid:
    gradients: np.ndarray  # (g+1, g+1, 2)

    @property
    def g(self) -> int:
        return self.gradients.shape[0] - 1


def make_random_grid(g: int, rng: np.random.Generator) -> RandomGrid:
    """Unit gradients with uniform angle on a ``(g+1) x (g+1)`` lattice."""
    if g < 1:
        raise ValidationError(f"lattice cells per side must be >= 1, got {g}")
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(g + 1, g + 1))
    return RandomGrid(np.stack([np.cos(theta), np.sin(theta)], axis=-1))


def sample_grid_size(rng: np.random.Generator, N: int) -> int:
    choices = [g for g in GRID_SIZES if g <= N]
    return int(choices[rng.integers(len(choices))])


def fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_coords(g: int, N: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pos = np.arange(N) * (g / N)
    cell = np.minimum(np.floor(pos).astype(int), g - 1)
    return pos, cell, pos - cell, fade(pos - cell)


def perlin_field(grid: RandomGrid, N: int) -> np.ndarray:
    """Raw (un-normalized) gradient noise on an ``N x N`` pixel grid."""
    g = grid.g
    if N < g:
        raise ValidationError(f"image side {N} smaller than lattice cells {g}")
    _, ci, fi, ui = _lattice_coords(g, N)
    _, cj, fj, uj = _lattice_coords(g, N)
    grad = grid.gradients
    I, J = ci[:, None], cj[None, :]
    fx, fy = fi[:, None], fj[None, :]

    def corner(di: int, dj: int) -> np.ndarray:
        gv = grad[I + di, J + dj]
        return gv[..., 0] * (fx - di) + gv[..., 1] * (fy - dj)

    u, v = ui[:, None], uj[None, :]
    n0 = corner(0, 0) + u * (corner(1, 0) - corner(0, 0))
    n1 = corner(0, 1) + u * (corner(1, 1) - corner(0, 1))
    return n0 + v * (n1 - n0)


def normalize(field: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant field maps to 0.5 everywhere."""
    lo, hi = float(field.min()), float(field.max())
    if hi <= lo:
        return np.full_like(field, 0.5, dtype=np.float64)
    return (field - lo) / (hi - lo)


def perlin_noise(grid: RandomGrid, N: int) -> np.ndarray:
    CALLS["perlin_noise"] += 1
    return normalize(perlin_field(grid, N))


def saliency_gate(grid: RandomGrid, S: np.ndarray) -> RandomGrid:
    """Scale each lattice gradient by the saliency sampled at its pixel location.

    An all-zero map (textureless image) is replaced by the all-ones map first.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"saliency map must be square 2-D, got {S.shape}")
    N = S.shape[0]
    if np.sum(S) == 0:
        CALLS["texture_fallback"] += 1
        return RandomGrid(grid.gradients.copy())
    g = grid.g
    pts = np.arange(g + 1) * (N / g)
    pts = np.minimum(pts, N - 1)
    ii, jj = np.meshgrid(pts, pts, indexing="ij")
    weights = map_coordinates(S, [ii.ravel(), jj.ravel()], order=1, mode="nearest")
    weights = weights.reshape(g + 1, g + 1)
    return RandomGrid(grid.gradients * weights[..., None])


def active_region(grid: RandomGrid, N: int) -> np.ndarray:
    """Pixels with at least one nonzero gradient among their four cell corners."""
    nz = np.any(grid.gradients != 0, axis=-1)
    _, ci, _, _ = _lattice_coords(grid.g, N)
    I, J = ci[:, None], ci[None, :]
    return nz[I, J] | nz[I + 1, J] | nz[I, J + 1] | nz[I + 1, J + 1]


def spng(S: np.ndarray, N: int, rng: np.random.Generator, g: int | None = None) -> np.ndarray:
    """Saliency Perlin noise normalized to [0, 1].

    Pixels outside the gated lattice support are pinned to 0 after
    normalization so any threshold >= 0 keeps them out of the mask.
    """
    CALLS["spng"] += 1
    S = np.asarray(S, dtype=np.float64)
    if S.shape != (N, N):
        raise ValidationError(f"saliency map shape {S.shape} != ({N}, {N})")
    if g is None:
        g = sample_grid_size(rng, N)
    gated = saliency_gate(make_random_grid(g, rng), S)
    field = normalize(perlin_field(gated, N))
    field[~active_region(gated, N)] = 0.0
    return field
