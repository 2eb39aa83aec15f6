"""Forged anomaly synthesis: adaptive thresholding, compositing and batch mixing."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig
from .errors import ShapeError, ValidationError
from .perlin import sample_grid_size, spng

CALLS: Counter = Counter()

MAX_MASK_FRACTION = 0.9


@dataclass
class ForgedSample:
    image: np.ndarray
    label: np.ndarray
    mask: np.ndarray
    alpha: float
    source_stem: str = ""
    grid_size: int = 0


@dataclass
class BatchItem:
    image: np.ndarray
    label: np.ndarray
    is_forged: bool
    source: int  # index into the normal pool


def adaptive_threshold(S: np.ndarray, a: float, b: float) -> float:
    """mu = a + mean(S) * b, so mu lies in [a, a + b]."""
    if a < 0 or b < 0 or a + b > 1:
        raise ValidationError(f"need a, b >= 0 and a + b <= 1, got a={a}, b={b}")
    S = np.asarray(S, dtype=np.float64)
    return float(a + (np.sum(S) / S.size) * b)


def make_mask(G: np.ndarray, mu: float) -> np.ndarray | None:
    """Threshold ``G > mu``; returns None when the mask is empty or covers > 90%."""
    if not 0 <= mu <= 1:
        raise ValidationError(f"threshold must lie in [0, 1], got {mu}")
    M = (np.asarray(G) > mu).astype(np.float64)
    frac = M.mean()
    if frac == 0 or frac > MAX_MASK_FRACTION:
        return None
    return M


def _brightness(x, rng):
    return np.clip(x * rng.uniform(0.5, 1.5), 0, 1)


def _contrast(x, rng):
    m = x.mean()
    return np.clip((x - m) * rng.uniform(0.5, 1.5) + m, 0, 1)


def _permute_channels(x, rng):
    return x[..., rng.permutation(x.shape[2])]


def _rotate(x, rng):
    return np.rot90(x, k=int(rng.integers(1, 4)), axes=(0, 1))


def _flip(x, rng):
    return np.flip(x, axis=int(rng.integers(2)))


def _solarize(x, rng):
    return np.where(x > 0.5, 1.0 - x, x)


def _posterize(x, rng):
    return np.floor(x * 15.0 + 0.5) / 15.0


AUGMENTATIONS = (_brightness, _contrast, _permute_channels, _rotate, _flip, _solarize, _posterize)


def augment_auxiliary(B: np.ndarray, rng: np.random.Generator, n_ops: int = 3) -> np.ndarray:
    """Apply ``n_ops`` distinct photometric/geometric ops in random order."""
    out = np.asarray(B, dtype=np.float64)
    for k in rng.choice(len(AUGMENTATIONS), size=n_ops, replace=False):
        out = AUGMENTATIONS[k](out, rng)
    return np.ascontiguousarray(np.clip(out, 0.0, 1.0))


def compose(A: np.ndarray, B: np.ndarray, M: np.ndarray, alpha: float,
            y_A: np.ndarray | None = None, y_B: np.ndarray | None = None) -> ForgedSample:
    """Blend ``B`` into ``A`` inside mask ``M`` with opacity ``alpha``.

    Labels default to all-normal for ``A`` and all-anomalous for ``B``, so the
    composed label equals ``M``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if A.shape != B.shape or A.shape[:2] != M.shape:
        raise ShapeError(f"shape mismatch: A {A.shape}, B {B.shape}, M {M.shape}")
    if not 0 <= alpha <= 1:
        raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
    if y_A is None:
        y_A = np.zeros_like(M)
    if y_B is None:
        y_B = np.ones_like(M)
    Mc = M[..., None]
    image = A * (1 - Mc) + alpha * (B * Mc) + (1 - alpha) * (A * Mc)
    label = M * y_B + (1 - M) * y_A
    return ForgedSample(image, label, M, float(alpha))


def forge_sample(A: np.ndarray, S: np.ndarray, aux_pool: Sequence, cfg: RunConfig,
                 rng: np.random.Generator, stem: str = "") -> ForgedSample | None:
    """Forge one anomalous sample from normal image ``A``.

    ``aux_pool`` items are images or zero-argument loaders. Returns None when
    no acceptable mask was found within ``cfg.mask_retries`` attempts.
    """
    if len(aux_pool) == 0:
        raise ValidationError("auxiliary image pool is empty")
    CALLS["forge_sample"] += 1
    N = A.shape[0]
    mu = adaptive_threshold(S, cfg.a, cfg.b)
    M = None
    for _ in range(cfg.mask_retries):
        g = sample_grid_size(rng, N)
        M = make_mask(spng(S, N, rng, g), mu)
        if M is not None:
            break
    if M is None:
        CALLS["skipped"] += 1
        return None
    B = aux_pool[int(rng.integers(len(aux_pool)))]
    if callable(B):
        B = B()
    B = augment_auxiliary(B, rng)
    alpha = rng.uniform(*cfg.alpha_range)
    sample = compose(A, B, M, alpha)
    sample.source_stem = stem
    sample.grid_size = g
    return sample


def mix_batch(normals: Sequence[np.ndarray], cfg: RunConfig, rng: np.random.Generator,
              saliency: Sequence[np.ndarray] | None = None, aux_pool: Sequence = (),
              stems: Sequence[str] | None = None) -> list[BatchItem]:
    """One item per normal image: forged with p = r / (r + 1), else untouched.

    Without ``saliency`` only the forged/normal draw is made and forged slots
    keep the normal image (useful for checking the ratio in isolation).
    """
    p = cfg.forged_ratio / (cfg.forged_ratio + 1.0)
    out = []
    for i, A in enumerate(normals):
        A = np.asarray(A, dtype=np.float64)
        zero = np.zeros(A.shape[:2])
        if rng.random() < p:
            if saliency is None:
                out.append(BatchItem(A, zero, True, i))
                continue
            s = forge_sample(A, saliency[i], aux_pool, cfg, rng,
                             stems[i] if stems is not None else "")
            if s is not None:
                out.append(BatchItem(s.image, s.label, True, i))
                continue
        out.append(BatchItem(A, zero, False, i))
    return out
